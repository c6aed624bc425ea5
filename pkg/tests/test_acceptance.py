"""End-to-end acceptance checks; each criterion prints one PASS/FAIL line."""

import itertools
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

import oracles
from infgnn.consolidation import (FisherTable, RiProbe, ewc_penalty, soft_mean_ri,
                                  soft_ri_of_params)
from infgnn.distrib import Histogram, jsd, jsd_samples
from infgnn.experiments import SWEEP_DEFAULTS, new_node_mae, run_ablations
from infgnn.graph import k_hop_neighbors, node_churn
from infgnn.influence import DAMPING, MemoryBuffer, Sample, combine_influence, influence_scores, update_buffer
from infgnn.relation import score_nodes, select_informative_subgraph, subgraph_size
from infgnn.surrogate import (ModelSpec, ModelState, WindowBatch, loss_and_gradients,
                              normalize_adjacency, per_sample_gradients)
from infgnn.synthetic import SynthConfig, generate_synthetic_drift
from infgnn.trainer import TrainConfig, apply_ablation, run_continual, run_plain
from test_influence import fd_hessian
from test_relation import random_instance

# Reduced training preset for the benchmark (full defaults need hours on one CPU).
BENCH_PRESET = dict(epochs=6, pseudo_epochs=4, hidden=16, buffer_capacity=200)
BENCH_SEEDS = range(5)


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        assert ok, detail
    return emit


def test_criterion_1_jsd(report):
    rng = np.random.default_rng(1)
    start = time.time()
    worst_self, asym, out_of_bounds = 0.0, 0, 0
    for i in range(1000):
        bins = int(rng.integers(2, 129))
        edges = np.linspace(0, 1, bins + 1)
        p = rng.dirichlet(np.full(bins, rng.uniform(0.05, 5)))
        q = rng.dirichlet(np.full(bins, rng.uniform(0.05, 5)))
        if i % 4 == 0:
            q[rng.random(bins) < 0.5] = 0.0
            q = q / q.sum() if q.sum() > 0 else np.full(bins, 1 / bins)
        hp, hq = Histogram(edges, p), Histogram(edges, q)
        a, b = jsd(hp, hq), jsd(hq, hp)
        asym += a != b
        out_of_bounds += not (0.0 <= a <= math.log(2) + 1e-12)
        worst_self = max(worst_self, jsd(hp, hp))
    elapsed = time.time() - start
    ok = asym == 0 and out_of_bounds == 0 and worst_self <= 1e-12 and elapsed < 5
    report(1, ok, f"asymmetric={asym} out_of_bounds={out_of_bounds} max jsd(p,p)={worst_self:.1e} "
                  f"time={elapsed:.2f}s")


def test_criterion_2_subgraph_optimality(report):
    rng = np.random.default_rng(2)
    start = time.time()
    violations = 0
    for _ in range(100):
        n = int(rng.integers(3, 10))
        g_prev, g_curr, x_prev, x_curr = random_instance(rng, n, int(rng.integers(0, 3)), 120)
        table = score_nodes(g_prev, g_curr, x_prev, x_curr)
        keep, _ = select_informative_subgraph(table, g_prev, g_curr, float(rng.uniform(0.1, 0.9)))
        # isolated nodes carry the float-max sentinel, so sums may overflow to inf
        chosen = sum(table.scores[v] for v in keep)
        best = min(sum(table.scores[v] for v in c)
                   for c in itertools.combinations(table.scores, len(keep)))
        violations += chosen > best * (1 + 1e-12)
    elapsed = time.time() - start
    report(2, violations == 0 and elapsed < 60, f"violations={violations}/100 time={elapsed:.1f}s")


def test_criterion_3_gradient_fidelity(report):
    rng = np.random.default_rng(3)
    start = time.time()
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        m, k, h = int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        spec = ModelSpec(d, m, k, h, int(rng.choice([1, 3])))
        a = np.triu((rng.random((n, n)) < 0.6).astype(float) * rng.uniform(0.5, 2, (n, n)), 1)
        a = a + a.T
        x = rng.normal(size=(2, n, d, m))
        y = rng.normal(size=(2, n, d, k))
        flat = rng.normal(0, 0.7, spec.n_params)
        an = oracles.sym_normalize(a)
        _, grad = loss_and_gradients(ModelState(spec, flat), [WindowBatch(normalize_adjacency(a), x, y)])
        fd = oracles.fd_gradient(lambda th: oracles.mse(spec, th, an, x, y), flat,
                                 pattern_fn=lambda th: oracles.pattern(spec, th, an, x))
        worst = max(worst, oracles.max_rel_error(grad.numpy(), fd))
    elapsed = time.time() - start
    report(3, worst <= 1e-5 and elapsed < 120, f"max relative error={worst:.2e} over 50 configs "
                                               f"time={elapsed:.1f}s")


def test_criterion_4_influence(report):
    from test_influence import cosine, toy_problem
    start = time.time()
    cosines = []
    for seed in range(20):
        state, b, d = toy_problem(100 + seed, n=3, s=5, hidden=3)
        assert state.spec.n_params <= 500
        got = influence_scores(state, b, d, "exact").numpy()
        g = per_sample_gradients(state.spec, state.params, b).numpy()
        tg = loss_and_gradients(state, d)[1].numpy()
        h = fd_hessian(state, b) + DAMPING * np.eye(state.spec.n_params)
        cosines.append(cosine(got, -(g @ np.linalg.solve(h, tg))))
    rng = np.random.default_rng(4)
    bad_gamma = 0
    for i in range(10_000):
        size = int(rng.integers(1, 50))
        a = rng.normal(size=size) * 10.0 ** rng.integers(-8, 8)
        b = a.copy() if i % 5 == 0 else rng.normal(size=size)
        gamma = combine_influence(a, b).gamma
        bad_gamma += not 0.0 <= gamma <= 1.0
    elapsed = time.time() - start
    ok = min(cosines) >= 0.99 and bad_gamma == 0 and elapsed < 180
    report(4, ok, f"min cosine={min(cosines):.6f} over 20 cases, gamma outside [0,1]={bad_gamma}/10000 "
                  f"time={elapsed:.1f}s")


def test_criterion_5_loss_composition(report, tiny_seq):
    cfg = TrainConfig(epochs=3, pseudo_epochs=1, hidden=4, batch_size=32, seed=11,
                      lambda_ewc=0.0, lambda_ris=0.0)
    off = replace(cfg, use_subgraph=False, use_buffer=False, use_ris=False, use_ewc=False)
    a, b = run_continual(tiny_seq, off), run_plain(tiny_seq, off)
    identical = a.losses == b.losses and all(torch.equal(x.params, y.params) for x, y in zip(a.states, b.states))
    rng = np.random.default_rng(5)
    fisher = rng.random(20)
    fisher[::4] = 0.0
    table = FisherTable(fisher, np.zeros(20), rng.normal(size=20))
    at_anchor = float(ewc_penalty(table.anchor, table, 0.5))
    positive = all(float(ewc_penalty(table.anchor + 1e-3 * torch.eye(20, dtype=torch.float64)[i], table, 0.5)) > 0
                   for i in range(20) if fisher[i] > 0)
    report(5, identical and at_anchor == 0.0 and positive,
           f"bit-identical trajectory={identical} ({len(a.losses)} steps), penalty at anchor={at_anchor}, "
           f"positive off-anchor={positive}")


def _hard_mean_ri(prev, curr, targets, neighbours, eps=1e-8):
    out = []
    for v, nb in zip(targets, neighbours):
        own = jsd_samples(curr[v], prev[v])
        out.append(sum(jsd_samples(curr[u], prev[u]) * own
                       / (max(jsd_samples(curr[u], curr[v]), eps) * max(jsd_samples(prev[u], prev[v]), eps))
                       for u in nb))
    return float(np.mean(out))


def test_criterion_6_soft_ri(report):
    from test_consolidation import probe_problem
    worst_grad = 0.0
    for seed in range(3):
        spec, state, probe = probe_problem(seed)
        flat = state.params.clone().requires_grad_(True)
        (g,) = torch.autograd.grad(soft_ri_of_params(spec, flat, probe), flat)
        fd = torch.zeros_like(g)
        with torch.no_grad():
            for i in range(spec.n_params):
                e = torch.zeros_like(g)
                e[i] = 1e-6
                fd[i] = (soft_ri_of_params(spec, state.params + e, probe)
                         - soft_ri_of_params(spec, state.params - e, probe)) / 2e-6
        rel = torch.abs(g - fd) / torch.clamp(torch.maximum(g.abs(), fd.abs()), min=1e-6)
        worst_grad = max(worst_grad, float(rel.max()))

    seq, _ = generate_synthetic_drift(SynthConfig(), seed=0)
    rng = np.random.default_rng(6)
    rels = []
    for _ in range(50):
        t = int(rng.integers(1, len(seq)))
        a, b = seq[t - 1], seq[t]
        pers = sorted(node_churn(a.graph, b.graph)[0])
        pos = {v: i for i, v in enumerate(pers)}
        start = int(rng.integers(0, a.features.n_steps - 1000 + 1))
        prev = a.features.rows(pers)[:, 0, start:start + 1000]
        curr = b.features.rows(pers)[:, 0, start:start + 1000]
        targets, neighbours = [], []
        for i in rng.choice(len(pers), 6, replace=False):
            nb = sorted(pos[u] for u in k_hop_neighbors(b.graph, pers[i], 1, within=pers))
            if nb:
                targets.append(int(i))
                neighbours.append(nb)
        hard = _hard_mean_ri(prev, curr, targets, neighbours)
        soft = float(soft_mean_ri(torch.as_tensor(prev), torch.as_tensor(curr), targets, neighbours))
        rels.append(abs(soft - hard) / hard)
    rels = np.array(rels)
    ok = worst_grad <= 1e-4 and rels.max() <= 0.10
    report(6, ok, f"gradient max relative error={worst_grad:.2e}; soft vs hard RI relative gap "
                  f"max={rels.max():.3f} median={np.median(rels):.3f}, windows over 10%={int((rels > 0.1).sum())}/50")


def test_criterion_7_benchmark(report):
    start = time.time()
    maes = {tag: [] for tag in ("full", "wo_ifg", "wo_ifs", "wo_ris")}
    recovery = []
    for seed in BENCH_SEEDS:
        gen = SynthConfig()
        seq, truth = generate_synthetic_drift(gen, seed=seed)
        stable = set(truth["stable_nodes"])
        for a, b in zip(list(seq)[:-1], list(seq)[1:]):
            table = score_nodes(a.graph, b.graph, a.features, b.features)
            persisting = node_churn(a.graph, b.graph)[0]
            bottom = set(table.ranked()[:subgraph_size(gen.stable_fraction, len(persisting))])
            flagged = stable & persisting
            recovery.append(len(bottom & flagged) / len(flagged))
        cfg = TrainConfig(seed=seed, **BENCH_PRESET)
        for tag, res in run_ablations(seq, cfg, which=tuple(maes)).items():
            maes[tag].append(new_node_mae(res.records))
    elapsed = time.time() - start
    mean = {tag: float(np.mean(v)) for tag, v in maes.items()}
    directional = all(mean["full"] <= mean[t] for t in ("wo_ifg", "wo_ifs", "wo_ris"))
    ok = directional and min(recovery) >= 0.8 and elapsed < 1800
    detail = ", ".join(f"{t}={m:.3f}" for t, m in mean.items())
    report(7, ok, f"mean new-node MAE {detail}; full <= every ablation={directional}; "
                  f"min stable-node recovery={min(recovery):.2f}; time={elapsed / 60:.1f} min")


def test_criterion_8_buffer(report):
    rng = np.random.default_rng(8)
    buf, worst = MemoryBuffer(100), 0
    for _ in range(10_000):
        n = int(rng.integers(0, 8))
        ts = rng.integers(0, 2000, size=n)
        buf = update_buffer(buf, [(int(t), Sample(None, int(t)), float(s)) for t, s in zip(ts, rng.normal(size=n))],
                            rank_by=str(rng.choice(["signed", "magnitude"])))
        worst = max(worst, len(buf))
    seq, _ = generate_synthetic_drift(SynthConfig(n_intervals=3, initial_nodes=10, growth=2,
                                                  steps_per_interval=120, steps_per_day=24), seed=8)
    cfg = TrainConfig(input_steps=6, horizon=6, epochs=2, pseudo_epochs=1, hidden=3, batch_size=32,
                      sim_set_size=8, ri_chunks=1, subgraph_fraction=0.3, seed=8)
    res = run_ablations(seq, cfg, which=(), sweeps={k: SWEEP_DEFAULTS[k] for k in ("buffer_capacity", "ri_weight")})
    expected = len(SWEEP_DEFAULTS["buffer_capacity"]) + len(SWEEP_DEFAULTS["ri_weight"])
    complete = all(len({r.interval for r in v.records}) == len(seq) - 1 for v in res.values())
    ok = worst <= 100 and len(res) == expected and complete
    report(8, ok, f"max buffer size={worst} (capacity 100) over 10000 ops; sweep arms={len(res)}/{expected}, "
                  f"complete record sets={complete}")


def test_criterion_9_reference_dataset(report):
    root = os.environ.get("INFGNN_PEMS_DIR")
    if not root:
        pytest.skip("criterion 9 is optional: set INFGNN_PEMS_DIR to a converted dataset to run it")
    from infgnn.io import load_dataset
    from infgnn.evaluation import average_over_intervals
    seq = load_dataset(root)
    res = run_continual(seq, TrainConfig(), "full")
    mae = average_over_intervals(res.records)[("full", "all", 3)]["mae"]
    report(9, abs(mae - 13.36) <= 0.15 * 13.36, f"15-min all-nodes MAE={mae:.2f} (target 13.36 +-15%)")
