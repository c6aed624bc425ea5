import numpy as np
import pytest
import torch

import oracles
from infgnn.surrogate import (AdamConfig, CheckpointError, ModelSpec, ModelState, NumericalError,
                              WindowBatch, batch_loss, forward, init_params, load_checkpoint,
                              loss_and_gradients, normalize_adjacency, optimizer_step,
                              per_sample_gradients, per_sample_losses, save_checkpoint)

TINY = ModelSpec(1, 2, 1, 1)


def small_problem(seed, n=3, d=1, m=4, k=2, hidden=3, s=2, kw=3):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(d, m, k, hidden, kw)
    flat = rng.normal(0, 0.6, spec.n_params)
    a = (rng.random((n, n)) < 0.5).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    x = rng.normal(size=(s, n, d, m))
    y = rng.normal(size=(s, n, d, k))
    return spec, flat, a, x, y


class TestNormalize:
    def test_single_edge(self):
        op = normalize_adjacency(np.array([[0, 1.0], [1.0, 0]]))
        assert torch.equal(op, torch.tensor([[0, 1.0], [1.0, 0]], dtype=torch.float64))

    def test_star(self):
        a = np.zeros((4, 4))
        a[0, 1:] = a[1:, 0] = 1
        op = normalize_adjacency(a)
        assert float(op[0, 2]) == pytest.approx(1 / np.sqrt(3), rel=1e-15)

    def test_isolated_row(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 2
        op = normalize_adjacency(a)
        assert torch.all(op[2] == 0) and torch.all(torch.isfinite(op))

    def test_raw_and_errors(self):
        a = np.array([[0, 3.0], [3.0, 0]])
        assert torch.equal(normalize_adjacency(a, "raw"), torch.as_tensor(a))
        with pytest.raises(ValueError):
            normalize_adjacency(-a)


class TestForward:
    def test_matches_numpy_reference(self):
        for seed in range(5):
            spec, flat, a, x, _ = small_problem(seed, n=4, d=2, m=5, k=3, hidden=4)
            op = normalize_adjacency(a)
            got = forward(spec, torch.as_tensor(flat), op, torch.as_tensor(x)).numpy()
            want = oracles.forward(spec, flat, oracles.sym_normalize(a), x)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_zero_parameters(self):
        spec = ModelSpec(1, 4, 2, 3)
        x = torch.randn(2, 5, 1, 4, dtype=torch.float64)
        out = forward(spec, torch.zeros(spec.n_params, dtype=torch.float64), torch.zeros(5, 5, dtype=torch.float64), x)
        assert torch.count_nonzero(out) == 0

    def test_single_node_without_edges_uses_self_path(self):
        spec, flat, _, x, _ = small_problem(1, n=1)
        p = oracles.unpack(spec, flat)
        masks = []
        oracles.forward(spec, flat, np.zeros((1, 1)), x, masks)
        first = masks[0]
        assert np.array_equal(first, (x[0, :, :, 0] @ p["gnn1.w2"]) > 0)

    def test_permutation_equivariance(self):
        spec, flat, a, x, _ = small_problem(2, n=6, hidden=4)
        flat_t = torch.as_tensor(flat)
        base = forward(spec, flat_t, normalize_adjacency(a), torch.as_tensor(x))
        rng = np.random.default_rng(0)
        for _ in range(20):
            perm = rng.permutation(6)
            out = forward(spec, flat_t, normalize_adjacency(a[np.ix_(perm, perm)]),
                          torch.as_tensor(x[:, perm]))
            torch.testing.assert_close(out, base[:, perm], rtol=1e-12, atol=1e-12)

    def test_doubling_w1_changes_output(self):
        spec, flat, _, x, _ = small_problem(4, n=5)
        ring = np.zeros((5, 5))
        for i in range(5):
            ring[i, (i + 1) % 5] = ring[(i + 1) % 5, i] = 1
        op = normalize_adjacency(ring)
        doubled = flat.copy()
        n = spec.n_features * spec.hidden
        doubled[:n] *= 2
        a = forward(spec, torch.as_tensor(flat), op, torch.as_tensor(x))
        b = forward(spec, torch.as_tensor(doubled), op, torch.as_tensor(x))
        assert not torch.allclose(a, b)

    def test_inductive_shapes(self):
        spec = ModelSpec(2, 6, 4, 3)
        flat = init_params(spec, 0)
        for n in (1, 7, 13):
            out = forward(spec, flat, torch.zeros(n, n, dtype=torch.float64),
                          torch.randn(3, n, 2, 6, dtype=torch.float64))
            assert out.shape == (3, n, 2, 4)

    def test_shape_errors(self):
        spec = ModelSpec(1, 4, 2, 3)
        flat = init_params(spec, 0)
        with pytest.raises(ValueError):
            forward(spec, flat, torch.zeros(3, 3), torch.zeros(1, 3, 1, 5, dtype=torch.float64))
        with pytest.raises(ValueError):
            forward(spec, flat, torch.zeros(2, 2), torch.zeros(1, 3, 1, 4, dtype=torch.float64))

    def test_param_count_is_a_function_of_sizes(self):
        assert ModelSpec(1, 12, 12, 64).n_params == 29_900
        assert ModelSpec(1, 12, 12, 64).n_params == len(init_params(ModelSpec(1, 12, 12, 64), 3))


class TestGradients:
    def test_zero_loss_at_own_predictions(self):
        spec, flat, a, x, _ = small_problem(0)
        op = normalize_adjacency(a)
        y = forward(spec, torch.as_tensor(flat), op, torch.as_tensor(x))
        state = ModelState(spec, flat)
        loss, grad = loss_and_gradients(state, [WindowBatch(op, x, y)])
        assert loss == 0.0 and torch.count_nonzero(grad) == 0

    def test_homogeneity(self):
        spec, flat, a, x, y = small_problem(1)
        op = normalize_adjacency(a)
        pred = forward(spec, torch.as_tensor(flat), op, torch.as_tensor(x)).numpy()
        base = np.mean((pred - y) ** 2)
        assert np.mean((3 * pred - 3 * y) ** 2) == pytest.approx(9 * base, rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        spec, flat, a, x, y = small_problem(seed + 10)
        op = normalize_adjacency(a)
        an = oracles.sym_normalize(a)
        _, grad = loss_and_gradients(ModelState(spec, flat), [WindowBatch(op, x, y)])
        fd = oracles.fd_gradient(lambda th: oracles.mse(spec, th, an, x, y), flat,
                                 pattern_fn=lambda th: oracles.pattern(spec, th, an, x))
        assert oracles.max_rel_error(grad.numpy(), fd) <= 1e-5

    def test_per_layer_finite_differences(self):
        spec, flat, a, x, y = small_problem(42, hidden=4)
        op, an = normalize_adjacency(a), oracles.sym_normalize(a)
        _, grad = loss_and_gradients(ModelState(spec, flat), [WindowBatch(op, x, y)])
        fd = oracles.fd_gradient(lambda th: oracles.mse(spec, th, an, x, y), flat,
                                 pattern_fn=lambda th: oracles.pattern(spec, th, an, x))
        start = 0
        for name, shape in spec.layout():
            n = int(np.prod(shape))
            assert oracles.max_rel_error(grad.numpy()[start:start + n], fd[start:start + n]) <= 1e-5, name
            start += n

    def test_per_sample_gradients_average_to_batch_gradient(self):
        spec, flat, a, x, y = small_problem(3, s=5)
        batch = [WindowBatch(normalize_adjacency(a), x, y)]
        g = per_sample_gradients(spec, torch.as_tensor(flat), batch)
        _, full = loss_and_gradients(ModelState(spec, flat), batch)
        torch.testing.assert_close(g.mean(0), full, rtol=1e-10, atol=1e-12)

    def test_mixed_graph_batch(self):
        spec, flat, a, x, y = small_problem(5, n=3, s=2)
        _, _, a2, x2, y2 = small_problem(6, n=5, s=3)
        parts = [WindowBatch(normalize_adjacency(a), x, y), WindowBatch(normalize_adjacency(a2), x2, y2)]
        flat_t = torch.as_tensor(flat)
        losses = per_sample_losses(spec, flat_t, parts)
        assert losses.shape == (5,)
        assert float(batch_loss(spec, flat_t, parts)) == pytest.approx(float(losses.mean()))

    def test_determinism(self):
        spec, flat, a, x, y = small_problem(8)
        batch = [WindowBatch(normalize_adjacency(a), x, y)]
        r1 = loss_and_gradients(ModelState(spec, flat), batch)
        r2 = loss_and_gradients(ModelState(spec, flat), batch)
        assert r1[0] == r2[0] and torch.equal(r1[1], r2[1])


class TestAdam:
    def test_zero_gradient(self):
        s = ModelState(TINY, np.arange(float(TINY.n_params)))
        out = optimizer_step(s, torch.zeros(TINY.n_params, dtype=torch.float64), 0.01)
        assert torch.equal(out.params, s.params) and out.step == 1

    def test_first_step_is_lr(self):
        s = ModelState(TINY, np.zeros(TINY.n_params))
        out = optimizer_step(s, torch.full((TINY.n_params,), 3.7, dtype=torch.float64), 0.01)
        np.testing.assert_allclose(out.params.numpy(), -0.01, rtol=1e-8)

    def test_zero_lr(self):
        s = ModelState(TINY, np.ones(TINY.n_params))
        out = optimizer_step(s, torch.ones(TINY.n_params, dtype=torch.float64), 0.0)
        assert torch.equal(out.params, s.params)

    def test_matches_torch_adam(self):
        rng = np.random.default_rng(0)
        theta = torch.tensor(rng.normal(size=TINY.n_params), dtype=torch.float64, requires_grad=True)
        ref = torch.optim.Adam([theta], lr=0.01, betas=(0.9, 0.999), eps=1e-8)
        s = ModelState(TINY, theta.detach().clone())
        for _ in range(25):
            g = torch.tensor(rng.normal(size=TINY.n_params), dtype=torch.float64)
            theta.grad = g.clone()
            ref.step()
            s = optimizer_step(s, g, 0.01, AdamConfig())
        torch.testing.assert_close(s.params, theta.detach(), rtol=1e-12, atol=1e-14)

    def test_non_finite_rejected(self):
        s = ModelState(TINY, np.zeros(TINY.n_params))
        g = torch.zeros(TINY.n_params, dtype=torch.float64)
        g[4] = float("nan")
        with pytest.raises(NumericalError, match="parameter 4"):
            optimizer_step(s, g, 0.01)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        spec = ModelSpec(2, 5, 3, 4)
        s = ModelState(spec, init_params(spec, 1))
        s = optimizer_step(s, torch.ones(spec.n_params, dtype=torch.float64), 0.1)
        save_checkpoint(s, tmp_path / "c.ckpt", extra={"k": 1})
        t, extra = load_checkpoint(tmp_path / "c.ckpt")
        assert extra == {"k": 1} and t.step == 1 and t.spec == spec
        for name in ("params", "m", "v"):
            assert torch.equal(getattr(s, name), getattr(t, name))

    def test_truncated_payload_names_offset(self, tmp_path):
        spec = ModelSpec(1, 3, 2, 2)
        save_checkpoint(ModelState.initial(spec), tmp_path / "c.ckpt")
        data = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "c.ckpt").write_bytes(data[:-5])
        with pytest.raises(CheckpointError, match="byte offset"):
            load_checkpoint(tmp_path / "c.ckpt")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.ckpt").write_bytes(b"nonsense" * 4)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "c.ckpt")
