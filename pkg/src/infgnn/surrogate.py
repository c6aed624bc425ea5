"""Surrogate forecaster: GNN -> temporal 1D conv -> GNN -> dense map.

The model is written as pure functions of a flat float64 parameter vector
so that per-sample gradients, Hessians and finite-difference checks all
see the same parameterisation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64


class NumericalError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    n_features: int = 1
    input_steps: int = 12
    horizon: int = 12
    hidden: int = 64
    kernel_width: int = 3

    def __post_init__(self):
        if min(self.n_features, self.input_steps, self.horizon, self.hidden) < 1:
            raise ValueError("model dimensions must be positive")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be a positive odd integer")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d, h, m, k = self.n_features, self.hidden, self.input_steps, self.horizon
        return [
            ("gnn1.w1", (d, h)),
            ("gnn1.w2", (d, h)),
            ("conv.weight", (h, h, self.kernel_width)),
            ("conv.bias", (h,)),
            ("gnn2.w1", (h, h)),
            ("gnn2.w2", (h, h)),
            ("head.weight", (m * h, k * d)),
            ("head.bias", (k * d,)),
        ]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


def unflatten(spec: ModelSpec, flat: torch.Tensor) -> dict[str, torch.Tensor]:
    out, i = {}, 0
    for name, shape in spec.layout():
        n = int(np.prod(shape))
        out[name] = flat[i:i + n].reshape(shape)
        i += n
    return out


def init_params(spec: ModelSpec, seed: int = 0) -> torch.Tensor:
    """Glorot-uniform weights, zero biases."""
    gen = torch.Generator().manual_seed(int(seed))
    chunks = []
    for name, shape in spec.layout():
        if name.endswith("bias"):
            chunks.append(torch.zeros(int(np.prod(shape)), dtype=DTYPE))
            continue
        if name == "conv.weight":
            fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
        else:
            fan_in, fan_out = shape
        bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
        w = (torch.rand(int(np.prod(shape)), generator=gen, dtype=DTYPE) * 2 - 1) * bound
        chunks.append(w)
    return torch.cat(chunks)


@dataclass
class ModelState:
    """Parameters plus adaptive-moment accumulators and the step counter."""

    spec: ModelSpec
    params: torch.Tensor
    m: torch.Tensor = None
    v: torch.Tensor = None
    step: int = 0

    def __post_init__(self):
        self.params = torch.as_tensor(self.params, dtype=DTYPE).detach().clone()
        if self.params.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {tuple(self.params.shape)}")
        self.m = torch.zeros_like(self.params) if self.m is None else self.m.detach().clone()
        self.v = torch.zeros_like(self.params) if self.v is None else self.v.detach().clone()

    @classmethod
    def initial(cls, spec: ModelSpec, seed: int = 0) -> "ModelState":
        return cls(spec, init_params(spec, seed))

    def copy(self) -> "ModelState":
        return ModelState(self.spec, self.params, self.m, self.v, self.step)

    def named(self) -> dict[str, torch.Tensor]:
        return unflatten(self.spec, self.params)


def normalize_adjacency(a, mode: str = "sym") -> torch.Tensor:
    """Symmetric degree normalisation ``D^-1/2 A D^-1/2``; zero-degree rows stay zero.

    ``mode="raw"`` returns ``A`` unchanged.
    """
    a = torch.as_tensor(np.array(a, dtype=np.float64), dtype=DTYPE)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if torch.any(a < 0):
        raise ValueError("adjacency must be nonnegative")
    if mode == "raw":
        return a.clone()
    if mode != "sym":
        raise ValueError(f"unknown normalisation mode {mode!r}")
    deg = a.sum(dim=1)
    inv = torch.where(deg > 0, deg.clamp_min(1e-300) ** -0.5, torch.zeros_like(deg))
    return inv[:, None] * a * inv[None, :]


def _gnn(a: torch.Tensor, h: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor) -> torch.Tensor:
    # h: (..., N, C)
    return torch.relu(torch.matmul(a, h) @ w1 + h @ w2)


def forward(spec: ModelSpec, flat: torch.Tensor, a: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Predict ``(S, N, D, K)`` from inputs ``(S, N, D, M)`` on adjacency operator ``a``."""
    if x.ndim == 3:
        return forward(spec, flat, a, x[None])[0]
    s, n, d, m = x.shape
    if d != spec.n_features or m != spec.input_steps:
        raise ValueError(f"input window shape {tuple(x.shape[1:])} does not match model "
                         f"({spec.n_features}, {spec.input_steps})")
    if a.shape != (n, n):
        raise ValueError(f"adjacency {tuple(a.shape)} does not match {n} nodes")
    p = unflatten(spec, flat)
    h = x.permute(0, 3, 1, 2)                                   # S, M, N, D
    h = _gnn(a, h, p["gnn1.w1"], p["gnn1.w2"])                  # S, M, N, H
    c = h.permute(0, 2, 3, 1).reshape(s * n, spec.hidden, m)    # S*N, H, M
    c = F.conv1d(c, p["conv.weight"], p["conv.bias"], padding=spec.kernel_width // 2)
    h = torch.relu(c).reshape(s, n, spec.hidden, m).permute(0, 3, 1, 2)
    h = _gnn(a, h, p["gnn2.w1"], p["gnn2.w2"])                  # S, M, N, H
    z = h.permute(0, 2, 1, 3).reshape(s, n, m * spec.hidden)
    out = z @ p["head.weight"] + p["head.bias"]
    return out.reshape(s, n, d, spec.horizon)


@dataclass
class WindowBatch:
    """Windows sharing one graph: inputs ``(S, N, D, M)``, targets ``(S, N, D, K)``."""

    adjacency: torch.Tensor
    inputs: torch.Tensor
    targets: torch.Tensor
    timestamp_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.inputs = torch.as_tensor(self.inputs, dtype=DTYPE)
        self.targets = torch.as_tensor(self.targets, dtype=DTYPE)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets hold different sample counts")
        if self.timestamp_ids is None:
            self.timestamp_ids = np.arange(self.inputs.shape[0])
        self.timestamp_ids = np.asarray(self.timestamp_ids, dtype=np.int64)
        if len(self.timestamp_ids) != self.inputs.shape[0]:
            raise ValueError("one timestamp id per sample is required")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "WindowBatch":
        idx = np.asarray(idx, dtype=np.int64)
        t = torch.as_tensor(idx)
        return WindowBatch(self.adjacency, self.inputs[t], self.targets[t], self.timestamp_ids[idx])


Batch = Sequence[WindowBatch]


def per_sample_losses(spec: ModelSpec, flat: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Squared error averaged over (node, feature, step) for every sample."""
    out = []
    for part in batch:
        if len(part) == 0:
            continue
        pred = forward(spec, flat, part.adjacency, part.inputs)
        out.append(((pred - part.targets) ** 2).flatten(1).mean(dim=1))
    if not out:
        raise ValueError("empty batch")
    return torch.cat(out)


def batch_loss(spec: ModelSpec, flat: torch.Tensor, batch: Batch) -> torch.Tensor:
    return per_sample_losses(spec, flat, batch).mean()


def loss_and_gradients(state: ModelState, batch: Batch, loss: str = "mse") -> tuple[float, torch.Tensor]:
    if loss != "mse":
        raise ValueError(f"unsupported loss {loss!r}")
    flat = state.params.detach().requires_grad_(True)
    value = batch_loss(state.spec, flat, batch)
    (grad,) = torch.autograd.grad(value, flat)
    return value.item(), grad.detach()


def per_sample_gradients(spec: ModelSpec, flat: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Gradient of every sample's own loss, shape ``(n_samples, n_params)``."""
    flat = flat.detach()
    rows = []
    for part in batch:
        if len(part) == 0:
            continue

        def one(p, x, y, a=part.adjacency):
            pred = forward(spec, p, a, x[None])
            return ((pred - y[None]) ** 2).mean()

        rows.append(torch.func.vmap(torch.func.grad(one), in_dims=(None, 0, 0))(
            flat, part.inputs, part.targets))
    return torch.cat(rows)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(state: ModelState, grads: torch.Tensor, lr: float,
                   cfg: AdamConfig = AdamConfig()) -> ModelState:
    """One bias-corrected adaptive-moment update; returns a new state."""
    grads = torch.as_tensor(grads, dtype=DTYPE)
    if grads.shape != state.params.shape:
        raise ValueError("gradient does not align with parameters")
    if not torch.all(torch.isfinite(grads)):
        bad = int(torch.nonzero(~torch.isfinite(grads))[0])
        raise NumericalError(f"non-finite gradient at parameter {bad} (step {state.step + 1}); "
                             "update rejected")
    step = state.step + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads * grads
    m_hat = m / (1 - cfg.beta1 ** step)
    v_hat = v / (1 - cfg.beta2 ** step)
    params = state.params - lr * m_hat / (torch.sqrt(v_hat) + cfg.eps)
    if not torch.all(torch.isfinite(params)):
        raise NumericalError(f"update produced non-finite parameters at step {step}")
    return ModelState(state.spec, params, m, v, step)


_MAGIC = b"INFGNNCK"


def save_checkpoint(state: ModelState, path, extra: dict | None = None) -> None:
    """JSON header followed by a flat little-endian f64 payload (params, m, v)."""
    header = {
        "spec": asdict(state.spec),
        "step": state.step,
        "n_params": state.spec.n_params,
        "layout": [[name, list(shape)] for name, shape in state.spec.layout()],
        "payload": ["params", "m", "v"],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    payload = torch.cat([state.params, state.m, state.v]).numpy().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> tuple[ModelState, dict]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes at offset 0")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header length at byte offset 8")
    (hlen,) = struct.unpack("<Q", data[8:16])
    start = 16 + hlen
    if len(data) < start:
        raise CheckpointError(f"{path}: header runs past end of file (byte offset {len(data)})")
    try:
        header = json.loads(data[16:start])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable header at byte offset 16: {exc}") from exc
    spec = ModelSpec(**header["spec"])
    expected = 3 * spec.n_params * 8
    got = len(data) - start
    if got != expected:
        raise CheckpointError(
            f"{path}: payload is {got} bytes, expected {expected}; "
            f"mismatch at byte offset {start + min(got, expected)}")
    arr = np.frombuffer(data[start:], dtype="<f8").astype(np.float64)
    p = spec.n_params
    t = torch.from_numpy(arr.copy())
    state = ModelState(spec, t[:p], t[p:2 * p], t[2 * p:], int(header["step"]))
    return state, header.get("extra", {})
