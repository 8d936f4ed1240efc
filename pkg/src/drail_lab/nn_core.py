"""Dense-network substrate shared by every model in the lab.

Parameters live in one flat float64 vector with named per-layer views, so
optimizers, checkpoints, and gradient checks all see the same layout.
Gradients are exact reverse-mode (no autograd framework, no approximation).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")

_ACT_CODE = {name: code for code, name in enumerate(ACTIVATIONS)}
_ACT_NAME = {code: name for name, code in _ACT_CODE.items()}

CHECKPOINT_MAGIC = b"DRLP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer: out = act(W @ x + b)."""

    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def size(self) -> int:
        # weights (out x in) plus bias (out)
        return self.out_dim * (self.in_dim + 1)


@dataclass(frozen=True)
class LayerView:
    """Location of one layer's weights and bias inside the flat vector."""

    name: str
    offset: int
    in_dim: int
    out_dim: int

    @property
    def size(self) -> int:
        return self.out_dim * (self.in_dim + 1)


@dataclass(frozen=True)
class ParamStore:
    """Immutable flat parameter vector with named layer views.

    ``values`` is marked read-only; use :meth:`with_values` to produce an
    updated snapshot. ``seed`` records the init seed (-1 when restored from
    a checkpoint).
    """

    values: np.ndarray
    layout: tuple[LayerView, ...]
    seed: int = -1

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        total = sum(view.size for view in self.layout)
        if v.ndim != 1 or v.size != total:
            raise ValueError(f"parameter vector length {v.size} != layout total {total}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return self.values.size

    def weights(self, k: int) -> np.ndarray:
        view = self.layout[k]
        n = view.out_dim * view.in_dim
        return self.values[view.offset : view.offset + n].reshape(view.out_dim, view.in_dim)

    def bias(self, k: int) -> np.ndarray:
        view = self.layout[k]
        start = view.offset + view.out_dim * view.in_dim
        return self.values[start : start + view.out_dim]

    def with_values(self, values: np.ndarray) -> "ParamStore":
        return replace(self, values=np.array(values, dtype=np.float64))


def check_chain(specs: tuple[LayerSpec, ...] | list[LayerSpec]) -> tuple[LayerSpec, ...]:
    """Validate that consecutive layer dims chain; returns the tuple."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("at least one layer required")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"chain mismatch: {a.out_dim} -> {b.in_dim}")
    return specs


def layout_for(specs: tuple[LayerSpec, ...]) -> tuple[LayerView, ...]:
    views = []
    offset = 0
    for k, spec in enumerate(specs):
        views.append(LayerView(f"layer{k}", offset, spec.in_dim, spec.out_dim))
        offset += spec.size
    return tuple(views)


def init_params(specs: list[LayerSpec] | tuple[LayerSpec, ...], seed: int) -> ParamStore:
    """Seeded init: weights uniform in +-sqrt(6/(in+out)), biases zero."""
    specs = check_chain(specs)
    rng = np.random.default_rng(seed)
    chunks = []
    for spec in specs:
        bound = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        chunks.append(rng.uniform(-bound, bound, size=spec.out_dim * spec.in_dim))
        chunks.append(np.zeros(spec.out_dim))
    return ParamStore(np.concatenate(chunks), layout_for(specs), seed=seed)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad_from_output(name: str, h: np.ndarray) -> np.ndarray:
    # all three derivatives are expressible from the activation output
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (h > 0.0).astype(np.float64)
    return np.ones_like(h)


def _as_batch(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} must have width {width}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite entries")
    return x


def forward_batch(params: ParamStore, specs: tuple[LayerSpec, ...], inputs: np.ndarray) -> np.ndarray:
    """Evaluate the network on a (n, in_dim) batch; returns (n, out_dim)."""
    h = _as_batch(inputs, specs[0].in_dim, "input")
    for k, spec in enumerate(specs):
        h = _activate(spec.activation, h @ params.weights(k).T + params.bias(k))
    return h


def forward(params: ParamStore, specs: tuple[LayerSpec, ...], x: np.ndarray) -> np.ndarray:
    """Single-vector forward pass."""
    return forward_batch(params, specs, np.asarray(x)[None, :])[0]


def backward_batch(
    params: ParamStore,
    specs: tuple[LayerSpec, ...],
    inputs: np.ndarray,
    upstream: np.ndarray,
) -> np.ndarray:
    """Gradient of sum_i upstream_i . output_i w.r.t. the flat parameters.

    ``upstream`` has shape (n, out_dim). Exact reverse mode; matches central
    finite differences to f64 roundoff on these layer types.
    """
    X = _as_batch(inputs, specs[0].in_dim, "input")
    hs = [X]
    for k, spec in enumerate(specs):
        hs.append(_activate(spec.activation, hs[-1] @ params.weights(k).T + params.bias(k)))
    g = _as_batch(upstream, specs[-1].out_dim, "upstream")
    if g.shape[0] != X.shape[0]:
        raise ValueError(f"upstream rows {g.shape[0]} != input rows {X.shape[0]}")
    grad = np.zeros(len(params))
    for k in range(len(specs) - 1, -1, -1):
        view = params.layout[k]
        g = g * _activation_grad_from_output(specs[k].activation, hs[k + 1])
        n_w = view.out_dim * view.in_dim
        grad[view.offset : view.offset + n_w] = (g.T @ hs[k]).ravel()
        grad[view.offset + n_w : view.offset + view.size] = g.sum(axis=0)
        if k > 0:
            g = g @ params.weights(k)
    return grad


def backward(
    params: ParamStore,
    specs: tuple[LayerSpec, ...],
    x: np.ndarray,
    upstream: np.ndarray,
) -> np.ndarray:
    """Single-vector form of :func:`backward_batch` (gradient of upstream . output)."""
    return backward_batch(params, specs, np.asarray(x)[None, :], np.asarray(upstream)[None, :])


@dataclass(frozen=True)
class AdamState:
    """Adam moments for one ParamStore; immutable like the store itself."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float) -> "AdamState":
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        return cls(m=np.zeros(n), v=np.zeros(n), step=0, lr=lr)


def adam_step(
    state: AdamState,
    params: ParamStore,
    grads: np.ndarray,
    lr_scale: float = 1.0,
) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update; returns fresh (params, state) copies.

    ``lr_scale`` multiplies the stored learning rate for this step only
    (used for the policy's linear decay schedule).
    """
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != (len(params),):
        raise ValueError(f"gradient length {g.shape} != parameter length {len(params)}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise ValueError(f"non-finite gradient at index {bad[0]}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_values = params.values - state.lr * lr_scale * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params.with_values(new_values), replace(state, m=m, v=v, step=step)


# --- checkpoint format -------------------------------------------------
#
# Core block: magic "DRLP", version u32 LE, n_layers u32 LE, per layer
# (name_len u32, name UTF-8, in_dim u32, out_dim u32, activation u8),
# then the raw f64 LE parameter values. Callers may append trailer bytes
# (policy log_std, discriminator kind tag + metadata).


def params_to_bytes(params: ParamStore, specs: tuple[LayerSpec, ...]) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(specs))]
    for view, spec in zip(params.layout, specs):
        name = view.name.encode("utf-8")
        out.append(struct.pack("<I", len(name)))
        out.append(name)
        out.append(struct.pack("<IIB", spec.in_dim, spec.out_dim, _ACT_CODE[spec.activation]))
    out.append(params.values.astype("<f8").tobytes())
    return b"".join(out)


def params_from_bytes(buf: bytes) -> tuple[ParamStore, tuple[LayerSpec, ...], bytes]:
    """Parse a core block; returns (params, specs, trailing bytes)."""

    def need(n: int, what: str) -> None:
        if len(buf) - pos[0] < n:
            raise ValueError(f"truncated checkpoint: expected {n} more bytes for {what}, got {len(buf) - pos[0]}")

    pos = [0]

    def take(n: int, what: str) -> bytes:
        need(n, what)
        chunk = buf[pos[0] : pos[0] + n]
        pos[0] += n
        return chunk

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise ValueError("bad magic: not a DRLP checkpoint")
    version, n_layers = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    specs = []
    views = []
    offset = 0
    for k in range(n_layers):
        (name_len,) = struct.unpack("<I", take(4, "layer name length"))
        name = take(name_len, "layer name").decode("utf-8")
        in_dim, out_dim, act = struct.unpack("<IIB", take(9, "layer dims"))
        if act not in _ACT_NAME:
            raise ValueError(f"unknown activation code {act}")
        specs.append(LayerSpec(in_dim, out_dim, _ACT_NAME[act]))
        views.append(LayerView(name, offset, in_dim, out_dim))
        offset += specs[-1].size
    raw = take(offset * 8, "parameter values")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    params = ParamStore(values, tuple(views))
    return params, check_chain(specs), buf[pos[0] :]


def save_params(path: str, params: ParamStore, specs: tuple[LayerSpec, ...], trailer: bytes = b"") -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params, specs) + trailer)


def load_params(path: str) -> tuple[ParamStore, tuple[LayerSpec, ...], bytes]:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
