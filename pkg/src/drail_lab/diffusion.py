"""Denoising-diffusion machinery for state-action pairs.

A cosine noise schedule corrupts a concatenated (state, action) vector, and
a small MLP predicts the injected noise given the corrupted vector, a
condition label (all-ones for "real", all-zeros for "fake"), and a time
feature. The squared prediction error for a single random (t, eps) draw is
the training loss; discriminators build classifiers out of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nn_core
from .nn_core import LayerSpec, ParamStore

TIME_MODES = ("sinusoidal", "scalar")

# frequency span of the sinusoidal time features
_MAX_FREQ = 1000.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed cumulative signal levels alpha_bar[0..T]."""

    T: int
    alpha_bar: np.ndarray
    s_offset: float

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)
        if ab.shape != (self.T + 1,):
            raise ValueError(f"alpha_bar must have length T+1={self.T + 1}, got {ab.shape}")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be exactly 1")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if ab[-1] <= 0.0 or np.any(ab > 1.0):
            raise ValueError("alpha_bar entries must lie in (0, 1]")


def build_cosine_schedule(T: int, s_offset: float = 0.008) -> NoiseSchedule:
    """Cosine schedule: squared-cosine falloff with per-step caps at 0.999."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < s_offset < 1.0:
        raise ValueError("s_offset must lie in (0, 1)")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s_offset) / (1.0 + s_offset)) * (math.pi / 2.0)) ** 2
    raw = f / f[0]
    beta = np.minimum(1.0 - raw[1:] / raw[:-1], 0.999)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar, s_offset=s_offset)


def noising(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Corrupt x0 to level t: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    t=0 is allowed (returns x0 exactly); tests use that edge.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def time_embedding(t: int, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of t/T at dim/2 geometric frequencies."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError("time embedding dim must be even and >= 2")
    return _time_embedding_batch(np.asarray([t], dtype=np.float64), T, dim)[0]


def _time_embedding_batch(ts: np.ndarray, T: int, dim: int) -> np.ndarray:
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = _MAX_FREQ ** (np.arange(half) / (half - 1))
    angles = (ts / T)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass(frozen=True)
class ConditionLabel:
    """Binary condition fed to the denoiser: real=all ones, fake=all zeros."""

    kind: str
    embedding: np.ndarray

    def __post_init__(self) -> None:
        emb = np.asarray(self.embedding, dtype=np.float64)
        emb.flags.writeable = False
        object.__setattr__(self, "embedding", emb)
        if self.kind not in ("real", "fake"):
            raise ValueError(f"label kind must be real or fake, got {self.kind!r}")
        want = 1.0 if self.kind == "real" else 0.0
        if emb.size and not np.all(emb == want):
            raise ValueError(f"{self.kind} label must be all {want:g}")


def real_label(label_dim: int) -> ConditionLabel:
    return ConditionLabel("real", np.ones(label_dim))


def fake_label(label_dim: int) -> ConditionLabel:
    return ConditionLabel("fake", np.zeros(label_dim))


@dataclass(frozen=True)
class Denoiser:
    """Conditional noise-prediction MLP over (state, action) vectors."""

    params: ParamStore
    specs: tuple[LayerSpec, ...]
    state_dim: int
    action_dim: int
    label_dim: int
    time_embed_dim: int
    schedule: NoiseSchedule
    time_mode: str = "sinusoidal"

    def __post_init__(self) -> None:
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"time_mode must be one of {TIME_MODES}")
        if self.time_mode == "scalar" and self.time_embed_dim != 1:
            raise ValueError("scalar time mode uses a single t/T feature (time_embed_dim=1)")
        if self.time_mode == "sinusoidal" and self.time_embed_dim % 2 != 0:
            raise ValueError("sinusoidal time embedding dim must be even")
        want_in = self.state_dim + self.action_dim + self.label_dim + self.time_embed_dim
        if self.specs[0].in_dim != want_in:
            raise ValueError(f"denoiser input width {self.specs[0].in_dim} != {want_in}")
        if self.specs[-1].out_dim != self.data_dim:
            raise ValueError("denoiser output width must be state_dim + action_dim")

    @property
    def data_dim(self) -> int:
        return self.state_dim + self.action_dim

    def with_params(self, params: ParamStore) -> "Denoiser":
        return replace(self, params=params)

    def time_features(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        if self.time_mode == "scalar":
            return (ts / self.schedule.T)[:, None]
        return _time_embedding_batch(ts, self.schedule.T, self.time_embed_dim)


def build_denoiser(
    state_dim: int,
    action_dim: int,
    label_dim: int,
    hidden: tuple[int, ...] = (64, 64),
    time_embed_dim: int = 16,
    T: int = 1000,
    s_offset: float = 0.008,
    seed: int = 0,
    time_mode: str = "sinusoidal",
) -> Denoiser:
    """Denoiser with relu hidden layers and an identity output layer."""
    if time_mode == "scalar":
        time_embed_dim = 1
    in_dim = state_dim + action_dim + label_dim + time_embed_dim
    dims = (in_dim, *hidden, state_dim + action_dim)
    specs = tuple(
        LayerSpec(a, b, "relu" if k < len(dims) - 2 else "identity")
        for k, (a, b) in enumerate(zip(dims, dims[1:]))
    )
    return Denoiser(
        params=nn_core.init_params(specs, seed),
        specs=specs,
        state_dim=state_dim,
        action_dim=action_dim,
        label_dim=label_dim,
        time_embed_dim=time_embed_dim,
        schedule=build_cosine_schedule(T, s_offset),
        time_mode=time_mode,
    )


def batched_inputs(
    model: Denoiser,
    x0_rows: np.ndarray,
    ts: np.ndarray,
    eps_rows: np.ndarray,
    label_rows: np.ndarray,
) -> np.ndarray:
    """Assemble network input rows [noised(x0) | label | time features]."""
    x0_rows = np.asarray(x0_rows, dtype=np.float64)
    eps_rows = np.asarray(eps_rows, dtype=np.float64)
    ts = np.asarray(ts)
    ab = model.schedule.alpha_bar[ts]
    noised = np.sqrt(ab)[:, None] * x0_rows + np.sqrt(1.0 - ab)[:, None] * eps_rows
    return np.concatenate([noised, label_rows, model.time_features(ts)], axis=1)


def batched_losses(
    model: Denoiser,
    x0_rows: np.ndarray,
    ts: np.ndarray,
    eps_rows: np.ndarray,
    label_rows: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row single-draw losses; returns (losses, inputs, predictions).

    Loss is the mean over coordinates of the squared noise-prediction
    error, so its scale does not grow with the data dimension.
    """
    inputs = batched_inputs(model, x0_rows, ts, eps_rows, label_rows)
    preds = nn_core.forward_batch(model.params, model.specs, inputs)
    losses = np.mean((preds - eps_rows) ** 2, axis=1)
    return losses, inputs, preds


def loss_grad_upstream(preds: np.ndarray, eps_rows: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Upstream rows for backward_batch when the scalar objective is
    sum_i coeffs[i] * loss_i with loss_i = mean((pred_i - eps_i)^2)."""
    d = preds.shape[1]
    return coeffs[:, None] * (2.0 / d) * (preds - eps_rows)


def predict_noise(
    model: Denoiser,
    s: np.ndarray,
    a: np.ndarray,
    x_t: np.ndarray,
    t: int,
    label: ConditionLabel,
) -> np.ndarray:
    """Noise prediction for one corrupted (state, action) vector."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if s.shape != (model.state_dim,) or a.shape != (model.action_dim,):
        raise ValueError("state/action dims do not match the model")
    if x_t.shape != (model.data_dim,):
        raise ValueError(f"x_t must have length {model.data_dim}")
    if label.embedding.shape != (model.label_dim,):
        raise ValueError(f"label dim {label.embedding.size} != model label dim {model.label_dim}")
    row = np.concatenate([x_t, label.embedding, model.time_features(np.asarray([t]))[0]])
    return nn_core.forward(model.params, model.specs, row)


def diffusion_loss_single(
    model: Denoiser,
    s: np.ndarray,
    a: np.ndarray,
    label: ConditionLabel,
    t: int,
    eps: np.ndarray,
) -> float:
    """Single-draw loss: mean squared error between predicted and injected noise."""
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.all(np.isfinite(eps))):
        raise ValueError("non-finite inputs to diffusion loss")
    if not 1 <= t <= model.schedule.T:
        raise ValueError(f"t={t} outside [1, {model.schedule.T}]")
    x0 = np.concatenate([s, a])
    x_t = noising(x0, t, eps, model.schedule)
    pred = predict_noise(model, s, a, x_t, t, label)
    return float(np.mean((pred - eps) ** 2))
