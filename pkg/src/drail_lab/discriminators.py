"""Reward-providing discriminators.

Three ways to score how expert-like a state-action pair is:

* drail: a condition-labeled denoiser evaluated under both the "real"
  (all-ones) and "fake" (all-zeros) labels; the logit is the loss gap
  L_fake - L_real under a shared noise draw, so the classifier compares
  the pair's fit under the two hypotheses instead of thresholding a raw
  loss value.
* gail: a sigmoid MLP over the concatenated pair; the reward is the raw
  logit.
* diffail: an unconditional denoiser whose single-draw loss L is mapped to
  a probability exp(-L), which puts the decision boundary at the fixed
  value ln 2.

All losses are the binary cross-entropy with expert pairs as the positive
class, written in softplus form for numerical stability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import diffusion, nn_core
from .diffusion import Denoiser, build_cosine_schedule, build_denoiser
from .nn_core import AdamState, LayerSpec, ParamStore, adam_step

KIND_GAIL = 0
KIND_DIFFAIL = 1
KIND_DRAIL = 2

# floor applied to the diffail loss before the log in its reward, plus the
# reward floor for the opposite limit
DIFFAIL_LOSS_FLOOR = 1e-7
DIFFAIL_REWARD_FLOOR = -20.0


def sigmoid(x):
    """Stable logistic function (exact for any finite magnitude)."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def _check_batch(batch: tuple[np.ndarray, np.ndarray], state_dim: int, action_dim: int, who: str):
    states = np.asarray(batch[0], dtype=np.float64)
    actions = np.asarray(batch[1], dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if actions.ndim == 1:
        actions = actions[None, :]
    if states.shape[0] == 0:
        raise ValueError(f"empty {who} batch")
    if states.shape != (states.shape[0], state_dim) or actions.shape != (states.shape[0], action_dim):
        raise ValueError(f"{who} batch dims do not match the discriminator")
    return states, actions


# --- drail ----------------------------------------------------------------


@dataclass(frozen=True)
class DrailClassifier:
    """Conditional denoiser + optimizer; sample_count draws are averaged
    per logit evaluation, with each draw shared by both label branches."""

    denoiser: Denoiser
    optimizer: AdamState
    sample_count: int = 1

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.denoiser.state_dim

    @property
    def action_dim(self) -> int:
        return self.denoiser.action_dim


def build_drail(
    state_dim: int,
    action_dim: int,
    label_dim: int = 10,
    hidden: tuple[int, ...] = (64, 64),
    time_embed_dim: int = 16,
    T: int = 1000,
    s_offset: float = 0.008,
    lr: float = 1e-3,
    sample_count: int = 1,
    seed: int = 0,
    time_mode: str = "sinusoidal",
) -> DrailClassifier:
    den = build_denoiser(state_dim, action_dim, label_dim, hidden, time_embed_dim, T, s_offset, seed, time_mode)
    return DrailClassifier(den, AdamState.fresh(len(den.params), lr), sample_count)


def _draw(rng: np.random.Generator, n_rows: int, d: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    ts = rng.integers(1, T + 1, size=n_rows)
    eps = rng.standard_normal((n_rows, d))
    return ts, eps


def _branch_losses(clf: DrailClassifier, states: np.ndarray, actions: np.ndarray, rng):
    """Per-sample real/fake losses under shared draws.

    Returns (loss_real, loss_fake) of shape (n,), plus the flat row pieces
    needed for gradients: (x0_rows, ts, eps, inputs, preds) where rows run
    over [all real rows, then all fake rows], each sample repeated
    sample_count times.
    """
    n = states.shape[0]
    m = clf.sample_count
    den = clf.denoiser
    x0 = np.concatenate([states, actions], axis=1)
    x0_rows = np.repeat(x0, m, axis=0)
    ts, eps = _draw(rng, n * m, den.data_dim, den.schedule.T)
    ones = np.ones((n * m, den.label_dim))
    zeros = np.zeros((n * m, den.label_dim))
    losses, inputs, preds = diffusion.batched_losses(
        den,
        np.concatenate([x0_rows, x0_rows]),
        np.concatenate([ts, ts]),
        np.concatenate([eps, eps]),
        np.concatenate([ones, zeros]),
    )
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite denoiser output")
    loss_real = losses[: n * m].reshape(n, m).mean(axis=1)
    loss_fake = losses[n * m :].reshape(n, m).mean(axis=1)
    return loss_real, loss_fake, x0_rows, ts, eps, inputs, preds


def drail_logit_batch(clf: DrailClassifier, states: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    """Loss gaps L_fake - L_real for a batch, one shared draw set per pair."""
    states, actions = _check_batch((states, actions), clf.state_dim, clf.action_dim, "input")
    loss_real, loss_fake, *_ = _branch_losses(clf, states, actions, rng)
    return loss_fake - loss_real


def drail_logit(clf: DrailClassifier, s: np.ndarray, a: np.ndarray, rng):
    """Single-pair logit; returns (delta, (ts, eps)) so the draw can be replayed."""
    states, actions = _check_batch((s, a), clf.state_dim, clf.action_dim, "input")
    loss_real, loss_fake, _, ts, eps, _, _ = _branch_losses(clf, states, actions, rng)
    return float(loss_fake[0] - loss_real[0]), (ts, eps)


def drail_prob(delta: float) -> float:
    """Probability the pair is expert: logistic of the loss gap."""
    if not np.isfinite(delta):
        raise ValueError("delta must be finite")
    return float(sigmoid(delta))


def drail_reward(clf: DrailClassifier, s: np.ndarray, a: np.ndarray, rng) -> float:
    """Log-odds reward. Algebraically log D - log(1 - D) collapses back to
    the loss gap itself, so the gap is returned directly (no sigmoid/log
    round trip, no saturation)."""
    delta, _ = drail_logit(clf, s, a, rng)
    return delta


def drail_reward_batch(clf: DrailClassifier, states: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    return drail_logit_batch(clf, states, actions, rng)


def drail_disc_loss(
    clf: DrailClassifier,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
    rng,
) -> tuple[float, np.ndarray]:
    """Binary cross-entropy over the two batches and its exact parameter
    gradient: mean softplus(-delta) on expert pairs + mean softplus(delta)
    on agent pairs."""
    se, ae = _check_batch(expert_batch, clf.state_dim, clf.action_dim, "expert")
    sa, aa = _check_batch(agent_batch, clf.state_dim, clf.action_dim, "agent")
    n_e, n_a = se.shape[0], sa.shape[0]
    states = np.concatenate([se, sa])
    actions = np.concatenate([ae, aa])
    loss_real, loss_fake, _, _, eps, inputs, preds = _branch_losses(clf, states, actions, rng)
    delta = loss_fake - loss_real
    loss = float(np.mean(softplus(-delta[:n_e])) + np.mean(softplus(delta[n_e:])))

    # d loss / d delta_i, spread over the per-draw rows of each branch
    # (each of the M draws contributes 1/M of the sample's delta)
    dd = np.empty(n_e + n_a)
    dd[:n_e] = -sigmoid(-delta[:n_e]) / n_e
    dd[n_e:] = sigmoid(delta[n_e:]) / n_a
    m = clf.sample_count
    per_row = np.repeat(dd / m, m)
    coeffs = np.concatenate([-per_row, per_row])  # real rows carry -1, fake rows +1
    upstream = diffusion.loss_grad_upstream(preds, np.concatenate([eps, eps]), coeffs)
    grad = nn_core.backward_batch(clf.denoiser.params, clf.denoiser.specs, inputs, upstream)
    return loss, grad


def drail_update(
    clf: DrailClassifier,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
    rng,
) -> tuple[DrailClassifier, float]:
    """One Adam step on the classifier loss; returns (new snapshot, loss)."""
    loss, grad = drail_disc_loss(clf, expert_batch, agent_batch, rng)
    params, opt = adam_step(clf.optimizer, clf.denoiser.params, grad)
    return replace(clf, denoiser=clf.denoiser.with_params(params), optimizer=opt), loss


# --- gail -------------------------------------------------------------------


@dataclass(frozen=True)
class GailDiscriminator:
    """Sigmoid MLP over [state | action]; single real output."""

    params: ParamStore
    specs: tuple[LayerSpec, ...]
    optimizer: AdamState
    state_dim: int
    action_dim: int

    def __post_init__(self) -> None:
        if self.specs[-1].out_dim != 1:
            raise ValueError("discriminator output must be a single real")
        if self.specs[0].in_dim != self.state_dim + self.action_dim:
            raise ValueError("discriminator input width must be state_dim + action_dim")


def build_gail(
    state_dim: int,
    action_dim: int,
    hidden: tuple[int, ...] = (64, 64),
    lr: float = 1e-3,
    seed: int = 0,
) -> GailDiscriminator:
    dims = (state_dim + action_dim, *hidden, 1)
    specs = tuple(
        LayerSpec(a, b, "tanh" if k < len(dims) - 2 else "identity")
        for k, (a, b) in enumerate(zip(dims, dims[1:]))
    )
    params = nn_core.init_params(specs, seed)
    return GailDiscriminator(params, specs, AdamState.fresh(len(params), lr), state_dim, action_dim)


def gail_logit_batch(disc: GailDiscriminator, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    states, actions = _check_batch((states, actions), disc.state_dim, disc.action_dim, "input")
    rows = np.concatenate([states, actions], axis=1)
    return nn_core.forward_batch(disc.params, disc.specs, rows)[:, 0]


def gail_prob(disc: GailDiscriminator, s: np.ndarray, a: np.ndarray) -> float:
    return float(sigmoid(gail_logit_batch(disc, s, a)[0]))


def gail_reward(disc: GailDiscriminator, s: np.ndarray, a: np.ndarray) -> float:
    """Log-odds reward: for a sigmoid head, log D - log(1 - D) is the raw logit."""
    return float(gail_logit_batch(disc, s, a)[0])


def gail_reward_batch(disc: GailDiscriminator, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return gail_logit_batch(disc, states, actions)


def gail_disc_loss(
    disc: GailDiscriminator,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
) -> tuple[float, np.ndarray]:
    se, ae = _check_batch(expert_batch, disc.state_dim, disc.action_dim, "expert")
    sa, aa = _check_batch(agent_batch, disc.state_dim, disc.action_dim, "agent")
    n_e, n_a = se.shape[0], sa.shape[0]
    rows = np.concatenate([np.concatenate([se, ae], axis=1), np.concatenate([sa, aa], axis=1)])
    z = nn_core.forward_batch(disc.params, disc.specs, rows)[:, 0]
    loss = float(np.mean(softplus(-z[:n_e])) + np.mean(softplus(z[n_e:])))
    dz = np.empty(n_e + n_a)
    dz[:n_e] = -sigmoid(-z[:n_e]) / n_e
    dz[n_e:] = sigmoid(z[n_e:]) / n_a
    grad = nn_core.backward_batch(disc.params, disc.specs, rows, dz[:, None])
    return loss, grad


def gail_update(
    disc: GailDiscriminator,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
) -> tuple[GailDiscriminator, float]:
    loss, grad = gail_disc_loss(disc, expert_batch, agent_batch)
    params, opt = adam_step(disc.optimizer, disc.params, grad)
    return replace(disc, params=params, optimizer=opt), loss


# --- diffail ------------------------------------------------------------------


@dataclass(frozen=True)
class DiffailDiscriminator:
    """Unconditional denoiser; probability exp(-L), boundary at L = ln 2."""

    denoiser: Denoiser
    optimizer: AdamState
    sample_count: int = 1

    def __post_init__(self) -> None:
        if self.denoiser.label_dim != 0:
            raise ValueError("diffail denoiser must be unconditional (label_dim 0)")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def state_dim(self) -> int:
        return self.denoiser.state_dim

    @property
    def action_dim(self) -> int:
        return self.denoiser.action_dim


def build_diffail(
    state_dim: int,
    action_dim: int,
    hidden: tuple[int, ...] = (64, 64),
    time_embed_dim: int = 16,
    T: int = 1000,
    s_offset: float = 0.008,
    lr: float = 1e-3,
    sample_count: int = 1,
    seed: int = 0,
    time_mode: str = "sinusoidal",
) -> DiffailDiscriminator:
    den = build_denoiser(state_dim, action_dim, 0, hidden, time_embed_dim, T, s_offset, seed, time_mode)
    return DiffailDiscriminator(den, AdamState.fresh(len(den.params), lr), sample_count)


def _diffail_losses(disc: DiffailDiscriminator, states: np.ndarray, actions: np.ndarray, rng):
    n = states.shape[0]
    m = disc.sample_count
    den = disc.denoiser
    x0_rows = np.repeat(np.concatenate([states, actions], axis=1), m, axis=0)
    ts, eps = _draw(rng, n * m, den.data_dim, den.schedule.T)
    losses, inputs, preds = diffusion.batched_losses(den, x0_rows, ts, eps, np.zeros((n * m, 0)))
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite denoiser output")
    return losses.reshape(n, m).mean(axis=1), ts, eps, inputs, preds


def diffail_loss_batch(disc: DiffailDiscriminator, states: np.ndarray, actions: np.ndarray, rng) -> np.ndarray:
    states, actions = _check_batch((states, actions), disc.state_dim, disc.action_dim, "input")
    return _diffail_losses(disc, states, actions, rng)[0]


def diffail_prob(disc: DiffailDiscriminator, s: np.ndarray, a: np.ndarray, rng) -> tuple[float, float]:
    """Returns (probability, L). Probability is exp(-L), in (0, 1]."""
    L = float(diffail_loss_batch(disc, s, a, rng)[0])
    return float(np.exp(-L)), L


def diffail_reward_from_loss(L: np.ndarray) -> tuple[np.ndarray, int]:
    """Log-odds reward -L - log(1 - exp(-L)) with the documented guards.

    L is floored at DIFFAIL_LOSS_FLOOR (else the reward diverges to +inf);
    the opposite limit is floored at DIFFAIL_REWARD_FLOOR. Returns the
    rewards and how many entries hit the loss floor (saturation count).
    """
    L = np.asarray(L, dtype=np.float64)
    saturated = int(np.sum(L < DIFFAIL_LOSS_FLOOR))
    Lc = np.maximum(L, DIFFAIL_LOSS_FLOOR)
    r = -Lc - np.log(-np.expm1(-Lc))
    return np.maximum(r, DIFFAIL_REWARD_FLOOR), saturated


def diffail_reward(disc: DiffailDiscriminator, s: np.ndarray, a: np.ndarray, rng) -> float:
    L = diffail_loss_batch(disc, s, a, rng)
    return float(diffail_reward_from_loss(L)[0][0])


def diffail_reward_batch(
    disc: DiffailDiscriminator, states: np.ndarray, actions: np.ndarray, rng
) -> tuple[np.ndarray, int]:
    return diffail_reward_from_loss(diffail_loss_batch(disc, states, actions, rng))


def diffail_disc_loss(
    disc: DiffailDiscriminator,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
    rng,
) -> tuple[float, np.ndarray]:
    """Cross-entropy on D = exp(-L): expert term is L itself, agent term is
    -log(1 - exp(-L)) with the loss floor applied."""
    se, ae = _check_batch(expert_batch, disc.state_dim, disc.action_dim, "expert")
    sa, aa = _check_batch(agent_batch, disc.state_dim, disc.action_dim, "agent")
    n_e, n_a = se.shape[0], sa.shape[0]
    L, _, eps, inputs, preds = _diffail_losses(disc, np.concatenate([se, sa]), np.concatenate([ae, aa]), rng)
    La = np.maximum(L[n_e:], DIFFAIL_LOSS_FLOOR)
    loss = float(np.mean(L[:n_e]) - np.mean(np.log(-np.expm1(-La))))
    dL = np.empty(n_e + n_a)
    dL[:n_e] = 1.0 / n_e
    # d/dL of -log(1 - exp(-L)) is -1/(exp(L) - 1)
    dL[n_e:] = -1.0 / np.expm1(La) / n_a
    coeffs = np.repeat(dL / disc.sample_count, disc.sample_count)
    upstream = diffusion.loss_grad_upstream(preds, eps, coeffs)
    grad = nn_core.backward_batch(disc.denoiser.params, disc.denoiser.specs, inputs, upstream)
    return loss, grad


def diffail_update(
    disc: DiffailDiscriminator,
    expert_batch: tuple[np.ndarray, np.ndarray],
    agent_batch: tuple[np.ndarray, np.ndarray],
    rng,
) -> tuple[DiffailDiscriminator, float]:
    loss, grad = diffail_disc_loss(disc, expert_batch, agent_batch, rng)
    params, opt = adam_step(disc.optimizer, disc.denoiser.params, grad)
    return replace(disc, denoiser=disc.denoiser.with_params(params), optimizer=opt), loss


# --- shared helpers -------------------------------------------------------


def discriminator_probs(disc, points: np.ndarray, rng, samples_per_point: int = 1) -> np.ndarray:
    """Mean expert-probability per (state | action) row, averaged over
    samples_per_point independent draws (gail is deterministic)."""
    points = np.asarray(points, dtype=np.float64)
    states = points[:, : disc.state_dim]
    actions = points[:, disc.state_dim :]
    if isinstance(disc, GailDiscriminator):
        return sigmoid(gail_logit_batch(disc, states, actions))
    acc = np.zeros(points.shape[0])
    for _ in range(samples_per_point):
        if isinstance(disc, DrailClassifier):
            acc += sigmoid(drail_logit_batch(disc, states, actions, rng))
        elif isinstance(disc, DiffailDiscriminator):
            acc += np.exp(-diffail_loss_batch(disc, states, actions, rng))
        else:
            raise TypeError(f"unknown discriminator type {type(disc).__name__}")
    return acc / samples_per_point


def reward_for(disc, states: np.ndarray, actions: np.ndarray, rng) -> tuple[np.ndarray, int]:
    """Method-specific raw rewards plus a saturation count (diffail only)."""
    if isinstance(disc, DrailClassifier):
        return drail_reward_batch(disc, states, actions, rng), 0
    if isinstance(disc, GailDiscriminator):
        return gail_reward_batch(disc, states, actions), 0
    if isinstance(disc, DiffailDiscriminator):
        return diffail_reward_batch(disc, states, actions, rng)
    raise TypeError(f"unknown discriminator type {type(disc).__name__}")


# --- checkpointing ----------------------------------------------------------
#
# Discriminator files are the nn-core block plus a trailer: kind u8, then
# kind-specific metadata (dims, schedule parameters, draw count, learning
# rate), packed little-endian.

_TIME_MODE_CODE = {"sinusoidal": 0, "scalar": 1}
_TIME_MODE_NAME = {v: k for k, v in _TIME_MODE_CODE.items()}

_GAIL_META = struct.Struct("<IId")
_DIFFUSION_META = struct.Struct("<IIIIBIdId")


def _denoiser_trailer(kind: int, disc) -> bytes:
    den = disc.denoiser
    return bytes([kind]) + _DIFFUSION_META.pack(
        den.state_dim,
        den.action_dim,
        den.label_dim,
        den.time_embed_dim,
        _TIME_MODE_CODE[den.time_mode],
        den.schedule.T,
        den.schedule.s_offset,
        disc.sample_count,
        disc.optimizer.lr,
    )


def save_discriminator(path: str, disc) -> None:
    if isinstance(disc, GailDiscriminator):
        trailer = bytes([KIND_GAIL]) + _GAIL_META.pack(disc.state_dim, disc.action_dim, disc.optimizer.lr)
        nn_core.save_params(path, disc.params, disc.specs, trailer)
    elif isinstance(disc, DiffailDiscriminator):
        nn_core.save_params(path, disc.denoiser.params, disc.denoiser.specs, _denoiser_trailer(KIND_DIFFAIL, disc))
    elif isinstance(disc, DrailClassifier):
        nn_core.save_params(path, disc.denoiser.params, disc.denoiser.specs, _denoiser_trailer(KIND_DRAIL, disc))
    else:
        raise TypeError(f"unknown discriminator type {type(disc).__name__}")


def load_discriminator(path: str):
    params, specs, trailer = nn_core.load_params(path)
    if not trailer:
        raise ValueError("not a discriminator checkpoint: missing kind tag")
    kind, payload = trailer[0], trailer[1:]
    if kind == KIND_GAIL:
        if len(payload) != _GAIL_META.size:
            raise ValueError("corrupt gail checkpoint trailer")
        state_dim, action_dim, lr = _GAIL_META.unpack(payload)
        return GailDiscriminator(params, specs, AdamState.fresh(len(params), lr), state_dim, action_dim)
    if kind in (KIND_DIFFAIL, KIND_DRAIL):
        if len(payload) != _DIFFUSION_META.size:
            raise ValueError("corrupt diffusion discriminator trailer")
        s_dim, a_dim, label_dim, te_dim, tm, T, s_offset, m, lr = _DIFFUSION_META.unpack(payload)
        den = Denoiser(
            params=params,
            specs=specs,
            state_dim=s_dim,
            action_dim=a_dim,
            label_dim=label_dim,
            time_embed_dim=te_dim,
            schedule=build_cosine_schedule(T, s_offset),
            time_mode=_TIME_MODE_NAME[tm],
        )
        opt = AdamState.fresh(len(params), lr)
        if kind == KIND_DIFFAIL:
            return DiffailDiscriminator(den, opt, m)
        return DrailClassifier(den, opt, m)
    raise ValueError(f"unknown discriminator kind {kind}")
