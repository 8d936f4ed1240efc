"""Gaussian MLP policy, value critic, advantage estimation, and the
clipped-surrogate policy update.

The policy is a diagonal Gaussian with a state-independent learnable
log-std vector. Updates are plain Adam on exact, hand-derived gradients:
the clipped surrogate passes gradient only through samples whose
unclipped branch is active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nn_core
from .errors import NumericalAbort
from .nn_core import AdamState, LayerSpec, ParamStore, adam_step

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
MAX_GRAD_NORM = 0.5
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianPolicy:
    """Mean network plus a per-dimension log-std vector."""

    mean_params: ParamStore
    specs: tuple[LayerSpec, ...]
    log_std: np.ndarray
    state_dim: int
    action_dim: int

    def __post_init__(self) -> None:
        ls = np.clip(np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        ls.flags.writeable = False
        object.__setattr__(self, "log_std", ls)
        if ls.shape != (self.action_dim,):
            raise ValueError("log_std length must equal action_dim")
        if self.specs[0].in_dim != self.state_dim or self.specs[-1].out_dim != self.action_dim:
            raise ValueError("policy network dims do not match state/action dims")


def build_policy(
    state_dim: int,
    action_dim: int,
    hidden: tuple[int, ...] = (64, 64),
    seed: int = 0,
    init_log_std: float = 0.0,
) -> GaussianPolicy:
    dims = (state_dim, *hidden, action_dim)
    specs = tuple(
        LayerSpec(a, b, "tanh" if k < len(dims) - 2 else "identity")
        for k, (a, b) in enumerate(zip(dims, dims[1:]))
    )
    return GaussianPolicy(
        mean_params=nn_core.init_params(specs, seed),
        specs=specs,
        log_std=np.full(action_dim, init_log_std),
        state_dim=state_dim,
        action_dim=action_dim,
    )


def policy_mean_batch(policy: GaussianPolicy, states: np.ndarray) -> np.ndarray:
    return nn_core.forward_batch(policy.mean_params, policy.specs, states)


def _logp_rows(policy: GaussianPolicy, means: np.ndarray, actions: np.ndarray) -> np.ndarray:
    inv_var = np.exp(-2.0 * policy.log_std)
    sq = (actions - means) ** 2 * inv_var
    return -0.5 * np.sum(sq, axis=1) - np.sum(policy.log_std) - 0.5 * policy.action_dim * _LOG_2PI


def policy_sample(policy: GaussianPolicy, s: np.ndarray, rng) -> tuple[np.ndarray, float]:
    """Draw one action and its exact log-density."""
    mean = nn_core.forward(policy.mean_params, policy.specs, s)
    if not np.all(np.isfinite(mean)):
        raise NumericalAbort("policy mean is non-finite")
    std = np.exp(policy.log_std)
    action = mean + std * rng.standard_normal(policy.action_dim)
    logp = float(_logp_rows(policy, mean[None, :], action[None, :])[0])
    return action, logp


def policy_entropy(policy: GaussianPolicy) -> float:
    """Closed-form entropy: 0.5 * sum(1 + log 2 pi + 2 log_std)."""
    return float(0.5 * np.sum(1.0 + _LOG_2PI + 2.0 * policy.log_std))


def policy_logp_entropy(policy: GaussianPolicy, s: np.ndarray, a: np.ndarray) -> tuple[float, float]:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (policy.action_dim,):
        raise ValueError(f"action must have length {policy.action_dim}")
    mean = nn_core.forward(policy.mean_params, policy.specs, s)
    return float(_logp_rows(policy, mean[None, :], a[None, :])[0]), policy_entropy(policy)


def logp_batch(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return _logp_rows(policy, policy_mean_batch(policy, states), np.asarray(actions, dtype=np.float64))


def policy_theta(policy: GaussianPolicy) -> np.ndarray:
    """Flat parameter vector [mean net | log_std] used by the optimizer."""
    return np.concatenate([policy.mean_params.values, policy.log_std])


def policy_with_theta(policy: GaussianPolicy, theta: np.ndarray) -> GaussianPolicy:
    n = len(policy.mean_params)
    return replace(
        policy,
        mean_params=policy.mean_params.with_values(theta[:n]),
        log_std=theta[n:],
    )


def logp_grad(policy: GaussianPolicy, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Gradient of the log-density w.r.t. [mean net | log_std]."""
    a = np.asarray(a, dtype=np.float64)
    mean = nn_core.forward(policy.mean_params, policy.specs, s)
    inv_var = np.exp(-2.0 * policy.log_std)
    d_mean = (a - mean) * inv_var
    g_net = nn_core.backward(policy.mean_params, policy.specs, s, d_mean)
    g_log_std = (a - mean) ** 2 * inv_var - 1.0
    return np.concatenate([g_net, g_log_std])


# --- value function -----------------------------------------------------


@dataclass(frozen=True)
class ValueFn:
    params: ParamStore
    specs: tuple[LayerSpec, ...]


def build_value_fn(state_dim: int, hidden: tuple[int, ...] = (64, 64), seed: int = 0) -> ValueFn:
    dims = (state_dim, *hidden, 1)
    specs = tuple(
        LayerSpec(a, b, "tanh" if k < len(dims) - 2 else "identity")
        for k, (a, b) in enumerate(zip(dims, dims[1:]))
    )
    return ValueFn(nn_core.init_params(specs, seed), specs)


def value_batch(vf: ValueFn, states: np.ndarray) -> np.ndarray:
    return nn_core.forward_batch(vf.params, vf.specs, states)[:, 0]


def value_single(vf: ValueFn, s: np.ndarray) -> float:
    return float(nn_core.forward(vf.params, vf.specs, s)[0])


# --- rollouts and advantages ----------------------------------------------


@dataclass
class RolloutBuffer:
    """Per-step arrays for one rollout; advantages/returns are filled by
    compute_gae and must be normalized before the policy update."""

    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    bootstrap_value: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.states.shape[0]

    def __post_init__(self) -> None:
        n = self.states.shape[0]
        for name in ("actions", "log_probs", "values", "rewards", "dones"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"buffer field {name} has mismatched length")


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Backward-recursion advantage estimates and value targets.

    ``values`` carries one trailing bootstrap entry (length n+1). A done
    flag cuts both the TD residual and the recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    values = np.asarray(values, dtype=np.float64)
    n = rewards.shape[0]
    if values.shape != (n + 1,):
        raise ValueError(f"values must have length {n + 1} (bootstrap included), got {values.shape}")
    if dones.shape != (n,):
        raise ValueError("dones must align with rewards")
    adv = np.empty(n)
    carry = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * nonterminal * values[t + 1] - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[t] = carry
    return adv, adv + values[:n]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# --- ppo ------------------------------------------------------------------


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.001
    epochs: int = 10
    minibatch_size: int = 64
    rollout_steps: int = 2048
    lr: float = 1e-4

    def __post_init__(self) -> None:
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")


@dataclass(frozen=True)
class PpoOptimizer:
    """Adam moments for the policy vector and the critic."""

    policy_opt: AdamState
    value_opt: AdamState

    @classmethod
    def fresh(cls, policy: GaussianPolicy, vf: ValueFn, lr: float) -> "PpoOptimizer":
        return cls(
            AdamState.fresh(len(policy.mean_params) + policy.action_dim, lr),
            AdamState.fresh(len(vf.params), lr),
        )


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample pessimistic surrogate min(r*A, clip(r)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def _clip_global_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def ppo_update(
    policy: GaussianPolicy,
    vf: ValueFn,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    rng,
    opt: PpoOptimizer | None = None,
    lr_scale: float = 1.0,
) -> tuple[GaussianPolicy, ValueFn, PpoOptimizer, dict]:
    """Epochs of shuffled-minibatch updates on the clipped surrogate plus
    value regression and an entropy bonus. Returns fresh snapshots, the
    advanced optimizer, and per-update stats."""
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("buffer advantages must be computed before ppo_update")
    adv = buffer.advantages
    # normalized advantages have mean ~0 and std ~1 (0 in degenerate buffers)
    if abs(float(adv.mean())) > 1e-6 or float(adv.std()) > 1.5:
        raise ValueError("buffer advantages must be normalized before ppo_update")
    if opt is None:
        opt = PpoOptimizer.fresh(policy, vf, cfg.lr)

    n = len(buffer)
    states, actions = buffer.states, buffer.actions
    logp_old, returns = buffer.log_probs, buffer.returns
    n_mean = len(policy.mean_params)

    ratio_sum = 0.0
    clip_count = 0
    sample_count = 0
    loss_sum = 0.0
    batch_count = 0
    initial_ratio_err = None

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            S, A = states[idx], actions[idx]
            adv_mb, ret_mb, old_mb = adv[idx], returns[idx], logp_old[idx]
            nb = idx.size

            means = policy_mean_batch(policy, S)
            logp_new = _logp_rows(policy, means, A)
            ratio = np.exp(logp_new - old_mb)
            if initial_ratio_err is None:
                initial_ratio_err = float(np.max(np.abs(ratio - 1.0)))
            surr = clipped_surrogate(ratio, adv_mb, cfg.clip)
            entropy = policy_entropy(policy)

            values = value_batch(vf, S)
            value_loss = cfg.value_coef * float(np.mean((values - ret_mb) ** 2))
            total_loss = -float(np.mean(surr)) + value_loss - cfg.entropy_coef * entropy
            if not math.isfinite(total_loss):
                raise NumericalAbort("ppo loss is non-finite")

            # gradient flows only where the unclipped branch attains the min
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_mb
            active = unclipped <= clipped
            dsurr_dlogp = np.where(active, ratio * adv_mb, 0.0) / nb

            inv_var = np.exp(-2.0 * policy.log_std)
            dlogp_dmean = (A - means) * inv_var
            upstream = -dsurr_dlogp[:, None] * dlogp_dmean
            g_net = nn_core.backward_batch(policy.mean_params, policy.specs, S, upstream)
            dlogp_dls = (A - means) ** 2 * inv_var - 1.0
            g_ls = -dsurr_dlogp @ dlogp_dls - cfg.entropy_coef * np.ones(policy.action_dim)
            g_policy = _clip_global_norm(np.concatenate([g_net, g_ls]), MAX_GRAD_NORM)

            dv = (2.0 * cfg.value_coef / nb) * (values - ret_mb)
            g_value = _clip_global_norm(
                nn_core.backward_batch(vf.params, vf.specs, S, dv[:, None]), MAX_GRAD_NORM
            )

            theta, policy_adam = adam_step(opt.policy_opt, _theta_store(policy), g_policy, lr_scale)
            policy = policy_with_theta(policy, theta.values)
            v_params, value_adam = adam_step(opt.value_opt, vf.params, g_value, lr_scale)
            vf = replace(vf, params=v_params)
            opt = PpoOptimizer(policy_adam, value_adam)

            ratio_sum += float(np.sum(ratio))
            clip_count += int(np.sum(np.abs(ratio - 1.0) > cfg.clip))
            sample_count += nb
            loss_sum += total_loss
            batch_count += 1

    stats = {
        "ppo_loss": loss_sum / batch_count,
        "mean_ratio": ratio_sum / sample_count,
        "clip_frac": clip_count / sample_count,
        "entropy": policy_entropy(policy),
        "initial_ratio_err": initial_ratio_err,
    }
    return policy, vf, opt, stats


def _theta_store(policy: GaussianPolicy) -> ParamStore:
    # one flat store over [mean net | log_std] so a single Adam tracks both
    theta = policy_theta(policy)
    return ParamStore(theta, (nn_core.LayerView("theta", 0, theta.size - 1, 1),))


# --- checkpoints --------------------------------------------------------------


def save_policy(path: str, policy: GaussianPolicy) -> None:
    """Core parameter block plus the raw log_std vector appended."""
    trailer = policy.log_std.astype("<f8").tobytes()
    nn_core.save_params(path, policy.mean_params, policy.specs, trailer)


def load_policy(path: str) -> GaussianPolicy:
    params, specs, trailer = nn_core.load_params(path)
    action_dim = specs[-1].out_dim
    if len(trailer) != 8 * action_dim:
        raise ValueError(
            f"policy checkpoint trailer must hold {action_dim} log-std values, got {len(trailer)} bytes"
        )
    log_std = np.frombuffer(trailer, dtype="<f8").astype(np.float64)
    return GaussianPolicy(params, specs, log_std, specs[0].in_dim, action_dim)
