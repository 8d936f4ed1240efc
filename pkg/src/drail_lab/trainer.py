"""Alternating adversarial-imitation training loop.

Each iteration collects an on-policy rollout, fits the discriminator on
expert-vs-rollout minibatches, labels the rollout with the method's
log-odds reward, and takes a clipped-surrogate policy step. Also houses
the supervised behavior-cloning baseline, deterministic evaluation, and
reward-landscape export over the sine world.
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from . import envs, nn_core
from .discriminators import (
    DiffailDiscriminator,
    DrailClassifier,
    GailDiscriminator,
    build_diffail,
    build_drail,
    build_gail,
    diffail_update,
    discriminator_probs,
    drail_update,
    gail_update,
    reward_for,
)
from .envs import ExpertDataset, Grid, dataset_load, make_env, truncate_trajectories, truncate_transitions
from .errors import NumericalAbort
from .policy_opt import (
    GaussianPolicy,
    PpoConfig,
    PpoOptimizer,
    RolloutBuffer,
    ValueFn,
    build_policy,
    build_value_fn,
    compute_gae,
    normalize_advantages,
    policy_mean_batch,
    policy_sample,
    ppo_update,
    value_single,
)

METHODS = ("drail", "gail", "diffail", "bc")

REWARD_CLAMP = 20.0
_LABEL_CHUNK = 512

METRICS_HEADER = (
    "env_steps",
    "iter",
    "disc_loss",
    "ppo_loss",
    "mean_reward",
    "success_rate",
    "mean_return",
    "clip_frac",
    "clamped_rewards",
)


# --- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Fully materialized run description; everything a run needs flows
    from these fields plus the single seed."""

    method: str = "drail"
    env: str = "point_reach"
    expert_path: str = ""
    total_env_steps: int = 300_000
    seed: int = 0
    noise_scale: float = 1.0
    horizon: int = 200
    wall: bool = False
    max_expert_trajectories: int | None = None
    max_expert_transitions: int | None = None
    # discriminator
    disc_lr: float = 1e-3
    disc_hidden: tuple[int, ...] = (64, 64)
    disc_batch: int = 128
    label_dim: int = 10
    time_embed_dim: int = 16
    time_mode: str = "sinusoidal"
    schedule_steps: int = 1000
    s_offset: float = 0.008
    sample_count: int = 1
    reward_sample_count: int = 4
    # policy and critic
    ppo: PpoConfig = PpoConfig()
    policy_hidden: tuple[int, ...] = (64, 64)
    value_hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    # behavior cloning
    bc_epochs: int = 200
    bc_lr: float = 1e-3
    bc_batch: int = 64
    # evaluation
    eval_interval: int = 50_000
    eval_episodes: int = 50
    eval_stochastic: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if self.env not in envs.ENV_NAMES:
            raise ValueError(f"unknown env {self.env!r}; valid envs: {', '.join(envs.ENV_NAMES)}")
        if self.method != "bc" and self.total_env_steps < self.ppo.rollout_steps:
            raise ValueError("total_env_steps must cover at least one rollout")
        for name in ("disc_batch", "schedule_steps", "sample_count", "reward_sample_count",
                     "eval_interval", "eval_episodes", "bc_epochs", "bc_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("disc_hidden", "policy_hidden", "value_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))


_TUPLE_FIELDS = ("disc_hidden", "policy_hidden", "value_hidden")
_OPTIONAL_INT_FIELDS = ("max_expert_trajectories", "max_expert_transitions")


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for name in _TUPLE_FIELDS:
        d[name] = list(d[name])
    return d


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name: f for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        if key == "ppo":
            ppo_known = {f.name for f in dataclasses.fields(PpoConfig)}
            for sub in value:
                if sub not in ppo_known:
                    raise ValueError(f"unknown config key 'ppo.{sub}'")
            kwargs["ppo"] = PpoConfig(**value)
        elif key in _TUPLE_FIELDS:
            kwargs[key] = tuple(int(w) for w in value)
        elif key in _OPTIONAL_INT_FIELDS:
            kwargs[key] = None if value is None else int(value)
        else:
            kwargs[key] = value
    return TrainConfig(**kwargs)


# --- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Exact success accounting over deterministic-policy episodes."""

    success_rate: float
    mean_return: float
    episodes: int
    per_seed: tuple[tuple[int, float], ...]

    def to_dict(self) -> dict:
        return {
            "success_rate": self.success_rate,
            "mean_return": self.mean_return,
            "episodes": self.episodes,
            "per_seed": [[s, r] for s, r in self.per_seed],
        }


def policy_actor(policy: GaussianPolicy, stochastic: bool = False, rng=None):
    """Observation -> action closure; the default is the mean action."""
    if stochastic:
        if rng is None:
            raise ValueError("stochastic actor needs an rng")
        return lambda obs: policy_sample(policy, obs, rng)[0]
    return lambda obs: policy_mean_batch(policy, obs[None, :])[0]


def evaluate(
    policy,
    env_name: str,
    n_episodes: int,
    seed: int,
    noise_scale: float = 1.0,
    horizon: int = envs.DEFAULT_HORIZON,
    wall: bool = False,
    stochastic: bool = False,
    n_seeds: int = 1,
) -> EvalReport:
    """Run episodes split across n_seeds eval streams and count successes.

    The per-episode return is the env's success label (1.0 on success),
    so mean_return never involves the learned reward.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if n_seeds < 1 or n_seeds > n_episodes:
        raise ValueError("n_seeds must lie in [1, n_episodes]")
    per_seed = []
    total_wins = 0
    base, extra = divmod(n_episodes, n_seeds)
    for i in range(n_seeds):
        sub_seed = seed + i
        episodes_here = base + (1 if i < extra else 0)
        env = make_env(env_name, seed=sub_seed, noise_scale=noise_scale, horizon=horizon, wall=wall)
        if callable(policy):
            actor = policy
        else:
            actor = policy_actor(policy, stochastic, np.random.default_rng(sub_seed))
        wins = 0
        for _ in range(episodes_here):
            obs = env.reset()
            done = False
            success = False
            while not done:
                obs, _, done, success = env.step(actor(obs))
            wins += int(success)
        per_seed.append((sub_seed, wins / episodes_here))
        total_wins += wins
    rate = total_wins / n_episodes
    return EvalReport(rate, rate, n_episodes, tuple(per_seed))


# --- rollouts and reward labeling -------------------------------------------


def collect_rollout(env, policy: GaussianPolicy, vf: ValueFn, n_steps: int, rng) -> RolloutBuffer:
    """Sample n_steps on-policy transitions across auto-resetting episodes.

    Rewards stay zero; the discriminator labels them afterwards. The
    trailing value bootstraps truncated episodes (zero after a done).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    states = np.empty((n_steps, env.state_dim))
    actions = np.empty((n_steps, env.action_dim))
    log_probs = np.empty(n_steps)
    values = np.empty(n_steps)
    dones = np.zeros(n_steps, dtype=bool)
    obs = env.reset()
    done = False
    for t in range(n_steps):
        if done:
            obs = env.reset()
        states[t] = obs
        values[t] = value_single(vf, obs)
        action, log_probs[t] = policy_sample(policy, obs, rng)
        actions[t] = action
        obs, _, done, _ = env.step(action)
        dones[t] = done
    bootstrap = 0.0 if done else value_single(vf, obs)
    return RolloutBuffer(states, actions, log_probs, values, np.zeros(n_steps), dones, float(bootstrap))


def label_rewards(buffer: RolloutBuffer, disc, rng) -> tuple[RolloutBuffer, dict]:
    """Fill buffer.rewards with the clamped method reward.

    Work is split into fixed-size chunks, each with a seed derived from
    (root, chunk), so results do not depend on DRAIL_THREADS.
    """
    n = len(buffer)
    root = int(rng.integers(0, 2**63))
    n_chunks = math.ceil(n / _LABEL_CHUNK)

    def work(c: int) -> tuple[np.ndarray, int]:
        lo = c * _LABEL_CHUNK
        hi = min(n, lo + _LABEL_CHUNK)
        chunk_rng = np.random.default_rng(np.random.SeedSequence((root, c)))
        return reward_for(disc, buffer.states[lo:hi], buffer.actions[lo:hi], chunk_rng)

    threads = int(os.environ.get("DRAIL_THREADS", "1"))
    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(c) for c in range(n_chunks)]
    raw = np.concatenate([p[0] for p in parts])
    saturated = sum(p[1] for p in parts)
    if not np.all(np.isfinite(raw)):
        raise NumericalAbort("non-finite reward from the discriminator")
    clamped = int(np.sum(np.abs(raw) > REWARD_CLAMP))
    buffer.rewards = np.clip(raw, -REWARD_CLAMP, REWARD_CLAMP)
    stats = {
        "mean_reward": float(buffer.rewards.mean()),
        "clamped": clamped,
        "saturated": int(saturated),
    }
    return buffer, stats


# --- behavior cloning --------------------------------------------------------


def bc_loss(policy: GaussianPolicy, dataset: ExpertDataset) -> float:
    pred = policy_mean_batch(policy, dataset.states)
    return float(np.mean((pred - dataset.actions) ** 2))


def bc_train(
    dataset: ExpertDataset,
    policy: GaussianPolicy,
    epochs: int,
    lr: float,
    rng,
    batch_size: int = 64,
) -> GaussianPolicy:
    """Minimize mean squared error between the policy mean and expert
    actions with shuffled-minibatch Adam; log_std is left untouched."""
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    n = len(dataset)
    d_out = dataset.action_dim
    opt = nn_core.AdamState.fresh(len(policy.mean_params), lr)
    params = policy.mean_params
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            S = dataset.states[idx]
            A = dataset.actions[idx]
            pred = nn_core.forward_batch(params, policy.specs, S)
            upstream = (2.0 / (idx.size * d_out)) * (pred - A)
            grad = nn_core.backward_batch(params, policy.specs, S, upstream)
            params, opt = nn_core.adam_step(opt, params, grad)
    return replace(policy, mean_params=params)


# --- reward landscape ---------------------------------------------------------


@dataclass(frozen=True)
class RewardGrid:
    """Discriminator probability D over an (s, a) lattice, row-major in s."""

    s_axis: np.ndarray
    a_axis: np.ndarray
    values: np.ndarray
    method: str

    def __post_init__(self) -> None:
        if self.values.shape != (self.s_axis.size, self.a_axis.size):
            raise ValueError("values must have shape (len(s_axis), len(a_axis))")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")


def reward_map(disc, grid: Grid, rng, samples_per_cell: int = 4) -> RewardGrid:
    """Mean discriminator probability per lattice cell over
    samples_per_cell independent draws."""
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    if disc.state_dim + disc.action_dim != 2:
        raise ValueError("reward_map expects a 1-D state, 1-D action discriminator")
    probs = discriminator_probs(disc, grid.points, rng, samples_per_cell)
    values = probs.reshape(grid.s_axis.size, grid.a_axis.size)
    if isinstance(disc, DrailClassifier):
        method = "drail"
    elif isinstance(disc, GailDiscriminator):
        method = "gail"
    else:
        method = "diffail"
    return RewardGrid(grid.s_axis, grid.a_axis, values, method)


def grid_to_csv(grid: RewardGrid) -> str:
    """First row holds the a-axis, first column the s-axis, cells hold D."""
    lines = ["," + ",".join(_fmt(a) for a in grid.a_axis)]
    for i, s in enumerate(grid.s_axis):
        lines.append(_fmt(s) + "," + ",".join(_fmt(v) for v in grid.values[i]))
    return "\n".join(lines) + "\n"


# --- the training loop ---------------------------------------------------------


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_fn: ValueFn
    discriminator: object | None
    metrics: list[dict]
    csv_text: str
    counters: dict
    final_eval: EvalReport | None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_to_csv(rows: list[dict]) -> str:
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in METRICS_HEADER))
    return "\n".join(lines) + "\n"


@contextmanager
def _abort_scope(iteration: int, stage: str):
    # funnels non-finite failures into one exit path with loop context
    try:
        yield
    except NumericalAbort as e:
        raise NumericalAbort(f"iteration {iteration}, {stage}: {e}") from None
    except ValueError as e:
        if "non-finite" in str(e):
            raise NumericalAbort(f"iteration {iteration}, {stage}: {e}") from None
        raise


def _load_expert(cfg: TrainConfig) -> ExpertDataset:
    dataset = dataset_load(cfg.expert_path)
    if cfg.max_expert_trajectories is not None:
        dataset = truncate_trajectories(dataset, cfg.max_expert_trajectories)
    if cfg.max_expert_transitions is not None:
        dataset = truncate_transitions(dataset, cfg.max_expert_transitions)
    return dataset


def _build_discriminator(cfg: TrainConfig, state_dim: int, action_dim: int, seed: int):
    if cfg.method == "gail":
        return build_gail(state_dim, action_dim, cfg.disc_hidden, cfg.disc_lr, seed)
    if cfg.method == "drail":
        return build_drail(
            state_dim,
            action_dim,
            label_dim=cfg.label_dim,
            hidden=cfg.disc_hidden,
            time_embed_dim=cfg.time_embed_dim,
            T=cfg.schedule_steps,
            s_offset=cfg.s_offset,
            lr=cfg.disc_lr,
            sample_count=cfg.sample_count,
            seed=seed,
            time_mode=cfg.time_mode,
        )
    if cfg.method == "diffail":
        return build_diffail(
            state_dim,
            action_dim,
            hidden=cfg.disc_hidden,
            time_embed_dim=cfg.time_embed_dim,
            T=cfg.schedule_steps,
            s_offset=cfg.s_offset,
            lr=cfg.disc_lr,
            sample_count=cfg.sample_count,
            seed=seed,
            time_mode=cfg.time_mode,
        )
    return None


def _disc_update(disc, expert_batch, agent_batch, rng):
    if isinstance(disc, DrailClassifier):
        return drail_update(disc, expert_batch, agent_batch, rng)
    if isinstance(disc, DiffailDiscriminator):
        return diffail_update(disc, expert_batch, agent_batch, rng)
    return gail_update(disc, expert_batch, agent_batch)


def train(cfg: TrainConfig) -> TrainResult:
    """Run the full alternating loop (or the supervised bc branch) and
    return final nets plus the metrics log. Deterministic given cfg."""
    dataset = _load_expert(cfg)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(10)
    (env_seed, policy_seed, value_seed, disc_seed, rollout_seed,
     batch_seed, label_seed, ppo_seed, eval_seed, bc_seed) = (int(s) for s in seeds)

    env = make_env(cfg.env, seed=env_seed, noise_scale=cfg.noise_scale, horizon=cfg.horizon, wall=cfg.wall)
    if dataset.state_dim != env.state_dim or dataset.action_dim != env.action_dim:
        raise ValueError(
            f"expert dataset dims ({dataset.state_dim}, {dataset.action_dim}) do not match "
            f"env {cfg.env!r} dims ({env.state_dim}, {env.action_dim})"
        )
    policy = build_policy(env.state_dim, env.action_dim, cfg.policy_hidden, policy_seed, cfg.init_log_std)
    vf = build_value_fn(env.state_dim, cfg.value_hidden, value_seed)

    def run_eval(pol: GaussianPolicy) -> EvalReport:
        return evaluate(
            pol,
            cfg.env,
            cfg.eval_episodes,
            eval_seed,
            noise_scale=cfg.noise_scale,
            horizon=cfg.horizon,
            wall=cfg.wall,
            stochastic=cfg.eval_stochastic,
        )

    counters = {"iterations": 0, "rollouts": 0, "disc_minibatches": 0,
                "labelings": 0, "gae_passes": 0, "ppo_passes": 0}

    if cfg.method == "bc":
        with _abort_scope(1, "behavior cloning"):
            policy = bc_train(dataset, policy, cfg.bc_epochs, cfg.bc_lr,
                              np.random.default_rng(bc_seed), cfg.bc_batch)
            final_loss = bc_loss(policy, dataset)
        report = run_eval(policy)
        rows = [{
            "env_steps": 0, "iter": 1, "disc_loss": None, "ppo_loss": final_loss,
            "mean_reward": None, "success_rate": report.success_rate,
            "mean_return": report.mean_return, "clip_frac": None, "clamped_rewards": None,
        }]
        return TrainResult(policy, vf, None, rows, metrics_to_csv(rows), counters, report)

    disc = _build_discriminator(cfg, env.state_dim, env.action_dim, disc_seed)
    rollout_rng = np.random.default_rng(rollout_seed)
    batch_rng = np.random.default_rng(batch_seed)
    label_rng = np.random.default_rng(label_seed)
    ppo_rng = np.random.default_rng(ppo_seed)
    opt: PpoOptimizer | None = None

    rows: list[dict] = []
    report: EvalReport | None = None
    steps_done = 0
    iteration = 0
    rollout_len = cfg.ppo.rollout_steps
    while steps_done < cfg.total_env_steps:
        iteration += 1
        with _abort_scope(iteration, "rollout"):
            buffer = collect_rollout(env, policy, vf, rollout_len, rollout_rng)
        counters["rollouts"] += 1

        disc_losses = []
        with _abort_scope(iteration, "discriminator update"):
            order = batch_rng.permutation(rollout_len)
            for start in range(0, rollout_len, cfg.disc_batch):
                idx = order[start : start + cfg.disc_batch]
                e_idx = batch_rng.integers(0, len(dataset), size=idx.size)
                expert_batch = (dataset.states[e_idx], dataset.actions[e_idx])
                agent_batch = (buffer.states[idx], buffer.actions[idx])
                disc, loss = _disc_update(disc, expert_batch, agent_batch, batch_rng)
                disc_losses.append(loss)
                counters["disc_minibatches"] += 1

        with _abort_scope(iteration, "reward labeling"):
            label_disc = disc
            if isinstance(disc, (DrailClassifier, DiffailDiscriminator)):
                label_disc = replace(disc, sample_count=cfg.reward_sample_count)
            buffer, label_stats = label_rewards(buffer, label_disc, label_rng)
        counters["labelings"] += 1

        with _abort_scope(iteration, "advantage estimation"):
            values_ext = np.append(buffer.values, buffer.bootstrap_value)
            adv, rets = compute_gae(buffer.rewards, values_ext, buffer.dones,
                                    cfg.ppo.gamma, cfg.ppo.gae_lambda)
            if not np.all(np.isfinite(adv)):
                raise NumericalAbort("non-finite advantage")
            buffer.advantages = normalize_advantages(adv)
            buffer.returns = rets
        counters["gae_passes"] += 1

        lr_scale = 1.0 - steps_done / cfg.total_env_steps
        with _abort_scope(iteration, "policy update"):
            policy, vf, opt, ppo_stats = ppo_update(policy, vf, buffer, cfg.ppo, ppo_rng, opt, lr_scale)
        counters["ppo_passes"] += cfg.ppo.epochs

        steps_done += rollout_len
        final = steps_done >= cfg.total_env_steps
        eval_due = final or (steps_done // cfg.eval_interval) > ((steps_done - rollout_len) // cfg.eval_interval)
        if eval_due:
            report = run_eval(policy)
        rows.append({
            "env_steps": steps_done,
            "iter": iteration,
            "disc_loss": float(np.mean(disc_losses)),
            "ppo_loss": ppo_stats["ppo_loss"],
            "mean_reward": label_stats["mean_reward"],
            "success_rate": report.success_rate if eval_due else None,
            "mean_return": report.mean_return if eval_due else None,
            "clip_frac": ppo_stats["clip_frac"],
            "clamped_rewards": label_stats["clamped"],
        })
    counters["iterations"] = iteration
    return TrainResult(policy, vf, disc, rows, metrics_to_csv(rows), counters, report)
