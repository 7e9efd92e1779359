"""Whole-run drivers built on the jitted chunk kernels.

A run owns three independent child streams of its seed: particle
initialization, per-step randomness (drawn up front) and regeneration. The
kernel loop stops whenever RPTS needs to regenerate, so regeneration shares
its code with the step-level API.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .bandits import ParticleSystem, generate_particles, project_to_theta
from .netslice import (
    BlockParticles,
    generate_block_particles,
    regenerate_blocks,
    sample_contexts,
    DEFAULT_C1_RANGE,
    DEFAULT_C2_RANGE,
)
from .rng import make_rng, split
from .samplers import BetaPosterior, GaussianPosterior, kalman_update, regenerate_arrays

_KIND_CODE = {"bernoulli": kernels.BERNOULLI, "max_bernoulli": kernels.MAX_BERNOULLI, "linear": kernels.LINEAR}


@dataclass(frozen=True, eq=False)
class RegretTrace:
    instantaneous: np.ndarray
    seed: int

    @property
    def T(self):
        return self.instantaneous.shape[0]

    @property
    def cumulative(self):
        return np.cumsum(self.instantaneous)

    @property
    def running_average(self):
        return self.cumulative / np.arange(1, self.T + 1)


@dataclass(eq=False)
class RunRecord:
    """Everything a single seeded run leaves behind."""

    algorithm: str
    seed: int
    regret: RegretTrace
    chosen: np.ndarray = None  # action index per step, where actions are enumerable
    sampled: np.ndarray = None  # index of the particle drawn at each step
    observations: np.ndarray = None
    arm_counts: np.ndarray = None
    initial_particles: np.ndarray = None
    final_particles: np.ndarray = None
    final_log_weights: np.ndarray = None
    avg_weights: np.ndarray = None
    log_weight_trace: np.ndarray = None
    stride: int = 0
    regen_steps: list = field(default_factory=list)
    theta_star: np.ndarray = None

    @property
    def arm1_frequency(self):
        """Fraction of steps arm 0 was played (two-arm Bernoulli)."""
        return float(self.arm_counts[0]) / self.regret.T


def _check_regen(cfg, n):
    if cfg is not None:
        cfg.check(n)
        return cfg.w_inact > 0.0
    return False


def run_particle_bandit(env, N, T, seed, rpts=None, particles=None, stride=0, method="whole_particle"):
    """PTS (``rpts=None``) or RPTS on a Bernoulli, max-Bernoulli or linear bandit."""
    if env.kind not in _KIND_CODE:
        raise ValueError(f"use run_netslice for {env.kind}")
    init_rng, step_rng, regen_rng = split(seed, 3)
    if particles is None:
        ps = generate_particles(method, env, N, init_rng)
    elif isinstance(particles, ParticleSystem):
        ps = particles
    else:
        ps = ParticleSystem.uniform(particles, env.epsilon_clamp)
    n = ps.N
    regen = _check_regen(rpts, n)
    pts = np.ascontiguousarray(ps.particles, dtype=float).copy()
    log_w = ps.log_weights.copy()
    kernels.normalize_log_weights(log_w)

    u_sel = step_rng.random(T)
    noise = step_rng.standard_normal(T) if env.kind == "linear" else step_rng.random(T)

    chosen = np.zeros(T, dtype=np.int64)
    ys = np.zeros(T)
    regret = np.zeros(T)
    weight_sum = np.exp(log_w)
    arm_counts = np.zeros(env.K, dtype=np.int64)
    rec = np.zeros((T // stride + 1 if stride > 0 else 1, n))
    rec[0] = log_w
    theta_star = np.ascontiguousarray(env.theta_star, dtype=float)
    n_del = rpts.n_delete(n) if regen else 0
    w_inact = rpts.w_inact if regen else 0.0
    project = lambda x: project_to_theta(env, x)
    regen_steps = []

    t = 0
    while t < T:
        t = kernels.run_bandit_chunk(
            _KIND_CODE[env.kind], pts, log_w, theta_star, int(env.M), float(env.sigma_w2),
            u_sel, noise, t, T, n_del, w_inact, regen,
            chosen, ys, regret, weight_sum, arm_counts, int(stride), rec,
        )
        if regen and kernels.condition_holds(log_w, n_del, w_inact):
            pts, log_w = regenerate_arrays(pts, log_w, n_del, rpts.w_new, project, regen_rng)
            regen_steps.append(t)
    return RunRecord(
        algorithm="rpts" if rpts is not None else "pts",
        seed=int(seed),
        regret=RegretTrace(regret, int(seed)),
        sampled=chosen,
        observations=ys,
        arm_counts=arm_counts,
        initial_particles=ps.particles.copy(),
        final_particles=pts,
        final_log_weights=log_w,
        avg_weights=weight_sum / (T + 1),
        log_weight_trace=rec if stride > 0 else None,
        stride=int(stride),
        regen_steps=regen_steps,
        theta_star=env.theta_star.copy(),
    )


def run_ts_beta(env, T, seed):
    if env.kind != "bernoulli":
        raise ValueError("ts_beta needs a bernoulli environment")
    rng = make_rng(seed)
    post = BetaPosterior.uniform_prior(env.K)
    alpha, beta = post.alpha.copy(), post.beta.copy()
    theta_star = env.theta_star
    best = theta_star.max()
    u_obs = rng.random(T)
    regret = np.zeros(T)
    chosen = np.zeros(T, dtype=np.int64)
    for t in range(T):
        a = int(np.argmax(rng.beta(alpha, beta)))
        if u_obs[t] < theta_star[a]:
            alpha[a] += 1.0
        else:
            beta[a] += 1.0
        regret[t] = best - theta_star[a]
        chosen[t] = a
    counts = np.bincount(chosen, minlength=env.K)
    return RunRecord("ts_beta", int(seed), RegretTrace(regret, int(seed)), chosen=chosen, arm_counts=counts,
                     theta_star=env.theta_star.copy())


def run_ts_kalman(env, T, seed):
    if env.kind != "linear":
        raise ValueError("ts_kalman needs a linear environment")
    rng = make_rng(seed)
    post = GaussianPosterior.standard_prior(env.K)
    best = float(np.linalg.norm(env.theta_star))
    regret = np.zeros(T)
    sigma = math.sqrt(env.sigma_w2)
    for t in range(T):
        theta = post.mean + np.linalg.cholesky(post.cov) @ rng.standard_normal(env.K)
        a = kernels.unit_direction(theta)
        mean = float(env.theta_star @ a)
        y = mean + sigma * rng.standard_normal()
        post = kalman_update(post, a, y, env.sigma_w2)
        regret[t] = max(best - mean, 0.0)
    return RunRecord("ts_kalman", int(seed), RegretTrace(regret, int(seed)), theta_star=env.theta_star.copy())


def run_netslice(env, N, T, seed, rpts=None, c1_range=DEFAULT_C1_RANGE, c2_range=DEFAULT_C2_RANGE,
                 blocks=None):
    """Per-block contextual PTS/RPTS on the slicing model."""
    init_rng, step_rng, regen_rng = split(seed, 3)
    bp = blocks if blocks is not None else generate_block_particles(env.block_counts, N, init_rng,
                                                                     env.epsilon_clamp)
    n = bp.N
    regen = _check_regen(rpts, n)
    n_blocks = bp.particles.shape[0]
    n_dom = len(env.block_counts)
    counts = np.array(env.block_counts, dtype=np.int64)
    actions = kernels.enumerate_actions(counts)
    offsets = bp.offsets
    contexts = sample_contexts(step_rng, T, c1_range, c2_range)
    u_sel = step_rng.random((T, n_blocks))
    u_obs = step_rng.random((T, n_dom))
    pts = bp.particles.copy()
    log_w = bp.log_weights.copy()
    action_out = np.zeros(T, dtype=np.int64)
    regret = np.zeros(T)
    ys = np.zeros((T, n_dom))
    theta_star = np.ascontiguousarray(env.theta_star.reshape(-1, 2))
    n_del = rpts.n_delete(n) if regen else 0
    w_inact = rpts.w_inact if regen else 0.0
    regen_steps = []
    t = 0
    while t < T:
        t = kernels.run_netslice_chunk(
            pts, log_w, theta_star, offsets, actions, contexts, u_sel, u_obs, t, T,
            n_del, w_inact, regen, action_out, regret, ys,
        )
        if regen:
            state = BlockParticles(pts, log_w, bp.block_counts, bp.epsilon_clamp)
            state, hit = regenerate_blocks(state, rpts, regen_rng)
            if hit:
                pts, log_w = state.particles.copy(), state.log_weights.copy()
                regen_steps.append(t)
    return RunRecord(
        algorithm="ctx_rpts" if rpts is not None else "ctx_pts",
        seed=int(seed),
        regret=RegretTrace(regret, int(seed)),
        chosen=action_out,
        observations=ys,
        initial_particles=bp.particles.copy(),
        final_particles=pts,
        final_log_weights=log_w,
        regen_steps=regen_steps,
        theta_star=env.theta_star.copy(),
    )
