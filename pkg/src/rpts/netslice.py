"""Network-slicing contextual bandit.

A slice request is a context ``c = (c1, c2)``: scaled offered load and the
latency target ``d = c2``. An action picks one resource block per domain;
each chosen block answers with an exponential latency of mean
``c1 * theta_1 + theta_2`` and the reward is ``g_d`` of the total latency.
Blocks are indexed 0-based, domain-major, matching ``theta_star`` laid out as
``(theta_11_1, theta_11_2, theta_12_1, ...)``.
"""
from dataclasses import dataclass, replace
import math

import numpy as np

from . import kernels
from .bandits import DEFAULT_EPS, EnvironmentSpec, InvalidActionError, validate_action

DEFAULT_C1_RANGE = (0.0, 1.0)
DEFAULT_C2_RANGE = (0.2, 1.0)


class InvalidContextError(ValueError):
    pass


@dataclass(frozen=True)
class SliceContext:
    c1: float
    c2: float

    def __post_init__(self):
        if not 0.0 <= self.c1 <= 1.0:
            raise InvalidContextError(f"c1 must lie in [0, 1], got {self.c1}")
        if not 0.0 < self.c2 <= 1.0:
            raise InvalidContextError(f"c2 must lie in (0, 1], got {self.c2}")


def sample_contexts(rng, n, c1_range=DEFAULT_C1_RANGE, c2_range=DEFAULT_C2_RANGE):
    """``(n, 2)`` array of i.i.d. uniform contexts."""
    u = rng.random((n, 2))
    out = np.empty((n, 2))
    out[:, 0] = c1_range[0] + (c1_range[1] - c1_range[0]) * u[:, 0]
    out[:, 1] = c2_range[0] + (c2_range[1] - c2_range[0]) * u[:, 1]
    return out


def block_offsets(block_counts):
    return np.concatenate([[0], np.cumsum(block_counts)[:-1]]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class LatencyModel:
    """Per-block ``(load rate, baseline latency)`` pairs, shape ``(n_blocks, 2)``."""

    blocks: np.ndarray
    block_counts: tuple

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float).reshape(-1, 2)
        if b.shape[0] != sum(self.block_counts):
            raise ValueError("one (theta_1, theta_2) pair per block required")
        if np.any(b < 0.0) or np.any(b > 1.0):
            raise ValueError("latency parameters must lie in [0, 1]")
        object.__setattr__(self, "blocks", b)
        object.__setattr__(self, "block_counts", tuple(int(x) for x in self.block_counts))

    @classmethod
    def from_env(cls, env, theta=None):
        theta = env.theta_star if theta is None else theta
        return cls(np.asarray(theta, dtype=float).reshape(-1, 2), env.block_counts)

    @property
    def offsets(self):
        return block_offsets(self.block_counts)

    def block_means(self, c1):
        return c1 * self.blocks[:, 0] + self.blocks[:, 1]

    def chosen_means(self, a, c):
        idx = self.offsets + np.asarray(a, dtype=np.int64)
        return self.block_means(c.c1)[idx]


def _check_action(model, a):
    a = tuple(int(x) for x in a)
    if len(a) != len(model.block_counts) or any(not 0 <= x < b for x, b in zip(a, model.block_counts)):
        raise InvalidActionError(f"invalid block tuple {a} for block counts {model.block_counts}")
    return a


def slicing_observe(model, a, c, rng):
    """``D`` independent exponential latencies for block tuple ``a`` under context ``c``."""
    a = _check_action(model, a)
    means = model.chosen_means(a, c)
    u = rng.random(means.shape[0])
    return -means * np.log1p(-u)


def g_reward(d, y):
    """SLA reward: ``y / d`` when the latency meets the target ``d``, else 0."""
    if d <= 0.0:
        raise ValueError("latency target d must be positive")
    if 0.0 <= y <= d:
        return y / d
    return 0.0


def approx_expected_reward(means, d):
    """Gaussian-moment approximation of ``E[g_d(Y_1 + ... + Y_D)]``.

    Each ``Y_i`` is exponential with mean ``means[i]``; the sum is replaced by
    a normal with matching mean and variance.
    """
    m = np.asarray(means, dtype=float)
    if np.any(m < 0.0):
        raise ValueError("exponential means must be nonnegative")
    if d <= 0.0:
        raise ValueError("latency target d must be positive")
    return float(kernels.approx_sla_reward(float(m.sum()), float(np.dot(m, m)), float(d)))


def slice_reward(model, a, c):
    return approx_expected_reward(model.chosen_means(_check_action(model, a), c), c.c2)


def select_action(model, c):
    """Enumerate every block chain and return the best (lexicographically first on ties)."""
    actions = kernels.enumerate_actions(np.array(model.block_counts, dtype=np.int64))
    k, _ = kernels.best_slice_action(model.block_means(c.c1), model.offsets, actions, c.c2)
    return tuple(int(x) for x in actions[k])


def joint_latency_density(model, a, y, c):
    means = np.maximum(model.chosen_means(_check_action(model, a), c), kernels.EXP_MEAN_FLOOR)
    y = np.asarray(y, dtype=float)
    return float(np.prod(np.exp(-y / means) / means))


def system_log_likelihoods(env, particles, y, a, c):
    """Log-likelihood of latencies ``y`` for per-system particles (rows of length ``2 * sum(B)``)."""
    a = validate_action(env, a)
    offsets = block_offsets(env.block_counts)
    blocks = np.asarray(particles, dtype=float).reshape(particles.shape[0], -1, 2)
    out = np.zeros(particles.shape[0])
    for dom, j in enumerate(a):
        b = offsets[dom] + j
        out += kernels.exponential_loglik(c.c1 * blocks[:, b, 0] + blocks[:, b, 1], float(y[dom]))
    return out


@dataclass(frozen=True, eq=False)
class BlockParticles:
    """``N`` particles in ``[0, 1]^2`` with log-weights for every block."""

    particles: np.ndarray  # (n_blocks, N, 2)
    log_weights: np.ndarray  # (n_blocks, N)
    block_counts: tuple
    epsilon_clamp: float = DEFAULT_EPS

    @property
    def N(self):
        return self.particles.shape[1]

    @property
    def offsets(self):
        return block_offsets(self.block_counts)

    def weights(self, block):
        lw = self.log_weights[block]
        w = np.exp(lw - lw.max())
        return w / w.sum()

    @property
    def effective_system_particles(self):
        """Distinct per-system parameter combinations reachable by drawing one particle per block."""
        return self.N ** self.particles.shape[0]

    def block_index(self, domain, j):
        return int(self.offsets[domain] + j)


def generate_block_particles(block_counts, N, rng, epsilon_clamp=DEFAULT_EPS):
    n_blocks = sum(block_counts)
    pts = np.clip(rng.random((n_blocks, N, 2)), epsilon_clamp, 1.0 - epsilon_clamp)
    return BlockParticles(pts, np.full((n_blocks, N), -math.log(N)), tuple(block_counts), epsilon_clamp)


def sample_block_model(bp, u):
    """Draw one particle per block with uniforms ``u`` (one per block)."""
    idx = np.array([kernels.sample_index(bp.log_weights[b], u[b]) for b in range(bp.particles.shape[0])])
    return LatencyModel(bp.particles[np.arange(idx.size), idx], bp.block_counts), idx


def per_block_update(bp, a, y, c):
    """Bayes-update the chosen block of each domain; other blocks are untouched."""
    log_w = bp.log_weights.copy()
    for dom, j in enumerate(a):
        b = bp.block_index(dom, j)
        means = c.c1 * bp.particles[b, :, 0] + bp.particles[b, :, 1]
        log_w[b] += kernels.exponential_loglik(means, float(y[dom]))
        kernels.normalize_log_weights(log_w[b])
    return replace(bp, log_weights=log_w)


@dataclass(frozen=True)
class SliceStep:
    action: tuple
    latencies: np.ndarray
    state: BlockParticles
    regret: float
    regenerated: tuple = ()


def netslice_pts_step(bp, env, c, rng):
    """One per-block PTS step against the true model in ``env``."""
    sampled, _ = sample_block_model(bp, rng.random(bp.particles.shape[0]))
    a = select_action(sampled, c)
    truth = LatencyModel.from_env(env)
    y = slicing_observe(truth, a, c, rng)
    regret = max(slice_reward(truth, select_action(truth, c), c) - slice_reward(truth, a, c), 0.0)
    return SliceStep(a, y, per_block_update(bp, a, y, c), regret)


def regenerate_blocks(bp, cfg, rng, blocks=None):
    """Apply the RPTS condition and regeneration to each block independently."""
    from .samplers import regenerate_arrays

    n_del = cfg.n_delete(bp.N)
    eps = bp.epsilon_clamp
    pts = bp.particles.copy()
    log_w = bp.log_weights.copy()
    hit = []
    for b in range(pts.shape[0]) if blocks is None else blocks:
        if kernels.condition_holds(log_w[b], n_del, cfg.w_inact):
            pts[b], log_w[b] = regenerate_arrays(
                pts[b], log_w[b], n_del, cfg.w_new, lambda p: np.clip(p, eps, 1.0 - eps), rng
            )
            hit.append(b)
    return replace(bp, particles=pts, log_weights=log_w), tuple(hit)


def netslice_rpts_step(bp, cfg, env, c, rng):
    """Per-block PTS step followed by per-block deletion/regeneration."""
    cfg.check(bp.N)
    step = netslice_pts_step(bp, env, c, rng)
    touched = [step.state.block_index(dom, j) for dom, j in enumerate(step.action)]
    state, hit = regenerate_blocks(step.state, cfg, rng, touched)
    return replace(step, state=state, regenerated=hit)


def block_weights_rows(bp):
    """Rows ``(domain, block, particle, theta_1, theta_2, weight)`` for CSV export."""
    rows = []
    for dom, count in enumerate(bp.block_counts):
        for j in range(count):
            b = bp.block_index(dom, j)
            w = bp.weights(b)
            for k in range(bp.N):
                rows.append((dom, j, k, bp.particles[b, k, 0], bp.particles[b, k, 1], w[k]))
    return rows


def random_netslice_env(block_counts, rng):
    return EnvironmentSpec("netslice", rng.random(2 * sum(block_counts)), block_counts=tuple(block_counts))


def gaussian_reward_quadrature(means, d):
    """``int_0^d (y/d) N(y; sum(means), sum(means^2)) dy`` by adaptive quadrature.

    Evaluates the same Gaussian integral as :func:`approx_expected_reward`
    without using its closed form.
    """
    from scipy import integrate

    m = np.asarray(means, dtype=float)
    mu, var = float(m.sum()), float(np.dot(m, m))
    if var <= 0.0:
        return mu / d if mu <= d else 0.0
    sd = math.sqrt(var)

    def f(y):
        return (y / d) * math.exp(-0.5 * ((y - mu) / sd) ** 2) / (sd * kernels.SQRT_2PI)

    val, _ = integrate.quad(f, 0.0, d, points=[min(max(mu, 0.0), d)], epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def hypoexponential_reward_mc(means, d, n_samples, rng, chunk=1_000_000):
    """Monte-Carlo ``E[g_d(Y_1 + ... + Y_D)]`` for independent exponential ``Y_i``.

    ``means`` is ``(G, D)`` and ``d`` has length ``G``; every grid row reuses
    the same draws, so differences between rows carry no sampling noise.
    """
    means = np.ascontiguousarray(np.atleast_2d(means), dtype=float)
    d = np.ascontiguousarray(np.broadcast_to(np.asarray(d, dtype=float), (means.shape[0],)))
    total = np.zeros(means.shape[0])
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        kernels.accumulate_sla_reward(means, d, rng.standard_exponential((means.shape[1], k)), total)
        done += k
    return total / n_samples
