"""Stochastic bandit environments, actions, regret and particle utilities.

Actions are 0-based throughout: an ``int`` arm for ``bernoulli``, a sorted
tuple of ``M`` arm indices for ``max_bernoulli``, a unit ``ndarray`` for
``linear`` and a tuple of block indices (one per domain) for ``netslice``.
"""
from dataclasses import dataclass, replace
from itertools import combinations
import math

import numpy as np

from . import kernels

KINDS = ("bernoulli", "max_bernoulli", "linear", "netslice")
DEFAULT_EPS = 1e-6
UNIT_TOL = 1e-9


class InvalidActionError(ValueError):
    """Raised when an action does not belong to an environment's action set."""


class InvalidEnvironmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    kind: str
    theta_star: np.ndarray
    M: int = 1
    sigma_w2: float = 1.0
    block_counts: tuple = ()
    epsilon_clamp: float = DEFAULT_EPS

    def __post_init__(self):
        theta = np.array(self.theta_star, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "block_counts", tuple(int(b) for b in self.block_counts))
        kind = self.kind
        if kind not in KINDS:
            raise InvalidEnvironmentError(f"unknown environment kind {kind!r}; expected one of {KINDS}")
        if theta.size == 0 or not np.all(np.isfinite(theta)):
            raise InvalidEnvironmentError("theta_star must be a non-empty finite vector")
        if kind in ("bernoulli", "max_bernoulli", "netslice"):
            if np.any(theta < 0.0) or np.any(theta > 1.0):
                raise InvalidEnvironmentError(f"{kind} theta_star coordinates must lie in [0, 1]")
        if kind == "max_bernoulli" and not 1 <= self.M < theta.size:
            raise InvalidEnvironmentError(f"max_bernoulli needs 1 <= M < K, got M={self.M}, K={theta.size}")
        if kind == "linear" and not self.sigma_w2 > 0.0:
            raise InvalidEnvironmentError("linear sigma_w2 must be positive")
        if kind == "netslice":
            if not self.block_counts or min(self.block_counts) < 1:
                raise InvalidEnvironmentError("netslice needs positive block_counts")
            if theta.size != 2 * sum(self.block_counts):
                raise InvalidEnvironmentError(
                    f"netslice theta_star needs 2*sum(block_counts)={2 * sum(self.block_counts)} "
                    f"coordinates, got {theta.size}"
                )
        if not 0.0 < self.epsilon_clamp < 0.5:
            raise InvalidEnvironmentError("epsilon_clamp must lie in (0, 0.5)")

    @property
    def K(self):
        return self.theta_star.size

    @property
    def is_bernoulli_family(self):
        return self.kind in ("bernoulli", "max_bernoulli")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"kind", "theta_star", "K", "M", "sigma_w2", "block_counts", "epsilon_clamp"}
        if unknown:
            raise InvalidEnvironmentError(f"unknown env keys: {sorted(unknown)}")
        k = d.pop("K", None)
        env = cls(**d)
        if k is not None and int(k) != env.K:
            raise InvalidEnvironmentError(f"K={k} does not match theta_star length {env.K}")
        return env

    def to_dict(self):
        out = {"kind": self.kind, "theta_star": [float(x) for x in self.theta_star]}
        if self.kind == "max_bernoulli":
            out["M"] = int(self.M)
        if self.kind == "linear":
            out["sigma_w2"] = float(self.sigma_w2)
        if self.kind == "netslice":
            out["block_counts"] = list(self.block_counts)
        return out


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """``N`` particles with normalized log-weights (natural log)."""

    particles: np.ndarray
    log_weights: np.ndarray
    epsilon_clamp: float = DEFAULT_EPS

    def __post_init__(self):
        p = np.array(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        lw = np.array(self.log_weights, dtype=float).reshape(-1)
        if lw.shape[0] != p.shape[0]:
            raise ValueError("one log-weight per particle required")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_weights", lw)

    @classmethod
    def uniform(cls, particles, epsilon_clamp=DEFAULT_EPS):
        p = np.array(particles, dtype=float)
        n = p.shape[0]
        return cls(p, np.full(n, -math.log(n)), epsilon_clamp)

    @property
    def N(self):
        return self.particles.shape[0]

    @property
    def weights(self):
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def with_log_weights(self, log_w):
        return replace(self, log_weights=np.asarray(log_w, dtype=float))


def validate_action(env, a):
    """Return ``a`` in canonical form, or raise ``InvalidActionError``."""
    if env.kind == "bernoulli":
        if isinstance(a, (bool, np.bool_)) or not isinstance(a, (int, np.integer)):
            raise InvalidActionError(f"bernoulli action must be an arm index, got {a!r}")
        if not 0 <= a < env.K:
            raise InvalidActionError(f"arm {a} out of range [0, {env.K})")
        return int(a)
    if env.kind == "max_bernoulli":
        try:
            sub = tuple(int(x) for x in a)
        except TypeError:
            raise InvalidActionError(f"max_bernoulli action must be an index subset, got {a!r}") from None
        if len(sub) != env.M:
            raise InvalidActionError(f"subset must have size M={env.M}, got {len(sub)}")
        if any(x >= y for x, y in zip(sub, sub[1:])):
            raise InvalidActionError(f"subset entries must be strictly increasing: {sub}")
        if sub[0] < 0 or sub[-1] >= env.K:
            raise InvalidActionError(f"subset {sub} out of range [0, {env.K})")
        return sub
    if env.kind == "linear":
        v = np.asarray(a, dtype=float).reshape(-1)
        if v.shape[0] != env.K:
            raise InvalidActionError(f"linear action must have dimension {env.K}")
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise InvalidActionError("linear action must have unit Euclidean norm")
        return v
    try:
        tup = tuple(int(x) for x in a)
    except TypeError:
        raise InvalidActionError(f"netslice action must be a block tuple, got {a!r}") from None
    if len(tup) != len(env.block_counts):
        raise InvalidActionError(f"block tuple needs {len(env.block_counts)} entries")
    for x, b in zip(tup, env.block_counts):
        if not 0 <= x < b:
            raise InvalidActionError(f"block index {x} out of range [0, {b})")
    return tup


def _require_context(env, context):
    if context is None:
        raise InvalidActionError("netslice environment needs a context; see rpts.netslice")


def success_probability(env, theta, a):
    theta = np.asarray(theta, dtype=float)
    if env.kind == "bernoulli":
        return float(theta[a])
    return float(kernels.max_bernoulli_success(theta, np.asarray(a, dtype=np.int64)))


def sample_observation(env, a, rng, context=None):
    """One draw of ``Y ~ P_{theta*}(. | a)``."""
    a = validate_action(env, a)
    if env.kind in ("bernoulli", "max_bernoulli"):
        return int(rng.random() < success_probability(env, env.theta_star, a))
    if env.kind == "linear":
        return float(env.theta_star @ a + math.sqrt(env.sigma_w2) * rng.standard_normal())
    _require_context(env, context)
    from .netslice import LatencyModel, slicing_observe

    return slicing_observe(LatencyModel.from_env(env), a, context, rng)


def likelihood(env, theta, y, a, context=None):
    """Probability mass (discrete ``y``) or density of ``y`` under ``P_theta(. | a)``."""
    a = validate_action(env, a)
    theta = np.asarray(theta, dtype=float)
    if env.kind in ("bernoulli", "max_bernoulli"):
        if y not in (0, 1):
            raise InvalidActionError(f"binary observation expected, got {y!r}")
        p = success_probability(env, theta, a)
        return p if y == 1 else 1.0 - p
    if env.kind == "linear":
        resid = float(y) - float(theta @ a)
        return math.exp(-resid * resid / (2.0 * env.sigma_w2)) / math.sqrt(2.0 * math.pi * env.sigma_w2)
    _require_context(env, context)
    from .netslice import LatencyModel, joint_latency_density

    return joint_latency_density(LatencyModel.from_env(env, theta), a, y, context)


def log_likelihoods(env, particles, y, a, context=None):
    """Vector of ``ln P_{theta_i}(y | a)`` over a particle array."""
    particles = np.asarray(particles, dtype=float)
    if env.kind == "bernoulli":
        return kernels.bernoulli_loglik(particles, a, float(y))
    if env.kind == "max_bernoulli":
        return kernels.max_bernoulli_loglik(particles, np.asarray(a, dtype=np.int64), float(y))
    if env.kind == "linear":
        return kernels.linear_loglik(particles, np.asarray(a, dtype=float), float(y), env.sigma_w2)
    _require_context(env, context)
    from .netslice import system_log_likelihoods

    return system_log_likelihoods(env, particles, y, a, context)


def expected_reward(env, theta, a, context=None):
    a = validate_action(env, a)
    theta = np.asarray(theta, dtype=float)
    if env.kind in ("bernoulli", "max_bernoulli"):
        return success_probability(env, theta, a)
    if env.kind == "linear":
        return float(theta @ a)
    _require_context(env, context)
    from .netslice import LatencyModel, slice_reward

    return slice_reward(LatencyModel.from_env(env, theta), a, context)


def optimal_action(env, theta, context=None):
    theta = np.asarray(theta, dtype=float)
    if env.kind == "bernoulli":
        return int(np.argmax(theta))
    if env.kind == "max_bernoulli":
        return tuple(int(x) for x in kernels.top_m_subset(theta, env.M))
    if env.kind == "linear":
        return kernels.unit_direction(theta)
    _require_context(env, context)
    from .netslice import LatencyModel, select_action

    return select_action(LatencyModel.from_env(env, theta), context)


def all_actions(env):
    """Every action of a finite action set (lexicographic order)."""
    if env.kind == "bernoulli":
        return list(range(env.K))
    if env.kind == "max_bernoulli":
        return list(combinations(range(env.K), env.M))
    if env.kind == "netslice":
        return [tuple(int(x) for x in row) for row in kernels.enumerate_actions(np.array(env.block_counts))]
    raise InvalidActionError("linear action set is a continuum")


def optimal_reward(env, context=None):
    return expected_reward(env, env.theta_star, optimal_action(env, env.theta_star, context), context)


def instantaneous_regret(env, a, context=None):
    """``R* - E_{theta*}[R(Y) | a]``; never negative."""
    gap = optimal_reward(env, context) - expected_reward(env, env.theta_star, a, context)
    return max(gap, 0.0)


def project_to_theta(env, point):
    p = np.array(point, dtype=float)
    if p.shape[-1] != env.K:
        raise InvalidActionError(f"point must have dimension {env.K}")
    eps = env.epsilon_clamp
    if env.kind == "linear":
        nrm = np.linalg.norm(p, axis=-1, keepdims=True)
        return np.where(nrm > 1.0, p / np.where(nrm > 1.0, nrm, 1.0), p)
    return np.clip(p, eps, 1.0 - eps)


def uniform_ball(rng, n, k):
    """``n`` points uniform in the closed unit ball of R^k."""
    if k <= 5:
        out = np.empty((n, k))
        filled = 0
        while filled < n:
            cand = rng.uniform(-1.0, 1.0, size=(2 * (n - filled) + 16, k))
            cand = cand[np.sum(cand * cand, axis=1) <= 1.0]
            take = min(n - filled, cand.shape[0])
            out[filled:filled + take] = cand[:take]
            filled += take
        return out
    z = rng.standard_normal((n, k))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.random(n)[:, None] ** (1.0 / k)


def generate_particles(method, env, N, rng):
    """Fresh uniformly weighted particle set.

    ``whole_particle`` draws each particle i.i.d. from the parameter space;
    ``coordinate_wise`` (two-arm Bernoulli only) forms the grid ``A x B`` of
    two independent sets of ``sqrt(N)`` uniform values.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    eps = env.epsilon_clamp
    if method == "whole_particle":
        if env.kind == "linear":
            pts = uniform_ball(rng, N, env.K)
        else:
            pts = np.clip(rng.random((N, env.K)), eps, 1.0 - eps)
    elif method == "coordinate_wise":
        if env.kind != "bernoulli" or env.K != 2:
            raise ValueError("coordinate_wise generation is defined for two-arm Bernoulli only")
        side = math.isqrt(N)
        if side * side != N:
            raise ValueError(f"coordinate_wise generation needs a perfect-square N, got {N}")
        a = np.clip(rng.random(side), eps, 1.0 - eps)
        b = np.clip(rng.random(side), eps, 1.0 - eps)
        pts = np.array([(x, y) for x in a for y in b])
    else:
        raise ValueError(f"unknown generation method {method!r}")
    return ParticleSystem.uniform(pts, eps)
