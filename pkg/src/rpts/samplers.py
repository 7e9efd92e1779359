"""Decision rules: exact Thompson sampling baselines, PTS and RPTS.

Each ``*_step`` function is a pure state transition ``state -> state'``
returning ``(action, observation, new_state)``; the caller owns the rng.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .bandits import (
    ParticleSystem,
    log_likelihoods,
    optimal_action,
    project_to_theta,
    sample_observation,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RptsConfig:
    """Deletion fraction, inactivity threshold and aggregate weight of new particles."""

    f_del: float = 0.8
    w_inact: float = 0.001
    w_new: float = 0.01

    def __post_init__(self):
        for name in ("f_del", "w_inact", "w_new"):
            v = getattr(self, name)
            if name == "w_inact" and v == 0.0:
                continue  # disables regeneration entirely
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.w_new > self.w_inact:
            raise ConfigError("w_new must exceed w_inact, or new particles are deleted at once")

    def n_delete(self, n):
        return math.ceil(self.f_del * n - 1e-9)

    def check(self, n):
        """Reject particle counts that would leave no survivor after deletion."""
        if self.n_delete(n) >= n:
            raise ConfigError(
                f"RPTS with f_del={self.f_del} would delete {self.n_delete(n)} of N={n} particles; "
                "at least one particle must survive"
            )


@dataclass(frozen=True, eq=False)
class BetaPosterior:
    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def uniform_prior(cls, k):
        return cls(np.ones(k), np.ones(k))


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def standard_prior(cls, k):
        return cls(np.zeros(k), np.eye(k))


def _updated(ps, log_w):
    log_w = np.array(log_w, dtype=float)
    kernels.normalize_log_weights(log_w)
    return ps.with_log_weights(log_w)


def bayes_update(env, ps, a, y, context=None):
    """Multiply every particle weight by its likelihood of ``(a, y)`` and renormalize."""
    return _updated(ps, ps.log_weights + log_likelihoods(env, ps.particles, y, a, context))


def pts_step(env, ps, rng, context=None):
    i = kernels.sample_index(ps.log_weights, rng.random())
    a = optimal_action(env, ps.particles[i], context)
    y = sample_observation(env, a, rng, context)
    return a, y, bayes_update(env, ps, a, y, context)


def rpts_condition(weights, cfg):
    """True when the ``ceil(f_del N)`` smallest weights sum to at most ``w_inact``."""
    w = np.sort(np.asarray(weights, dtype=float))
    return bool(w[: cfg.n_delete(w.size)].sum() <= cfg.w_inact)


def deletion_indices(weights, n_del):
    # ascending weight, lower index first among ties
    order = np.lexsort((np.arange(weights.size), weights))
    return np.sort(order[:n_del])


def weighted_moments(particles, weights):
    """Weighted mean and ``tr(Sigma)`` via ``sum w |theta|^2 - |mu|^2``.

    Both moments are taken about the heaviest particle, which leaves the
    identity unchanged but keeps identical particles exact.
    """
    ref = particles[int(np.argmax(weights))]
    dev = particles - ref
    shift = weights @ dev
    mu = ref + shift
    second = float(weights @ np.einsum("ij,ij->i", dev, dev))
    trace = second - float(shift @ shift)
    # below this the identity is pure cancellation error
    if trace <= 64.0 * np.finfo(float).eps * max(second, 1.0):
        trace = 0.0
    return mu, trace


def regenerate_arrays(particles, log_w, n_del, w_new, project, rng):
    """Replace the ``n_del`` lowest-weighted particles by isotropic-Gaussian draws."""
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    k = particles.shape[1]
    mu, trace = weighted_moments(particles, w)
    fresh = mu + math.sqrt(trace / k) * rng.standard_normal((n_del, k))
    idx = deletion_indices(w, n_del)
    new_p = particles.copy()
    new_p[idx] = project(fresh)
    new_lw = np.array(log_w, dtype=float)
    new_lw[idx] = math.log(w_new / n_del)
    kernels.normalize_log_weights(new_lw)
    return new_p, new_lw


def rpts_regenerate(ps, cfg, env, rng):
    cfg.check(ps.N)
    p, lw = regenerate_arrays(
        ps.particles, ps.log_weights, cfg.n_delete(ps.N), cfg.w_new, lambda x: project_to_theta(env, x), rng
    )
    return ParticleSystem(p, lw, ps.epsilon_clamp)


def rpts_step(env, ps, cfg, rng, context=None):
    cfg.check(ps.N)
    a, y, ps = pts_step(env, ps, rng, context)
    if cfg.w_inact > 0.0 and rpts_condition(ps.weights, cfg):
        ps = rpts_regenerate(ps, cfg, env, rng)
    return a, y, ps


def ts_beta_step(env, post, rng):
    """Exact TS for Bernoulli arms with independent Beta posteriors."""
    if env.kind != "bernoulli":
        raise ConfigError(f"ts_beta needs a bernoulli environment, got {env.kind}")
    theta = rng.beta(post.alpha, post.beta)
    a = int(np.argmax(theta))
    y = sample_observation(env, a, rng)
    alpha = post.alpha.copy()
    beta = post.beta.copy()
    if y:
        alpha[a] += 1.0
    else:
        beta[a] += 1.0
    return a, y, BetaPosterior(alpha, beta)


def kalman_update(post, a, y, sigma_w2):
    """Rank-one Bayesian linear-regression update for ``y = <theta, a> + N(0, sigma_w2)``."""
    sa = post.cov @ a
    s = sigma_w2 + float(a @ sa)
    mean = post.mean + sa * (y - float(a @ post.mean)) / s
    cov = post.cov - np.outer(sa, sa) / s
    return GaussianPosterior(mean, 0.5 * (cov + cov.T))


def ts_kalman_step(env, post, rng):
    if env.kind != "linear":
        raise ConfigError(f"ts_kalman needs a linear environment, got {env.kind}")
    chol = np.linalg.cholesky(post.cov)
    theta = post.mean + chol @ rng.standard_normal(post.mean.shape[0])
    a = kernels.unit_direction(theta)
    y = sample_observation(env, a, rng)
    return a, y, kalman_update(post, a, y, env.sigma_w2)


def contextual_pts_step(env, ps, c, rng):
    """Per-system contextual PTS: one particle covers every block of the slicing model."""
    from .netslice import SliceContext

    if not isinstance(c, SliceContext):
        c = SliceContext(*c)
    return pts_step(env, ps, rng, context=c)


def contextual_rpts_step(env, ps, cfg, c, rng):
    from .netslice import SliceContext

    if not isinstance(c, SliceContext):
        c = SliceContext(*c)
    return rpts_step(env, ps, cfg, rng, context=c)
