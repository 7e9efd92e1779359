"""Particle-survival analysis: drift matrices and two-arm divergence diagrams.

For a two-arm Bernoulli bandit each particle ``theta`` gets a divergence line
``D(r) = r * d(theta*_1 || theta_1) + (1 - r) * d(theta*_2 || theta_2)``
over the arm-1 usage frequency ``r``. The lower envelope of these lines, its
breakpoints and the contraction set predict where ``r_t`` can settle and
which particles survive. Arms are 0-based: "arm 1" in the usual notation is
index 0 here, so ``optimal_arm`` is 0 or 1.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .bandits import optimal_action
from .kernels import max_bernoulli_success, top_m_subset

GEOM_TOL = 1e-12


class EnvelopeAssumptionError(ValueError):
    """Particle set has duplicate divergence lines or three lines meeting on the envelope."""

    def __init__(self, message, particles):
        super().__init__(message)
        self.particles = tuple(particles)


class DegeneratePairError(ValueError):
    """Two compared divergences are exactly equal; perturb the particles."""


def kl_bernoulli(x, y):
    """``KL(Bernoulli(x) || Bernoulli(y))`` with ``0 ln 0 = 0``."""
    if not 0.0 < y < 1.0:
        raise ValueError(f"y must lie strictly inside (0, 1), got {y}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    out = 0.0
    if x > 0.0:
        out += x * math.log(x / y)
    if x < 1.0:
        out += (1.0 - x) * math.log((1.0 - x) / (1.0 - y))
    return max(out, 0.0)


def kl_bernoulli_array(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0) or np.any(y >= 1.0):
        raise ValueError("y must lie strictly inside (0, 1)")
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > 0.0, x * np.log(x / y), 0.0)
        b = np.where(x < 1.0, (1.0 - x) * np.log((1.0 - x) / (1.0 - y)), 0.0)
    return np.maximum(a + b, 0.0)


@dataclass(frozen=True, eq=False)
class DriftMatrix:
    entries: np.ndarray
    row_action: list


def drift_matrix(env, particles, mc_samples=0, rng=None):
    """KL-form drift matrix ``D_ij = -KL(P_theta*(.|A(i)) || P_theta_j(.|A(i)))``.

    Closed form for Bernoulli, max-Bernoulli and linear models. The slicing
    model is contextual, so there the entry is averaged over ``mc_samples``
    uniform contexts and ``row_action`` is ``None``.
    """
    p = np.asarray(getattr(particles, "particles", particles), dtype=float)
    star = env.theta_star
    if env.kind == "bernoulli":
        arms = np.argmax(p, axis=1)
        kl = kl_bernoulli_array(star[None, :], p)  # (N, K)
        return DriftMatrix(-kl[:, arms].T.copy(), [int(a) for a in arms])
    if env.kind == "max_bernoulli":
        subs = [tuple(int(x) for x in top_m_subset(row, env.M)) for row in p]
        ent = np.empty((p.shape[0], p.shape[0]))
        for i, s in enumerate(subs):
            idx = np.array(s)
            q_star = max_bernoulli_success(star, idx)
            q = 1.0 - np.prod(1.0 - p[:, idx], axis=1)
            ent[i] = -kl_bernoulli_array(np.full(p.shape[0], q_star), q)
        return DriftMatrix(ent, subs)
    if env.kind == "linear":
        acts = [optimal_action(env, row) for row in p]
        A = np.array(acts)
        gap = (star[None, :] - p) @ A.T  # gap[j, i] = <theta* - theta_j, A(i)>
        return DriftMatrix(-(gap.T ** 2) / (2.0 * env.sigma_w2), acts)
    return _netslice_drift(env, p, mc_samples, rng)


def _netslice_drift(env, p, mc_samples, rng):
    from .netslice import LatencyModel, SliceContext, sample_contexts, select_action
    from .rng import make_rng

    if mc_samples < 1:
        raise ValueError("netslice drift needs mc_samples >= 1 context draws")
    rng = make_rng(0) if rng is None else rng
    truth = LatencyModel.from_env(env)
    models = [LatencyModel.from_env(env, row) for row in p]
    n = p.shape[0]
    ent = np.zeros((n, n))
    for c1, c2 in sample_contexts(rng, mc_samples):
        c = SliceContext(c1, c2)
        for i, mi in enumerate(models):
            a = select_action(mi, c)
            m_star = np.maximum(truth.chosen_means(a, c), 1e-9)
            for j, mj in enumerate(models):
                m = np.maximum(mj.chosen_means(a, c), 1e-9)
                # KL between exponentials with means m_star and m, summed over domains
                ent[i, j] -= float(np.sum(np.log(m / m_star) + m_star / m - 1.0))
    return DriftMatrix(ent / mc_samples, None)


@dataclass
class SurvivalReport:
    verdict: str
    pi_d: np.ndarray
    support: list
    gaps: np.ndarray
    tol: float

    @property
    def holds(self):
        return self.verdict == "holds"


def survival_condition_check(pi, D, tol=1e-2):
    """Finite-sample check that ``argmax(pi D) == supp(pi)``.

    A particle counts as supported when ``pi_i > tol``. The check holds when
    every supported particle is within ``tol`` of the best average fitness and
    every unsupported one falls more than ``tol`` below it.
    """
    pi = np.asarray(pi, dtype=float)
    ent = D.entries if isinstance(D, DriftMatrix) else np.asarray(D, dtype=float)
    v = pi @ ent
    best = v.max()
    gaps = best - v
    support = [int(i) for i in np.flatnonzero(pi > tol)]
    inside = np.zeros(pi.size, dtype=bool)
    inside[support] = True
    ok = bool(support) and bool(np.all(gaps[inside] <= tol)) and bool(np.all(gaps[~inside] > tol))
    return SurvivalReport("holds" if ok else "violated", v, support, gaps, tol)


@dataclass(frozen=True)
class DivergenceLine:
    index: int
    at0: float  # D(0) = d(theta*_2 || theta_2)
    at1: float  # D(1) = d(theta*_1 || theta_1)
    optimal_arm: int

    def __call__(self, r):
        return r * self.at1 + (1.0 - r) * self.at0

    @property
    def slope(self):
        return self.at1 - self.at0


def _arm(theta):
    return 0 if theta[0] >= theta[1] else 1


def divergence_line(theta_star, particle, index=0):
    p = np.asarray(particle, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError(f"particle {tuple(p)} has a coordinate in {{0, 1}}; clamp it first")
    return DivergenceLine(
        index,
        kl_bernoulli(theta_star[1], p[1]),
        kl_bernoulli(theta_star[0], p[0]),
        _arm(p),
    )


@dataclass
class DivergenceDiagram:
    lines: list
    breakpoints: list  # sorted, includes 0.0 and 1.0
    breakpoint_particles: list  # tuple of 1 (boundary) or 2 (interior) particle indices
    dominant: list  # (left breakpoint, right breakpoint, particle index)
    contraction_set: list = field(default_factory=list)

    def value(self, r):
        return min(line(r) for line in self.lines)

    def dominant_at(self, r):
        for lo, hi, i in self.dominant:
            if lo <= r <= hi:
                return i
        raise ValueError(f"r={r} outside [0, 1]")


def _intersect(a, b):
    # r where a(r) == b(r), for distinct slopes
    return (b.at0 - a.at0) / (a.slope - b.slope)


def lower_envelope(lines):
    """Lower envelope of divergence lines on ``[0, 1]`` via the convex-hull trick."""
    if not lines:
        raise ValueError("at least one line required")
    for a_pos in range(len(lines)):
        for b in lines[a_pos + 1:]:
            a = lines[a_pos]
            if abs(a.at0 - b.at0) <= GEOM_TOL and abs(a.at1 - b.at1) <= GEOM_TOL:
                raise EnvelopeAssumptionError(
                    f"particles {a.index} and {b.index} have identical divergence lines", (a.index, b.index)
                )
    # minimum envelope over increasing r: slopes decreasing, lower intercept first on ties
    order = sorted(lines, key=lambda ln: (-ln.slope, ln.at0))
    hull = []
    for ln in order:
        if hull and abs(hull[-1].slope - ln.slope) <= GEOM_TOL:
            continue  # parallel and not lower
        while len(hull) >= 2 and _intersect(hull[-2], ln) <= _intersect(hull[-2], hull[-1]):
            hull.pop()
        hull.append(ln)

    segs = []  # (lo, hi, line) over the whole real line, clipped to [0, 1]
    for k, ln in enumerate(hull):
        lo = -math.inf if k == 0 else _intersect(hull[k - 1], ln)
        hi = math.inf if k == len(hull) - 1 else _intersect(ln, hull[k + 1])
        lo, hi = max(lo, 0.0), min(hi, 1.0)
        if hi - lo > GEOM_TOL:
            segs.append((lo, hi, ln))
    if not segs:
        # envelope switches within GEOM_TOL of a boundary; fall back to the pointwise winner
        ln = min(lines, key=lambda x: (x(0.5), x.index))
        segs = [(0.0, 1.0, ln)]
    segs[0] = (0.0,) + segs[0][1:]
    segs[-1] = segs[-1][:1] + (1.0, segs[-1][2])

    bps = [0.0]
    assoc = [(segs[0][2].index,)]
    for (lo, hi, a), (_, _, b) in zip(segs, segs[1:]):
        r = hi
        val = a(r)
        touching = [ln.index for ln in lines if abs(ln(r) - val) <= GEOM_TOL]
        if len(touching) > 2:
            raise EnvelopeAssumptionError(
                f"{len(touching)} lines meet on the envelope at r={r}: particles {touching}", touching
            )
        bps.append(r)
        assoc.append((a.index, b.index))
    bps.append(1.0)
    assoc.append((segs[-1][2].index,))
    dominant = [(lo, hi, ln.index) for lo, hi, ln in segs]
    diagram = DivergenceDiagram(list(lines), bps, assoc, dominant)
    diagram.contraction_set = _contraction_from_lines(diagram)
    return diagram


def _line_pair_is_cr(a, b):
    if a.optimal_arm == b.optimal_arm:
        return False
    one, two = (a, b) if a.optimal_arm == 0 else (b, a)
    return one.at1 > two.at1 and one.at0 < two.at0


def _contraction_from_lines(diagram):
    by_index = {ln.index: ln for ln in diagram.lines}
    out = []
    for r, parts in zip(diagram.breakpoints, diagram.breakpoint_particles):
        if r == 0.0 and len(parts) == 1:
            if by_index[parts[0]].optimal_arm == 1:
                out.append(r)
        elif r == 1.0 and len(parts) == 1:
            if by_index[parts[0]].optimal_arm == 0:
                out.append(r)
        elif len(parts) == 2 and _line_pair_is_cr(by_index[parts[0]], by_index[parts[1]]):
            out.append(r)
    return out


def classify_pair(theta_star, p1, p2):
    """One of ``"CR"``, ``"SR"``, ``"dominated"`` or ``"same_arm"``."""
    l1 = divergence_line(theta_star, p1, 0)
    l2 = divergence_line(theta_star, p2, 1)
    if l1.at0 == l2.at0 or l1.at1 == l2.at1:
        raise DegeneratePairError("equal divergences on an arm; perturb the particles")
    if (l1.at0 < l2.at0) == (l1.at1 < l2.at1):
        return "dominated"
    if l1.optimal_arm == l2.optimal_arm:
        return "same_arm"
    return "CR" if _line_pair_is_cr(l1, l2) else "SR"


def cr_crossing(theta_star, p1, p2):
    """Arm-1 frequency ``r`` where the two lines of a CR pair cross."""
    if classify_pair(theta_star, p1, p2) != "CR":
        raise ValueError("cr_crossing needs a counter-reinforcing pair")
    one, two = (p1, p2) if _arm(np.asarray(p1)) == 0 else (p2, p1)
    d11 = kl_bernoulli(theta_star[0], one[0])
    d12 = kl_bernoulli(theta_star[1], one[1])
    d21 = kl_bernoulli(theta_star[0], two[0])
    d22 = kl_bernoulli(theta_star[1], two[1])
    alpha = (d21 - d22) - (d11 - d12)
    beta = d22 - d12
    return -beta / alpha


def divergence_diagram(theta_star, particles):
    lines = [divergence_line(theta_star, p, i) for i, p in enumerate(np.asarray(particles, dtype=float))]
    return lower_envelope(lines)


def contraction_set(diagram, theta_star, particles):
    """Breakpoints ``r_t`` can converge to; depends only on ``theta_star`` and the particles."""
    particles = np.asarray(particles, dtype=float)
    out = []
    for r, parts in zip(diagram.breakpoints, diagram.breakpoint_particles):
        if len(parts) == 1:
            arm = _arm(particles[parts[0]])
            if (r == 0.0 and arm == 1) or (r == 1.0 and arm == 0):
                out.append(r)
        elif classify_pair(theta_star, particles[parts[0]], particles[parts[1]]) == "CR":
            out.append(r)
    return out


def is_action_optimal(theta_star, particle, threshold=False):
    """Whether ``particle`` picks an optimal arm of ``theta_star``.

    With ``threshold=True`` uses the KL sufficient condition instead, which
    may return False for some action-optimal particles.
    """
    star = np.asarray(theta_star, dtype=float)
    p = np.asarray(particle, dtype=float)
    if not threshold:
        return bool(star[_arm(p)] == star.max())
    mid = 0.5 * (star[0] + star[1])
    if star[0] == star[1]:
        return True
    d1_bar = kl_bernoulli(star[0], mid)
    d2_bar = kl_bernoulli(star[1], mid)
    return kl_bernoulli(star[0], p[0]) < d1_bar and kl_bernoulli(star[1], p[1]) < d2_bar


def log_weight_gap_rates(log_weights, steps, arm1_counts, i, j, theta_star, particles):
    """Normalized log-weight gap ``(ln w_i - ln w_j) / t`` next to ``D_j(r_t) - D_i(r_t)``.

    ``log_weights`` has one row per entry of ``steps`` (``t >= 1``) and
    ``arm1_counts`` the number of arm-1 pulls up to each of those steps.
    """
    lw = np.asarray(log_weights, dtype=float)
    t = np.asarray(steps, dtype=float)
    r = np.asarray(arm1_counts, dtype=float) / t
    gap = (lw[:, i] - lw[:, j]) / t
    li = divergence_line(theta_star, particles[i])
    lj = divergence_line(theta_star, particles[j])
    return gap, lj(r) - li(r)
