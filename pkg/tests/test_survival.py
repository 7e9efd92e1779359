import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpts.bandits import EnvironmentSpec, optimal_action
from rpts.rng import make_rng
from rpts.simulate import run_particle_bandit
from rpts.survival import (
    DegeneratePairError,
    DivergenceLine,
    EnvelopeAssumptionError,
    classify_pair,
    contraction_set,
    cr_crossing,
    divergence_diagram,
    divergence_line,
    drift_matrix,
    is_action_optimal,
    kl_bernoulli,
    kl_bernoulli_array,
    log_weight_gap_rates,
    lower_envelope,
    survival_condition_check,
)

# extended-precision values, computed once with mpmath (see _mp_kl) and frozen
KL_06_05 = 0.020135513550688863
KL_05_09 = 0.5108256237659907
SYM = (0.5, 0.5)
CR_PAIR = ([0.9, 0.5], [0.5, 0.9])
SR_PAIR = ([0.5, 0.1], [0.1, 0.5])


def _mp_kl(x, y):
    mp.mp.dps = 40
    x, y = mp.mpf(x), mp.mpf(y)
    out = mp.mpf(0)
    if x > 0:
        out += x * mp.log(x / y)
    if x < 1:
        out += (1 - x) * mp.log((1 - x) / (1 - y))
    return out


def test_frozen_kl_values_match_extended_precision():
    assert abs(_mp_kl("0.6", "0.5") - KL_06_05) < 1e-15
    assert abs(_mp_kl("0.5", "0.9") - KL_05_09) < 1e-15


# kl_bernoulli


def test_kl_examples():
    assert kl_bernoulli(0.5, 0.5) == 0.0
    assert kl_bernoulli(0.6, 0.5) == pytest.approx(0.020136, abs=1e-6)
    assert kl_bernoulli(0.6, 0.5) == pytest.approx(KL_06_05, rel=1e-13)
    assert kl_bernoulli(0.0, 0.5) == pytest.approx(math.log(2), rel=1e-15)
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            kl_bernoulli(0.3, bad)


def test_kl_grid_nonnegative_zero_only_on_diagonal():
    g = np.round(np.arange(0.01, 1.0, 0.01), 2)
    x, y = np.meshgrid(g, g, indexing="ij")
    kl = kl_bernoulli_array(x, y)
    assert np.all(kl >= 0)
    assert np.all((kl == 0) == (x == y))
    for i in range(0, 99, 7):
        for j in range(0, 99, 11):
            assert kl[i, j] == pytest.approx(kl_bernoulli(g[i], g[j]), rel=1e-12, abs=1e-15)


# drift matrix


def test_drift_matrix_symmetric_cr_example():
    env = EnvironmentSpec("bernoulli", np.array(SYM))
    D = drift_matrix(env, np.array(CR_PAIR))
    np.testing.assert_allclose(D.entries, [[-KL_05_09, 0.0], [0.0, -KL_05_09]], atol=1e-6)
    assert D.row_action == [0, 1]


def test_drift_matrix_truth_column_and_shared_rows():
    env = EnvironmentSpec("bernoulli", np.array([0.6, 0.3, 0.45]))
    p = np.array([[0.8, 0.2, 0.3], [0.6, 0.3, 0.45], [0.7, 0.1, 0.5], [0.2, 0.9, 0.1]])
    D = drift_matrix(env, p)
    assert np.all(D.entries <= 0)
    assert np.all(D.entries[:, 1] == 0)
    assert D.row_action[0] == D.row_action[2] == 0
    np.testing.assert_array_equal(D.entries[0], D.entries[2])
    # direct KL over the two outcomes of the row action
    for i in range(4):
        a = D.row_action[i]
        for j in range(4):
            q, r = env.theta_star[a], p[j, a]
            ref = q * math.log(q / r) + (1 - q) * math.log((1 - q) / (1 - r))
            assert D.entries[i, j] == pytest.approx(-ref, abs=1e-14)


def test_drift_matrix_max_bernoulli_and_linear():
    env = EnvironmentSpec("max_bernoulli", np.array([0.1, 0.9, 0.5, 0.3]), M=2)
    p = make_rng(1).random((5, 4))
    D = drift_matrix(env, p)
    for i in range(5):
        sub = D.row_action[i]
        q = 1 - np.prod(1 - env.theta_star[list(sub)])
        for j in range(5):
            r = 1 - np.prod(1 - p[j, list(sub)])
            assert D.entries[i, j] == pytest.approx(-kl_bernoulli(q, r), abs=1e-13)
    env = EnvironmentSpec("linear", np.array([0.3, -0.2, 0.4]), sigma_w2=0.5)
    p = make_rng(2).standard_normal((4, 3)) * 0.3
    D = drift_matrix(env, p)
    for i in range(4):
        a = optimal_action(env, p[i])
        for j in range(4):
            # KL of N(m1, s2) from N(m2, s2) is (m1 - m2)^2 / (2 s2)
            m1, m2 = env.theta_star @ a, p[j] @ a
            assert D.entries[i, j] == pytest.approx(-((m1 - m2) ** 2) / (2 * 0.5), abs=1e-14)


@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=12),
       st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)))
def test_drift_entries_nonpositive_and_rows_follow_actions(pts, star):
    env = EnvironmentSpec("bernoulli", np.array(star))
    D = drift_matrix(env, np.array(pts))
    assert np.all(D.entries <= 0)
    for i in range(len(pts)):
        for k in range(len(pts)):
            if D.row_action[i] == D.row_action[k]:
                assert np.max(np.abs(D.entries[i] - D.entries[k])) <= 1e-12


def test_netslice_drift_uses_context_average():
    env = EnvironmentSpec("netslice", np.full(4, 0.5), block_counts=(1, 1))
    p = np.array([np.full(4, 0.5), [0.2, 0.6, 0.5, 0.5]])
    with pytest.raises(ValueError):
        drift_matrix(env, p)
    D = drift_matrix(env, p, mc_samples=50, rng=make_rng(0))
    assert np.all(D.entries[:, 0] == 0) and np.all(D.entries[:, 1] < 0)


# survival condition


def test_survival_check_examples():
    env = EnvironmentSpec("bernoulli", np.array(SYM))
    D = drift_matrix(env, np.array(CR_PAIR))
    rep = survival_condition_check([0.5, 0.5], D, 1e-2)
    assert rep.holds
    np.testing.assert_allclose(rep.pi_d, [-0.2554, -0.2554], atol=1e-4)
    rep = survival_condition_check([1.0, 0.0], D, 1e-2)
    assert rep.verdict == "violated"
    np.testing.assert_allclose(rep.pi_d, [-0.5108, 0.0], atol=1e-4)
    rep = survival_condition_check([1.0], np.zeros((1, 1)), 1e-2)
    assert rep.holds and rep.support == [0]


# divergence lines and envelope


def test_divergence_line_examples():
    ln = divergence_line(SYM, SYM)
    assert (ln.at0, ln.at1) == (0.0, 0.0)
    ln = divergence_line(SYM, CR_PAIR[0])
    assert (ln.at0, ln.at1) == pytest.approx((0.0, 0.510826), abs=1e-6)
    assert ln.optimal_arm == 0
    ln = divergence_line(SYM, CR_PAIR[1])
    assert (ln.at0, ln.at1) == pytest.approx((0.510826, 0.0), abs=1e-6)
    assert ln.optimal_arm == 1
    assert divergence_line(SYM, [0.4, 0.4]).optimal_arm == 0
    with pytest.raises(ValueError):
        divergence_line(SYM, [1.0, 0.4])


def test_envelope_single_line():
    d = lower_envelope([DivergenceLine(0, 0.3, 0.1, 0)])
    assert d.breakpoints == [0.0, 1.0]
    assert d.breakpoint_particles == [(0,), (0,)]
    assert d.dominant == [(0.0, 1.0, 0)]


def test_envelope_symmetric_cr_pair():
    c = 0.4
    d = lower_envelope([DivergenceLine(0, 0.0, c, 0), DivergenceLine(1, c, 0.0, 1)])
    assert d.breakpoints == [0.0, 0.5, 1.0]
    assert d.breakpoint_particles[1] == (0, 1)
    assert d.dominant_at(0.25) == 0 and d.dominant_at(0.75) == 1


def test_dominated_line_absent():
    d = lower_envelope([DivergenceLine(0, 0.1, 0.2, 0), DivergenceLine(1, 0.3, 0.25, 1)])
    assert d.breakpoints == [0.0, 1.0]
    assert all(1 not in parts for parts in d.breakpoint_particles)


def test_envelope_assumption_violations():
    with pytest.raises(EnvelopeAssumptionError) as err:
        lower_envelope([DivergenceLine(0, 0.1, 0.2, 0), DivergenceLine(1, 0.1, 0.2, 1)])
    assert err.value.particles == (0, 1)
    lines = [DivergenceLine(0, 0.0, 0.4, 0), DivergenceLine(1, 0.4, 0.0, 1), DivergenceLine(2, 0.1, 0.3, 0)]
    with pytest.raises(EnvelopeAssumptionError) as err:
        lower_envelope(lines)
    assert set(err.value.particles) == {0, 1, 2}


def _random_particles(rng, n):
    return np.clip(rng.random((n, 2)), 1e-6, 1 - 1e-6)


def _check_envelope(star, particles, rs):
    d = divergence_diagram(star, particles)
    vals = np.array([[ln(r) for ln in d.lines] for r in rs])
    env_min = vals.min(axis=1)
    for k, r in enumerate(rs):
        assert abs(d.value(r) - env_min[k]) <= 1e-12
        assert abs(d.lines[d.dominant_at(r)](r) - env_min[k]) <= 1e-12
    assert d.breakpoints[0] == 0.0 and d.breakpoints[-1] == 1.0
    assert all(len(p) == 2 for p in d.breakpoint_particles[1:-1])
    assert len(d.breakpoints) <= 2 + len(particles) * (len(particles) - 1) // 2
    for lo, hi, i in d.dominant:
        mid = 0.5 * (lo + hi)
        assert abs(d.lines[i](mid) - min(ln(mid) for ln in d.lines)) <= 1e-12
    return d


def test_envelope_matches_pointwise_minimum_on_random_sets():
    rng = make_rng(10)
    for _ in range(20):
        star = tuple(rng.random(2))
        _check_envelope(star, _random_particles(rng, 30), rng.random(200))


# pairs


def test_classify_pair_examples():
    assert classify_pair(SYM, *CR_PAIR) == "CR"
    assert classify_pair(SYM, *SR_PAIR) == "SR"
    assert classify_pair(SYM, [0.7, 0.2], SYM) == "dominated"
    assert classify_pair((0.6, 0.4), [0.8, 0.3], [0.7, 0.35]) in ("dominated", "same_arm")
    with pytest.raises(DegeneratePairError):
        classify_pair(SYM, [0.9, 0.5], [0.5, 0.5])


@given(st.tuples(*[st.floats(0.02, 0.98)] * 6))
def test_classify_pair_label_invariant(v):
    star, p1, p2 = v[:2], v[2:4], v[4:]
    try:
        a = classify_pair(star, p1, p2)
    except DegeneratePairError:
        return
    assert classify_pair(star, p2, p1) == a


def test_cr_crossing_examples():
    assert cr_crossing(SYM, *CR_PAIR) == pytest.approx(0.5, abs=1e-15)
    # (0.8, 0.4)/(0.6, 0.1) both prefer arm 0 under (0.6, 0.4), so there is no crossing to compute
    assert classify_pair((0.6, 0.4), [0.8, 0.4], [0.6, 0.1]) == "same_arm"
    with pytest.raises(ValueError):
        cr_crossing((0.6, 0.4), [0.8, 0.4], [0.6, 0.1])
    with pytest.raises(ValueError):
        cr_crossing(SYM, *SR_PAIR)
    # counter-reinforcing asymmetric pair: arm-0 particle exact on arm 1, arm-1 particle exact on arm 0
    d1 = _mp_kl("0.6", "0.8")
    d2 = _mp_kl("0.4", "0.9")
    ref = float(d2 / (d1 + d2))
    assert cr_crossing((0.6, 0.4), [0.8, 0.4], [0.6, 0.9]) == pytest.approx(ref, abs=1e-14)


def test_cr_crossing_in_unit_interval_for_random_cr_pairs():
    rng = make_rng(4)
    found = 0
    while found < 10**4:
        v = rng.uniform(0.01, 0.99, 6)
        star, p1, p2 = v[:2], v[2:4], v[4:]
        if classify_pair(star, p1, p2) != "CR":
            continue
        found += 1
        r = cr_crossing(star, p1, p2)
        assert 0.0 < r < 1.0
        assert abs(divergence_line(star, p1)(r) - divergence_line(star, p2)(r)) < 1e-12


# contraction set


def test_contraction_set_examples():
    d = divergence_diagram(SYM, CR_PAIR)
    assert d.contraction_set == [0.5] == contraction_set(d, SYM, CR_PAIR)
    d = divergence_diagram(SYM, SR_PAIR)
    assert d.contraction_set == [0.0, 1.0] == contraction_set(d, SYM, SR_PAIR)


def test_six_particle_cr_then_sr_topology():
    # envelope: arm-0 particle, CR crossing into an arm-1 particle, SR crossing into an
    # arm-0 particle that holds the right edge; three more particles stay above
    p = [[0.9, 0.52], [0.35, 0.65], [0.52, 0.15], [0.2, 0.2], [0.95, 0.05], [0.1, 0.8]]
    d = divergence_diagram(SYM, p)
    assert d.breakpoint_particles[1:3] == [(0, 1), (1, 2)]
    assert classify_pair(SYM, p[0], p[1]) == "CR" and classify_pair(SYM, p[1], p[2]) == "SR"
    # solve at0_a + r (at1_a - at0_a) = at0_b + r (at1_b - at0_b)
    a0, a1 = _mp_kl("0.5", "0.52"), _mp_kl("0.5", "0.9")
    b0, b1 = _mp_kl("0.5", "0.65"), _mp_kl("0.5", "0.35")
    r = float((b0 - a0) / ((a1 - a0) - (b1 - b0)))
    assert d.contraction_set == pytest.approx([r, 1.0], abs=1e-13)
    assert contraction_set(d, SYM, p) == d.contraction_set


def test_contraction_set_is_a_function_of_inputs_only():
    rng = make_rng(3)
    star = (0.62, 0.41)
    p = _random_particles(rng, 25)
    a = divergence_diagram(star, p).contraction_set
    b = divergence_diagram(star, p.copy()).contraction_set
    assert a == b


# action optimality


def test_action_optimality():
    assert is_action_optimal((0.7, 0.3), (0.7, 0.3))
    assert is_action_optimal((0.7, 0.3), (0.7, 0.3), threshold=True)
    rng = make_rng(6)
    for p in rng.uniform(1e-6, 1 - 1e-6, (1000, 2)):
        assert is_action_optimal(SYM, p)


def test_threshold_condition_implies_exact_optimality():
    star = (0.7, 0.3)
    p = make_rng(7).uniform(1e-6, 1 - 1e-6, (10**5, 2))
    mid = 0.5
    d1 = kl_bernoulli_array(np.full(len(p), star[0]), p[:, 0])
    d2 = kl_bernoulli_array(np.full(len(p), star[1]), p[:, 1])
    thresh = (d1 < kl_bernoulli(star[0], mid)) & (d2 < kl_bernoulli(star[1], mid))
    exact = p[:, 0] >= p[:, 1]
    assert thresh.sum() > 1000
    assert np.all(exact[thresh])
    for q in p[:200]:
        assert (not is_action_optimal(star, q, threshold=True)) or is_action_optimal(star, q)


# log-weight gap rates


def test_gap_rates_trivial_cases():
    lw = np.log(np.array([[0.3, 0.3, 0.4], [0.2, 0.2, 0.6]]))
    p = np.array([[0.6, 0.4], [0.6, 0.4], [0.3, 0.9]])
    gap, pred = log_weight_gap_rates(lw, [10, 20], [4, 9], 2, 2, SYM, p)
    assert np.all(gap == 0) and np.all(pred == 0)
    gap, pred = log_weight_gap_rates(lw, [10, 20], [4, 9], 0, 1, SYM, p)
    assert np.all(gap == 0) and np.all(pred == 0)


def test_gap_rate_tracks_divergence_difference_on_cr_pair():
    env = EnvironmentSpec("bernoulli", np.array(SYM))
    p = np.array(CR_PAIR)
    T, stride = 20000, 1000
    rec = run_particle_bandit(env, None, T, 1, particles=p, stride=stride)
    steps = np.arange(1, T // stride + 1) * stride
    counts = np.cumsum(rec.sampled == 0)[steps - 1]  # particle 0 plays arm 0
    gap, pred = log_weight_gap_rates(rec.log_weight_trace[1:], steps, counts, 0, 1, SYM, p)
    assert abs(gap[-1] - pred[-1]) < 0.01
