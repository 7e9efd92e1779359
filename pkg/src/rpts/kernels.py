"""Hot inner loops shared by the step-level API and the run drivers.

Every function here is written in a numpy dialect numba can compile, so the
same source runs jitted (default) or as plain numpy when ``RPTS_NUMBA=0``.
Particle weights are always kept as normalized log-weights.
"""
import math

import numpy as np

from ._accel import optional_njit

BERNOULLI = 0
MAX_BERNOULLI = 1
LINEAR = 2

LOG_2PI = math.log(2.0 * math.pi)
SQRT_2PI = math.sqrt(2.0 * math.pi)
EXP_MEAN_FLOOR = 1e-9


@optional_njit(cache=True)
def normalize_log_weights(log_w):
    """Shift ``log_w`` in place so that ``sum(exp(log_w)) == 1``; returns the shift."""
    m = np.max(log_w)
    lse = m + np.log(np.sum(np.exp(log_w - m)))
    log_w -= lse
    return lse


@optional_njit(cache=True)
def sample_index(log_w, u):
    """Inverse-CDF draw of a particle index from log-weights with uniform ``u``."""
    cum = np.cumsum(np.exp(log_w))
    i = np.searchsorted(cum, u * cum[-1], side="right")
    if i >= log_w.shape[0]:
        i = log_w.shape[0] - 1
    return i


@optional_njit(cache=True)
def condition_holds(log_w, n_del, w_inact):
    w = np.sort(np.exp(log_w))
    return np.sum(w[:n_del]) <= w_inact


@optional_njit(cache=True)
def bernoulli_loglik(particles, arm, y):
    p = particles[:, arm]
    if y > 0.5:
        return np.log(p)
    return np.log1p(-p)


@optional_njit(cache=True)
def max_bernoulli_success(theta, subset):
    q = 1.0
    for m in subset:
        q *= 1.0 - theta[m]
    return 1.0 - q


@optional_njit(cache=True)
def max_bernoulli_loglik(particles, subset, y):
    q = np.ones(particles.shape[0])
    for m in subset:
        q *= 1.0 - particles[:, m]
    if y > 0.5:
        return np.log1p(-q)
    return np.log(q)


@optional_njit(cache=True)
def linear_loglik(particles, a, y, sigma_w2):
    resid = y - particles @ a
    return -0.5 * (LOG_2PI + math.log(sigma_w2)) - resid * resid / (2.0 * sigma_w2)


@optional_njit(cache=True)
def exponential_loglik(means, y):
    m = np.maximum(means, EXP_MEAN_FLOOR)
    return -np.log(m) - y / m


@optional_njit(cache=True)
def top_m_subset(theta, m):
    # stable sort on -theta keeps the lowest index first among ties
    order = np.argsort(-theta, kind="mergesort")
    return np.sort(order[:m])


@optional_njit(cache=True)
def unit_direction(theta):
    nrm = np.sqrt(np.sum(theta * theta))
    out = np.zeros(theta.shape[0])
    if nrm == 0.0:
        out[0] = 1.0
    else:
        out[:] = theta / nrm
    return out


@optional_njit(cache=True)
def std_normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@optional_njit(cache=True)
def approx_sla_reward(mu, var, d):
    """Gaussian approximation of E[g_d(Y)] for Y with mean ``mu`` and variance ``var``."""
    if var <= 0.0:
        if mu <= d:
            return mu / d
        return 0.0
    s = math.sqrt(var)
    head = s / (d * SQRT_2PI) * (math.exp(-mu * mu / (2.0 * var)) - math.exp(-(d - mu) * (d - mu) / (2.0 * var)))
    tail = mu / d * (std_normal_cdf((d - mu) / s) - std_normal_cdf(-mu / s))
    return head + tail


@optional_njit(cache=True)
def run_bandit_chunk(
    kind,
    particles,
    log_w,
    theta_star,
    m_sub,
    sigma_w2,
    u_sel,
    noise,
    t_start,
    t_stop,
    n_del,
    w_inact,
    check_condition,
    chosen_out,
    y_out,
    regret_out,
    weight_sum,
    arm_counts,
    stride,
    log_w_rec,
):
    """Advance one PTS run from step ``t_start`` to ``t_stop`` (0-based, exclusive).

    Returns the number of steps completed. When ``check_condition`` is set the
    loop stops right after the first step whose updated weights satisfy the
    RPTS deletion condition, leaving regeneration to the caller.
    """
    k = theta_star.shape[0]
    sigma_w = math.sqrt(sigma_w2)
    if kind == BERNOULLI:
        best = np.max(theta_star)
    elif kind == MAX_BERNOULLI:
        best = max_bernoulli_success(theta_star, top_m_subset(theta_star, m_sub))
    else:
        best = math.sqrt(np.sum(theta_star * theta_star))

    for t in range(t_start, t_stop):
        i = sample_index(log_w, u_sel[t])
        theta = particles[i]
        if kind == BERNOULLI:
            arm = np.argmax(theta)
            p = theta_star[arm]
            y = 1.0 if noise[t] < p else 0.0
            ll = bernoulli_loglik(particles, arm, y)
            regret = best - p
            arm_counts[arm] += 1
        elif kind == MAX_BERNOULLI:
            sub = top_m_subset(theta, m_sub)
            p = max_bernoulli_success(theta_star, sub)
            y = 1.0 if noise[t] < p else 0.0
            ll = max_bernoulli_loglik(particles, sub, y)
            regret = best - p
            for s in sub:
                arm_counts[s] += 1
        else:
            a = unit_direction(theta)
            mean = 0.0
            for j in range(k):
                mean += theta_star[j] * a[j]
            y = mean + sigma_w * noise[t]
            ll = linear_loglik(particles, a, y, sigma_w2)
            regret = best - mean
        log_w += ll
        normalize_log_weights(log_w)
        weight_sum += np.exp(log_w)
        chosen_out[t] = i
        y_out[t] = y
        regret_out[t] = max(regret, 0.0)
        if stride > 0 and (t + 1) % stride == 0:
            log_w_rec[(t + 1) // stride, :] = log_w
        if check_condition and condition_holds(log_w, n_del, w_inact):
            return t + 1
    return t_stop


@optional_njit(cache=True)
def enumerate_actions(block_counts):
    """All block tuples (0-based) in lexicographic order, one row per action."""
    d = block_counts.shape[0]
    n = 1
    for b in block_counts:
        n *= b
    out = np.zeros((n, d), dtype=np.int64)
    for r in range(n):
        rem = r
        for j in range(d - 1, -1, -1):
            out[r, j] = rem % block_counts[j]
            rem //= block_counts[j]
    return out


@optional_njit(cache=True)
def best_slice_action(block_means, offsets, actions, d_sla):
    """Index into ``actions`` maximizing the approximate SLA reward (first max wins).

    ``block_means`` holds the implied latency mean of every block, laid out
    domain-major with ``offsets[i]`` the first block of domain ``i``.
    """
    best_r = -1.0
    best_k = 0
    n_dom = actions.shape[1]
    for k in range(actions.shape[0]):
        mu = 0.0
        var = 0.0
        for i in range(n_dom):
            m = block_means[offsets[i] + actions[k, i]]
            mu += m
            var += m * m
        r = approx_sla_reward(mu, var, d_sla)
        if r > best_r:
            best_r = r
            best_k = k
    return best_k, best_r


@optional_njit(cache=True)
def slice_reward_of(block_means, offsets, action, d_sla):
    mu = 0.0
    var = 0.0
    for i in range(action.shape[0]):
        m = block_means[offsets[i] + action[i]]
        mu += m
        var += m * m
    return approx_sla_reward(mu, var, d_sla)


@optional_njit(cache=True)
def run_netslice_chunk(
    particles,
    log_w,
    theta_star,
    offsets,
    actions,
    contexts,
    u_sel,
    u_obs,
    t_start,
    t_stop,
    n_del,
    w_inact,
    check_condition,
    action_out,
    regret_out,
    y_out,
):
    """Per-block contextual PTS over the slicing model.

    ``particles`` is (n_blocks, N, 2), ``log_w`` is (n_blocks, N) and
    ``theta_star`` is (n_blocks, 2). Returns steps completed; stops early
    when any updated block meets the RPTS deletion condition.
    """
    n_blocks = particles.shape[0]
    n_dom = actions.shape[1]
    sampled = np.empty(n_blocks)
    true_means = np.empty(n_blocks)
    for t in range(t_start, t_stop):
        c1 = contexts[t, 0]
        c2 = contexts[t, 1]
        for b in range(n_blocks):
            i = sample_index(log_w[b], u_sel[t, b])
            sampled[b] = c1 * particles[b, i, 0] + particles[b, i, 1]
            true_means[b] = c1 * theta_star[b, 0] + theta_star[b, 1]
        k, _ = best_slice_action(sampled, offsets, actions, c2)
        _, r_star = best_slice_action(true_means, offsets, actions, c2)
        r_play = slice_reward_of(true_means, offsets, actions[k], c2)
        action_out[t] = k
        regret_out[t] = max(r_star - r_play, 0.0)
        triggered = False
        for dom in range(n_dom):
            b = offsets[dom] + actions[k, dom]
            mean = true_means[b]
            y = -mean * math.log1p(-u_obs[t, dom])
            y_out[t, dom] = y
            means = c1 * particles[b, :, 0] + particles[b, :, 1]
            log_w[b] += exponential_loglik(means, y)
            normalize_log_weights(log_w[b])
            if check_condition and condition_holds(log_w[b], n_del, w_inact):
                triggered = True
        if triggered:
            return t + 1
    return t_stop


@optional_njit(cache=True)
def accumulate_sla_reward(means, d_sla, unit_exp, out_sum):
    """Add ``sum_s g_d(sum_i means[g, i] * unit_exp[i, s])`` to ``out_sum[g]`` for each grid row ``g``.

    ``unit_exp`` is ``(D, S)`` unit-mean exponential draws shared by every
    row (common random numbers across the grid).
    """
    n_dom, n = unit_exp.shape
    for g in range(means.shape[0]):
        d = d_sla[g]
        acc = 0.0
        for s in range(n):
            y = 0.0
            for i in range(n_dom):
                y += means[g, i] * unit_exp[i, s]
            if y <= d:
                acc += y
        out_sum[g] += acc / d
