"""Compiled stochastic-EM pass.

Same algorithm as ``inference.greedy_infer`` followed by
``learning._apply_update``, fused into one loop so training runs at compiled
speed.  ``tests/test_kernels.py`` pins it to the numpy reference.
"""

import math

import numpy as np
from numba import njit

LOGIT_BOUND = 12.0
HE_PROB_FLOOR = 1e-6


@njit(cache=True)
def _clip(x, lo, hi):
    return lo if x < lo else (hi if x > hi else x)


@njit(cache=True)
def _log_logistic(x):
    x = _clip(x, -LOGIT_BOUND, LOGIT_BOUND)
    # -log(1 + exp(-x))
    if x > 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True)
def _logistic(x):
    x = _clip(x, -LOGIT_BOUND, LOGIT_BOUND)
    return 1.0 / (1.0 + math.exp(-x))


@njit(cache=True)
def _log1mexp(x):
    if x >= 0.0:
        return -np.inf
    if x > -0.6931471805599453:
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


@njit(cache=True)
def _prior_terms(q_logit, M, use_he, rates, prior_table, logodds):
    """Fill the binomial table (indexed by |z|) or the HE per-latent log odds; return HE base."""
    Q = _logistic(q_logit)
    if not use_he:
        lq, l1q = math.log(Q), math.log1p(-Q)
        for k in range(M + 1):
            prior_table[k] = (math.lgamma(M + 1.0) - math.lgamma(k + 1.0)
                              - math.lgamma(M - k + 1.0) + k * lq + (M - k) * l1q)
        return 0.0
    mean_rate = 0.0
    for a in range(M):
        mean_rate += rates[a]
    mean_rate /= M
    base = 0.0
    for a in range(M):
        qa = _clip(Q * mean_rate / rates[a], HE_PROB_FLOOR, 1.0 - HE_PROB_FLOOR)
        base += math.log1p(-qa)
        logodds[a] = math.log(qa) - math.log1p(-qa)
    return base


@njit(cache=True)
def em_pass(rho, r_logit, q_logit, words, order, lrs, i0, imax, use_he, rates,
            z_out, score_out):
    """One pass of inference + update over ``words[order]``; mutates parameters.

    Returns the final ``q_logit``.  ``z_out[t]`` / ``score_out[t]`` receive the
    inferred latent and its log joint for the t-th processed word.
    """
    N, M = rho.shape
    log_P = np.empty((N, M))
    log_R = np.empty(N)
    prior_table = np.empty(M + 1)
    logodds = np.empty(M)
    one_hot = np.empty(M)
    silent_P = np.empty(M)
    fire_idx = np.empty(N, dtype=np.int64)
    pool = np.empty(M, dtype=np.int64)
    z = np.zeros(M)
    max_sub = 1 << imax
    sub_k = np.empty(max_sub, dtype=np.int64)
    sub_silent = np.empty(max_sub)
    sub_odds = np.zeros(max_sub)
    sub_fire = np.empty((max_sub, N))
    for t in range(order.shape[0]):
        y = words[order[t]]
        for i in range(N):
            log_R[i] = _log_logistic(r_logit[i])
            for a in range(M):
                log_P[i, a] = _log_logistic(rho[i, a])
        he_base = _prior_terms(q_logit, M, use_he, rates, prior_table, logodds)

        n_fire = 0
        silent_R = 0.0
        for a in range(M):
            silent_P[a] = 0.0
        for i in range(N):
            if y[i]:
                fire_idx[n_fire] = i
                n_fire += 1
            else:
                silent_R += log_R[i]
                for a in range(M):
                    silent_P[a] += log_P[i, a]

        # empty latent
        s0 = silent_R
        for f in range(n_fire):
            s0 += _log1mexp(log_R[fire_idx[f]])
        s0 += he_base if use_he else prior_table[0]
        # one-hots
        e1 = 1.0 - 1.0 / M
        for a in range(M):
            s = e1 * silent_R + silent_P[a]
            for f in range(n_fire):
                i = fire_idx[f]
                s += _log1mexp(e1 * log_R[i] + log_P[i, a])
            s += (he_base + logodds[a]) if use_he else prior_table[1]
            one_hot[a] = s

        # candidate pool: above the empty latent (best first), then up to i0 others
        ranked = np.argsort(-one_hot, kind="mergesort")
        n_pool = 0
        for j in range(M):
            a = ranked[j]
            if one_hot[a] > s0 and n_pool < imax:
                pool[n_pool] = a
                n_pool += 1
        n_below = 0
        for j in range(M):
            a = ranked[j]
            if not (one_hot[a] > s0) and n_below < i0 and n_pool < imax:
                pool[n_pool] = a
                n_pool += 1
                n_below += 1
        pool_sorted = np.sort(pool[:n_pool])

        # subset sums built incrementally: subset v extends v without its lowest bit
        n_sub = 1 << n_pool
        best_v = 0
        best_s = -np.inf
        for v in range(n_sub):
            if v == 0:
                sub_k[0] = 0
                sub_silent[0] = 0.0
                sub_odds[0] = 0.0
                for f in range(n_fire):
                    sub_fire[0, f] = 0.0
            else:
                low = v & -v
                prev = v ^ low
                bit = 0
                while (low >> bit) != 1:
                    bit += 1
                a = pool_sorted[n_pool - 1 - bit]
                sub_k[v] = sub_k[prev] + 1
                sub_silent[v] = sub_silent[prev] + silent_P[a]
                sub_odds[v] = sub_odds[prev] + logodds[a]
                for f in range(n_fire):
                    sub_fire[v, f] = sub_fire[prev, f] + log_P[fire_idx[f], a]
            k = sub_k[v]
            e = 1.0 - k / M
            s = e * silent_R + sub_silent[v]
            for f in range(n_fire):
                s += _log1mexp(e * log_R[fire_idx[f]] + sub_fire[v, f])
            if use_he:
                s += he_base + sub_odds[v]
            else:
                s += prior_table[k]
            if v == 0 or s > best_s:
                best_s = s
                best_v = v

        k = 0
        for a in range(M):
            z[a] = 0.0
        for j in range(n_pool):
            if (best_v >> (n_pool - 1 - j)) & 1:
                z[pool_sorted[j]] = 1.0
                k += 1
        for a in range(M):
            z_out[t, a] = z[a]
        score_out[t] = best_s

        # gradient step
        lr = lrs[t]
        Q = _logistic(q_logit)
        if lr != 0.0:
            e = 1.0 - k / M
            if use_he:
                mean_rate = 0.0
                for a in range(M):
                    mean_rate += rates[a]
                mean_rate /= M
                g_q = 0.0
                for a in range(M):
                    qa = _clip(Q * mean_rate / rates[a], HE_PROB_FLOOR, 1.0 - HE_PROB_FLOOR)
                    g_q += z[a] - (1.0 - z[a]) * qa / (1.0 - qa)
                g_q *= 1.0 - Q
            else:
                g_q = k - M * Q
            for i in range(N):
                lt = e * log_R[i]
                for a in range(M):
                    if z[a] != 0.0:
                        lt += log_P[i, a]
                T = math.exp(lt)
                if y[i]:
                    br = -T / (1.0 - T)
                else:
                    br = 1.0
                R_i = _logistic(r_logit[i])
                r_logit[i] = _clip(r_logit[i] + lr * e * (1.0 - R_i) * br, -LOGIT_BOUND, LOGIT_BOUND)
                for a in range(M):
                    if z[a] != 0.0:
                        P_ia = _logistic(rho[i, a])
                        rho[i, a] = _clip(rho[i, a] + lr * (1.0 - P_ia) * br, -LOGIT_BOUND, LOGIT_BOUND)
            q_logit = _clip(q_logit + lr * g_q, -LOGIT_BOUND, LOGIT_BOUND)
        for a in range(M):
            rates[a] += z[a]
    return q_logit
