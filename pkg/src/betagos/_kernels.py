"""Compiled inner loops of the pairing-label sampler.

All arrays are 0-based: ``c[i] == i`` opens a block, otherwise ``c[i] < i``.
Random numbers are supplied by the caller so the numpy Generator remains the
only source of randomness.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def log_marginal(n, sy, syy, tau2, mu0, s02):
    # log of prod N(y | mu, tau2) integrated against N(mu | mu0, s02), written as
    # within-block scatter plus a shrinkage term; the expanded completed-square
    # form cancels catastrophically when s02 is small.
    ybar = sy / n
    ss = max(syy - sy * ybar, 0.0)
    d = ybar - mu0
    return (-0.5 * n * (LOG_2PI + math.log(tau2))
            - 0.5 * math.log1p(n * s02 / tau2)
            - ss / (2.0 * tau2)
            - 0.5 * n * d * d / (tau2 + n * s02))


@njit(cache=True, nogil=True)
def roots(c):
    m = c.shape[0]
    r = np.empty(m, dtype=np.int64)
    for k in range(m):
        r[k] = k if c[k] == k else r[c[k]]
    return r


@njit(cache=True, nogil=True)
def total_log_marginal(c, y, tau2, mu0, s02):
    m = c.shape[0]
    r = roots(c)
    cnt = np.zeros(m)
    sy = np.zeros(m)
    syy = np.zeros(m)
    for k in range(m):
        cnt[r[k]] += 1.0
        sy[r[k]] += y[k]
        syy[r[k]] += y[k] * y[k]
    out = 0.0
    for k in range(m):
        if cnt[k] > 0:
            out += log_marginal(cnt[k], sy[k], syy[k], tau2, mu0, s02)
    return out


@njit(cache=True, nogil=True)
def label_log_weights(i, c, y, cs, log1m, tau2, mu0, s02, out):
    """Unnormalized log full conditional of ``c[i]`` over candidates ``0..i``."""
    m = c.shape[0]
    _label_log_weights(i, c, y, cs, log1m, tau2, mu0, s02, out,
                       np.empty(m, dtype=np.bool_), np.empty(m, dtype=np.int64),
                       np.empty(m), np.empty(m), np.empty(m))


@njit(cache=True, nogil=True)
def _label_log_weights(i, c, y, cs, log1m, tau2, mu0, s02, out, insub, r, cnt, sy, syy):
    # Cutting the edge i -> c[i] separates the subtree rooted at i (every later
    # observation chained to it) from the rest. Re-attaching the subtree to a
    # candidate j < i merges it into j's block; j == i makes it a block of its
    # own. Only that block's marginal changes.
    m = c.shape[0]
    for k in range(i):
        insub[k] = False
        cnt[k] = 0.0
        sy[k] = 0.0
        syy[k] = 0.0
    insub[i] = True
    ns = 1.0
    sys_ = y[i]
    syys = y[i] * y[i]
    for k in range(i + 1, m):
        insub[k] = c[k] != k and insub[c[k]]
        if insub[k]:
            ns += 1.0
            sys_ += y[k]
            syys += y[k] * y[k]
    for k in range(m):
        if insub[k]:
            r[k] = -1
            continue
        r[k] = k if c[k] == k else r[c[k]]
        if r[k] < i:
            cnt[r[k]] += 1.0
            sy[r[k]] += y[k]
            syy[r[k]] += y[k] * y[k]
    # reuse syy[b] for the block's merge gain once its statistics are final
    for b in range(i):
        if cnt[b] > 0:
            syy[b] = (log_marginal(cnt[b] + ns, sy[b] + sys_, syy[b] + syys, tau2, mu0, s02)
                      - log_marginal(cnt[b], sy[b], syy[b], tau2, mu0, s02))
    top = cs[i - 1]
    for j in range(i):
        # p_{i,j} = (1 - W_j) prod_{l=j+1}^{i-1} W_l  (0-based indices)
        out[j] = log1m[j] + (top - cs[j]) + syy[r[j]]
    out[i] = top + log_marginal(ns, sys_, syys, tau2, mu0, s02)


@njit(cache=True, nogil=True)
def _draw(logw, n, u):
    mx = -np.inf
    for j in range(n):
        if logw[j] > mx:
            mx = logw[j]
    tot = 0.0
    for j in range(n):
        logw[j] = math.exp(logw[j] - mx)
        tot += logw[j]
    target = u * tot
    acc = 0.0
    for j in range(n):
        acc += logw[j]
        if acc > target:
            return j
    return n - 1


@njit(cache=True, nogil=True)
def sweep_labels(c, y, logw, log1m, tau2, mu0, s02, order, u):
    """Update ``c[i]`` for each ``i`` in ``order`` from its full conditional, in place."""
    m = c.shape[0]
    cs = np.cumsum(logw)
    buf = np.empty(m)
    insub = np.empty(m, dtype=np.bool_)
    r = np.empty(m, dtype=np.int64)
    cnt = np.empty(m)
    sy = np.empty(m)
    syy = np.empty(m)
    for t in range(order.shape[0]):
        i = order[t]
        if i == 0:
            continue
        _label_log_weights(i, c, y, cs, log1m, tau2, mu0, s02, buf, insub, r, cnt, sy, syy)
        c[i] = _draw(buf, i + 1, u[t])


@njit(cache=True, nogil=True)
def beta_posterior_counts(c):
    """Counts ``(a_i, b_i)`` added to ``(alpha_i, beta_i)`` in the weight conditional.

    ``a_i`` = #{j > i : c[j] < i or c[j] == j}; ``b_i`` = #{j > i : c[j] == i}.
    """
    m = c.shape[0]
    diff = np.zeros(m + 1, dtype=np.int64)
    b = np.zeros(m, dtype=np.int64)
    for j in range(1, m):
        if c[j] == j:
            diff[0] += 1
            diff[j] -= 1
        else:
            b[c[j]] += 1
            diff[c[j] + 1] += 1
            diff[j] -= 1
    a = np.cumsum(diff[:m])
    return a, b


@njit(cache=True, nogil=True)
def canonical_ids(c):
    m = c.shape[0]
    z = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(m):
        if c[i] == i:
            z[i] = k
            k += 1
        else:
            z[i] = z[c[i]]
    return z


@njit(cache=True, nogil=True)
def block_stats(c, y):
    """Canonical block id per observation plus per-block count, sum and sum of squares."""
    m = c.shape[0]
    z = np.empty(m, dtype=np.int64)
    k = 0
    for i in range(m):
        if c[i] == i:
            z[i] = k
            k += 1
        else:
            z[i] = z[c[i]]
    cnt = np.zeros(k)
    sy = np.zeros(k)
    syy = np.zeros(k)
    for i in range(m):
        cnt[z[i]] += 1.0
        sy[z[i]] += y[i]
        syy[z[i]] += y[i] * y[i]
    return z, cnt, sy, syy
