"""Exact and limiting analytics for the number of blocks ``K_n``.

Everything here is expressed through the power moments ``E[W_i^k]`` of the
independent latent weights. The central quantity is

    phi_{n,m} = sum_{l_1 < ... < l_m <= n} E[r_{l_1} ... r_{l_m}],

which gives the falling factorial moments ``E[(K_{n+1}-1)_{(m)}] = m! phi_{n,m}``
and the transform ``E[exp(-t K_{n+1})]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import BetaSchedule, Constant, DpDeterministic, ThetaLinear
from .errors import DomainError

STIRLING_MAX = 30


def expected_r(s: BetaSchedule, n: int) -> float:
    """``E[r_n] = prod_{j<=n} E[W_j]``; equals 1 for ``n = 0``."""
    if n < 0:
        raise DomainError("n must be >= 0")
    if n == 0:
        return 1.0
    return float(np.exp(np.sum(s.log_power_moments(n, 1))))


def expected_p(s: BetaSchedule, n: int, k: int) -> float:
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n (got k={k}, n={n})")
    logm = s.log_power_moments(n, 1)
    tail = float(np.sum(logm[k:]))
    return float(-np.expm1(logm[k - 1]) * np.exp(tail))


def expected_p_all(s: BetaSchedule, n: int) -> np.ndarray:
    """Vector of ``E[p_{n,k}]`` for ``k = 1..n``."""
    if n < 1:
        return np.zeros(0)
    logm = s.log_power_moments(n, 1)
    tail = np.concatenate([np.cumsum(logm[::-1])[::-1][1:], [0.0]])
    return -np.expm1(logm) * np.exp(tail)


def expected_K(s: BetaSchedule, n: int) -> float:
    """``E[K_n] = 1 + sum_{j=1}^{n-1} E[r_j]``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if n == 1:
        return 1.0
    logm = s.log_power_moments(n - 1, 1)
    return float(1.0 + np.sum(np.exp(np.cumsum(logm))))


def phi_all(s: BetaSchedule, n: int, max_m: int) -> np.ndarray:
    """``phi_{n,m}`` for ``m = 0..max_m`` in one O(n*max_m) pass.

    Indices are scanned from ``n`` down to 1. The power of ``W_k`` in
    ``r_{l_1}...r_{l_m}`` is the number of chosen ``l >= k``, which is exactly the
    running count ``j`` of the scan, so ``H[j] <- (H[j] + H[j-1]) E[W_k^j]``.
    """
    if n < 0 or max_m < 0:
        raise DomainError("need n >= 0 and max_m >= 0")
    M = min(max_m, n)
    out = np.zeros(max_m + 1)
    out[0] = 1.0
    if M == 0:
        return out
    mom = np.exp(np.stack([s.log_power_moments(n, j) for j in range(M + 1)], axis=1))  # (n, M+1)
    H = np.zeros(M + 1)
    H[0] = 1.0
    for k in range(n - 1, -1, -1):
        H[1:] += H[:-1].copy()
        H *= mom[k]
    out[:M + 1] = H
    return out


def phi(s: BetaSchedule, n: int, m: int) -> float:
    """``phi_{n,m}``."""
    if m < 0:
        raise DomainError("m must be >= 0")
    if n < 0:
        raise DomainError("n must be >= 0")
    if m == 0:
        return 1.0
    if m > n:
        return 0.0
    return float(phi_all(s, n, m)[m])


def phi_bruteforce(s: BetaSchedule, n: int, m: int) -> float:
    """Enumerate all m-subsets; ``E[r_{l_1}...r_{l_m}] = prod_k E[W_k^{#\\{l >= k\\}}]``."""
    if m == 0:
        return 1.0
    if m > n:
        return 0.0
    logmom = np.array([s.log_power_moments(n, k) for k in range(m + 1)])
    total = 0.0
    for ls in itertools.combinations(range(1, n + 1), m):
        powers = [sum(1 for l in ls if l >= k) for k in range(1, n + 1)]
        total += math.exp(sum(logmom[p, k] for k, p in enumerate(powers)))
    return total


def falling_factorial_moment(s: BetaSchedule, n: int, m: int) -> float:
    """``E[(K_{n+1}-1)(K_{n+1}-2)...(K_{n+1}-m)] = m! phi_{n,m}``."""
    if m < 1:
        raise DomainError("m must be >= 1")
    if m > n:
        return 0.0
    return math.factorial(m) * phi(s, n, m)


def stirling2_table(kmax: int = STIRLING_MAX) -> np.ndarray:
    """Stirling numbers of the second kind ``S[k, m]`` for ``0 <= m <= k <= kmax``."""
    S = np.zeros((kmax + 1, kmax + 1))
    S[0, 0] = 1.0
    for k in range(1, kmax + 1):
        for m in range(1, k + 1):
            S[k, m] = m * S[k - 1, m] + S[k - 1, m - 1]
    return S


def raw_moment(s: BetaSchedule, n: int, k: int) -> float:
    """``E[(K_{n+1}-1)^k] = sum_m m! S(k,m) phi_{n,m}``."""
    if not 1 <= k <= STIRLING_MAX:
        raise DomainError(f"k must be in 1..{STIRLING_MAX}")
    S = stirling2_table(k)
    return float(sum(math.factorial(m) * S[k, m] * phi(s, n, m) for m in range(1, min(k, n) + 1)))


def mgf_K(s: BetaSchedule, n: int, t: float) -> float:
    """``E[exp(-t K_{n+1})] = e^{-t} sum_{m=0}^n (e^{-t}-1)^m phi_{n,m}``."""
    if n < 0:
        raise DomainError("n must be >= 0")
    x = math.expm1(-t)
    M = min(n, 64)
    while True:
        ph = phi_all(s, n, M)
        terms = x ** np.arange(M + 1) * ph
        total = float(terms.sum())
        # phi_{n,m} is unimodal in m; stop once the tail is below rounding
        if M == n or abs(terms[-1]) < 1e-17 * max(abs(total), 1e-300):
            return math.exp(-t) * total
        M = min(n, 2 * M)


def k_distribution_bruteforce(s: BetaSchedule, n: int) -> np.ndarray:
    """Exact law of ``K_{n+1}``: entry ``k`` is ``P(K_{n+1} = k)``, ``k = 0..n+1``.

    Observation ``i+1`` opens a block with probability ``r_i`` independently given
    the weights. For every subset ``T`` of ``{1..n}`` compute ``E[prod_{i in T} r_i]``
    and Moebius-invert over supersets to get ``E[prod_{S} r_i prod_{not S}(1-r_i)]``.
    Cost is ``O(n 2^n)``; meant as an oracle for small ``n``.
    """
    if n > 16:
        raise DomainError("brute-force law limited to n <= 16")
    size = 1 << n
    logmom = np.array([s.log_power_moments(max(n, 1), k) for k in range(n + 1)]) if n else None
    g = np.empty(size)
    for mask in range(size):
        # power of W_k = number of chosen indices i >= k
        acc = 0.0
        cnt = 0
        for k in range(n, 0, -1):
            if mask >> (k - 1) & 1:
                cnt += 1
            if cnt:
                acc += logmom[cnt, k - 1]
        g[mask] = math.exp(acc)
    f = g.copy()
    for bit in range(n):
        step = 1 << bit
        for mask in range(size):
            if not mask & step:
                f[mask] -= f[mask | step]
    law = np.zeros(n + 2)
    for mask in range(size):
        law[1 + bin(mask).count("1")] += f[mask]
    return law


def rising(x: float, j: int) -> float:
    return math.exp(gammaln(x + j) - gammaln(x))


def _limit_terms(a: float, b: float, mmax: int) -> np.ndarray:
    """``prod_{j<=m} (a)^{(j)} / ((a+b)^{(j)} - (a)^{(j)})`` for ``m = 0..mmax``."""
    j = np.arange(1, mmax + 1, dtype=float)
    log_g = np.cumsum(np.log(a + j - 1) - np.log(a + b + j - 1))
    ratio = np.exp(log_g) / -np.expm1(log_g)
    return np.concatenate([[1.0], np.cumprod(ratio)])


def limit_factorial_moment(a: float, b: float, m: int) -> float:
    """Limit of ``E[(K_n-1)_{(m)}]`` under the constant schedule.

    This is the shifted falling factorial of ``K_inf - 1``: the unshifted form
    ``E[K_inf (K_inf-1) ...]`` is inconsistent with ``E[K_inf] = (a+b)/b``.
    """
    if not (a > 0 and b > 0):
        raise DomainError("need a>0, b>0")
    if m < 1:
        raise DomainError("m must be >= 1")
    return math.factorial(m) * float(_limit_terms(a, b, m)[m])


@dataclass(frozen=True)
class SeriesValue:
    value: float
    terms: int
    bound: float  # magnitude of the first omitted term


def limit_mgf(a: float, b: float, t: float, m_trunc: int = 200, tol: float = 1e-14) -> SeriesValue:
    """``E[exp(-t K_inf)]`` for the constant schedule, as a truncated series."""
    if not t > 0:
        raise DomainError("limit_mgf requires t > 0")
    if m_trunc < 1:
        raise DomainError("m_trunc must be >= 1")
    x = math.expm1(-t)
    coef = _limit_terms(a, b, m_trunc + 1)
    total = 0.0
    used = 0
    for m in range(m_trunc + 1):
        term = x ** m * coef[m]
        if m > 0 and abs(term) < tol:
            break
        total += term
        used = m + 1
    bound = abs(x ** used * coef[used]) if used <= m_trunc + 1 else 0.0
    return SeriesValue(float(math.exp(-t) * total), used, float(math.exp(-t) * bound))


def gamma_limit_moments(theta: float, k: int) -> float:
    """k-th moment ``Gamma(theta+k)/Gamma(theta)`` of the Gamma(theta, 1) limit of ``K_n/log n``."""
    if not theta > 0 or k < 1:
        raise DomainError("need theta>0 and k>=1")
    return float(math.exp(gammaln(theta + k) - gammaln(theta)))


def memory_window(s: BetaSchedule, n: int, gamma: float) -> int | None:
    """Smallest ``J`` with ``sum_{j=0}^J E[p_{n,n-j}] >= gamma``; ``None`` if unreachable."""
    if not 0 < gamma <= 1:
        raise DomainError("gamma must be in (0, 1]")
    ep = expected_p_all(s, n)[::-1]
    cum = np.cumsum(ep)
    hit = np.nonzero(cum >= gamma)[0]
    return int(hit[0]) if hit.size else None


@dataclass(frozen=True)
class MomentTable:
    n: int
    phi: np.ndarray            # phi[m], m = 0..M
    falling: np.ndarray        # falling[m] = m! phi[m]
    raw: np.ndarray            # raw[k] = E[(K_{n+1}-1)^k], k = 0..M

    @property
    def mean_K(self) -> float:
        """``E[K_{n+1}]``."""
        return 1.0 + float(self.falling[1]) if self.falling.size > 1 else 1.0


def moment_table(s: BetaSchedule, n: int, max_m: int) -> MomentTable:
    if max_m > STIRLING_MAX:
        raise DomainError(f"max_m limited to {STIRLING_MAX}")
    ph = np.array([phi(s, n, m) for m in range(max_m + 1)])
    fact = np.array([math.factorial(m) for m in range(max_m + 1)], dtype=float)
    falling = fact * ph
    S = stirling2_table(max_m)
    raw = np.array([1.0] + [float(np.dot(S[k, 1:k + 1], falling[1:k + 1])) for k in range(1, max_m + 1)])
    return MomentTable(n, ph, falling, raw)


@dataclass(frozen=True)
class LimitSummary:
    family: str
    factorial_moments: tuple[float, ...] = ()
    mgf: tuple[tuple[float, float], ...] = ()
    gamma_moments: tuple[float, ...] = ()


def limit_summary(s: BetaSchedule, max_m: int = 4, t_grid=(0.5, 1.0, 2.0)) -> LimitSummary:
    if isinstance(s, Constant):
        fm = tuple(limit_factorial_moment(s.a, s.b, m) for m in range(1, max_m + 1))
        mg = tuple((float(t), limit_mgf(s.a, s.b, t).value) for t in t_grid)
        return LimitSummary("constant", factorial_moments=fm, mgf=mg)
    if isinstance(s, ThetaLinear) and s.beta == 1:
        gm = tuple(gamma_limit_moments(s.theta, k) for k in range(1, max_m + 1))
        return LimitSummary("theta_linear", gamma_moments=gm)
    if isinstance(s, DpDeterministic):
        return LimitSummary("dp")
    return LimitSummary(type(s).__name__.lower())
