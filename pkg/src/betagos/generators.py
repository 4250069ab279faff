"""Synthetic data designs used to benchmark the sampler.

Each generator returns a :class:`LabeledSeries`: observations, the true
partition and, where it exists, the latent state path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (BetaSchedule, DpDeterministic, Normal, Partition, ThetaLinear,
                   simulate_sequence)
from .errors import DomainError

PROB_TOL = 1e-12

MIXTURE_WEIGHTS = (0.2, 0.35, 0.15, 0.1, 0.2)
URN_LAG_PROBS = (2 / 5, 1 / 5, 1 / 5)   # copy X_n, X_{n-1}, X_{n-2}
URN_NEW_PROB = 1 / 5


def sticky_matrix(k: int = 4, stay: float = 0.91) -> np.ndarray:
    off = (1.0 - stay) / (k - 1)
    T = np.full((k, k), off)
    np.fill_diagonal(T, stay)
    return T


def switching_matrix() -> np.ndarray:
    # Listed as columns of a column-stochastic matrix; transposed to rows here.
    # The matrix is symmetric, so the row and column readings coincide.
    cols = np.array([[0.4, 0.4, 0.1, 0.1],
                     [0.4, 0.4, 0.1, 0.1],
                     [0.1, 0.1, 0.4, 0.4],
                     [0.1, 0.1, 0.4, 0.4]])
    return cols.T.copy()


@dataclass(frozen=True)
class LabeledSeries:
    y: np.ndarray
    truth: Partition
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.truth.n != len(self.y):
            raise DomainError("truth partition does not cover the series")

    def head(self, n: int) -> "LabeledSeries":
        z = self.truth.assignment()[:n]
        st = None if self.states is None else self.states[:n]
        return LabeledSeries(self.y[:n], Partition.from_assignment(z), st, self.meta)


def _check_probs(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise DomainError(f"{name} must be a probability vector summing to 1")
    return p


def gen_mixture(rng: np.random.Generator, n: int, weights=MIXTURE_WEIGHTS, mu0: float = 0.0,
                sigma0: float = 10.0, tau: float = 0.25) -> LabeledSeries:
    """i.i.d. draws from a Normal mixture whose component means come from ``N(mu0, sigma0^2)``."""
    pi = _check_probs(weights, "mixture weights")
    if n < 1:
        raise DomainError("need n >= 1")
    means = rng.normal(mu0, sigma0, size=pi.size)
    comp = rng.choice(pi.size, size=n, p=pi)
    y = means[comp] + tau * rng.normal(size=n)
    return LabeledSeries(y, Partition.from_assignment(comp), comp, {"means": means.tolist()})


def gen_truncated_urn(rng: np.random.Generator, n: int, lag_probs=URN_LAG_PROBS,
                      new_prob: float = URN_NEW_PROB, mu0: float = 0.0, sigma0: float = 10.0,
                      tau: float = 0.25) -> LabeledSeries:
    """Urn that can only copy one of the last ``len(lag_probs)`` tags.

    ``lag_probs[0]`` is the probability of copying the most recent tag. While
    fewer than ``k`` earlier observations exist the available lags and the
    new-tag probability are renormalized.
    """
    lags = np.asarray(lag_probs, dtype=float)
    _check_probs(np.append(lags, new_prob), "urn probabilities")
    if n < 1:
        raise DomainError("need n >= 1")
    k = lags.size
    block = np.empty(n, dtype=np.int64)
    atoms = [rng.normal(mu0, sigma0)]
    block[0] = 0
    for i in range(1, n):
        avail = min(i, k)
        p = np.append(lags[:avail], new_prob)
        p = p / p.sum()
        j = rng.choice(avail + 1, p=p)
        if j == avail:
            atoms.append(rng.normal(mu0, sigma0))
            block[i] = len(atoms) - 1
        else:
            block[i] = block[i - 1 - j]
    y = np.asarray(atoms)[block] + tau * rng.normal(size=n)
    return LabeledSeries(y, Partition.from_assignment(block), block, {"atoms": atoms})


def gen_hmm_two_regime(rng: np.random.Generator, n: int = 100, T1=None, T2=None,
                       switch_at: int = 50, state_means=None, mu0: float = 0.0,
                       sigma0: float = 10.0, tau: float = 0.25) -> LabeledSeries:
    """Hidden Markov path using ``T1`` for the first ``switch_at`` steps and ``T2`` after.

    The initial state is uniform. When ``state_means`` is omitted the state
    means are drawn from ``N(mu0, sigma0^2)``.
    """
    T1 = sticky_matrix() if T1 is None else np.asarray(T1, dtype=float)
    T2 = switching_matrix() if T2 is None else np.asarray(T2, dtype=float)
    for name, T in (("T1", T1), ("T2", T2)):
        if T.ndim != 2 or T.shape[0] != T.shape[1] or np.any(T < 0) \
                or np.any(np.abs(T.sum(axis=1) - 1.0) > PROB_TOL):
            raise DomainError(f"{name} must be a square row-stochastic matrix")
    if T1.shape != T2.shape:
        raise DomainError("T1 and T2 must have the same number of states")
    ns = T1.shape[0]
    if state_means is None:
        state_means = rng.normal(mu0, sigma0, size=ns)
    state_means = np.asarray(state_means, dtype=float)
    s = np.empty(n, dtype=np.int64)
    s[0] = rng.integers(ns)
    u = rng.random(n)
    for t in range(1, n):
        # the transition into step t uses the regime of step t
        T = T1 if t < switch_at else T2
        s[t] = min(int(np.searchsorted(np.cumsum(T[s[t - 1]]), u[t], side="right")), ns - 1)
    y = state_means[s] + tau * rng.normal(size=n)
    return LabeledSeries(y, Partition.from_assignment(s), s, {"state_means": state_means.tolist()})


def gen_betagos(rng: np.random.Generator, n: int, schedule: BetaSchedule | None = None,
                mu0: float = 0.0, sigma0: float = 10.0, tau: float = 0.25) -> LabeledSeries:
    """Beta-GOS block means plus Normal noise."""
    schedule = ThetaLinear(1.0) if schedule is None else schedule
    sample = simulate_sequence(schedule, Normal(mu0, sigma0), n, rng)
    y = sample.tags + tau * rng.normal(size=n)
    return LabeledSeries(y, sample.partition, sample.labels.labels.copy(),
                         {"schedule": schedule.spec()})


def gen_dp(rng: np.random.Generator, n: int, theta: float = 1.0, mu0: float = 0.0,
           sigma0: float = 10.0, tau: float = 0.25) -> LabeledSeries:
    return gen_betagos(rng, n, DpDeterministic(theta), mu0, sigma0, tau)


KINDS = ("mixture", "truncated_urn", "hmm_two_regime", "betagos", "dp")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.n < 1:
            raise DomainError("need n >= 1")

    def to_dict(self) -> dict:
        params = {k: (v.spec() if isinstance(v, BetaSchedule) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "n": self.n, "params": params}


def generate(spec: GeneratorSpec, rng: np.random.Generator) -> LabeledSeries:
    fn = {"mixture": gen_mixture, "truncated_urn": gen_truncated_urn,
          "hmm_two_regime": gen_hmm_two_regime, "betagos": gen_betagos, "dp": gen_dp}[spec.kind]
    return fn(rng, spec.n, **spec.params)
