"""Collapsed Gibbs sampler for the Normal hierarchical model with a Beta-GOS prior.

Model: ``Y_i ~ N(mu_i, tau^2)``, ``(mu_i)`` a Beta-GOS sequence with base measure
``N(mu0, sigma0^2)``, ``tau^2 ~ InvGamma(a0, b0)``. The state is the vector of
pairing labels, the latent weights, ``tau^2`` and per-block means. Block means
are integrated out when labels are updated.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import (BetaSchedule, PairingLabels, Partition, ThetaLinear, partition_of,
                   sample_labels, sample_weights)
from .errors import DomainError, InputError
from .rng import make_rng, substream

TAU2_MODES = ("pooled_em", "global_conjugate")
_EPS_HI = 1.0 - np.finfo(float).epsneg
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class ModelConfig:
    mu0: float = 0.0
    sigma0: float = 10.0
    a0: float = 2.004
    b0: float = 0.0063
    schedule: BetaSchedule = field(default_factory=lambda: ThetaLinear(1.0))
    tau2_mode: str = "pooled_em"
    scan: str = "systematic"
    init: str = "prior"

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise DomainError("need sigma0 > 0, a0 > 0, b0 > 0")
        if self.tau2_mode not in TAU2_MODES:
            raise DomainError(f"tau2_mode must be one of {TAU2_MODES}")
        if self.scan not in ("systematic", "random"):
            raise DomainError("scan must be 'systematic' or 'random'")
        if self.init not in ("prior", "singletons"):
            raise DomainError("init must be 'prior' or 'singletons'")

    @property
    def s02(self) -> float:
        return self.sigma0 ** 2

    def to_dict(self) -> dict:
        return {"mu0": self.mu0, "sigma0": self.sigma0, "a0": self.a0, "b0": self.b0,
                "schedule": self.schedule.spec(), "tau2_mode": self.tau2_mode,
                "scan": self.scan, "init": self.init}


@dataclass(frozen=True)
class GibbsState:
    """One chain's state. ``c`` holds 0-based labels (``c[i] == i`` opens a block)."""

    c: np.ndarray
    w: np.ndarray | None
    tau2: float
    mu: np.ndarray | None = None  # per-observation block mean

    @property
    def labels(self) -> PairingLabels:
        return PairingLabels(self.c + 1)

    @property
    def partition(self) -> Partition:
        return partition_of(self.labels)

    @property
    def k(self) -> int:
        return int(np.sum(self.c == np.arange(self.c.size)))

    def block_means(self) -> dict[int, float]:
        """Block mean keyed by the block's smallest (1-based) member."""
        if self.mu is None:
            return {}
        roots = K.roots(self.c)
        return {int(r) + 1: float(self.mu[r]) for r in np.unique(roots)}


def _check_data(y) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InputError("data must be a non-empty one-dimensional sequence")
    if not np.all(np.isfinite(y)):
        raise InputError("data contain non-finite values")
    return y


def log_marginal_block(y_block, cfg: ModelConfig, tau2: float) -> float:
    """``log int prod_l N(y_l | mu, tau2) N(mu | mu0, sigma0^2) dmu`` with all constants."""
    yb = np.asarray(y_block, dtype=float)
    if yb.size == 0:
        raise DomainError("empty block")
    if not tau2 > 0:
        raise DomainError("tau2 must be positive")
    return float(K.log_marginal(float(yb.size), float(yb.sum()), float(np.dot(yb, yb)),
                                float(tau2), float(cfg.mu0), float(cfg.s02)))


def _weights_for(state: GibbsState, cfg: ModelConfig, m: int) -> np.ndarray:
    if cfg.schedule.deterministic:
        return cfg.schedule.sample(m, None)
    return state.w


def label_full_conditional(i: int, state: GibbsState, y, cfg: ModelConfig) -> np.ndarray:
    """Probabilities of ``C_i = 1..i`` (1-based ``i``) given everything else."""
    y = _check_data(y)
    m = y.size
    if not 1 <= i <= m:
        raise DomainError(f"index {i} outside 1..{m}")
    if i == 1:
        return np.ones(1)
    w = _weights_for(state, cfg, m)
    logw = np.log(w)
    out = np.empty(m)
    K.label_log_weights(i - 1, np.ascontiguousarray(state.c, dtype=np.int64), y, np.cumsum(logw),
                        np.log1p(-w), float(state.tau2), float(cfg.mu0), float(cfg.s02), out)
    lw = out[:i]
    p = np.exp(lw - lw.max())
    return p / p.sum()


def weight_full_conditional(i: int, labels: PairingLabels, s: BetaSchedule) -> tuple[float, float]:
    """Parameters ``(A_i, B_i)`` of the Beta full conditional of ``W_i``."""
    c = np.asarray(labels.labels, dtype=np.int64) - 1
    m = c.size
    if not 1 <= i <= m:
        raise DomainError(f"index {i} outside 1..{m}")
    a, b = K.beta_posterior_counts(c)
    alpha, beta = s.params(i)
    return alpha + float(a[i - 1]), beta + float(b[i - 1])


def means_update(state: GibbsState, y, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw block means from their Normal full conditional; returns per-observation means."""
    z, cnt, sy, _ = K.block_stats(state.c, y)
    prec = 1.0 / cfg.s02 + cnt / state.tau2
    mean = (cfg.mu0 / cfg.s02 + sy / state.tau2) / prec
    draws = rng.normal(mean, 1.0 / np.sqrt(prec))
    return draws[z]


def tau2_update(state: GibbsState, y, cfg: ModelConfig, rng: np.random.Generator,
                mode: str | None = None) -> float:
    """Draw ``tau^2`` given block means (``state.mu``).

    ``global_conjugate`` is the exact conditional; ``pooled_em`` draws one variance
    per block and pools them with weights ``|block| - 1``.
    """
    mode = mode or cfg.tau2_mode
    if state.mu is None:
        raise DomainError("tau2_update needs block means; call means_update first")
    resid2 = (y - state.mu) ** 2
    n = y.size
    if mode == "pooled_em":
        z, cnt, _, _ = K.block_stats(state.c, y)
        kb = cnt.size
        if n > kb:
            sse = np.bincount(z, weights=resid2, minlength=kb)
            tj = (cfg.b0 + 0.5 * sse) / rng.gamma(cfg.a0 + 0.5 * cnt)
            return float(np.sum((cnt - 1.0) * tj) / (n - kb))
    elif mode != "global_conjugate":
        raise DomainError(f"unknown tau2 mode {mode!r}")
    return float((cfg.b0 + 0.5 * resid2.sum()) / rng.gamma(cfg.a0 + 0.5 * n))


class _Sweeper:
    """Holds per-chain constants so a sweep does no repeated setup."""

    def __init__(self, y: np.ndarray, cfg: ModelConfig):
        self.y = y
        self.cfg = cfg
        self.m = y.size
        self.order = np.arange(self.m, dtype=np.int64)
        sch = cfg.schedule
        if sch.deterministic:
            w = sch.sample(self.m, None)
            self.fixed_logw = np.log(w)
            self.fixed_log1m = np.log1p(-w)
        else:
            self.alpha, self.beta = sch.arrays(self.m)

    def __call__(self, state: GibbsState, rng: np.random.Generator) -> GibbsState:
        cfg, y, m = self.cfg, self.y, self.m
        c = state.c.copy()
        order = rng.permutation(m).astype(np.int64) if cfg.scan == "random" else self.order
        u = rng.random(m)
        if cfg.schedule.deterministic:
            logw, log1m, w = self.fixed_logw, self.fixed_log1m, None
        else:
            logw, log1m = np.log(state.w), np.log1p(-state.w)
        K.sweep_labels(c, y, logw, log1m, float(state.tau2), float(cfg.mu0), float(cfg.s02), order, u)
        if not cfg.schedule.deterministic:
            a, b = K.beta_posterior_counts(c)
            w = np.clip(rng.beta(self.alpha + a, self.beta + b), _TINY, _EPS_HI)
        new = GibbsState(c, w, state.tau2, None)
        mu = means_update(new, y, cfg, rng)
        new = GibbsState(c, w, state.tau2, mu)
        tau2 = tau2_update(new, y, cfg, rng)
        return GibbsState(c, w, tau2, mu)


def gibbs_sweep(state: GibbsState, y, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    """Labels (systematic or random scan), then weights, then block means, then ``tau^2``."""
    return _Sweeper(_check_data(y), cfg)(state, rng)


def initial_state(y, cfg: ModelConfig, rng: np.random.Generator) -> GibbsState:
    y = _check_data(y)
    m = y.size
    w = None if cfg.schedule.deterministic else sample_weights(cfg.schedule, m, rng).values
    if cfg.init == "singletons":
        c = np.arange(m, dtype=np.int64)
    else:
        c = sample_labels(w if w is not None else cfg.schedule.sample(m, None), rng) - 1
    tau2 = float(cfg.b0 / rng.gamma(cfg.a0))
    return GibbsState(c.astype(np.int64), w, tau2, None)


@dataclass
class Trace:
    """Post-burn-in, thinned draws of one or more chains."""

    c: np.ndarray            # (draws, m) 0-based labels
    k: np.ndarray            # (draws,)
    tau2: np.ndarray         # (draws,)
    mu: np.ndarray           # (draws, m)
    w: np.ndarray | None     # (draws, m) or None for a deterministic schedule
    loglik: np.ndarray       # (draws,) collapsed log-likelihood of the labels
    burnin: int
    thin: int
    seeds: list = field(default_factory=list)
    chain: np.ndarray | None = None  # chain index of each draw

    def __len__(self):
        return self.k.size

    @property
    def labels(self) -> np.ndarray:
        return self.c + 1

    def state(self, d: int) -> GibbsState:
        return GibbsState(self.c[d], None if self.w is None else self.w[d], float(self.tau2[d]), self.mu[d])

    def block_ids(self) -> np.ndarray:
        return np.stack([K.canonical_ids(c) for c in self.c])

    def partitions(self) -> list[Partition]:
        return [Partition.from_assignment(z) for z in self.block_ids()]

    @staticmethod
    def merge(traces: list["Trace"]) -> "Trace":
        if not traces:
            raise DomainError("nothing to merge")
        cat = lambda name: np.concatenate([getattr(t, name) for t in traces])
        chain = np.concatenate([np.full(len(t), j) for j, t in enumerate(traces)])
        w = None if traces[0].w is None else cat("w")
        return Trace(cat("c"), cat("k"), cat("tau2"), cat("mu"), w, cat("loglik"),
                     traces[0].burnin, traces[0].thin,
                     [s for t in traces for s in t.seeds], chain)


def run_chain(y, cfg: ModelConfig, iters: int, burnin: int = 0, thin: int = 1,
              seed: int | np.random.SeedSequence | None = None,
              rng: np.random.Generator | None = None) -> Trace:
    """Run one chain of ``iters`` sweeps and keep every ``thin``-th draw after ``burnin``."""
    y = _check_data(y)
    if not iters > burnin >= 0:
        raise DomainError("need iters > burnin >= 0")
    if thin < 1:
        raise DomainError("thin must be >= 1")
    kept = (iters - burnin) // thin
    if kept < 1:
        raise DomainError("no post-burn-in draws would be recorded")
    if rng is None:
        rng = make_rng(seed)
    ss = rng.bit_generator.seed_seq
    m = y.size
    sweep = _Sweeper(y, cfg)
    state = initial_state(y, cfg, rng)
    cs = np.empty((kept, m), dtype=np.int64)
    ks = np.empty(kept, dtype=np.int64)
    tau2 = np.empty(kept)
    mus = np.empty((kept, m))
    ws = None if cfg.schedule.deterministic else np.empty((kept, m))
    ll = np.empty(kept)
    d = 0
    for t in range(iters):
        state = sweep(state, rng)
        if t >= burnin and (t - burnin + 1) % thin == 0:
            cs[d] = state.c
            ks[d] = state.k
            tau2[d] = state.tau2
            mus[d] = state.mu
            if ws is not None:
                ws[d] = state.w
            ll[d] = K.total_log_marginal(state.c, y, state.tau2, cfg.mu0, cfg.s02)
            d += 1
    seeds = [{"entropy": _entropy(ss), "spawn_key": [int(v) for v in ss.spawn_key]}]
    return Trace(cs, ks, tau2, mus, ws, ll, burnin, thin, seeds, np.zeros(kept, dtype=np.int64))


def _entropy(ss) -> int | None:
    e = getattr(ss, "entropy", None)
    return int(e) if isinstance(e, (int, np.integer)) else None


def run_chains(y, cfg: ModelConfig, iters: int, burnin: int, thin: int, seed: int,
               chains: int = 1, threads: int = 1, path: tuple[int, ...] = ()) -> Trace:
    """Independent chains on substreams ``path + (chain,)``, merged in chain order."""
    jobs = [substream(seed, *path, j) for j in range(chains)]
    if threads > 1 and chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            traces = list(ex.map(lambda ss: run_chain(y, cfg, iters, burnin, thin, seed=ss), jobs))
    else:
        traces = [run_chain(y, cfg, iters, burnin, thin, seed=ss) for ss in jobs]
    return Trace.merge(traces)


def predict_next(state: GibbsState, y, cfg: ModelConfig, rng: np.random.Generator) -> float:
    """Draw ``Y_{m+1}``: pair with an earlier index or open a block, then add noise."""
    m = state.c.size
    w = _weights_for(state, cfg, m)
    logw = np.log(w)
    cs = np.cumsum(logw)
    logp = np.append(np.log1p(-w) + (cs[-1] - cs), cs[-1])
    p = np.exp(logp - logp.max())
    cdf = np.cumsum(p)
    j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), m)
    if j == m:
        mu = rng.normal(cfg.mu0, cfg.sigma0)
    elif state.mu is not None:
        mu = float(state.mu[j])
    else:
        mu = float(means_update(state, _check_data(y), cfg, rng)[j])
    return float(mu + math.sqrt(state.tau2) * rng.normal())


def predictive_draws(trace: Trace, y, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    return np.array([predict_next(trace.state(d), y, cfg, rng) for d in range(len(trace))])


def predictive_bias(trace: Trace, y, y_next: float, cfg: ModelConfig, rng: np.random.Generator) -> float:
    """Mean of ``|y_next - Y_pred|`` over one predictive draw per recorded state."""
    return float(np.mean(np.abs(y_next - predictive_draws(trace, y, cfg, rng))))


def coclustering(trace: Trace) -> np.ndarray:
    z = trace.block_ids()
    m = z.shape[1]
    P = np.zeros((m, m))
    for zd in z:
        P += zd[:, None] == zd[None, :]
    return P / len(z)


def point_partition(trace: Trace) -> Partition:
    """Sampled partition closest (squared loss) to the mean co-clustering matrix.

    Ties go to the earliest draw.
    """
    if len(trace) == 0:
        raise DomainError("empty trace")
    z = trace.block_ids()
    P = coclustering(trace)
    sumP2 = float(np.sum(P * P))
    best, best_loss = 0, math.inf
    for d, zd in enumerate(z):
        A = zd[:, None] == zd[None, :]
        loss = float(A.sum()) - 2.0 * float(P[A].sum()) + sumP2
        if loss < best_loss - 1e-9:
            best, best_loss = d, loss
    return Partition.from_assignment(z[best])


def _contingency(est: Partition, truth: Partition) -> np.ndarray:
    if est.n != truth.n:
        raise DomainError(f"partition sizes differ ({est.n} vs {truth.n})")
    a, b = est.assignment(), truth.assignment()
    T = np.zeros((est.k, truth.k), dtype=np.int64)
    np.add.at(T, (a, b), 1)
    return T


def accuracy(est: Partition, truth: Partition) -> tuple[float, float]:
    """``(rand_index, matched)`` agreement between an estimate and the truth.

    ``matched`` pairs estimated and true blocks greedily by largest overlap and
    counts the observations that land in their matched block.
    """
    T = _contingency(est, truth)
    n = est.n
    c2 = lambda x: x * (x - 1) / 2.0
    pairs = c2(n)
    if pairs == 0:
        rand = 1.0
    else:
        same_both = c2(T).sum()
        same_est = c2(T.sum(axis=1)).sum()
        same_truth = c2(T.sum(axis=0)).sum()
        rand = (pairs + 2 * same_both - same_est - same_truth) / pairs
    work = T.astype(float)
    hit = 0
    for _ in range(min(T.shape)):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        if work[i, j] <= 0:
            break
        hit += int(work[i, j])
        work[i, :] = -1
        work[:, j] = -1
    return float(rand), hit / n


@dataclass(frozen=True)
class FitSummary:
    partition: Partition
    k: int
    k_mean: float
    tau_mean: float
    tau2_mean: float
    draws: int
    pred_bias: float | None = None
    pred_mean: float | None = None
    pred_sd: float | None = None
    rand: float | None = None
    matched: float | None = None

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "partition"}
        d["partition"] = [list(b) for b in self.partition.blocks]
        return d


def summarize(trace: Trace, y, cfg: ModelConfig, rng: np.random.Generator | None = None,
              y_next: float | None = None, truth: Partition | None = None) -> FitSummary:
    part = point_partition(trace)
    extra = {}
    if y_next is not None:
        preds = predictive_draws(trace, y, cfg, rng if rng is not None else make_rng(0))
        extra.update(pred_bias=float(np.mean(np.abs(y_next - preds))),
                     pred_mean=float(preds.mean()), pred_sd=float(preds.std()))
    if truth is not None:
        rand, matched = accuracy(part, truth)
        extra.update(rand=rand, matched=matched)
    return FitSummary(part, part.k, float(trace.k.mean()), float(np.sqrt(trace.tau2).mean()),
                      float(trace.tau2.mean()), len(trace), **extra)
