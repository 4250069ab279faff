"""Copy-number aberration calling from sampler output on positioned log2 ratios.

Per MCMC iteration the block with the smallest absolute mean is the copy-neutral
reference; other blocks are gains or losses when their mean differs from it by
more than ``eps``, and gains far above the other gains are high-level
amplifications. A clone is called when its status holds in more than
``call_freq`` of the iterations. Runs of identical calls form regions, scored
with a posterior-probability FDR.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .core import ThetaLinear
from .errors import DomainError, InputError
from .inference import ModelConfig, Trace, run_chain
from .rng import make_rng, substream


class Status(IntEnum):
    LOSS = -1
    NEUTRAL = 0
    GAIN = 1
    HIGH_AMP = 2

    @property
    def label(self) -> str:
        return self.name.lower()


def default_model() -> ModelConfig:
    # vague N(0, 10) base (variance 10); inverse gamma with mean tau^2 = 0.1^2
    return ModelConfig(mu0=0.0, sigma0=math.sqrt(10.0), a0=2.004, b0=0.01 * 1.004,
                       schedule=ThetaLinear(1.0))


@dataclass(frozen=True)
class CallConfig:
    eps: float = 0.1
    call_freq: float = 0.7
    amp_sd_mult: float = 2.0
    fdr_level: float = 0.05
    null_mode: str = "all"   # or "mean": per-clone average of neutral indicators

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not 0 < self.call_freq <= 1:
            raise DomainError("call_freq must be in (0, 1]")
        if not 0 < self.fdr_level < 1:
            raise DomainError("fdr_level must be in (0, 1)")
        if self.null_mode not in ("all", "mean"):
            raise DomainError("null_mode must be 'all' or 'mean'")
        if math.isfinite(self.eps) and not 0.05 <= self.eps <= 0.15:
            warnings.warn(f"eps={self.eps} is outside the usual 0.05-0.15 range", stacklevel=2)


@dataclass(frozen=True)
class CloneSeries:
    clone_id: np.ndarray
    chromosome: np.ndarray
    kb_start: np.ndarray
    kb_end: np.ndarray
    log2_ratio: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        n = len(self.log2_ratio)
        for name in ("clone_id", "chromosome", "kb_start", "kb_end"):
            if len(getattr(self, name)) != n:
                raise InputError(f"column {name} has the wrong length")
        object.__setattr__(self, "clone_id", np.asarray(self.clone_id, dtype=str))
        object.__setattr__(self, "chromosome", np.asarray(self.chromosome, dtype=str))
        object.__setattr__(self, "kb_start", np.asarray(self.kb_start, dtype=float))
        object.__setattr__(self, "kb_end", np.asarray(self.kb_end, dtype=float))
        object.__setattr__(self, "log2_ratio", np.asarray(self.log2_ratio, dtype=float))
        if not np.all(np.isfinite(self.log2_ratio)):
            raise InputError("log2 ratios must be finite")
        for chrom, idx in self.chromosomes():
            if np.any(np.diff(self.kb_start[idx]) < 0):
                raise InputError(f"positions decrease within chromosome {chrom}")

    def __len__(self):
        return self.log2_ratio.size

    def chromosomes(self) -> list[tuple[str, np.ndarray]]:
        """Chromosomes in order of first appearance with their row indices."""
        order: dict[str, list[int]] = {}
        for i, ch in enumerate(self.chromosome):
            order.setdefault(str(ch), []).append(i)
        return [(ch, np.asarray(ix)) for ch, ix in order.items()]


CLONE_COLUMNS = ("clone_id", "chromosome", "kb_start", "kb_end", "log2_ratio")


def read_clone_csv(text: str) -> dict[str, CloneSeries]:
    """Parse clone records; long format with a ``sample_id`` column yields several samples."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise InputError("empty clone file")
    missing = [c for c in CLONE_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise InputError(f"missing columns: {', '.join(missing)}")
    cols: dict[str, dict[str, list]] = {}
    for row in reader:
        line = reader.line_num
        sid = (row.get("sample_id") or "").strip()
        try:
            rec = (row["clone_id"].strip(), row["chromosome"].strip(), float(row["kb_start"]),
                   float(row["kb_end"]), float(row["log2_ratio"]))
        except (TypeError, ValueError, AttributeError) as exc:
            raise InputError(f"line {line}: malformed clone record ({exc})") from None
        if not math.isfinite(rec[4]):
            raise InputError(f"line {line}: non-finite log2 ratio")
        d = cols.setdefault(sid, {c: [] for c in CLONE_COLUMNS})
        for c, v in zip(CLONE_COLUMNS, rec):
            d[c].append(v)
    if not cols:
        raise InputError("no clone records")
    return {sid: CloneSeries(**d, sample_id=sid) for sid, d in cols.items()}


def classify_iteration(block_means: Mapping | Sequence[float] | np.ndarray, eps: float = 0.1,
                       amp_sd_mult: float = 2.0):
    """Status of each block given its mean.

    Accepts a mapping (returns a dict with the same keys) or an array (returns
    an int array of :class:`Status` values).
    """
    if isinstance(block_means, Mapping):
        keys = list(block_means)
        st = _classify(np.array([block_means[k] for k in keys], dtype=float), eps, amp_sd_mult)
        return {k: Status(int(s)) for k, s in zip(keys, st)}
    return _classify(np.asarray(block_means, dtype=float), eps, amp_sd_mult)


def _classify(mu: np.ndarray, eps: float, amp_sd_mult: float) -> np.ndarray:
    if mu.size == 0:
        raise DomainError("need at least one block")
    ref = int(np.argmin(np.abs(mu)))
    d = mu - mu[ref]
    st = np.zeros(mu.size, dtype=np.int8)
    st[d > eps] = Status.GAIN
    st[d < -eps] = Status.LOSS
    st[ref] = Status.NEUTRAL
    gains = st == Status.GAIN
    if gains.sum() >= 2:
        g = mu[gains]
        cut = g.mean() + amp_sd_mult * g.std(ddof=1)
        st[gains & (mu > cut)] = Status.HIGH_AMP
    return st


def iteration_statuses(trace: Trace, cfg: CallConfig) -> np.ndarray:
    """(draws, clones) matrix of per-iteration clone statuses."""
    out = np.empty(trace.c.shape, dtype=np.int8)
    for d in range(len(trace)):
        z = K.canonical_ids(trace.c[d])
        kb = int(z.max()) + 1
        mu = np.empty(kb)
        mu[z] = trace.mu[d]
        out[d] = _classify(mu, cfg.eps, cfg.amp_sd_mult)[z]
    return out


@dataclass(frozen=True)
class Region:
    start: int          # first clone (0-based, within the called series)
    end: int            # last clone, inclusive
    status: Status
    p_null: float
    q: float = float("nan")
    significant: bool = False


@dataclass(frozen=True)
class CallResult:
    status: np.ndarray       # final Status per clone
    freq_gain: np.ndarray    # gain or high-level amplification
    freq_loss: np.ndarray
    freq_high: np.ndarray
    regions: tuple[Region, ...] = ()


def call_clones(statuses: np.ndarray, cfg: CallConfig) -> CallResult:
    """Final call per clone from an iteration-status matrix."""
    statuses = np.asarray(statuses)
    if statuses.ndim != 2 or statuses.shape[0] == 0:
        raise DomainError("need a non-empty (draws, clones) status matrix")
    high = np.mean(statuses == Status.HIGH_AMP, axis=0)
    gain = np.mean(statuses >= Status.GAIN, axis=0)
    loss = np.mean(statuses == Status.LOSS, axis=0)
    final = np.full(statuses.shape[1], Status.NEUTRAL, dtype=np.int8)
    final[loss > cfg.call_freq] = Status.LOSS
    final[gain > cfg.call_freq] = Status.GAIN
    final[high > cfg.call_freq] = Status.HIGH_AMP
    return CallResult(final, gain, loss, high)


def find_regions(final: np.ndarray) -> list[tuple[int, int, Status]]:
    """Maximal runs of a common non-neutral status."""
    runs = []
    i, n = 0, len(final)
    while i < n:
        s = int(final[i])
        j = i
        while j + 1 < n and int(final[j + 1]) == s:
            j += 1
        if s != Status.NEUTRAL:
            runs.append((i, j, Status(s)))
        i = j + 1
    return runs


def qvalues(p_null: Sequence[float]) -> np.ndarray:
    """Running mean of the sorted posterior null probabilities, mapped back to input order."""
    p = np.asarray(p_null, dtype=float)
    order = np.argsort(p, kind="stable")
    q_sorted = np.cumsum(p[order]) / np.arange(1, p.size + 1)
    q = np.empty_like(p)
    q[order] = q_sorted
    return q


def region_fdr(statuses: np.ndarray, calls: CallResult, cfg: CallConfig) -> list[Region]:
    runs = find_regions(calls.status)
    if not runs:
        return []
    neutral = np.asarray(statuses) == Status.NEUTRAL
    p = []
    for a, b, _ in runs:
        blk = neutral[:, a:b + 1]
        p.append(float(blk.all(axis=1).mean() if cfg.null_mode == "all" else blk.mean()))
    q = qvalues(p)
    return [Region(a, b, s, pn, float(qq), bool(qq <= cfg.fdr_level))
            for (a, b, s), pn, qq in zip(runs, p, q)]


def call_trace(trace: Trace, cfg: CallConfig, n_clones: int | None = None) -> CallResult:
    if n_clones is not None and trace.c.shape[1] != n_clones:
        raise DomainError(f"trace covers {trace.c.shape[1]} clones, series has {n_clones}")
    st = iteration_statuses(trace, cfg)
    res = call_clones(st, cfg)
    return CallResult(res.status, res.freq_gain, res.freq_loss, res.freq_high,
                      tuple(region_fdr(st, res, cfg)))


@dataclass(frozen=True)
class FitSettings:
    iters: int = 2000
    burnin: int = 500
    thin: int = 2
    model: ModelConfig = field(default_factory=default_model)


@dataclass
class SampleCalls:
    series: CloneSeries
    status: np.ndarray
    freq_gain: np.ndarray
    freq_loss: np.ndarray
    freq_high: np.ndarray
    regions: list[dict]

    def calls_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "clone_id", "chromosome", "kb_start", "kb_end", "log2_ratio",
                    "status", "freq_gain", "freq_loss", "freq_high_amp"])
        s = self.series
        for i in range(len(s)):
            w.writerow([s.sample_id, s.clone_id[i], s.chromosome[i], f"{s.kb_start[i]:g}",
                        f"{s.kb_end[i]:g}", repr(float(s.log2_ratio[i])),
                        Status(int(self.status[i])).label, f"{self.freq_gain[i]:.6g}",
                        f"{self.freq_loss[i]:.6g}", f"{self.freq_high[i]:.6g}"])
        return buf.getvalue()


REGION_COLUMNS = ("sample_id", "chromosome", "status", "left_clone", "right_clone",
                  "kb_start", "kb_end", "n_clones", "p_null", "q_value", "significant")


def regions_csv(samples: Sequence[SampleCalls]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REGION_COLUMNS, lineterminator="\n")
    w.writeheader()
    for sc in samples:
        w.writerows(sc.regions)
    return buf.getvalue()


def call_sample(series: CloneSeries, cfg: CallConfig = CallConfig(), fit: FitSettings = FitSettings(),
                seed: int = 0, sample_index: int = 0, threads: int = 1) -> SampleCalls:
    """Fit each chromosome independently and call aberrations."""
    chroms = series.chromosomes()

    def one(job):
        c, (ch, idx) = job
        rng = make_rng(substream(seed, sample_index, c))
        trace = run_chain(series.log2_ratio[idx], fit.model, fit.iters, fit.burnin, fit.thin, rng=rng)
        return call_trace(trace, cfg, idx.size)

    jobs = list(enumerate(chroms))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    n = len(series)
    status = np.zeros(n, dtype=np.int8)
    fg, fl, fh = np.zeros(n), np.zeros(n), np.zeros(n)
    regions = []
    for (ch, idx), res in zip(chroms, results):
        status[idx], fg[idx], fl[idx], fh[idx] = res.status, res.freq_gain, res.freq_loss, res.freq_high
        for reg in res.regions:
            a, b = idx[reg.start], idx[reg.end]
            regions.append({
                "sample_id": series.sample_id, "chromosome": ch, "status": reg.status.label,
                "left_clone": str(series.clone_id[a]), "right_clone": str(series.clone_id[b]),
                "kb_start": float(series.kb_start[a]), "kb_end": float(series.kb_end[b]),
                "n_clones": int(b - a + 1), "p_null": reg.p_null, "q_value": reg.q,
                "significant": reg.significant,
            })
    return SampleCalls(series, status, fg, fl, fh, regions)


@dataclass(frozen=True)
class FrequencyTable:
    clone_id: np.ndarray
    chromosome: np.ndarray
    kb_start: np.ndarray
    gain: np.ndarray
    loss: np.ndarray
    high_amp: np.ndarray
    samples: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["clone_id", "chromosome", "kb_start", "freq_gain", "freq_loss", "freq_high_amp", "samples"])
        for i in range(len(self.clone_id)):
            w.writerow([self.clone_id[i], self.chromosome[i], f"{self.kb_start[i]:g}",
                        f"{self.gain[i]:.6g}", f"{self.loss[i]:.6g}", f"{self.high_amp[i]:.6g}", self.samples])
        return buf.getvalue()


def aberration_frequency(samples: Sequence[SampleCalls]) -> FrequencyTable:
    """Fraction of samples calling each clone a gain, a loss or a high-level amplification."""
    if not samples:
        raise DomainError("need at least one sample")
    ref = samples[0].series
    for sc in samples[1:]:
        s = sc.series
        if len(s) != len(ref) or np.any(s.clone_id != ref.clone_id) or np.any(s.chromosome != ref.chromosome):
            raise InputError(f"clone set of sample {s.sample_id!r} does not match {ref.sample_id!r}")
    st = np.stack([sc.status for sc in samples])
    return FrequencyTable(ref.clone_id, ref.chromosome, ref.kb_start,
                          np.mean(st >= Status.GAIN, axis=0), np.mean(st == Status.LOSS, axis=0),
                          np.mean(st == Status.HIGH_AMP, axis=0), len(samples))


def amplicon_fixture(rng: np.random.Generator, n: int = 200,
                     segments: Sequence[tuple[int, int, float]] = ((60, 10, 0.6), (140, 10, -0.6)),
                     tau: float = 0.1, chromosome: str = "1", sample_id: str = "") -> tuple[CloneSeries, np.ndarray]:
    """Synthetic single-chromosome series with planted segments ``(start, length, shift)``.

    Returns the series and the true per-clone :class:`Status`.
    """
    level = np.zeros(n)
    truth = np.zeros(n, dtype=np.int8)
    for start, length, shift in segments:
        level[start:start + length] = shift
        truth[start:start + length] = Status.GAIN if shift > 0 else Status.LOSS
    y = level + tau * rng.normal(size=n)
    kb = np.arange(n) * 150.0
    ids = np.array([f"CL{i:04d}" for i in range(n)])
    return CloneSeries(ids, np.full(n, chromosome), kb, kb + 100.0, y, sample_id), truth
