"""Beta schedules, latent weights, pairing labels, partitions and forward simulation.

Indices follow the 1-based convention of the model: observation ``i`` has
pairing label ``C_i`` in ``{1, ..., i}`` and ``C_i == i`` opens a new block.
Arrays are 0-based internally, so ``labels[i - 1]`` holds ``C_i``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, InputError

SIMPLEX_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


class BetaSchedule:
    """Rule producing the Beta parameters ``(alpha_i, beta_i)`` of ``W_i``."""

    deterministic = False

    def arrays(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def params(self, i: int) -> tuple[float, float]:
        if i < 1:
            raise DomainError(f"schedule index must be >= 1, got {i}")
        a, b = self.arrays(i)
        return float(a[-1]), float(b[-1])

    def log_power_moments(self, n: int, k: int) -> np.ndarray:
        """``log E[W_i^k]`` for ``i = 1..n``."""
        if k < 0:
            raise DomainError("power must be non-negative")
        a, b = self.arrays(n)
        out = np.zeros(n)
        for t in range(k):
            out += np.log(a + t) - np.log(a + b + t)
        return out

    def mean(self, n: int) -> np.ndarray:
        return np.exp(self.log_power_moments(n, 1))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, b = self.arrays(n)
        return rng.beta(a, b)

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(BetaSchedule):
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"Constant schedule needs a>0, b>0 (got a={self.a}, b={self.b})")

    def arrays(self, n):
        return np.full(n, float(self.a)), np.full(n, float(self.b))

    def spec(self):
        return f"const:{self.a:g},{self.b:g}"


@dataclass(frozen=True)
class ThetaLinear(BetaSchedule):
    """``alpha_i = i + theta - 1`` and constant ``beta_i = beta``."""

    theta: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.theta > 0:
            raise DomainError(f"ThetaLinear needs theta>0 (got {self.theta})")
        if not self.beta >= 1:
            raise DomainError(f"ThetaLinear needs beta>=1 (got {self.beta})")

    def arrays(self, n):
        i = np.arange(1, n + 1, dtype=float)
        return i + self.theta - 1.0, np.full(n, float(self.beta))

    def spec(self):
        if self.beta == 1:
            return f"theta:{self.theta:g}"
        return f"theta:{self.theta:g},{self.beta:g}"


@dataclass(frozen=True)
class Explicit(BetaSchedule):
    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pairs = tuple((float(a), float(b)) for a, b in self.pairs)
        if any(not (a > 0 and b > 0) for a, b in pairs):
            raise DomainError("Explicit schedule entries must be positive")
        object.__setattr__(self, "pairs", pairs)

    def arrays(self, n):
        if n > len(self.pairs):
            raise IndexError(f"explicit schedule has {len(self.pairs)} entries, index {n} requested")
        arr = np.array(self.pairs[:n], dtype=float).reshape(n, 2)
        return arr[:, 0].copy(), arr[:, 1].copy()

    def spec(self):
        return "explicit:" + ";".join(f"{a:g},{b:g}" for a, b in self.pairs)


@dataclass(frozen=True)
class DpDeterministic(BetaSchedule):
    """Degenerate weights ``W_i = (theta+i-1)/(theta+i)``: the Blackwell-MacQueen urn."""

    theta: float
    deterministic = True

    def __post_init__(self):
        if not self.theta > 0:
            raise DomainError(f"DP schedule needs theta>0 (got {self.theta})")

    def values(self, n: int) -> np.ndarray:
        i = np.arange(1, n + 1, dtype=float)
        return (self.theta + i - 1.0) / (self.theta + i)

    def arrays(self, n):
        raise DomainError("the deterministic DP schedule has no Beta parameters")

    def log_power_moments(self, n, k):
        return k * np.log(self.values(n))

    def sample(self, n, rng):
        return self.values(n)

    def spec(self):
        return f"dp:{self.theta:g}"


def parse_schedule(text: str) -> BetaSchedule:
    """Parse ``theta:T[,B]``, ``const:A,B``, ``dp:T`` or ``explicit:a,b;a,b;...``."""
    try:
        kind, _, rest = text.partition(":")
        kind = kind.strip().lower()
        if kind == "explicit":
            pairs = [tuple(float(v) for v in item.split(",")) for item in rest.split(";") if item]
            return Explicit(tuple(pairs))
        vals = [float(v) for v in rest.split(",") if v.strip()]
        if kind == "theta" and len(vals) in (1, 2):
            return ThetaLinear(*vals)
        if kind in ("const", "constant") and len(vals) == 2:
            return Constant(*vals)
        if kind == "dp" and len(vals) == 1:
            return DpDeterministic(vals[0])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise InputError(f"cannot parse schedule {text!r}: {exc}") from exc
    raise InputError(f"cannot parse schedule {text!r}; expected theta:T[,B] | const:A,B | dp:T")


def schedule_params(s: BetaSchedule, i: int) -> tuple[float, float]:
    return s.params(i)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentWeights:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1:
            raise DomainError("latent weights must be one-dimensional")
        if v.size and not np.all((v > 0) & (v < 1)):
            raise DomainError("latent weights must lie strictly inside (0, 1)")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class PredictiveWeights:
    """``p[j-1] = p_{n,j}`` for ``j = 1..n`` and the new-block weight ``r = r_n``."""

    p: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(self.p))

    @property
    def n(self) -> int:
        return self.p.size

    def as_categorical(self) -> np.ndarray:
        return np.append(self.p, self.r)


def sample_weights(s: BetaSchedule, n: int, rng: np.random.Generator) -> LatentWeights:
    if n < 1:
        raise DomainError("need n >= 1 weights")
    w = s.sample(n, rng)
    # Beta draws with huge alpha can round to 1.0; keep the open-interval invariant.
    w = np.clip(w, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return LatentWeights(w)


def _log_predictive(w: np.ndarray) -> tuple[np.ndarray, float]:
    logw = np.log(w)
    log1m = np.log1p(-w)
    cs = np.cumsum(logw)
    total = cs[-1] if w.size else 0.0
    # log p_{n,j} = log(1-W_j) + sum_{i>j} log W_i
    return log1m + (total - cs), float(total)


def predictive_weights(w: LatentWeights | Sequence[float] | np.ndarray) -> PredictiveWeights:
    vals = w.values if isinstance(w, LatentWeights) else np.asarray(w, dtype=float)
    if vals.size and not np.all((vals > 0) & (vals < 1)):
        raise DomainError("latent weights must lie strictly inside (0, 1)")
    logp, logr = _log_predictive(vals)
    p = np.exp(logp)
    r = math.exp(logr)
    total = p.sum() + r
    if abs(total - 1.0) > SIMPLEX_TOL:
        p = p / total
        r = r / total
    return PredictiveWeights(p, r)


def sample_pairing(pw: PredictiveWeights, rng: np.random.Generator) -> int:
    """Draw ``C_{n+1}``: index ``n+1`` (new block) w.p. ``r_n``, else ``j`` w.p. ``p_{n,j}``."""
    probs = pw.as_categorical()
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), probs.size - 1)) + 1


# ---------------------------------------------------------------------------
# Labels and partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairingLabels:
    labels: np.ndarray

    def __post_init__(self):
        c = _frozen(self.labels, dtype=np.int64)
        if c.ndim != 1:
            raise DomainError("labels must be one-dimensional")
        idx = np.arange(1, c.size + 1)
        if c.size and (c[0] != 1 or np.any(c < 1) or np.any(c > idx)):
            raise DomainError("pairing labels need C_1 = 1 and 1 <= C_i <= i")
        object.__setattr__(self, "labels", c)

    def __len__(self):
        return self.labels.size

    @property
    def n_new(self) -> int:
        return int(np.sum(self.labels == np.arange(1, self.labels.size + 1)))


def block_ids(labels: np.ndarray) -> np.ndarray:
    """Canonical 0-based block id per observation from 1-based pairing labels.

    Parents always precede children, so one forward pass resolves roots; block
    ids are numbered in order of their smallest member.
    """
    c = np.asarray(labels, dtype=np.int64) - 1
    n = c.size
    ids = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        if c[i] == i:
            ids[i] = k
            k += 1
        else:
            ids[i] = ids[c[i]]
    return ids


@dataclass(frozen=True)
class Partition:
    """Blocks of 1-based indices, each sorted, ordered by smallest member."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(int(x) for x in b)) for b in self.blocks if len(b)),
                              key=lambda b: b[0]))
        members = [x for b in blocks for x in b]
        n = len(members)
        if sorted(members) != list(range(1, n + 1)):
            raise DomainError("blocks must be disjoint and cover 1..n")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_assignment(cls, z: Iterable[int]) -> "Partition":
        groups: dict[int, list[int]] = {}
        for i, zi in enumerate(z, start=1):
            groups.setdefault(int(zi), []).append(i)
        return cls(tuple(tuple(g) for g in groups.values()))

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def k(self) -> int:
        return len(self.blocks)

    def assignment(self) -> np.ndarray:
        """0-based canonical block id per observation."""
        z = np.empty(self.n, dtype=np.int64)
        for j, b in enumerate(self.blocks):
            z[np.asarray(b) - 1] = j
        return z


def partition_of(c: PairingLabels | Sequence[int] | np.ndarray) -> Partition:
    labels = c if isinstance(c, PairingLabels) else PairingLabels(np.asarray(c))
    return Partition.from_assignment(block_ids(labels.labels))


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------


class Normal(NamedTuple):
    mean: float = 0.0
    sd: float = 1.0


@dataclass(frozen=True)
class SequenceSample:
    tags: np.ndarray
    labels: PairingLabels
    weights: LatentWeights
    partition: Partition
    seed: object = None

    def __post_init__(self):
        object.__setattr__(self, "tags", _frozen(self.tags))

    @property
    def k(self) -> int:
        return self.partition.k

    def to_json(self) -> str:
        return json.dumps({
            "tags": self.tags.tolist(),
            "labels": self.labels.labels.tolist(),
            "weights": self.weights.values.tolist(),
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "SequenceSample":
        d = json.loads(text)
        labels = PairingLabels(np.asarray(d["labels"], dtype=np.int64))
        return cls(np.asarray(d["tags"], dtype=float), labels,
                   LatentWeights(np.asarray(d["weights"], dtype=float)),
                   partition_of(labels), d.get("seed"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "tag", "label"])
        for i, (x, c) in enumerate(zip(self.tags, self.labels.labels), start=1):
            w.writerow([i, repr(float(x)), int(c)])
        return buf.getvalue()


def sample_labels(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw 1-based pairing labels ``C_1..C_n`` from the prior given weights ``W_1..W_n``.

    Only ``W_1..W_{n-1}`` matter; label ``i+1`` is drawn from ``(p_{i,1..i}, r_i)``.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    logw = np.log(w)
    log1m = np.log1p(-w)
    cs = np.cumsum(logw)
    labels = np.empty(n, dtype=np.int64)
    labels[0] = 1
    u = rng.random(n)
    for i in range(1, n):
        logp = np.empty(i + 1)
        logp[:i] = log1m[:i] + (cs[i - 1] - cs[:i])
        logp[i] = cs[i - 1]
        probs = np.exp(logp - logsumexp(logp))
        cdf = np.cumsum(probs)
        j = int(np.searchsorted(cdf, u[i] * cdf[-1], side="right"))
        labels[i] = min(j, i) + 1
    return labels


def simulate_sequence(s: BetaSchedule, g0: Normal, n: int, rng: np.random.Generator,
                      seed: object = None) -> SequenceSample:
    """Draw ``X_1..X_n`` from the predictive rule.

    Weights come first, then pairing labels, then one base-measure draw per new
    block; a paired observation copies the tag of its partner.
    """
    if n < 1:
        raise DomainError("need n >= 1")
    if not g0.sd > 0:
        raise DomainError("base measure needs sd > 0")
    w = sample_weights(s, n, rng).values
    labels = sample_labels(w, rng)
    z = block_ids(labels)
    atoms = rng.normal(g0.mean, g0.sd, size=int(z.max()) + 1)
    pl = PairingLabels(labels)
    return SequenceSample(atoms[z], pl, LatentWeights(w), partition_of(pl), seed)


def simulate_block_counts(s: BetaSchedule, ns: int | Sequence[int], replicates: int,
                          rng: np.random.Generator, chunk: int | None = None) -> np.ndarray:
    """Sample ``K_n`` for each ``n`` in ``ns`` along ``replicates`` independent paths.

    Given the weights, observation ``i+1`` opens a new block independently with
    probability ``r_i``; the pairing targets themselves never affect ``K``, so
    only the new-block indicators are drawn. Returns shape ``(replicates, len(ns))``.
    """
    scalar = np.isscalar(ns)
    ns_arr = np.atleast_1d(np.asarray(ns, dtype=np.int64))
    if np.any(ns_arr < 1):
        raise DomainError("need n >= 1")
    nmax = int(ns_arr.max())
    if chunk is None:
        chunk = max(1, min(replicates, 4_000_000 // max(nmax, 1)))
    out = np.empty((replicates, ns_arr.size), dtype=np.int64)
    for start in range(0, replicates, chunk):
        m = min(chunk, replicates - start)
        if nmax == 1:
            out[start:start + m] = 1
            continue
        if s.deterministic:
            w = np.broadcast_to(s.sample(nmax - 1, rng), (m, nmax - 1))
        else:
            a, b = s.arrays(nmax - 1)
            w = rng.beta(a, b, size=(m, nmax - 1))
        logr = np.cumsum(np.log(w), axis=1)
        new = rng.random((m, nmax - 1)) < np.exp(logr)
        k = 1 + np.cumsum(new, axis=1)
        for col, nv in enumerate(ns_arr):
            out[start:start + m, col] = 1 if nv == 1 else k[:, nv - 2]
    return out[:, 0] if scalar else out
