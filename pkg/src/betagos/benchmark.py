"""Replicated benchmark harness: generate, fit on the first ``n-1`` points, score.

Every (generator, replicate) pair draws its data from substream
``(g, r, 0)`` of the master seed and fitter ``f`` runs on ``(g, r, 1 + f)``, so
results do not depend on scheduling or on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import parse_schedule
from .generators import GeneratorSpec, generate
from .inference import ModelConfig, run_chain, summarize
from .rng import make_rng, substream

STAT_FIELDS = ("k_true", "k_est", "k_mean", "matched", "rand", "pred_bias", "tau_est", "tau_true")


@dataclass(frozen=True)
class FitterSpec:
    name: str
    cfg: ModelConfig

    @classmethod
    def from_schedule(cls, text: str, name: str | None = None, **cfg_kwargs) -> "FitterSpec":
        return cls(name or text, ModelConfig(schedule=parse_schedule(text), **cfg_kwargs))


@dataclass(frozen=True)
class BenchmarkConfig:
    generators: tuple[GeneratorSpec, ...]
    fitters: tuple[FitterSpec, ...]
    replicates: int = 50
    iters: int = 5000
    burnin: int = 1000
    thin: int = 4
    seed: int = 0

    def to_dict(self) -> dict:
        return {"generators": [g.to_dict() for g in self.generators],
                "fitters": [{"name": f.name, **f.cfg.to_dict()} for f in self.fitters],
                "replicates": self.replicates, "iters": self.iters, "burnin": self.burnin,
                "thin": self.thin, "seed": self.seed}


def pooled_within_sd(y: np.ndarray, z: np.ndarray) -> float:
    """Pooled within-block standard deviation (singletons carry no information)."""
    kb = int(z.max()) + 1
    cnt = np.bincount(z, minlength=kb)
    mean = np.bincount(z, weights=y, minlength=kb) / np.maximum(cnt, 1)
    sse = float(np.sum((y - mean[z]) ** 2))
    dof = y.size - kb
    return float(np.sqrt(sse / dof)) if dof > 0 else float("nan")


def _run_replicate(bc: BenchmarkConfig, g: int, r: int) -> list[dict]:
    gspec = bc.generators[g]
    data = generate(gspec, make_rng(substream(bc.seed, g, r, 0)))
    fit = data.head(gspec.n - 1)
    y, y_next = fit.y, float(data.y[-1])
    rows = []
    for f, fs in enumerate(bc.fitters):
        rng = make_rng(substream(bc.seed, g, r, 1 + f))
        trace = run_chain(y, fs.cfg, bc.iters, bc.burnin, bc.thin, rng=rng)
        s = summarize(trace, y, fs.cfg, rng, y_next=y_next, truth=fit.truth)
        rows.append({
            "generator": gspec.kind, "fitter": fs.name, "replicate": r,
            "substream": [g, r, 1 + f],
            "k_true": fit.truth.k, "k_est": s.k, "k_mean": s.k_mean,
            "matched": s.matched, "rand": s.rand, "pred_bias": s.pred_bias,
            "tau_est": s.tau_mean, "tau_true": pooled_within_sd(y, fit.truth.assignment()),
        })
    return rows


@dataclass
class BenchmarkReport:
    config: dict
    rows: list[dict]
    cells: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.cells:
            self.cells = _aggregate(self.rows)

    def cell(self, generator: str, fitter: str) -> dict:
        for c in self.cells:
            if c["generator"] == generator and c["fitter"] == fitter:
                return c
        raise KeyError((generator, fitter))

    def values(self, generator: str, fitter: str, stat: str) -> np.ndarray:
        rows = sorted((r for r in self.rows if r["generator"] == generator and r["fitter"] == fitter),
                      key=lambda r: r["replicate"])
        return np.array([r[stat] for r in rows], dtype=float)

    def to_json(self) -> str:
        return json.dumps({"config": self.config, "cells": self.cells, "rows": self.rows},
                          sort_keys=True, indent=1)

    def cells_csv(self) -> str:
        buf = io.StringIO()
        cols = ["generator", "fitter", "replicates"] + [f"{s}_{a}" for s in STAT_FIELDS for a in ("mean", "sd")]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            w.writerow({k: c[k] for k in cols})
        return buf.getvalue()

    def rows_csv(self) -> str:
        buf = io.StringIO()
        cols = ["generator", "fitter", "replicate"] + list(STAT_FIELDS)
        w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def _aggregate(rows: list[dict]) -> list[dict]:
    keys = []
    for r in rows:
        key = (r["generator"], r["fitter"])
        if key not in keys:
            keys.append(key)
    cells = []
    for g, f in keys:
        sel = [r for r in rows if r["generator"] == g and r["fitter"] == f]
        cell = {"generator": g, "fitter": f, "replicates": len(sel)}
        for s in STAT_FIELDS:
            v = np.array([r[s] for r in sel], dtype=float)
            v = v[np.isfinite(v)]
            cell[f"{s}_mean"] = float(v.mean()) if v.size else float("nan")
            cell[f"{s}_sd"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        cells.append(cell)
    return cells


def default_threads() -> int:
    env = os.environ.get("BETAGOS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_benchmark(bc: BenchmarkConfig, threads: int | None = None) -> BenchmarkReport:
    threads = threads or default_threads()
    jobs = [(g, r) for g in range(len(bc.generators)) for r in range(bc.replicates)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda gr: _run_replicate(bc, *gr), jobs))
    else:
        results = [_run_replicate(bc, g, r) for g, r in jobs]
    rows = [row for res in results for row in res]
    return BenchmarkReport(bc.to_dict(), rows)
