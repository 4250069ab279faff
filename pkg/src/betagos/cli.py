"""Command-line entry point: ``betagos {simulate,fit,moments,call,benchmark,replay}``.

Every run writes its outputs plus ``manifest.json`` into ``--out-dir``. The
manifest echoes the full configuration, the seed, the RNG substreams used and
SHA-256 digests of inputs and outputs; ``betagos replay manifest.json``
re-executes it and checks that every output is reproduced bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import BenchmarkConfig, FitterSpec, default_threads, run_benchmark
from .cgh import CallConfig, FitSettings, aberration_frequency, call_sample, read_clone_csv, regions_csv
from .core import parse_schedule
from .errors import DomainError, InputError, NumericError
from .generators import KINDS, GeneratorSpec, generate
from .inference import ModelConfig, coclustering, run_chains, summarize
from .moments import expected_K, mgf_K, phi
from .rng import make_rng, substream

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _Outputs:
    def __init__(self, out_dir: str):
        self.dir = Path(out_dir)
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_bytes(data)
        self.files[name] = _sha256(data)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _read_input(path: str) -> tuple[str, str]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return data.decode(), _sha256(data)


def _model_config(args) -> ModelConfig:
    return ModelConfig(mu0=args.mu0, sigma0=args.sigma0, a0=args.a0, b0=args.b0,
                       schedule=parse_schedule(args.schedule), tau2_mode=args.tau2_mode)


def read_observations(text: str) -> np.ndarray:
    """One observation per row; an optional header and a ``y`` column are recognised."""
    rows = list(csv.reader(io.StringIO(text)))
    col, start = 0, 0
    if rows and rows[0]:
        try:
            float(rows[0][0])
        except ValueError:
            header = [h.strip() for h in rows[0]]
            col = header.index("y") if "y" in header else 0
            start = 1
    vals = []
    for ln, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not f.strip() for f in row):
            continue
        try:
            v = float(row[col])
        except (ValueError, IndexError):
            raise InputError(f"line {ln}: expected a number, got {','.join(row)!r}") from None
        if not math.isfinite(v):
            raise InputError(f"line {ln}: non-finite observation")
        vals.append(v)
    if not vals:
        raise InputError("no observations")
    return np.asarray(vals)


# -- subcommands -------------------------------------------------------------

def _generator_params(args) -> dict:
    p = {"tau": args.tau, "mu0": args.mu0, "sigma0": args.sigma0}
    if args.kind == "betagos":
        p["schedule"] = parse_schedule(args.schedule)
    elif args.kind == "dp":
        p["theta"] = args.theta
    elif args.kind == "mixture" and args.weights:
        p["weights"] = tuple(float(v) for v in args.weights.split(","))
    elif args.kind == "hmm_two_regime":
        p["switch_at"] = args.switch_at
    return p


def cmd_simulate(args, out: _Outputs) -> dict:
    spec = GeneratorSpec(args.kind, args.n, _generator_params(args))
    if args.replicates < 1:
        raise DomainError("need --replicates >= 1")
    reps, truth = [], []
    for r in range(args.replicates):
        data = generate(spec, make_rng(substream(args.seed, r)))
        z = data.truth.assignment()
        st = data.states if data.states is not None else z
        reps.append({"replicate": r, "y": data.y.tolist(), "block": z.tolist(), "state": np.asarray(st).tolist()})
        truth.append({"replicate": r, "blocks": [list(b) for b in data.truth.blocks]})
    if args.format == "json":
        out.write(f"simulate_{args.kind}.json", _dumps({"generator": spec.to_dict(), "replicates": reps}))
    else:
        for rep in reps:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["index", "y", "block", "state"])
            for i, (y, b, s) in enumerate(zip(rep["y"], rep["block"], rep["state"])):
                w.writerow([i + 1, repr(y), b, s])
            out.write(f"simulate_{args.kind}_{rep['replicate']:03d}.csv", buf.getvalue())
    return {"substreams": {f"replicate {r}": [args.seed, r] for r in range(args.replicates)},
            "generator": spec.to_dict(), "truth": truth}


def cmd_fit(args, out: _Outputs) -> dict:
    cfg = _model_config(args)
    y = read_observations(args.input_text)
    if args.chains < 1:
        raise DomainError("need --chains >= 1")
    trace = run_chains(y, cfg, args.iters, args.burnin, args.thin, args.seed, args.chains, args.threads)
    s = summarize(trace, y, cfg)
    cc = coclustering(trace)
    summary = {"model": cfg.to_dict(), "iters": args.iters, "burnin": args.burnin, "thin": args.thin,
               "chains": args.chains, "n": int(y.size), **s.to_dict(),
               "k_trace_hist": np.bincount(trace.k).tolist()}
    if args.format == "json":
        summary["coclustering"] = cc.tolist()
    else:
        buf = io.StringIO()
        np.savetxt(buf, cc, delimiter=",", fmt="%.6g")
        out.write("coclustering.csv", buf.getvalue())
    out.write("fit_summary.json", _dumps(summary))
    return {"substreams": {f"chain {j}": [args.seed, j] for j in range(args.chains)}}


def _parse_ints(text: str) -> list[int]:
    vals = []
    for part in text.split(","):
        if ":" in part:
            lo, hi = part.split(":")
            vals.extend(range(int(lo), int(hi) + 1))
        else:
            vals.append(int(part))
    if any(v < 0 for v in vals):
        raise DomainError("n must be >= 0")
    return vals


def cmd_moments(args, out: _Outputs) -> dict:
    s = parse_schedule(args.schedule)
    ns = _parse_ints(args.n)
    ts = [float(v) for v in args.t.split(",")] if args.t else []
    if args.max_m < 0:
        raise DomainError("need --max-m >= 0")
    rows = []
    for n in ns:
        ek = expected_K(s, n + 1)
        mg = {f"mgf_t{t:g}": mgf_K(s, n, t) for t in ts}
        for m in range(min(args.max_m, n) + 1):
            ph = phi(s, n, m)
            rows.append({"schedule": s.spec(), "n": n, "m": m, "phi": ph,
                         "falling_moment": math.factorial(m) * ph, "expected_K": ek, **mg})
    if args.format == "json":
        out.write("moments.json", _dumps(rows))
    else:
        buf = io.StringIO()
        cols = ["schedule", "n", "m", "phi", "falling_moment", "expected_K"] + [f"mgf_t{t:g}" for t in ts]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        out.write("moments.csv", buf.getvalue())
    return {"substreams": {}}


def cmd_call(args, out: _Outputs) -> dict:
    cfg = CallConfig(eps=args.eps, call_freq=args.call_freq, amp_sd_mult=args.amp_sd_mult,
                     fdr_level=args.fdr_level, null_mode=args.null_mode)
    fit = FitSettings(args.iters, args.burnin, args.thin, _model_config(args))
    samples = {}
    for text in args.input_text:
        for sid, series in read_clone_csv(text).items():
            if sid in samples:
                raise InputError(f"sample {sid!r} appears more than once")
            samples[sid] = series
    results, streams = [], {}
    for k, (sid, series) in enumerate(samples.items()):
        results.append(call_sample(series, cfg, fit, seed=args.seed, sample_index=k, threads=args.threads))
        for c, (ch, _) in enumerate(series.chromosomes()):
            streams[f"sample {sid or k} chromosome {ch}"] = [args.seed, k, c]
    freq = aberration_frequency(results) if len(results) == 1 or _aligned(results) else None
    if args.format == "json":
        doc = {"calls": [{"sample_id": r.series.sample_id, "status": r.status.tolist(),
                          "freq_gain": r.freq_gain.tolist(), "freq_loss": r.freq_loss.tolist(),
                          "freq_high_amp": r.freq_high.tolist()} for r in results],
               "regions": [reg for r in results for reg in r.regions]}
        if freq is not None:
            doc["frequency"] = {"gain": freq.gain.tolist(), "loss": freq.loss.tolist(),
                                "high_amp": freq.high_amp.tolist()}
        out.write("call.json", _dumps(doc))
    else:
        out.write("calls.csv", "".join(r.calls_csv() if i == 0 else r.calls_csv().split("\n", 1)[1]
                                       for i, r in enumerate(results)))
        out.write("regions.csv", regions_csv(results))
        if freq is not None:
            out.write("frequency.csv", freq.to_csv())
    return {"substreams": streams, "call_config": cfg.__dict__.copy()}


def _aligned(results) -> bool:
    ref = results[0].series
    return all(len(r.series) == len(ref) and np.all(r.series.clone_id == ref.clone_id) for r in results)


def cmd_benchmark(args, out: _Outputs) -> dict:
    kinds = [k.strip() for k in args.generators.split(",") if k.strip()]
    gens = tuple(GeneratorSpec(k, args.n) for k in kinds)
    prior = dict(mu0=args.mu0, sigma0=args.sigma0, a0=args.a0, b0=args.b0, tau2_mode=args.tau2_mode)
    fitters = tuple(FitterSpec.from_schedule(f, **prior) for f in args.fitters)
    if args.replicates < 1:
        raise DomainError("need --replicates >= 1")
    bc = BenchmarkConfig(gens, fitters, args.replicates, args.iters, args.burnin, args.thin, args.seed)
    # validates iteration settings before any replicate runs
    if not args.iters > args.burnin >= 0 or args.thin < 1 or (args.iters - args.burnin) // args.thin < 1:
        raise DomainError("need iters > burnin >= 0, thin >= 1 and at least one kept draw")
    report = run_benchmark(bc, threads=args.threads)
    out.write("benchmark.json", report.to_json() + "\n")
    if args.format == "csv":
        out.write("benchmark_cells.csv", report.cells_csv())
        out.write("benchmark_rows.csv", report.rows_csv())
    streams = {f"{g.kind} replicate {r} data": [args.seed, gi, r, 0]
               for gi, g in enumerate(gens) for r in range(args.replicates)}
    streams.update({f"{g.kind} replicate {r} fitter {f.name}": [args.seed, gi, r, 1 + fi]
                    for gi, g in enumerate(gens) for r in range(args.replicates)
                    for fi, f in enumerate(fitters)})
    return {"substreams": streams}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "moments": cmd_moments,
            "call": cmd_call, "benchmark": cmd_benchmark}


# -- parser ------------------------------------------------------------------

def _add_prior(p, sigma0=10.0, a0=2.004, b0=0.0063, schedule="theta:1"):
    p.add_argument("--schedule", default=schedule, help="theta:T[,B] | const:A,B | dp:T")
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=sigma0)
    p.add_argument("--a0", type=float, default=a0)
    p.add_argument("--b0", type=float, default=b0)
    p.add_argument("--tau2-mode", default="pooled_em", choices=("pooled_em", "global_conjugate"))


def _add_global(p, defaults: bool) -> None:
    # subcommands repeat the global flags without defaults so that a value given
    # before the subcommand is not overwritten
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--threads", type=int, default=d(None),
                   help="worker threads (default: $BETAGOS_THREADS or the core count)")
    p.add_argument("--out-dir", default=d("."))
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _add_global(common, defaults=False)

    parser = argparse.ArgumentParser(prog="betagos")
    _add_global(parser, defaults=True)
    parser.add_argument("--version", action="version", version=f"betagos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw synthetic series")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=10.0)
    p.add_argument("--schedule", default="theta:1", help="schedule for --kind betagos")
    p.add_argument("--theta", type=float, default=1.0, help="concentration for --kind dp")
    p.add_argument("--weights", default="", help="comma-separated weights for --kind mixture")
    p.add_argument("--switch-at", type=int, default=50, help="regime change for --kind hmm_two_regime")

    p = sub.add_parser("fit", parents=[common], help="Gibbs sampler on one series")
    p.add_argument("input", help="CSV with one observation per row")
    _add_prior(p)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=4)
    p.add_argument("--chains", type=int, default=1)

    p = sub.add_parser("moments", parents=[common], help="exact partition moments")
    p.add_argument("--schedule", required=True)
    p.add_argument("--n", required=True, help="comma list and/or lo:hi ranges")
    p.add_argument("--max-m", type=int, default=4)
    p.add_argument("--t", default="0.5,1,2", help="comma-separated mgf arguments")

    p = sub.add_parser("call", parents=[common], help="copy-number calls on clone series")
    p.add_argument("inputs", nargs="+", help="clone CSV files (one per sample or long format)")
    _add_prior(p, sigma0=math.sqrt(10.0), b0=0.01 * 1.004)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--thin", type=int, default=2)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--call-freq", type=float, default=0.7)
    p.add_argument("--amp-sd-mult", type=float, default=2.0)
    p.add_argument("--fdr-level", type=float, default=0.05)
    p.add_argument("--null-mode", choices=("all", "mean"), default="all")

    p = sub.add_parser("benchmark", parents=[common], help="replicated generator x fitter comparison")
    p.add_argument("--generators", default="betagos,truncated_urn,hmm_two_regime,mixture")
    p.add_argument("--fitters", nargs="+", default=["theta:1", "dp:1"])
    p.add_argument("--n", type=int, default=101, help="points per replicate; the last is held out")
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=4)
    _add_prior(p)

    p = sub.add_parser("replay", parents=[common], help="re-run a manifest and verify its outputs")
    p.add_argument("manifest")
    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise DomainError("--threads must be >= 1")
        return args.threads
    return default_threads()


def _config_echo(args) -> dict:
    skip = {"threads", "out_dir", "input_text", "input_texts"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _execute(args) -> dict:
    """Load inputs, run the subcommand and write outputs plus the manifest."""
    inputs = {}
    if args.command == "fit":
        args.input = str(Path(args.input).resolve())
        args.input_text, inputs[args.input] = _read_input(args.input)
    elif args.command == "call":
        args.inputs = [str(Path(p).resolve()) for p in args.inputs]
        args.input_text = []
        for path in args.inputs:
            text, digest = _read_input(path)
            args.input_text.append(text)
            inputs[path] = digest
    # schedules are validated before anything is computed
    for text in (args.fitters if args.command == "benchmark" else [getattr(args, "schedule", "theta:1")]):
        parse_schedule(text)
    out = _Outputs(args.out_dir)
    extra = COMMANDS[args.command](args, out)
    manifest = {"subcommand": args.command, "config": _config_echo(args), "seed": args.seed,
                "substreams": extra.pop("substreams"), "version": __version__,
                "inputs": inputs, "outputs": dict(sorted(out.files.items())), **extra}
    out.write("manifest.json", _dumps(manifest))
    return manifest


def replay(manifest_path: str, out_dir: str, threads: int) -> list[str]:
    """Re-run a manifest into ``out_dir``; returns the outputs whose digests differ."""
    text, _ = _read_input(manifest_path)
    try:
        man = json.loads(text)
        ns = argparse.Namespace(**man["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{manifest_path}: not a manifest ({exc})") from None
    for path, digest in man.get("inputs", {}).items():
        if _read_input(path)[1] != digest:
            raise InputError(f"input {path} changed since the manifest was written")
    ns.out_dir, ns.threads = out_dir, threads
    new = _execute(ns)
    return sorted(k for k, v in man["outputs"].items() if new["outputs"].get(k) != v)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.threads = _resolve_threads(args)
        if args.command == "replay":
            bad = replay(args.manifest, args.out_dir, args.threads)
            if bad:
                print(f"error: outputs differ from the manifest: {', '.join(bad)}", file=sys.stderr)
                return EXIT_NUMERIC
            print("replay reproduced all outputs")
            return EXIT_OK
        _execute(args)
    except (InputError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
