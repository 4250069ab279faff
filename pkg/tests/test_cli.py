import argparse
import csv
import hashlib
import io
import json

import numpy as np
import pytest

from betagos import cli
from betagos.cgh import amplicon_fixture
from betagos.core import ThetaLinear
from betagos.errors import InputError, NumericError
from betagos.moments import phi
from betagos.rng import make_rng

TINY_BENCH = ["benchmark", "--generators", "betagos,truncated_urn", "--n", "31", "--replicates", "2",
              "--iters", "60", "--burnin", "20", "--thin", "2"]


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    code = cli.main(["--out-dir", str(out), *argv])
    return code, out


def _digests_match(out):
    man = json.loads((out / "manifest.json").read_text())
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    return man


def test_simulate_csv(tmp_path):
    code, out = _run(tmp_path, "a", "--seed", "3", "simulate", "--kind", "hmm_two_regime", "--n", "40",
                     "--replicates", "2")
    assert code == 0
    man = _digests_match(out)
    assert man["subcommand"] == "simulate" and man["seed"] == 3
    assert man["substreams"] == {"replicate 0": [3, 0], "replicate 1": [3, 1]}
    rows = list(csv.DictReader(io.StringIO((out / "simulate_hmm_two_regime_001.csv").read_text())))
    assert len(rows) == 40 and set(rows[0]) == {"index", "y", "block", "state"}


def test_simulate_json_and_seed_position(tmp_path):
    _, a = _run(tmp_path, "a", "--seed", "7", "--format", "json", "simulate", "--kind", "betagos", "--n", "15")
    code = cli.main(["simulate", "--kind", "betagos", "--n", "15", "--seed", "7", "--format", "json",
                     "--out-dir", str(tmp_path / "b")])
    assert code == 0
    doc = json.loads((a / "simulate_betagos.json").read_text())
    assert len(doc["replicates"][0]["y"]) == 15
    assert (a / "simulate_betagos.json").read_bytes() == (tmp_path / "b" / "simulate_betagos.json").read_bytes()


def test_simulate_then_fit(tmp_path):
    _, sim = _run(tmp_path, "sim", "simulate", "--kind", "mixture", "--n", "30")
    code, out = _run(tmp_path, "fit", "fit", str(sim / "simulate_mixture_000.csv"), "--iters", "200",
                     "--burnin", "50", "--thin", "1", "--chains", "2")
    assert code == 0
    man = _digests_match(out)
    summary = json.loads((out / "fit_summary.json").read_text())
    assert summary["n"] == 30 and summary["chains"] == 2
    assert len(man["inputs"]) == 1
    cc = np.loadtxt(out / "coclustering.csv", delimiter=",")
    assert cc.shape == (30, 30) and np.allclose(np.diag(cc), 1.0)


def test_moments_values(tmp_path):
    code, out = _run(tmp_path, "m", "moments", "--schedule", "theta:1,2", "--n", "0:3,10", "--max-m", "2")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((out / "moments.csv").read_text())))
    assert {int(r["n"]) for r in rows} == {0, 1, 2, 3, 10}
    for r in rows:
        assert float(r["phi"]) == phi(ThetaLinear(1.0, 2.0), int(r["n"]), int(r["m"]))
    assert "mgf_t0.5" in rows[0]


def _clone_file(tmp_path):
    s, _ = amplicon_fixture(make_rng(0), n=80, segments=((30, 10, 0.6),))
    lines = ["clone_id,chromosome,kb_start,kb_end,log2_ratio"]
    lines += [f"{s.clone_id[i]},{s.chromosome[i]},{s.kb_start[i]:g},{s.kb_end[i]:g},{float(s.log2_ratio[i])!r}"
              for i in range(len(s))]
    path = tmp_path / "clones.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_call(tmp_path):
    path = _clone_file(tmp_path)
    code, out = _run(tmp_path, "c", "call", str(path), "--iters", "600", "--burnin", "200")
    assert code == 0
    _digests_match(out)
    calls = list(csv.DictReader(io.StringIO((out / "calls.csv").read_text())))
    assert [r["status"] for r in calls[30:40]] == ["gain"] * 10
    regions = list(csv.DictReader(io.StringIO((out / "regions.csv").read_text())))
    assert any(r["left_clone"] == "CL0030" and r["right_clone"] == "CL0039" for r in regions)
    assert (out / "frequency.csv").exists()


def test_benchmark_and_replay(tmp_path):
    code, out = _run(tmp_path, "b", "--seed", "4", "--threads", "2", *TINY_BENCH)
    assert code == 0
    man = _digests_match(out)
    report = json.loads((out / "benchmark.json").read_text())
    assert report["cells"] and all(c["replicates"] == 2 for c in report["cells"])
    assert man["substreams"]["betagos replicate 1 data"] == [4, 0, 1, 0]
    code = cli.main(["--out-dir", str(tmp_path / "r"), "--threads", "1", "replay", str(out / "manifest.json")])
    assert code == 0
    assert (tmp_path / "r" / "benchmark.json").read_bytes() == (out / "benchmark.json").read_bytes()


def test_replay_detects_mismatch(tmp_path, capsys):
    _, out = _run(tmp_path, "s", "simulate", "--kind", "dp", "--n", "10")
    man = json.loads((out / "manifest.json").read_text())
    man["outputs"]["simulate_dp_000.csv"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(man))
    assert cli.main(["--out-dir", str(tmp_path / "r"), "replay", str(out / "manifest.json")]) == 1
    assert "differ" in capsys.readouterr().err


def test_replay_detects_changed_input(tmp_path):
    data = tmp_path / "y.csv"
    data.write_text("1.0\n2.0\n1.5\n")
    _, out = _run(tmp_path, "f", "fit", str(data), "--iters", "20", "--burnin", "5")
    data.write_text("1.0\n2.0\n1.6\n")
    assert cli.main(["--out-dir", str(tmp_path / "r"), "replay", str(out / "manifest.json")]) == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--kind", "nope", "--n", "5"],
    ["simulate", "--kind", "dp", "--n", "0"],
    ["simulate", "--kind", "mixture", "--n", "5", "--weights", "0.5,0.4"],
    ["moments", "--schedule", "theta:1,0.5", "--n", "3"],
    ["moments", "--schedule", "theta:1", "--n", "x"],
    ["benchmark", "--fitters", "beta:1", "--replicates", "1"],
    ["benchmark", "--generators", "ar1", "--replicates", "1"],
    ["benchmark", "--replicates", "0"],
    ["--threads", "0", "moments", "--schedule", "theta:1", "--n", "3"],
    ["fit", "/nonexistent/file.csv"],
    [],
])
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert cli.main(["--out-dir", str(tmp_path), *argv]) == 2
    capsys.readouterr()


def test_malformed_csv_reports_line(tmp_path, capsys):
    data = tmp_path / "y.csv"
    data.write_text("y\n1.0\nabc\n")
    assert cli.main(["--out-dir", str(tmp_path / "o"), "fit", str(data)]) == 2
    assert "line 3" in capsys.readouterr().err
    clones = tmp_path / "c.csv"
    clones.write_text("clone_id,chromosome,kb_start,kb_end,log2_ratio\na,1,0,1,0.1\nb,1,x,2,0.2\n")
    assert cli.main(["--out-dir", str(tmp_path / "o"), "call", str(clones)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_numeric_failure_exit_1(tmp_path, monkeypatch, capsys):
    def boom(args, out):
        raise NumericError("non-finite log-likelihood")
    monkeypatch.setitem(cli.COMMANDS, "moments", boom)
    assert cli.main(["--out-dir", str(tmp_path), "moments", "--schedule", "theta:1", "--n", "3"]) == 1
    assert "numeric failure" in capsys.readouterr().err


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("BETAGOS_THREADS", "3")
    assert cli._resolve_threads(argparse.Namespace(threads=None)) == 3
    assert cli._resolve_threads(argparse.Namespace(threads=5)) == 5
    monkeypatch.delenv("BETAGOS_THREADS")
    assert cli._resolve_threads(argparse.Namespace(threads=None)) >= 1


def test_read_observations():
    np.testing.assert_array_equal(cli.read_observations("1\n2.5\n\n-3\n"), [1.0, 2.5, -3.0])
    np.testing.assert_array_equal(cli.read_observations("index,y\n1,0.5\n2,0.25\n"), [0.5, 0.25])
    with pytest.raises(InputError, match="line 2"):
        cli.read_observations("1\ninf\n")
    with pytest.raises(InputError):
        cli.read_observations("y\n")
