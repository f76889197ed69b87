import json
from pathlib import Path

import numpy as np
import pytest

from tts_opt import _backend, cli, lqr, runio
from tts_opt.config import bundled_configs, resolve_path
from tts_opt.diagnostics import records_from_curve


def bundled(name):
    return json.loads(resolve_path(name).read_text())


def write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def small_lqr(**over):
    raw = bundled("lqr_reference.json")
    raw.update(n_iters=200, seeds=[0, 1, 2])
    raw.update(over)
    return raw


def test_configs_lists_bundled(capsys):
    assert cli.main(["configs"]) == cli.EXIT_OK
    listed = capsys.readouterr().out.split()
    assert listed == bundled_configs()
    assert "lqr_reference.json" in listed


def test_run_lqr_reference(tmp_path):
    out = tmp_path / "lqr"
    assert cli.main(["run", "lqr_reference.json", "--out", str(out)]) == cli.EXIT_OK
    csvs = sorted(out.glob("seed_*.csv"))
    assert len(csvs) == 10
    for p in csvs:
        recs = runio.read_csv(p)
        assert len(recs) == 1000
        assert [r.k for r in recs] == list(range(1000))
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["burn_in"] == 50 and len(man["files"]) == 10
    assert man["config"] == bundled("lqr_reference.json")


def test_zero_iterations_rejected(tmp_path, capsys):
    path = write_cfg(tmp_path, small_lqr(n_iters=0))
    assert cli.main(["run", path, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "n_iters" in capsys.readouterr().err
    assert not list((tmp_path).glob("o/*.csv"))


@pytest.mark.parametrize("edit", [
    lambda r: r.update(colour="blue"),
    lambda r: r["schedule"].update(gamma=1.0),
    lambda r: r["problem"]["instance"].update(extra=[[1.0]]),
    lambda r: r.update(seeds=[]),
    lambda r: r["problem"].update(type="pendulum"),
])
def test_bad_configs_exit_2(tmp_path, edit):
    raw = small_lqr()
    edit(raw)
    assert cli.main(["run", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_unreadable_configs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("name", ["lqr_reference.json", "quadratic.json", "nonconvex.json"])
def test_runs_are_deterministic(tmp_path, name, monkeypatch):
    raw = bundled(name)
    raw.update(n_iters=min(raw["n_iters"], 500), seeds=raw["seeds"][:3])
    path = write_cfg(tmp_path, raw)
    monkeypatch.setenv(cli.THREADS_VAR, "3")
    assert cli.main(["run", path, "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv(cli.THREADS_VAR, "1")
    assert cli.main(["run", path, "--out", str(tmp_path / "b")]) == 0
    # the manifest holds the config, so it can be replayed as one
    assert cli.main(["run", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c")]) == 0
    for p in sorted((tmp_path / "a").glob("*.csv")):
        ref = p.read_bytes()
        assert (tmp_path / "b" / p.name).read_bytes() == ref
        assert (tmp_path / "c" / p.name).read_bytes() == ref


def test_bad_thread_setting(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_VAR, "many")
    assert cli.main(["run", write_cfg(tmp_path, small_lqr()), "--out", str(tmp_path)]) == 2


def test_abort_drops_partial_files(tmp_path, capsys):
    raw = small_lqr()
    raw["schedule"].update(alpha0=50.0, beta0=100.0)
    path = write_cfg(tmp_path, raw)
    out = tmp_path / "o"
    assert cli.main(["run", path, "--out", str(out)]) == cli.EXIT_ABORTED
    assert "aborted" in capsys.readouterr().err
    assert not list(out.glob("*.csv"))
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "aborted"
    assert {f["seed"] for f in man["failures"]} == {0, 1, 2}

    assert cli.main(["run", path, "--out", str(out), "--keep-partial"]) == cli.EXIT_ABORTED
    for f in man["failures"]:
        recs = runio.read_csv(out / f"seed_{f['seed']}.csv")
        assert len(recs) == f["k"] and all(r.stable for r in recs)


def test_rates_on_exact_power_law(tmp_path, capsys):
    ks = np.arange(5000)
    for s in range(3):
        runio.write_csv(records_from_curve((s + 1) * (ks + 1.0) ** (-2 / 3)), tmp_path / f"seed_{s}.csv")
    report = tmp_path / "rates.json"
    assert cli.main(["rates", str(tmp_path / "seed_*.csv"), "--burn-in", "10",
                     "--json", str(report)]) == 0
    out = capsys.readouterr().out
    assert "median slope: -0.6667" in out
    summary = json.loads(report.read_text())
    assert summary["files"] == 3
    assert summary["median_slope"] == pytest.approx(-2 / 3, abs=1e-9)
    assert all(r["envelope_ok"] for r in summary["runs"])
    assert summary["median_curve"]["slope"] == pytest.approx(-2 / 3, abs=1e-9)


def test_rates_burn_in_from_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", write_cfg(tmp_path, small_lqr()), "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli.main(["rates", str(out / "*.csv")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert {r["burn_in"] for r in summary["runs"]} == {50}


def test_rates_empty_glob(tmp_path, capsys):
    assert cli.main(["rates", str(tmp_path / "nothing_*.csv")]) == cli.EXIT_CONFIG
    assert "no files match" in capsys.readouterr().err


def test_plot_single_and_envelope(tmp_path):
    ks = np.arange(2000)
    runio.write_csv(records_from_curve((ks + 1.0) ** -0.5), tmp_path / "seed_0.csv")
    svg = tmp_path / "one.svg"
    assert cli.main(["plot", str(tmp_path / "seed_0.csv"), str(svg)]) == 0
    text = svg.read_text()
    assert text.startswith("<svg") and text.count("<polyline") == 1
    runio.write_csv(records_from_curve(2 * (ks + 1.0) ** -0.5), tmp_path / "seed_1.csv")
    env = tmp_path / "env.svg"
    assert cli.main(["plot", str(tmp_path / "seed_*.csv"), str(env),
                     "--envelope", "-0.6667", "2"]) == 0
    text = env.read_text()
    assert text.count("<rect x=") == 2          # two panels
    assert text.count("<polyline") == 5          # two runs, median, envelope, ratio
    assert "metric / envelope" in text


def test_plot_malformed_row(tmp_path, capsys):
    p = tmp_path / "seed_0.csv"
    runio.write_csv(records_from_curve([1.0, 0.5, 0.25, 0.125]), p)
    lines = p.read_text().splitlines()
    lines[3] = "2,0.1,oops,0.25,,1"
    p.write_text("\n".join(lines) + "\n")
    assert cli.main(["plot", str(p), str(tmp_path / "x.svg")]) == cli.EXIT_CONFIG
    assert "row 4" in capsys.readouterr().err
    assert not (tmp_path / "x.svg").exists()


def test_verify_all_pass(capsys):
    assert cli.main(["verify"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_filter(capsys):
    assert cli.main(["verify", "--filter", "svec"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert len(lines) == 1 and "svec_isometry" in lines[0]
    assert cli.main(["verify", "--filter", "zzz"]) == cli.EXIT_CONFIG


def test_verify_catches_wrong_gradient(monkeypatch, capsys):
    real = lqr.natural_gradient_E
    monkeypatch.setattr(lqr, "natural_gradient_E", lambda inst, K: -real(inst, K))
    assert cli.main(["verify"]) == cli.EXIT_FAIL
    out = capsys.readouterr().out
    assert "FAIL  gradient_fd" in out


def test_backend_variable(monkeypatch):
    monkeypatch.setenv(_backend.ENV_VAR, "numpy")
    assert _backend.backend() == "numpy"
    monkeypatch.setenv(_backend.ENV_VAR, "NumPy ")
    assert _backend.backend() == "numpy"
    monkeypatch.setenv(_backend.ENV_VAR, "fortran")
    with pytest.raises(ValueError):
        _backend.backend()
    monkeypatch.delenv(_backend.ENV_VAR)
    assert _backend.backend() == ("numba" if _backend.numba_available() else "numpy")


def test_numpy_backend_run_matches(tmp_path, monkeypatch):
    raw = bundled("quadratic.json")
    raw.update(n_iters=300, seeds=[0, 1])
    path = write_cfg(tmp_path, raw)
    assert cli.main(["run", path, "--out", str(tmp_path / "nb")]) == 0
    monkeypatch.setenv(_backend.ENV_VAR, "numpy")
    assert cli.main(["run", path, "--out", str(tmp_path / "np")]) == 0
    assert json.loads((tmp_path / "np" / "manifest.json").read_text())["backend"] == "numpy"
    for p in (tmp_path / "nb").glob("*.csv"):
        a = np.array([r.metric for r in runio.read_csv(p)], dtype=float)
        b = np.array([r.metric for r in runio.read_csv(tmp_path / "np" / p.name)], dtype=float)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
