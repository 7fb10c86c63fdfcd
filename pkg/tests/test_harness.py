import csv
import json
import math

import pytest

from clutter_vi.cli import main
from clutter_vi.harness import (
    RUN_COLUMNS,
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    emit_outputs,
    run_experiment,
    thread_count,
)
from clutter_vi.model import ClutterModel, read_dataset


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def small_config(tmp_path, **kw):
    base = dict(sizes=[5], seeds=[0, 1], output_dir=str(tmp_path / "out"))
    base.update(kw)
    return config_from_dict(base)


def test_empty_config_is_default_setting():
    cfg = config_from_dict({})
    assert cfg.model == ClutterModel(w=0.5, clutter_mean=0.0, clutter_var=10.0, v_g=1.0, prior_mean=0.0, prior_var=100.0)
    assert cfg.true_mean == 2.0 and cfg.sizes == [20] and len(cfg.seeds) >= 50
    assert set(cfg.methods) == {"elbo_gaa", "laplace", "ep", "mf_vi", "numeric_baseline"}


@pytest.mark.parametrize(
    "raw",
    [{"methods": []}, {"sizes": []}, {"seeds": []}, {"methods": ["bogus"]}, {"colour": 1}, {"model": {"w": 2.0}}, {"sizes": [-1]}],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_empty_results(tmp_path):
    cfg = small_config(tmp_path)
    out = emit_outputs([], tmp_path / "empty", cfg)
    text = (out / "runs.csv").read_text()
    assert text == ",".join(RUN_COLUMNS) + "\n"
    assert json.loads((out / "summary.json").read_text())["runs"] == 0


def test_run_outputs(tmp_path):
    cfg = small_config(tmp_path, diagnostics=True)
    cells, summary = run_experiment(cfg)
    out = tmp_path / "out"
    rows = read_rows(out / "runs.csv")
    assert len(rows) == 2 * 5 == summary["runs"]
    assert list(rows[0]) == RUN_COLUMNS
    for row in rows:
        assert float(row["kl"]) >= -1e-7
        if row["method"] == "elbo_gaa" and row["converged"] == "1":
            assert float(row["v_q"]) > 0
    for cell in cells:
        gaa = cell.results["elbo_gaa"]
        trace = read_rows(out / f"trace_elbo_gaa_5_{cell.seed}.csv")
        assert len(trace) == gaa.iterations + 1
        assert all(r["kl"] != "" for r in trace)
        assert float(trace[-1]["kl"]) == pytest.approx(gaa.kl, abs=1e-12)
    wins = summary["by_size"]["5"]["win_counts"]
    assert sum(wins.values()) == 2
    assert "numeric_baseline" not in wins
    assert json.loads((out / "summary.json").read_text())["config"]["sizes"] == [5]


def test_conjugate_kl_is_negligible(tmp_path):
    cfg = small_config(tmp_path, model={"w": 0.0}, methods=["gaa"], sizes=[1, 20], seeds=[0, 1, 2])
    cells, _ = run_experiment(cfg, write=False)
    for cell in cells:
        assert cell.results["elbo_gaa"].kl <= 1e-7


def test_method_failure_recorded(tmp_path):
    cfg = small_config(tmp_path, methods=["ep"], ep_settings={"max_sweeps": 1}, sizes=[20], seeds=[0])
    cells, summary = run_experiment(cfg)
    row = read_rows(tmp_path / "out" / "runs.csv")[0]
    assert row["converged"] == "0"
    assert summary["by_size"]["20"]["methods"]["ep"]["converged"] == 0


def test_deterministic_runs_csv(tmp_path):
    a = small_config(tmp_path, output_dir=str(tmp_path / "a"))
    b = small_config(tmp_path, output_dir=str(tmp_path / "b"))
    run_experiment(a)
    run_experiment(b)
    assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    run_experiment(small_config(tmp_path, output_dir=str(tmp_path / "serial"), seeds=[0, 1, 2, 3]))
    monkeypatch.setenv("CLUTTER_VI_THREADS", "3")
    assert thread_count() == 3
    run_experiment(small_config(tmp_path, output_dir=str(tmp_path / "pool"), seeds=[0, 1, 2, 3]))
    assert (tmp_path / "serial" / "runs.csv").read_bytes() == (tmp_path / "pool" / "runs.csv").read_bytes()


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("CLUTTER_VI_THREADS", "many")
    with pytest.raises(ConfigError):
        thread_count()


def test_cli_gen_data_and_run_from_files(tmp_path, capsys):
    path = tmp_path / "d.txt"
    assert main(["gen-data", "--n", "6", "--seed", "4", "--out", str(path)]) == 0
    data, model = read_dataset(path)
    assert data.n == 6 and data.seed == 4 and model == ClutterModel()
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"data_files": [str(path)], "methods": ["gaa", "laplace"]}))
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "res")]) == 0
    rows = read_rows(tmp_path / "res" / "runs.csv")
    assert {r["method"] for r in rows} == {"elbo_gaa", "laplace"}
    assert all(r["seed"] == "4" and r["n"] == "6" for r in rows)
    assert "median KL" in capsys.readouterr().out


def test_cli_overrides(tmp_path):
    out = tmp_path / "res"
    code = main(["run", "--seeds", "3", "--sizes", "4", "--methods", "gaa,mf", "--out", str(out), "--diagnostics"])
    assert code == 0
    rows = read_rows(out / "runs.csv")
    assert [(r["method"], r["n"], r["seed"]) for r in rows] == [("elbo_gaa", "4", "3"), ("mf_vi", "4", "3")]
    mf_trace = read_rows(out / "trace_mf_vi_4_3.csv")
    assert all(math.isfinite(float(r["kl"])) for r in mf_trace)


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"methods": ["nope"]}))
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--methods", "gaa,nope"])
    assert exc.value.code == 2
    assert "config error" in capsys.readouterr().err


def test_cli_io_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--seeds", "0", "--sizes", "3", "--methods", "gaa", "--out", str(blocker / "sub")]) == 3
    assert main(["gen-data", "--n", "3", "--seed", "0", "--out", str(blocker / "d.txt")]) == 3
    assert str(blocker) in capsys.readouterr().err


def test_data_files_missing_is_io_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data_files": [str(tmp_path / "nope.txt")]}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_config_roundtrip_through_summary(tmp_path):
    cfg = small_config(tmp_path, em_settings={"tol": 1e-6})
    _, summary = run_experiment(cfg, write=False)
    again = config_from_dict({k: v for k, v in summary["config"].items()})
    assert again == cfg
    assert isinstance(ExperimentConfig().seeds, list)
