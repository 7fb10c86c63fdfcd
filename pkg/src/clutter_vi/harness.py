"""Experiment orchestration: run every method on seeded datasets and write CSV/JSON results."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import EPSettings, LaplaceSettings, MFSettings, ep, laplace, mf_vi
from .em import EMSettings, run_em
from .gradient import VariationalGaussian
from .model import ClutterModel, Dataset, read_dataset, sample_dataset
from .oracle import QuadratureSettings, elbo, log_marginal_likelihood, numeric_elbo_maximizer
from .result import METHOD_IDS, MethodResult

log = logging.getLogger(__name__)

METHOD_ALIASES = {
    "gaa": "elbo_gaa",
    "elbo_gaa": "elbo_gaa",
    "ep": "ep",
    "mf": "mf_vi",
    "mf_vi": "mf_vi",
    "laplace": "laplace",
    "numeric": "numeric_baseline",
    "numeric_baseline": "numeric_baseline",
}

RUN_COLUMNS = ["method", "n", "seed", "iteration", "mu_q", "v_q", "elbo", "kl", "abs_err_mean", "v_g_hat", "converged"]
TRACE_COLUMNS = ["iteration", "mu_q", "v_q", "v_g_hat", "g_mu", "g_v", "elbo", "kl"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: ClutterModel = field(default_factory=ClutterModel)
    true_mean: float = 2.0
    sizes: list[int] = field(default_factory=lambda: [20])
    seeds: list[int] = field(default_factory=lambda: list(range(50)))
    methods: list[str] = field(default_factory=lambda: list(METHOD_IDS))
    em_settings: EMSettings = field(default_factory=EMSettings)
    ep_settings: EPSettings = field(default_factory=EPSettings)
    mf_settings: MFSettings = field(default_factory=MFSettings)
    laplace_settings: LaplaceSettings = field(default_factory=LaplaceSettings)
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    output_dir: str = "results"
    diagnostics: bool = False
    data_files: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.methods = [normalize_method(m) for m in self.methods]
        if not self.methods:
            raise ConfigError("methods must not be empty")
        if not self.data_files and (not self.sizes or not self.seeds):
            raise ConfigError("sizes and seeds must not be empty")
        if any(n < 0 for n in self.sizes):
            raise ConfigError("sizes must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def normalize_method(name: str) -> str:
    try:
        return METHOD_ALIASES[name.strip()]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(METHOD_ALIASES)}") from None


_NESTED = {
    "model": ClutterModel,
    "em_settings": EMSettings,
    "ep_settings": EPSettings,
    "mf_settings": MFSettings,
    "laplace_settings": LaplaceSettings,
    "quadrature": QuadratureSettings,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    try:
        for key, value in raw.items():
            if key in _NESTED:
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                kwargs[key] = _NESTED[key](**value)
            else:
                kwargs[key] = value
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)


# -- running -----------------------------------------------------------------


@dataclass
class Cell:
    n: int
    seed: int | None
    data: Dataset
    model: ClutterModel
    log_evidence: float = math.nan
    baseline: MethodResult | None = None
    results: dict[str, MethodResult] = field(default_factory=dict)


def _cells(config: ExperimentConfig) -> list[Cell]:
    if config.data_files:
        cells = []
        for path in config.data_files:
            data, file_model = read_dataset(path)
            cells.append(Cell(data.n, data.seed, data, file_model or config.model))
        return cells
    return [
        Cell(n, seed, sample_dataset(config.model, config.true_mean, n, seed), config.model)
        for n in config.sizes
        for seed in config.seeds
    ]


def _run_method(method: str, model: ClutterModel, data: Dataset, config: ExperimentConfig, diag) -> MethodResult:
    if method == "elbo_gaa":
        settings = dataclasses.replace(config.em_settings, record_diagnostics=config.diagnostics)
        return run_em(model, data, settings, diagnostics=diag)
    if method == "laplace":
        return laplace(model, data, config.laplace_settings)
    if method == "ep":
        return ep(model, data, config.ep_settings)
    if method == "mf_vi":
        return mf_vi(model, data, config.mf_settings)
    raise ConfigError(f"unhandled method {method!r}")


def _valid(q) -> bool:
    return q is not None and math.isfinite(q.mu_q) and math.isfinite(q.v_q) and q.v_q > 0


def run_cell(cell: Cell, config: ExperimentConfig) -> Cell:
    model, data, qs = cell.model, cell.data, config.quadrature
    cell.log_evidence = log_marginal_likelihood(model, data, qs)

    def diag(q):
        value = elbo(model, data, q, qs)
        return value, cell.log_evidence - value

    cell.baseline = numeric_elbo_maximizer(model, data, qs)
    mu_bar = cell.baseline.q.mu_q
    for method in config.methods:
        if method == "numeric_baseline":
            res = dataclasses.replace(cell.baseline, trace=list(cell.baseline.trace))
        else:
            try:
                res = _run_method(method, model, data, config, diag)
            except (ArithmeticError, ValueError) as exc:
                log.warning("%s failed on n=%s seed=%s: %s", method, cell.n, cell.seed, exc)
                res = MethodResult(method, None, 0, False, [], message=f"error: {exc}")
        if _valid(res.q):
            res.kl = diag(res.q)[1]
            res.abs_err_mean = abs(res.q.mu_q - mu_bar)
        if config.diagnostics and method != "elbo_gaa":
            for row in res.trace:
                if _valid_row(row):
                    row.elbo, row.kl = diag(VariationalGaussian(row.mu_q, row.v_q))
        cell.results[method] = res
    return cell


def _valid_row(row) -> bool:
    return math.isfinite(row.mu_q) and math.isfinite(row.v_q) and row.v_q > 0


def thread_count() -> int:
    raw = os.environ.get("CLUTTER_VI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CLUTTER_VI_THREADS must be an integer, got {raw!r}") from None


def run_experiment(config: ExperimentConfig, write: bool = True) -> tuple[list[Cell], dict]:
    """Run all (size, seed) cells; returns the cells and the summary record."""
    cells = _cells(config)
    threads = thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda c: run_cell(c, config), cells))
    else:
        cells = [run_cell(c, config) for c in cells]
    summary = summarize(cells, config)
    if write:
        emit_outputs(cells, config.output_dir, config, summary)
    return cells, summary


# -- outputs -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def runs_rows(cells: list[Cell]) -> list[dict]:
    rows = []
    for cell in cells:
        for method, res in cell.results.items():
            q = res.q
            last = res.trace[-1] if res.trace else None
            rows.append(
                {
                    "method": method,
                    "n": cell.n,
                    "seed": cell.seed,
                    "iteration": res.iterations,
                    "mu_q": q.mu_q if q else None,
                    "v_q": q.v_q if q else None,
                    "elbo": None if res.kl is None else cell.log_evidence - res.kl,
                    "kl": res.kl,
                    "abs_err_mean": res.abs_err_mean,
                    "v_g_hat": last.v_g_hat if last else None,
                    "converged": res.converged,
                }
            )
    return rows


def _median(values):
    return statistics.median(values) if values else None


def _mean(values):
    return statistics.fmean(values) if values else None


def summarize(cells: list[Cell], config: ExperimentConfig) -> dict:
    contenders = [m for m in config.methods if m != "numeric_baseline"]
    by_size: dict[str, dict] = {}
    for n in sorted({c.n for c in cells}):
        group = [c for c in cells if c.n == n]
        wins = {m: 0 for m in contenders}
        wins["none"] = 0
        for c in group:
            scored = [(c.results[m].kl, i, m) for i, m in enumerate(contenders) if c.results[m].kl is not None]
            if scored:
                wins[min(scored)[2]] += 1
            else:
                wins["none"] += 1
        methods = {}
        for m in config.methods:
            res = [c.results[m] for c in group]
            kls = [r.kl for r in res if r.kl is not None]
            errs = [r.abs_err_mean for r in res if r.abs_err_mean is not None]
            methods[m] = {
                "runs": len(res),
                "converged": sum(r.converged for r in res),
                "failed": sum(r.q is None for r in res),
                "median_kl": _median(kls),
                "mean_kl": _mean(kls),
                "median_abs_err_mean": _median(errs),
                "median_iterations": _median([r.iterations for r in res]),
            }
        by_size[str(n)] = {"cells": len(group), "methods": methods, "win_counts": wins}
    return {
        "runs": sum(len(c.results) for c in cells),
        "cells": len(cells),
        "by_size": by_size,
        "config": config.to_dict(),
    }


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_outputs(cells: list[Cell], out_dir, config: ExperimentConfig, summary: dict | None = None) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    _write_csv(out / "runs.csv", RUN_COLUMNS, runs_rows(cells))
    for cell in cells:
        for method, res in cell.results.items():
            rows = [dataclasses.asdict(r) for r in res.trace]
            _write_csv(out / f"trace_{method}_{cell.n}_{cell.seed}.csv", TRACE_COLUMNS, rows)
    summary = summarize(cells, config) if summary is None else summary
    try:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {out / 'summary.json'}: {exc}") from exc
    return out

