"""Reproducible experiment runs: convergence curves, adjustment heatmaps, tables.

Every experiment writes CSV files whose first line is an anchor comment
(``# figure=1``, ``# table=1``) followed by a header row, plus a
``manifest.json``.  CSVs depend only on (id, seed, scale, bootstrap size);
the worker count never changes them.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from .backtest import (
    BacktestConfig,
    EstimatorSpec,
    make_report,
    run_backtest,
    running_statistic,
    stat_G,
    stat_MR_SD,
)
from .bias_reduction import AdjustmentTable, BiasSearchConfig, adjustment_grid, write_heatmap_csv
from .distributions import Garch11, GpdLeftTail, Normal, RandomStream, StudentT, garch_simulate, sample_iid
from .errors import ConfigurationError
from .estimators import pwm_batch
from .risk_measures import RiskSpec

log = logging.getLogger(__name__)

__all__ = [
    "DatasetPreset",
    "ExperimentConfig",
    "ExperimentResult",
    "EXPERIMENTS",
    "GPD_DATASETS",
    "PRESETS",
    "run_experiment",
    "checkpoints",
]

DESK_SCALE = 20_000
GARCH_DESK_SCALE = 5_000
DESK_BOOTSTRAP = 10_000
HEATMAP_BOOTSTRAP = 50_000
DEFAULT_SEED = 7


@dataclass(frozen=True)
class DatasetPreset:
    """A generating law with its window and level.

    For GPD presets ``level`` is the conditional tail level and the law's
    tail mass is ``window / 250``.
    """

    name: str
    law: object
    level: float
    window: int
    infinite_mean: bool = False
    es_level: float | None = None


def _gpd_preset(name, u, xi, beta, level, window, es_level=None):
    return DatasetPreset(name, GpdLeftTail(u, xi, beta, p=window / 250), level, window,
                         infinite_mean=xi >= 1, es_level=es_level)


GPD_DATASETS = (
    _gpd_preset("dataset1", -0.978, 0.212, 0.869, 0.05, 50, es_level=0.05),
    _gpd_preset("dataset2", -2.2, 0.388, 0.545, 0.075, 50, es_level=0.075),
    _gpd_preset("dataset3", -0.40028, 1.19, 0.774, 0.10, 42),
)

PRESETS = {
    "gaussian_var": DatasetPreset("gaussian_var", Normal(0.0, 1.0), 0.01, 250),
    "gaussian_es": DatasetPreset("gaussian_es", Normal(0.0, 1.0), 0.025, 250),
    "gpd_tail_var": _gpd_preset("gpd_tail_var", -1.0, 0.05, 0.7, 0.05, 50),
    "gpd_tail_es": _gpd_preset("gpd_tail_es", -1.0, 0.05, 0.7, 0.125, 50),
    "gaussian_evar": DatasetPreset("gaussian_evar", Normal(0.0, 1.0), 0.00145, 250),
    "t5_evar": DatasetPreset("t5_evar", StudentT(5.0, 0.0, 1.0), 0.00145, 250),
    "garch": DatasetPreset("garch", Garch11(0.0, 1e-4, 0.1, 0.8), 0.01, 250),
    **{p.name: p for p in GPD_DATASETS},
}

# Independent random streams per data family; sub-streams (k, 0) hold data of
# panel/dataset k and (k, 1) its bootstrap draws.
STREAMS = {"gaussian": 1, "gpd_tail": 2, "gpd_datasets": 3, "garch": 4, "t5": 5, "heatmap": 6}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    scale: int | None = None
    bootstrap: int | None = None
    seed: int = DEFAULT_SEED
    out: str = "results"
    svg: bool = False
    workers: int | None = None
    datasets: tuple[int, ...] | None = None
    refit_stride: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.scale is not None and self.scale < 1:
            raise ConfigurationError("scale must be >= 1")
        if self.bootstrap is not None and self.bootstrap < 100:
            raise ConfigurationError("bootstrap size must be >= 100")

    @property
    def horizon(self) -> int:
        return self.scale or EXPERIMENTS[self.experiment].default_scale

    @property
    def bootstrap_size(self) -> int:
        return self.bootstrap or EXPERIMENTS[self.experiment].default_bootstrap


@dataclass
class ExperimentResult:
    experiment: str
    files: list[Path]
    manifest: dict
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class Experiment:
    id: str
    anchor: str
    caption: str
    default_scale: int
    runner: Callable
    convergence: bool = True
    default_bootstrap: int = DESK_BOOTSTRAP


def checkpoints(m: int, count: int = 100) -> np.ndarray:
    """Evenly spaced horizons ending at ``m``."""
    return np.unique(np.linspace(m / count, m, count).round().astype(int).clip(1, m))


# -- output helpers -----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def _write_csv(path: Path, anchor: str, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {anchor}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, (int, np.integer)) else str(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    """Rows of an experiment CSV (anchor line skipped) as dicts of strings."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


class _Context:
    def __init__(self, config: ExperimentConfig, outdir: Path):
        self.config = config
        self.outdir = outdir
        self.files: list[Path] = []
        self.errors: list[str] = []
        self.notes: list[str] = []
        self.used_presets: dict[str, dict] = {}

    @property
    def bias(self) -> BiasSearchConfig:
        return BiasSearchConfig(bootstrap_size=self.config.bootstrap_size)

    def stream(self, family: str, k: int, part: int) -> RandomStream:
        return RandomStream(self.config.seed, STREAMS[family], (k, part))

    def preset(self, name: str) -> DatasetPreset:
        p = PRESETS[name]
        self.used_presets[name] = _preset_record(p)
        return p

    def write(self, name: str, anchor: str, header, rows):
        self.files.append(_write_csv(self.outdir / name, anchor, header, rows))


def _preset_record(p: DatasetPreset) -> dict:
    law = p.law
    rec = {"law": type(law).__name__, **asdict(law), "level": p.level, "window": p.window,
           "infinite_mean": p.infinite_mean}
    rec.pop("body", None)
    return rec


# -- convergence experiments -------------------------------------------------------

def _iid_data(ctx, preset, family, k):
    n, m = preset.window, ctx.config.horizon
    return np.asarray(sample_iid(preset.law, n + m, ctx.stream(family, k, 0)), dtype=float)


def _convergence(ctx, preset, data, risk, estimators, statistic, family, k, sigma_path=None):
    n, m = preset.window, ctx.config.horizon
    cps = checkpoints(m)
    rows = []
    table = None
    for kind in estimators:
        est = EstimatorSpec(kind, bias=ctx.bias, refit_stride=ctx.config.refit_stride, table=table)
        if kind == "b" and isinstance(preset.law, GpdLeftTail):
            table = AdjustmentTable.build(risk, n, ctx.bias, ctx.stream(family, k, 1), workers=ctx.config.workers)
            est = replace(est, table=table)
            if table.failures:
                ctx.notes.append(f"{preset.name}: {table.failures} shape grid points without a root")
        cfg = BacktestConfig(n, m, risk, est, preset.law, workers=ctx.config.workers)
        try:
            series = run_backtest(data, cfg, ctx.stream(family, k, 1), sigma_path=sigma_path)
        except Exception as exc:
            ctx.errors.append(f"{preset.name}/{kind}: {type(exc).__name__}: {exc}")
            continue
        if series.fit_failures:
            ctx.notes.append(f"{preset.name}/{kind}: {series.fit_failures} window fits fell back")
        values = running_statistic(series, statistic, cps, alpha=risk.level)
        rows += [(int(c), est.label, statistic, float(v)) for c, v in zip(cps, values)]
    return rows


CONVERGENCE_HEADER = ("m", "estimator", "statistic", "value")


def _run_fig1(ctx):
    p = ctx.preset("gaussian_var")
    data = _iid_data(ctx, p, "gaussian", 0)
    rows = _convergence(ctx, p, data, RiskSpec("VaR", p.level), ("true", "plugin", "unbiased", "empirical"),
                        "T", "gaussian", 0)
    ctx.write("fig1.csv", "figure=1", CONVERGENCE_HEADER, rows)


def _run_fig2(ctx):
    p = ctx.preset("gpd_tail_var")
    ctx.notes.append("conditional window n=50 at the conditional level 0.05 (the caption's n=250 is the unconditional length)")
    data = _iid_data(ctx, p, "gpd_tail", 0)
    rows = _convergence(ctx, p, data, RiskSpec("VaR", p.level, conditional=True), ("true", "plugin", "empirical"),
                        "T", "gpd_tail", 0)
    ctx.write("fig2.csv", "figure=2", CONVERGENCE_HEADER, rows)


def _run_fig3(ctx):
    p = ctx.preset("gaussian_es")
    data = _iid_data(ctx, p, "gaussian", 1)
    rows = _convergence(ctx, p, data, RiskSpec("ES", p.level), ("true", "plugin", "unbiased", "empirical"),
                        "G", "gaussian", 1)
    ctx.write("fig3_normal.csv", "figure=3", CONVERGENCE_HEADER, rows)
    p = ctx.preset("gpd_tail_es")
    data = _iid_data(ctx, p, "gpd_tail", 1)
    rows = _convergence(ctx, p, data, RiskSpec("ES", p.level, conditional=True), ("true", "plugin", "empirical", "b"),
                        "G", "gpd_tail", 1)
    ctx.write("fig3_gpd.csv", "figure=3", CONVERGENCE_HEADER, rows)


def _run_fig4(ctx):
    for k, (name, family, fname) in enumerate((("gaussian_evar", "gaussian", "fig4_normal.csv"),
                                               ("t5_evar", "t5", "fig4_t5.csv"))):
        p = ctx.preset(name)
        data = _iid_data(ctx, p, family, 2)
        rows = _convergence(ctx, p, data, RiskSpec("EVaR", p.level), ("true", "plugin", "empirical"),
                            "H", family, 2)
        ctx.write(fname, "figure=4", CONVERGENCE_HEADER, rows)


def _run_fig5(ctx):
    p = ctx.preset("garch")
    n, m = p.window, ctx.config.horizon
    data, sigma = garch_simulate(p.law, n + m, ctx.stream("garch", 0, 0))
    rows = _convergence(ctx, p, data, RiskSpec("VaR", p.level), ("true", "plugin", "empirical"),
                        "T", "garch", 0, sigma_path=sigma)
    ctx.write("fig5.csv", "figure=5", CONVERGENCE_HEADER, rows)


# -- heatmaps --------------------------------------------------------------------------

NORMAL_GRID = [(mu, s) for mu in (-1.0, -0.5, 0.0, 0.5, 1.0) for s in (0.5, 0.75, 1.0, 1.5, 2.0)]
GPD_GRID = [(xi, b) for xi in (-0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
            for b in (0.5, 0.75, 1.0, 1.5, 2.0)]


def _run_fig6(ctx):
    n, level, B = 50, 0.05, ctx.config.bootstrap_size
    risk = RiskSpec("VaR", level, conditional=True)
    for k, (family, grid, fname) in enumerate((("Normal", NORMAL_GRID, "fig6_normal.csv"),
                                               ("GPD", GPD_GRID, "fig6_gpd.csv"))):
        pts = adjustment_grid(family, grid, risk, n, ctx.bias, ctx.stream("heatmap", k, 1),
                              workers=ctx.config.workers)
        bad = [p for p in pts if p.error]
        ctx.errors += [f"fig6 {family} ({p.p1}, {p.p2}): {p.error}" for p in bad]
        path = ctx.outdir / fname
        path.parent.mkdir(parents=True, exist_ok=True)
        write_heatmap_csv(path, pts, n, level, B, ctx.config.seed, "figure=6")
        ctx.files.append(path)


def _run_fig8(ctx):
    p = ctx.preset("dataset2")
    n, m = p.window, ctx.config.horizon
    data = _iid_data(ctx, p, "gpd_datasets", 1)
    windows = np.lib.stride_tricks.sliding_window_view(data[:-1], n)
    xi, beta = pwm_batch(p.law.u - windows)
    ok = np.isfinite(xi)
    for k, kind in enumerate(("VaR", "ES")):
        risk = RiskSpec(kind, p.level, conditional=True)
        table = AdjustmentTable.build(risk, n, ctx.bias, ctx.stream("heatmap", 2 + k, 1), workers=ctx.config.workers)
        a = np.where(ok, table(np.where(ok, xi, 0.0)), np.nan)
        if kind == "ES":
            a = np.where(xi < 1, a, np.nan)
        if table.failures:
            ctx.notes.append(f"fig8 {kind}: {table.failures} shape grid points without a root; lookups clamp")
        rows = [(x, b, aa) for x, b, aa in zip(xi, beta, a)]
        ctx.write(f"fig8_{kind.lower()}.csv", "figure=8", ("p1", "p2", "a"), rows)
    ctx.notes.append(f"fig8: {int((~ok).sum())} windows without a PWM fit; {m} windows in total")


# -- tables ----------------------------------------------------------------------------

TABLE1_HEADER = ("dataset", "estimator", "T", "S", "NGZ", "DM", "DM_p", "MR", "SD")
TABLE2_HEADER = ("dataset", "estimator", "G", "T", "MR", "SD")
TABLE_ESTIMATORS = ("empirical", "plugin", "b_true", "b", "true")


def _table_series(ctx, preset, k, kind):
    """Secured series of every table estimator for one dataset."""
    n, m = preset.window, ctx.config.horizon
    level = preset.level if kind == "VaR" else preset.es_level
    risk = RiskSpec(kind, level, conditional=True)
    data = _iid_data(ctx, preset, "gpd_datasets", k)
    boot = ctx.stream("gpd_datasets", k, 1 if kind == "VaR" else 2)
    out = {}
    for est_kind in TABLE_ESTIMATORS:
        bias = ctx.bias
        if est_kind == "b_true":
            bias = replace(bias, bias_allowance=0.10)
        table = None
        if est_kind == "b":
            table = AdjustmentTable.build(risk, n, bias, boot.substream(1), workers=ctx.config.workers)
            if table.failures:
                ctx.notes.append(f"{preset.name} {kind}: {table.failures} shape grid points without a root; lookups clamp")
        est = EstimatorSpec(est_kind, bias=bias, table=table)
        cfg = BacktestConfig(n, m, risk, est, preset.law, workers=ctx.config.workers)
        try:
            out[est_kind] = run_backtest(data, cfg, boot.substream(0))
        except Exception as exc:
            ctx.errors.append(f"{preset.name}/{est_kind}: {type(exc).__name__}: {exc}")
        else:
            s = out[est_kind]
            if "a" in s.extras and np.ndim(s.extras["a"]) == 0:
                ctx.notes.append(f"{preset.name} {kind} {est_kind}: a = {s.extras['a']:.6g}")
    return risk, out


def _selected(ctx, default):
    chosen = ctx.config.datasets or default
    for i in chosen:
        if not 1 <= i <= len(GPD_DATASETS):
            raise ConfigurationError(f"unknown dataset {i}")
    return chosen


def _run_table1(ctx):
    rows = []
    for i in _selected(ctx, (1, 2, 3)):
        p = ctx.preset(f"dataset{i}")
        risk, series = _table_series(ctx, p, i, "VaR")
        ref = series.get("b_true")
        for kind in TABLE_ESTIMATORS:
            if kind not in series:
                continue
            r = make_report(series[kind], risk.level, reference=ref)
            dm = (r.DM.statistic, r.DM.p_value) if r.DM is not None else ("", "")
            rows.append((p.name, series[kind].label, r.T, r.S, r.NGZ, *dm, r.MR, r.SD))
    ctx.write("table1.csv", "table=1", TABLE1_HEADER, rows)


def _run_table2(ctx):
    chosen = _selected(ctx, (1, 2))
    for i in chosen:
        if GPD_DATASETS[i - 1].infinite_mean:
            raise ConfigurationError(f"dataset{i} has an infinite mean; expected shortfall is not finite")
    rows = []
    for i in chosen:
        p = ctx.preset(f"dataset{i}")
        risk, series = _table_series(ctx, p, i, "ES")
        for kind in TABLE_ESTIMATORS:
            if kind in series:
                s = series[kind]
                mr, sd = stat_MR_SD(s)
                rows.append((p.name, s.label, stat_G(s), float(np.mean(s.breaches)), mr, sd))
    ctx.write("table2.csv", "table=2", TABLE2_HEADER, rows)


EXPERIMENTS: dict[str, Experiment] = {
    e.id: e
    for e in (
        Experiment("fig1", "figure=1", "Gaussian VaR exception rate T vs m (n=250, alpha=1%)", DESK_SCALE, _run_fig1),
        Experiment("fig2", "figure=2", "GPD left-tail VaR exception rate T vs m (n=50, conditional 5%)", DESK_SCALE, _run_fig2),
        Experiment("fig3", "figure=3", "ES cumulative breach statistic G vs m (Gaussian 2.5%, GPD 12.5%)", DESK_SCALE, _run_fig3),
        Experiment("fig4", "figure=4", "EVaR gain-loss ratio H vs m (Gaussian and t5, level 0.145%)", DESK_SCALE, _run_fig4),
        Experiment("fig5", "figure=5", "GARCH(1,1) VaR exception rate T vs m (n=250, alpha=1%)", GARCH_DESK_SCALE, _run_fig5),
        Experiment("fig6", "figure=6", "local adjustment a over Normal (mu, sigma) and GPD (xi, beta) grids", DESK_SCALE,
                   _run_fig6, convergence=False, default_bootstrap=HEATMAP_BOOTSTRAP),
        Experiment("fig8", "figure=8", "adjustment a at fitted (xi, beta) pairs, dataset 2, VaR and ES at 7.5%", DESK_SCALE,
                   _run_fig8, convergence=False),
        Experiment("table1", "table=1", "GPD VaR backtests: T, S, NGZ, DM, MR (SD) for three datasets", DESK_SCALE,
                   _run_table1, convergence=False),
        Experiment("table2", "table=2", "GPD ES backtests: G and MR (SD) for datasets 1 and 2", DESK_SCALE,
                   _run_table2, convergence=False),
    )
}


# -- driver ------------------------------------------------------------------------------

def _versions() -> dict:
    return {"riskbias": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    exp = EXPERIMENTS[config.experiment]
    if exp.convergence and config.horizon < 1000:
        raise ConfigurationError("convergence experiments need scale m >= 1000")
    outdir = Path(config.out) / exp.id
    outdir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(config, outdir)
    start = time.perf_counter()
    try:
        exp.runner(ctx)
    except ConfigurationError:
        raise
    except Exception as exc:  # partial failure: keep what was written, report the error
        log.exception("experiment %s failed", exp.id)
        ctx.errors.append(f"{type(exc).__name__}: {exc}")
    wall = time.perf_counter() - start
    if config.svg:
        try:
            from .plotting import render_svg

            ctx.files += render_svg(exp, ctx.files)
        except Exception as exc:
            ctx.errors.append(f"svg rendering: {type(exc).__name__}: {exc}")
    manifest = {
        "experiment": exp.id,
        "anchor": exp.anchor,
        "caption": exp.caption,
        "seed": config.seed,
        "scale": config.horizon,
        "bootstrap": config.bootstrap_size,
        "workers": config.workers or int(os.environ.get("RISKBIAS_THREADS", "1") or 1),
        "versions": _versions(),
        "wall_time_s": round(wall, 3),
        "presets": ctx.used_presets,
        "files": [p.name for p in ctx.files],
        "errors": ctx.errors,
        "notes": ctx.notes,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExperimentResult(exp.id, ctx.files, manifest, ctx.errors)
