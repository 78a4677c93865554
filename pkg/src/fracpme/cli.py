"""Config-driven experiment runner.

Verbs: ``run <config>``, ``plots <run_dir>``, ``compare <dirs...>``,
``list <output_root>``. Exit codes: 0 pass, 1 check failure, 2 config
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, fields
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import estimates as est
from .green import (
    GreenProfile,
    closed_form_green,
    decay_class_report,
    green_function,
    power_tail_datum,
    sup_weighted_norm,
    bump_sum_datum,
)
from .manifold import BUILTIN_WARPINGS, DomainError, GridConstructionError, ModelManifold, build_grid
from .semigroup import (
    NewtonError,
    SolverConfig,
    Trajectory,
    check_lp_nonexpansivity,
    check_time_monotonicity,
    evolve,
    geometric_times,
)
from .spectral import (
    EigensolverError,
    FractionalOperator,
    RadialField,
    decompose,
    assemble_laplacian,
    faber_krahn_check,
    indicator,
)

log = logging.getLogger("fracpme")

EXIT_PASS, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ArtifactError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

TRAJECTORY_CHECKS = (
    "nonexpansivity", "time_monotonicity", "green_moment", "fundamental_bound", "wds",
    "smoothing_S1", "hyperbolic_longtime", "weighted_short", "weighted_long",
)
STATIC_CHECKS = ("green_closed_form", "faber_krahn", "decay_class")
KNOWN_CHECKS = TRAJECTORY_CHECKS + STATIC_CHECKS
DATUM_KINDS = ("ball", "power_tail", "bump_sum", "csv")
DEFAULT_R_MAX = {"euclidean": 1e5, "hyperbolic": 15.0, "custom": 7.5}
DEFAULT_GRADING = {"euclidean": 1.0135, "hyperbolic": 1.0, "custom": 1.0}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "") else float(text)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    dimension: int = 3
    warping: str = "euclidean"
    curvature: float = 1.0
    custom: str = ""
    r_max: float | None = None
    n_nodes: int = 1024
    grading: float | None = None
    s: float = 0.5
    m: float = 2.0
    linear_diagnostic: bool = False
    datum: str = "ball"
    datum_radius: float = 1.0
    datum_a: float = 2.0
    datum_cap: float | None = None
    datum_J: int = 3
    datum_csv: str = ""
    allow_inadmissible: bool = False
    t_min: float = 1e-3
    t_max: float = 50.0
    q: float = 1.1
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    boundary_cap: float | None = 1e-4
    checks: tuple[str, ...] = ("nonexpansivity", "time_monotonicity", "green_moment")
    fit_start_factor: float = 2.0
    late_t_min: float | None = None
    green_r_lo: float | None = None
    green_r_hi: float | None = None
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.dimension < 2:
            raise ConfigError("dimension", f"must be >= 2, got {self.dimension}")
        if self.warping not in ("euclidean", "hyperbolic", "custom"):
            raise ConfigError("warping", f"must be euclidean, hyperbolic or custom, got {self.warping!r}")
        if self.warping == "hyperbolic" and not self.curvature > 0:
            raise ConfigError("curvature", f"must be > 0, got {self.curvature}")
        if self.warping == "custom" and self.custom not in BUILTIN_WARPINGS:
            raise ConfigError("custom", f"unknown warping {self.custom!r}; known: {sorted(BUILTIN_WARPINGS)}")
        if not 0 < self.s < 1:
            raise ConfigError("s", f"must lie in (0, 1), got {self.s}")
        if self.m == 1 and not self.linear_diagnostic:
            raise ConfigError("m", "m = 1 needs linear_diagnostic = true")
        if self.m < 1:
            raise ConfigError("m", f"must be > 1, got {self.m}")
        if self.r_max is not None and not self.r_max > 0:
            raise ConfigError("r_max", f"must be > 0, got {self.r_max}")
        if self.n_nodes < 16:
            raise ConfigError("n_nodes", f"must be >= 16, got {self.n_nodes}")
        if self.grading is not None and not 1.0 <= self.grading <= 2.0:
            raise ConfigError("grading", f"must lie in [1, 2], got {self.grading}")
        if not 0 < self.t_min < self.t_max:
            raise ConfigError("t_min", f"need 0 < t_min < t_max, got {self.t_min}, {self.t_max}")
        if not self.q > 1:
            raise ConfigError("q", f"must be > 1, got {self.q}")
        if self.datum not in DATUM_KINDS:
            raise ConfigError("datum", f"must be one of {DATUM_KINDS}, got {self.datum!r}")
        if self.datum == "ball" and not self.datum_radius > 0:
            raise ConfigError("datum_radius", f"must be > 0, got {self.datum_radius}")
        if self.datum == "power_tail":
            thr = self.s if self.warping == "hyperbolic" else 2 * self.s
            if not self.datum_a > 0:
                raise ConfigError("datum_a", f"must be > 0, got {self.datum_a}")
            if self.datum_a <= thr and not self.allow_inadmissible:
                raise ConfigError("datum_a", f"a = {self.datum_a} <= {thr} lies outside the weighted space; "
                                  "set allow_inadmissible = true to run anyway")
        if self.datum == "bump_sum" and self.datum_J < 1:
            raise ConfigError("datum_J", f"must be >= 1, got {self.datum_J}")
        if self.datum == "csv" and not self.datum_csv:
            raise ConfigError("datum_csv", "a csv datum needs a file path")
        for c in self.checks:
            if c not in KNOWN_CHECKS:
                raise ConfigError("checks", f"unknown check {c!r}; known: {', '.join(KNOWN_CHECKS)}")

    @property
    def resolved_r_max(self) -> float:
        return self.r_max if self.r_max is not None else DEFAULT_R_MAX[self.warping]

    @property
    def resolved_grading(self) -> float:
        return self.grading if self.grading is not None else DEFAULT_GRADING[self.warping]

    def manifold(self) -> ModelManifold:
        if self.warping == "euclidean":
            return ModelManifold.euclidean(self.dimension)
        if self.warping == "hyperbolic":
            return ModelManifold.hyperbolic(self.dimension, self.curvature)
        return ModelManifold.custom(self.dimension, self.custom)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            times=geometric_times(self.t_min, self.t_max, self.q),
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            boundary_cap=self.boundary_cap,
            linear_diagnostic=self.linear_diagnostic,
        )


_CONVERTERS: dict[str, Callable[[str], object]] = {
    "int": int, "float": float, "str": str, "bool": _parse_bool,
    "float | None": _optional_float, "tuple[str, ...]": _str_list,
}


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` and ``;`` start comments; unknown keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("<syntax>", str(exc).splitlines()[0]) from None
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    values: dict[str, object] = {"name": name}
    for key, raw in parser["experiment"].items():
        if key not in types:
            raise ConfigError(key, "unknown key")
        try:
            values[key] = _CONVERTERS[types[key]](raw)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r} ({exc})") from None
    return ExperimentConfig(**values)


def bundled_configs() -> list[str]:
    root = resources.files("fracpme") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config_path(spec: str) -> tuple[str, str]:
    """Return ``(text, stem)`` for a config file path or a bundled config name."""
    path = Path(spec)
    if path.is_file():
        return path.read_text(), path.stem
    name = spec if spec.endswith(".cfg") else spec + ".cfg"
    res = resources.files("fracpme") / "configs" / name
    if res.is_file():
        return res.read_text(), Path(name).stem
    raise ConfigError("<path>", f"no config file or bundled config named {spec!r}")


def load_config(spec: str) -> tuple[ExperimentConfig, str]:
    text, stem = resolve_config_path(spec)
    return parse_config(text, stem), text


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    quantity: str
    manifold: str
    N: int
    s: float
    parameter: str
    value: float
    bound: str
    passed: bool


REPORT_HEADER = ("quantity", "manifold", "N", "s", "parameter", "value", "bound", "pass")


@dataclass
class RunContext:
    cfg: ExperimentConfig
    series: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @cached_property
    def manifold(self) -> ModelManifold:
        return self.cfg.manifold()

    @cached_property
    def op(self) -> FractionalOperator:
        grid = build_grid(self.manifold, self.cfg.resolved_r_max, self.cfg.n_nodes, self.cfg.resolved_grading)
        return FractionalOperator(self.cfg.s, decompose(assemble_laplacian(grid)))

    @cached_property
    def green(self) -> GreenProfile:
        return green_function(self.op)

    @cached_property
    def datum(self) -> RadialField:
        cfg, grid = self.cfg, self.op.grid
        if cfg.datum == "ball":
            return indicator(grid, cfg.datum_radius)
        if cfg.datum == "power_tail":
            u = power_tail_datum(grid, cfg.datum_a)
            if cfg.datum_cap is not None:
                u = RadialField(grid, u.values * (grid.partial_weights(cfg.datum_cap) / grid.volume_weights))
            return u
        if cfg.datum == "bump_sum":
            return bump_sum_datum(grid, cfg.datum_J)
        return _read_csv_datum(Path(cfg.datum_csv), grid)

    @cached_property
    def trajectory(self) -> Trajectory:
        return evolve(self.op, self.cfg.m, self.datum, self.cfg.solver_config())

    @cached_property
    def weighted_norm(self) -> float:
        return sup_weighted_norm(self.datum, self.green)

    def row(self, quantity: str, parameter: str, value: float, bound: str, passed: bool) -> ReportRow:
        return ReportRow(quantity, self.manifold.label, self.manifold.dimension, self.cfg.s, parameter,
                         float(value), bound, bool(passed))


def _read_csv_datum(path: Path, grid) -> RadialField:
    """Two-column ``r,u`` profile, linearly interpolated onto the grid nodes."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ConfigError("datum_csv", str(exc)) from None
    if data.shape[1] != 2:
        raise ConfigError("datum_csv", f"expected 2 columns (r,u), got {data.shape[1]}")
    r, u = data[:, 0], data[:, 1]
    if np.any(np.diff(r) <= 0) or np.any(u < 0):
        raise ConfigError("datum_csv", "radii must increase and values must be nonnegative")
    return RadialField(grid, np.interp(grid.nodes, r, u, right=0.0))


def _check_nonexpansivity(ctx: RunContext) -> list[ReportRow]:
    rows = []
    for p in (1.0, 2.0, np.inf):
        rep = check_lp_nonexpansivity(ctx.trajectory, p)
        rows.append(ctx.row("lp_nonexpansivity", f"p={p:g}", rep.worst, "<= 1e-10", rep.passed))
    return rows


def _check_time_monotonicity(ctx: RunContext) -> list[ReportRow]:
    rep = check_time_monotonicity(ctx.trajectory)
    return [ctx.row("time_monotonicity", "t^(1/(m-1)) u", rep.worst, ">= 0", rep.passed)]


def _check_green_moment(ctx: RunContext) -> list[ReportRow]:
    rows = []
    rhos = (0.0, 1.0, 2.0) if ctx.manifold.is_space_form else (0.0,)
    for rho in rhos:
        series = est.green_moment_series(ctx.trajectory, ctx.green, rho)
        worst = float(np.max(np.diff(series)) / max(np.max(np.abs(series)), 1e-300))
        rows.append(ctx.row("green_moment_nonincreasing", f"rho={rho:g}", worst, "<= 1e-6",
                            est.is_nonincreasing(series)))
        ctx.series[f"green_moment_rho{rho:g}"] = (ctx.trajectory.times, series)
    return rows


def _check_fundamental_bound(ctx: RunContext) -> list[ReportRow]:
    rep = est.fundamental_bound_check(ctx.trajectory, ctx.green)
    lo_gap = float(np.max(rep.lower - rep.middle))
    up_ratio = float(np.max(rep.middle / np.maximum(rep.upper, 1e-300)))
    return [
        ctx.row("fundamental_bound", f"triples={len(rep.triples)} lower-middle", lo_gap, "<= 1e-3 rel", rep.passed),
        ctx.row("fundamental_bound", "max middle/upper", up_ratio, "<= 1.001", rep.passed),
    ]


def _check_wds(ctx: RunContext) -> list[ReportRow]:
    res = est.wds_residual(ctx.trajectory)
    return [ctx.row("wds_residual", f"sigma={tf.sigma:g} t_c={tf.t_c:g} tau={tf.tau:g}", r, "< 0.02",
                    abs(r) < 0.02) for tf, r in zip(est.BUILTIN_TEST_FUNCTIONS, res)]


def _smoothing_rows(ctx: RunContext, rep: est.SmoothingReport, tol_text: str) -> list[ReportRow]:
    lo, hi = rep.fit_window
    ctx.series[rep.regime] = (rep.times, rep.ratio_series)
    return [
        ctx.row(f"{rep.regime}_slope", f"window=[{lo:.6g};{hi:.6g}] stderr={rep.stderr:.3g}",
                rep.fitted_exponent, tol_text, rep.verdict),
        ctx.row(f"{rep.regime}_ratio_spread", "max/min", rep.spread, "", rep.verdict),
    ]


def _check_smoothing(ctx: RunContext) -> list[ReportRow]:
    traj = ctx.trajectory
    lo, _ = est.smoothing_window(traj, start_factor=ctx.cfg.fit_start_factor)
    rep = est.fit_smoothing_exponent(traj, (lo, traj.times[-1]))
    return _smoothing_rows(ctx, rep, f"{rep.target_exponent:.4g} +- 0.08 and spread < 2")


def _check_hyperbolic(ctx: RunContext) -> list[ReportRow]:
    if ctx.manifold.warping.kind != "hyperbolic":
        raise ConfigError("checks", "hyperbolic_longtime needs a hyperbolic warping")
    traj = ctx.trajectory
    late = None if ctx.cfg.late_t_min is None else (ctx.cfg.late_t_min, traj.times[-1])
    rep = est.hyperbolic_longtime_check(traj, ctx.manifold.warping.curvature, late_window=late)
    ctx.series[rep.regime] = (rep.times, rep.ratio_series)
    growth = float(rep.ratio_series.max() / rep.ratio_series[0])
    lw = rep.notes["late_window"]
    return [
        ctx.row("hyperbolic_ratio_growth", f"t*={rep.notes['t_star']:.6g} horizon=50t*", growth, "<= 2",
                rep.notes["bounded"] and rep.notes["euclidean_ratio_decays"]),
        ctx.row("hyperbolic_late_slope", f"window=[{lw[0]:.6g};{lw[1]:.6g}]", rep.notes["late_slope"], "<= -0.9",
                rep.notes["late_slope"] <= -0.9),
    ]


def _check_weighted(regime: str) -> Callable[[RunContext], list[ReportRow]]:
    def check(ctx: RunContext) -> list[ReportRow]:
        rep = est.weighted_smoothing_check(ctx.trajectory, ctx.weighted_norm, regime)
        ctx.series[rep.regime] = (rep.times, rep.ratio_series)
        lo, hi = rep.fit_window
        ratio = float(rep.ratio_series.max() / np.median(rep.ratio_series))
        return [ctx.row(f"{rep.regime}_ratio", f"window=[{lo:.6g};{hi:.6g}] norm={ctx.weighted_norm:.6g}",
                        ratio, "max <= 3 median", rep.verdict)]
    return check


def green_comparison_table(ctx: RunContext) -> np.ndarray | None:
    """Columns r, G, closed form, relative error on the configured window."""
    grid = ctx.op.grid
    r = grid.nodes
    closed = closed_form_green(ctx.manifold, ctx.cfg.s, r)
    if closed is None:
        return None
    if ctx.manifold.warping.kind == "hyperbolic":
        lo, hi = 0.2, 8.0
    else:
        lo, hi = 10 * float(grid.widths[0]), grid.r_max / 3
    lo = ctx.cfg.green_r_lo if ctx.cfg.green_r_lo is not None else lo
    hi = ctx.cfg.green_r_hi if ctx.cfg.green_r_hi is not None else hi
    sel = (r >= lo) & (r <= hi)
    G = ctx.green.values[sel]
    return np.column_stack([r[sel], G, closed[sel], np.abs(G - closed[sel]) / closed[sel]])


def _check_green_closed_form(ctx: RunContext) -> list[ReportRow]:
    table = green_comparison_table(ctx)
    if table is None:
        raise ConfigError("checks", "green_closed_form needs a Euclidean or 3D hyperbolic manifold")
    err = float(table[:, 3].max())
    return [ctx.row("green_closed_form_rel_error", f"r=[{table[0, 0]:.6g};{table[-1, 0]:.6g}]", err, "< 0.02",
                    err < 0.02)]


def _check_faber_krahn(ctx: RunContext) -> list[ReportRow]:
    radii = [R for R in (2.0, 4.0, 8.0) if R < ctx.op.grid.r_max]
    rep = faber_krahn_check(ctx.manifold, radii, ctx.op.grid)
    return [ctx.row("faber_krahn_product", f"R={R:.6g}", p, "report", True)
            for R, p in zip(rep.radii, rep.products)]


def _check_decay_class(ctx: RunContext) -> list[ReportRow]:
    rep = decay_class_report(ctx.cfg.datum_a, ctx.green)
    expected = ctx.cfg.datum_a > rep.threshold
    return [ctx.row("decay_class_tail_exponent", f"a={rep.a:g} threshold={rep.threshold:g}", rep.tail_exponent,
                    "< -1 iff a > threshold", rep.member == expected)]


CHECKS: dict[str, Callable[[RunContext], list[ReportRow]]] = {
    "nonexpansivity": _check_nonexpansivity,
    "time_monotonicity": _check_time_monotonicity,
    "green_moment": _check_green_moment,
    "fundamental_bound": _check_fundamental_bound,
    "wds": _check_wds,
    "smoothing_S1": _check_smoothing,
    "hyperbolic_longtime": _check_hyperbolic,
    "weighted_short": _check_weighted("short"),
    "weighted_long": _check_weighted("long"),
    "green_closed_form": _check_green_closed_form,
    "faber_krahn": _check_faber_krahn,
    "decay_class": _check_decay_class,
}


def late_slope_row(ctx: RunContext) -> ReportRow:
    """Fitted ``L^inf`` slope over the last decade of the run; present in every trajectory run."""
    traj = ctx.trajectory
    t_end = traj.times[-1]
    sel = traj.times >= t_end / 10
    fit = est.loglog_fit(traj.times[sel], traj.lp_norms(np.inf)[sel])
    return ctx.row("late_linf_slope", f"window=[{t_end / 10:.6g};{t_end:.6g}]", fit.slope, "report", True)


# ----------------------------------------------------------------------------
# artifacts
# ----------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def config_hash(text: str) -> str:
    return _sha256(text.encode())[:12]


def _write_atomic_dir(final: Path, files: dict[str, str]) -> None:
    """Write ``files`` into a temp dir beside ``final`` and rename it into place."""
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        for rel, content in files.items():
            p = tmp / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            with open(p, "w", newline="") as fh:
                fh.write(content)
        manifest = {
            "tool": "fracpme",
            "version": __version__,
            "files": {rel: _sha256(content.encode()) for rel, content in sorted(files.items())},
        }
        with open(tmp / "manifest.json", "w", newline="") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _failure_marker(out_root: Path, run_name: str, message: str) -> Path:
    out_root.mkdir(parents=True, exist_ok=True)
    marker = out_root / f"{run_name}.failed"
    marker.write_text(message.rstrip() + "\n")
    return marker


@dataclass(frozen=True)
class RunArtifact:
    run_dir: Path
    rows: tuple[ReportRow, ...]
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "ok" and all(r.passed for r in self.rows)

    @property
    def exit_code(self) -> int:
        if self.status != "ok":
            return EXIT_SOLVER
        return EXIT_PASS if self.passed else EXIT_CHECK


def _summary_text(cfg: ExperimentConfig, rows: Sequence[ReportRow], status: str) -> str:
    lines = [f"run: {cfg.name}", f"solver status: {status}"]
    for r in rows:
        lines.append(f"[{'PASS' if r.passed else 'FAIL'}] {r.quantity} ({r.parameter}) = {r.value:.6g}"
                     + (f"  bound {r.bound}" if r.bound else ""))
    verdict = "PASS" if status == "ok" and all(r.passed for r in rows) else "FAIL"
    lines.append(f"verdict: {verdict}")
    return "\n".join(lines) + "\n"


def run_experiment(config_spec: str, output_root: str | Path | None = None) -> RunArtifact:
    cfg, text = load_config(config_spec)
    out_root = Path(output_root if output_root is not None else cfg.output_dir)
    run_name = f"run-{config_hash(text)}"
    ctx = RunContext(cfg)
    try:
        rows: list[ReportRow] = []
        needs_traj = any(c in TRAJECTORY_CHECKS for c in cfg.checks) or not cfg.checks
        for name in cfg.checks:
            try:
                rows.extend(CHECKS[name](ctx))
            except est.WindowError as exc:
                # a run cut short by the boundary monitor cannot host the fit window
                rows.append(ctx.row(name, f"window error: {exc}".replace(",", ";"), math.nan, "", False))
        files = {"config.cfg": text}
        status = "ok"
        if needs_traj:
            traj = ctx.trajectory
            status = traj.status
            rows.append(late_slope_row(ctx))
            files["trajectory.csv"] = _csv_text(
                ("t", "L1", "L2", "Linf", "weighted_rho0", "boundary_mass_fraction"), traj.summary_table())
            files["profiles.csv"] = _csv_text(
                ["t"] + [f"{r:.17g}" for r in traj.grid.nodes],
                (np.concatenate([[t], p]) for t, p in zip(traj.times, traj.profiles)))
        table = green_comparison_table(ctx)
        g_rows = np.column_stack([ctx.op.grid.nodes, ctx.green.values])
        files["green.csv"] = _csv_text(("r", "G"), g_rows)
        if table is not None:
            files["green_vs_closedform.csv"] = _csv_text(("r", "G_numeric", "G_closed", "rel_error"), table)
        files["reports.csv"] = _csv_text(
            REPORT_HEADER,
            ((r.quantity, r.manifold, r.N, r.s, r.parameter, r.value, r.bound, r.passed) for r in rows))
        series_rows = [(name, t, v) for name, (ts, vs) in sorted(ctx.series.items()) for t, v in zip(ts, vs)]
        files["series.csv"] = _csv_text(("series", "t", "value"), series_rows)
        files["summary.txt"] = _summary_text(cfg, rows, status)
    except (NewtonError, EigensolverError) as exc:
        _failure_marker(out_root, run_name, f"solver failure: {exc}")
        raise
    except Exception as exc:
        _failure_marker(out_root, run_name, f"{type(exc).__name__}: {exc}")
        raise
    run_dir = out_root / run_name
    _write_atomic_dir(run_dir, files)
    marker = out_root / f"{run_name}.failed"
    if marker.exists():
        marker.unlink()
    return RunArtifact(run_dir, tuple(rows), status)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ArtifactError(f"empty artifact {path}")
    return rows[0], rows[1:]


def read_reports(run_dir: Path) -> list[dict[str, str]]:
    header, rows = _read_csv(Path(run_dir) / "reports.csv")
    return [dict(zip(header, r)) for r in rows]


PLOT_SCRIPT = '''"""Render the plot-ready CSVs in this directory (requires matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent


def load(name):
    with open(here / name, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


header, rows = load("decay_loglog.csv")
fig, ax = plt.subplots()
ax.plot([r[0] for r in rows], [r[1] for r in rows], ".", label="log10 Linf")
ax.plot([r[0] for r in rows], [r[2] for r in rows], "-", label="fit")
ax.set_xlabel("log10 t")
ax.legend()
fig.savefig(here / "decay_loglog.png", dpi=150)

if (here / "green_vs_closedform.csv").exists():
    header, rows = load("green_vs_closedform.csv")
    fig, ax = plt.subplots()
    ax.loglog([r[0] for r in rows], [r[1] for r in rows], ".", label="numeric")
    ax.loglog([r[0] for r in rows], [r[2] for r in rows], "-", label="closed form")
    ax.set_xlabel("r")
    ax.legend()
    fig.savefig(here / "green_vs_closedform.png", dpi=150)
sys.exit(0)
'''


def emit_plot_data(run_dir: str | Path) -> Path:
    """Write ``plots/`` with tidy CSVs and a matplotlib script; nothing is rendered here."""
    run_dir = Path(run_dir)
    header, rows = _read_csv(run_dir / "trajectory.csv")
    data = np.array([[float(x) for x in r] for r in rows]).reshape(-1, len(header))
    t, linf, mass = data[:, 0], data[:, 3], data[:, 1]
    keep = (t > 0) & (linf > 0)
    if keep.sum() < 3:
        raise ArtifactError(f"trajectory in {run_dir} has fewer than 3 positive samples")
    lt, ll = np.log10(t[keep]), np.log10(linf[keep])
    cfg = parse_config((run_dir / "config.cfg").read_text())
    lo = cfg.fit_start_factor * mass[0] ** (-(cfg.m - 1)) if mass[0] > 0 else t[keep][0]
    sel = t[keep] >= lo
    if sel.sum() < 3:
        sel = np.ones_like(lt, dtype=bool)
    fit = est.loglog_fit(t[keep][sel], linf[keep][sel])
    files = {"decay_loglog.csv": _csv_text(("log10_t", "log10_Linf", "fit_line"),
                                           np.column_stack([lt, ll, fit.intercept / math.log(10) + fit.slope * lt]))}
    s_path = run_dir / "series.csv"
    if s_path.is_file():
        files["ratio_series.csv"] = s_path.read_text()
    g_path = run_dir / "green_vs_closedform.csv"
    if g_path.is_file():
        files["green_vs_closedform.csv"] = g_path.read_text()
    files["plot.py"] = PLOT_SCRIPT
    out = run_dir / "plots"
    _write_atomic_dir(out, files)
    return out


@dataclass(frozen=True)
class ComparisonRow:
    key: tuple[str, str]
    values: tuple[float, ...]
    passed: tuple[bool, ...]

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(v - self.values[0] for v in self.values)

    @property
    def regression(self) -> bool:
        return self.passed[0] and not all(self.passed)


def compare_runs(run_dirs: Sequence[str | Path]) -> list[ComparisonRow]:
    if len(run_dirs) < 2:
        raise ArtifactError("compare needs at least two runs")
    tables = []
    for d in run_dirs:
        tables.append({(r["quantity"], r["parameter"]): r for r in read_reports(Path(d))})
    quantities = [{k[0] for k in t} for t in tables]
    shared_q = set.intersection(*quantities)
    if not shared_q:
        raise ArtifactError("runs share no checks")
    out = []
    for q in sorted(shared_q):
        per_run = [sorted((k for k in t if k[0] == q)) for t in tables]
        for j in range(min(len(p) for p in per_run)):
            recs = [t[p[j]] for t, p in zip(tables, per_run)]
            out.append(ComparisonRow((q, recs[0]["parameter"]), tuple(float(r["value"]) for r in recs),
                                     tuple(r["pass"] == "true" for r in recs)))
    return out


def format_comparison(rows: Sequence[ComparisonRow], names: Sequence[str]) -> str:
    head = ["quantity", "parameter"] + [f"{n}" for n in names] + [f"delta[{n}]" for n in names[1:]] + ["flag"]
    lines = [",".join(head)]
    for r in rows:
        vals = [f"{v:.6g}{'' if p else '(FAIL)'}" for v, p in zip(r.values, r.passed)]
        lines.append(",".join([r.key[0], r.key[1].replace(",", ";")] + vals
                              + [f"{d:+.3g}" for d in r.deltas[1:]] + ["REGRESSION" if r.regression else ""]))
    return "\n".join(lines) + "\n"


def list_runs(output_root: str | Path) -> list[tuple[str, str, str]]:
    root = Path(output_root)
    if not root.is_dir():
        raise ArtifactError(f"no such directory {root}")
    out = []
    for d in sorted(root.iterdir()):
        if d.is_dir() and d.name.startswith("run-") and (d / "manifest.json").is_file():
            summary = (d / "summary.txt").read_text().splitlines()
            name = summary[0].split(": ", 1)[-1] if summary else "?"
            verdict = summary[-1].split(": ", 1)[-1] if summary else "?"
            out.append((d.name, name, verdict))
        elif d.name.endswith(".failed"):
            out.append((d.name[: -len(".failed")], "?", "FAILED"))
    return out


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracpme", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run an experiment config (path or bundled name)")
    r.add_argument("config")
    r.add_argument("--output", help="override output_dir")
    pl = sub.add_parser("plots", help="write plot-ready CSVs for a run")
    pl.add_argument("run_dir")
    c = sub.add_parser("compare", help="compare two or more runs")
    c.add_argument("run_dirs", nargs="+")
    ls = sub.add_parser("list", help="list runs under an output directory")
    ls.add_argument("output_root")
    sub.add_parser("configs", help="list bundled configs")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "run":
            art = run_experiment(args.config, args.output)
            sys.stdout.write((art.run_dir / "summary.txt").read_text())
            print(f"artifacts: {art.run_dir}")
            return art.exit_code
        if args.verb == "plots":
            print(emit_plot_data(args.run_dir))
            return EXIT_PASS
        if args.verb == "compare":
            rows = compare_runs(args.run_dirs)
            sys.stdout.write(format_comparison(rows, [Path(d).name for d in args.run_dirs]))
            return EXIT_CHECK if any(r.regression for r in rows) else EXIT_PASS
        if args.verb == "list":
            for name, cfg_name, verdict in list_runs(args.output_root):
                print(f"{name}  {cfg_name}  {verdict}")
            return EXIT_PASS
        for name in bundled_configs():
            print(name)
        return EXIT_PASS
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, GridConstructionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonError, EigensolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
