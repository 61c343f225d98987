"""Command line experiments: solve, compare-decouplers, convergence, adapt, render-mesh.

Configuration files are flat ``key = value`` lines; ``#`` starts a comment
and vectors are written as comma separated values (``beta = 2, 0``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adaptivity import adaptive_loop
from .adjoint_solver import GoalFunctional, goal_value, solve_adjoint
from .coupled_forms import SemiDiscrete
from .dwr_estimator import effectivity, estimate, extrapolate_reference
from .primal_solver import DecouplerConfig, solve_primal
from .space_disc import PhysicalParams, assemble_operators, build_domain_mesh
from .time_grid import TimePartition, to_text, uniform_partition

log = logging.getLogger("multirate")

EXPERIMENTS = ("primal", "decoupler-compare", "convergence", "adaptive")
COMMANDS = {
    "solve": "primal",
    "compare-decouplers": "decoupler-compare",
    "convergence": "convergence",
    "adapt": "adaptive",
    "render-mesh": None,
}
CSV_VERSION = 1
CONVERGENCE_COLUMNS = [
    "N", "M", "L", "theta_f", "theta_s", "vartheta_f", "vartheta_s",
    "sigma", "J", "Jref_minus_J", "eff",
]
DECOUPLER_COLUMNS = ["step", "method", "evaluations", "final_residual"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "primal"
    nu: float = 0.001
    beta: tuple = (2.0, 0.0)
    lam: float = 1000.0
    delta: float = 0.1
    gamma: float = 1000.0
    h: float = 0.25
    T: float = 1.0
    N: int = 50
    M: int = 1
    L: int = 1
    config: int = 1
    functional: str = "fluid"
    method: str = "relaxation"
    tau: float = 0.7
    tol: float = 1e-12
    max_iter: int = 200
    gmres_tol: float = 1e-3
    levels: tuple = (50, 100, 200, 400, 800)
    steps: int = 4
    j_ref: float | None = None
    ref_levels: tuple = (200, 400, 800)
    seed: int = 0

    def params(self) -> PhysicalParams:
        return PhysicalParams(
            nu=self.nu, beta=self.beta, lam=self.lam, delta=self.delta, gamma=self.gamma, h=self.h
        )

    def decoupler(self, method: str | None = None) -> DecouplerConfig:
        return DecouplerConfig(
            method=method or self.method,
            tau=self.tau,
            tol=self.tol,
            max_iter=self.max_iter,
            gmres_tol=self.gmres_tol,
        )


_ALIASES = {"lambda": "lam", "configuration": "config", "config_id": "config"}
_INT_TUPLES = {"levels", "ref_levels"}


def _convert(name: str, raw: str, default):
    if name == "beta":
        parts = [float(v) for v in raw.split(",")]
        if len(parts) != 2:
            raise ValueError("beta needs two comma separated values")
        return tuple(parts)
    if name in _INT_TUPLES:
        return tuple(int(v) for v in raw.split(","))
    if name == "j_ref":
        return None if raw.lower() == "none" else float(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _check(cfg: RunConfig):
    """Raise ValueError naming the first violated constraint."""
    if cfg.experiment not in EXPERIMENTS:
        return "experiment", f"unknown experiment {cfg.experiment!r}"
    for name in ("N", "M", "L", "steps", "max_iter"):
        if getattr(cfg, name) < 1:
            return name, f"{name} must be a positive integer"
    if cfg.T <= 0:
        return "T", "T must be positive"
    if cfg.config not in (1, 2):
        return "config", "config must be 1 or 2"
    if cfg.functional not in ("fluid", "solid"):
        return "functional", "functional must be fluid or solid"
    if len(cfg.ref_levels) != 3 or any(v < 1 for v in cfg.ref_levels):
        return "ref_levels", "ref_levels needs three positive counts"
    if any(v < 1 for v in cfg.levels):
        return "levels", "levels must be positive"
    try:
        cfg.params()
    except ValueError as exc:
        text = str(exc)
        for name in ("nu", "lambda", "delta", "gamma", "cell width"):
            if text.startswith(name):
                return {"lambda": "lam", "cell width": "h"}.get(name, name), text
        return "h", text
    try:
        cfg.decoupler()
    except ValueError as exc:
        return "method", str(exc)
    return None


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    where: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        name = _ALIASES.get(key, key)
        if name not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, name, _convert(name, value, defaults[name]))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
        where[name] = lineno
    bad = _check(cfg)
    if bad:
        name, msg = bad
        loc = f"line {where[name]}" if name in where else "defaults"
        raise ConfigError(f"{loc}: {msg}")
    return cfg


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


# -- experiments --------------------------------------------------------------


@dataclass
class RunReport:
    experiment: str
    config: dict
    summary: dict = field(default_factory=dict)
    convergence: list = field(default_factory=list)
    decoupler: list = field(default_factory=list)
    adaptive: list = field(default_factory=list)
    partitions: list = field(default_factory=list)


def _operators(cfg: RunConfig) -> SemiDiscrete:
    p = cfg.params()
    return SemiDiscrete(assemble_operators(build_domain_mesh(p.h), p, cfg.config))


def _uniform_study(sd, cfg, levels):
    goal = GoalFunctional(cfg.functional)
    out = []
    for N in levels:
        part = uniform_partition(cfg.T, N, cfg.M, cfg.L)
        U, _ = solve_primal(sd, part)
        Z = solve_adjoint(sd, goal, U)
        out.append((part, goal_value(goal, sd, U), estimate(sd, goal, U, Z)))
    return out


def reference_value(sd, cfg) -> float:
    study = _uniform_study(sd, cfg, cfg.ref_levels)
    return extrapolate_reference([j for _, j, _ in study]).value


def run_experiment(cfg: RunConfig) -> RunReport:
    np.random.seed(cfg.seed)
    sd = _operators(cfg)
    report = RunReport(experiment=cfg.experiment, config=_config_dict(cfg))
    goal = GoalFunctional(cfg.functional)
    if cfg.experiment == "primal":
        part = uniform_partition(cfg.T, cfg.N, cfg.M, cfg.L)
        U, stats = solve_primal(sd, part, cfg.decoupler())
        report.summary = {"J": goal_value(goal, sd, U), "N": part.N, "M": part.M, "L": part.L}
        report.decoupler = [
            {"step": s.step, "method": s.method, "evaluations": s.evaluations,
             "final_residual": s.residual}
            for s in stats
        ]
        report.partitions = [to_text(part)]
    elif cfg.experiment == "decoupler-compare":
        part = uniform_partition(cfg.T, cfg.N, cfg.M, cfg.L)
        runs = {m: solve_primal(sd, part, cfg.decoupler(m)) for m in ("relaxation", "shooting")}
        for m, (_, stats) in runs.items():
            report.decoupler += [
                {"step": s.step, "method": m, "evaluations": s.evaluations,
                 "final_residual": s.residual}
                for s in stats
            ]
        report.decoupler.sort(key=lambda r: (r["step"], r["method"]))
        (Ur, _), (Us, _) = runs["relaxation"], runs["shooting"]
        report.summary = {
            "max_difference": float(
                max(np.abs(Ur.fluid - Us.fluid).max(), np.abs(Ur.solid - Us.solid).max())
            ),
            "mean_evaluations": {
                m: float(np.mean([s.evaluations for s in st])) for m, (_, st) in runs.items()
            },
        }
    elif cfg.experiment == "convergence":
        study = _uniform_study(sd, cfg, cfg.levels)
        j_ref = cfg.j_ref
        ex = None
        if j_ref is None:
            if len(study) < 3:
                raise ConfigError("convergence needs at least three levels or a j_ref")
            ex = extrapolate_reference([j for _, j, _ in study[-3:]])
            j_ref = ex.value
        for part, j, b in study:
            t = b.totals
            err = j_ref - j
            report.convergence.append(
                {"N": part.N, "M": part.M, "L": part.L, **t, "sigma": b.sigma, "J": j,
                 "Jref_minus_J": err, "eff": effectivity(b.sigma, j_ref, j) if err else None}
            )
        report.summary = {"J_ref": j_ref}
        if ex is not None:
            report.summary.update(order=ex.order, fallback=ex.fallback)
    elif cfg.experiment == "adaptive":
        j_ref = cfg.j_ref if cfg.j_ref is not None else reference_value(sd, cfg)
        part = uniform_partition(cfg.T, cfg.N, cfg.M, cfg.L)
        parts = []
        records, final = adaptive_loop(
            sd, part, goal, steps=cfg.steps, j_ref=j_ref, cfg=cfg.decoupler("monolithic"),
            on_step=lambda rec, p: parts.append(p),
        )
        parts.append(final)
        report.adaptive = [
            {k: v for k, v in asdict(r).items() if k != "seconds"} for r in records
        ]
        report.partitions = [to_text(p) for p in parts]
        report.summary = {"J_ref": j_ref, "final": {"N": final.N, "M": final.M, "L": final.L}}
    return report


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# -- output -------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_csv(path: Path, kind: str, columns, rows):
    buf = io.StringIO()
    buf.write(f"# multirate {kind} v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def render_time_mesh(p: TimePartition, width: float = 800.0) -> str:
    """SVG with three tick rows: fluid (top, blue), macro (middle), solid (bottom, red)."""
    margin, row = 20.0, 30.0
    span = width - 2 * margin
    rows = [("fluid", p.fluid, "#1f4fbf"), ("macro", p.macro, "#000000"), ("solid", p.solid, "#bf1f1f")]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{4 * row:g}" '
        f'viewBox="0 0 {width:g} {4 * row:g}">',
        f"<title>time mesh N={p.N} M={p.M} L={p.L}</title>",
    ]
    for r, (name, nodes, colour) in enumerate(rows, start=1):
        y = r * row
        out.append(
            f'<line class="axis {name}" x1="{margin:g}" y1="{y:g}" x2="{margin + span:g}" '
            f'y2="{y:g}" stroke="{colour}" stroke-width="1"/>'
        )
        for s in nodes:
            x = margin + span * float(s)
            out.append(
                f'<line class="tick {name}" x1="{x:.4f}" y1="{y - 6:g}" x2="{x:.4f}" '
                f'y2="{y + 6:g}" stroke="{colour}" stroke-width="1"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_reports(report: RunReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    payload = {
        "experiment": report.experiment,
        "config": report.config,
        "summary": report.summary,
        "convergence": report.convergence,
        "decoupler": report.decoupler,
        "adaptive": report.adaptive,
    }
    path = out / "report.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    written.append(path)
    if report.convergence:
        path = out / "convergence.csv"
        _write_csv(path, "convergence", CONVERGENCE_COLUMNS, report.convergence)
        written.append(path)
    if report.decoupler:
        path = out / "decoupler.csv"
        _write_csv(path, "decoupler", DECOUPLER_COLUMNS, report.decoupler)
        written.append(path)
    from .time_grid import from_text

    for k, text in enumerate(report.partitions):
        path = out / f"mesh_step{k}.svg"
        path.write_text(render_time_mesh(from_text(text)))
        written.append(path)
    return written


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="multirate", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="key = value configuration file")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--log-level", default="WARNING")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.command == "render-mesh":
        part = uniform_partition(cfg.T, cfg.N, cfg.M, cfg.L)
        report = RunReport(experiment="render-mesh", config=_config_dict(cfg),
                           partitions=[to_text(part)])
    else:
        cfg.experiment = COMMANDS[args.command]
        report = run_experiment(cfg)
    try:
        for path in emit_reports(report, args.out):
            print(path)
    except OSError as exc:
        print(f"error: cannot write reports: {exc}", file=sys.stderr)
        return 1
    return 0
