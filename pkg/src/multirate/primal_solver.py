"""Forward macro loop with partitioned (relaxation, shooting) or monolithic coupling.

The interface unknown of a partitioned step is the solid trace (u_s, v_s) on
the free interface nodes at the macro node t_n.  One call of the decoupling
function runs the fluid sweep with that guess and then the solid sweep driven
by the new fluid state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .coupled_forms import (
    PrimalTrajectory,
    SemiDiscrete,
    fluid_macro_sweep,
    macro_operator,
    macro_source,
    macro_times,
    solid_macro_sweep,
)
from .time_grid import TimePartition

log = logging.getLogger(__name__)

METHODS = ("relaxation", "shooting", "monolithic")


@dataclass(frozen=True)
class DecouplerConfig:
    """Coupling strategy and tolerances.

    ``eps`` fixes the finite-difference scale of the Jacobian probes; None
    selects sqrt(machine eps) * (1 + |x|) / |d| per probe.  ``gmres_tol`` is
    the relative inner tolerance of every Newton step; ``adaptive_forcing``
    (off by default) tightens it to 0.1 * tol / |S| near convergence.
    """

    method: str = "relaxation"
    tau: float = 0.7
    tol: float = 1e-12
    max_iter: int = 200
    eps: float | None = None
    gmres_tol: float = 1e-3
    gmres_max: int | None = None
    adaptive_forcing: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        for name in ("tol", "gmres_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class IterationStats:
    """Per macro step counters.

    ``iterations`` counts applied updates of the interface trace (relaxation
    updates or Newton steps); ``evaluations`` counts decoupling-function calls,
    including the final one that confirms convergence.
    """

    step: int
    method: str
    iterations: int = 0
    evaluations: int = 0
    residual: float = 0.0
    history: list[float] = field(default_factory=list)
    newton: int = 0
    gmres: list[int] = field(default_factory=list)


class DecouplingError(RuntimeError):
    """Raised when a partitioned iteration fails; carries the residual history."""

    def __init__(self, message: str, step: int, history: list[float]):
        super().__init__(f"macro step {step}: {message}")
        self.step = step
        self.history = list(history)


def decouple_step_function(sd: SemiDiscrete, p: TimePartition, n: int, guess, x0, y0):
    """One evaluation: fluid sweep with the guessed solid trace, then the solid sweep."""
    tf, ts = macro_times(p, n)
    fluid = fluid_macro_sweep(sd, tf, x0, sd.trace(y0), guess)
    solid = solid_macro_sweep(sd, ts, y0, x0, fluid[-1])
    return fluid, solid


def monolithic_macro_solve(sd: SemiDiscrete, p: TimePartition, n: int, x0, y0):
    """Direct solve of all micro unknowns of macro interval n at once."""
    system, lu, tf, ts = macro_operator(sd, p, n)
    rhs = macro_source(sd, tf, ts) - system.C @ np.concatenate([x0, y0])
    X = lu.solve(rhs)
    if not np.all(np.isfinite(X)):
        raise np.linalg.LinAlgError(f"macro step {n}: singular coupled system")
    fluid, solid = system.split(X)
    return np.vstack([x0, fluid]), np.vstack([y0, solid])


def relax_macro_step(sd, p, n, x0, y0, cfg: DecouplerConfig):
    stats = IterationStats(step=n, method="relaxation")
    x = sd.trace(y0)
    for _ in range(cfg.max_iter):
        fluid, solid = decouple_step_function(sd, p, n, x, x0, y0)
        stats.evaluations += 1
        new = sd.trace(solid[-1])
        r = float(np.max(np.abs(new - x), initial=0.0))
        stats.history.append(r)
        if not np.isfinite(r):
            raise DecouplingError("relaxation produced non-finite values", n, stats.history)
        if r <= cfg.tol:
            stats.residual = r
            return fluid, solid, stats
        x = cfg.tau * new + (1.0 - cfg.tau) * x
        stats.iterations += 1
    raise DecouplingError(
        f"relaxation did not reach tol {cfg.tol} in {cfg.max_iter} iterations",
        n,
        stats.history,
    )


def shoot_macro_step(sd, p, n, x0, y0, cfg: DecouplerConfig):
    """Inexact Newton on S(x) = x - D(x) with matrix-free GMRES."""
    stats = IterationStats(step=n, method="shooting")
    dim = sd.dim_trace

    def defect(x):
        fluid, solid = decouple_step_function(sd, p, n, x, x0, y0)
        stats.evaluations += 1
        return x - sd.trace(solid[-1]), fluid, solid

    x = sd.trace(y0)
    S, fluid, solid = defect(x)
    r = float(np.max(np.abs(S), initial=0.0))
    stats.history.append(r)
    sqrt_eps = np.sqrt(np.finfo(float).eps)
    while r > cfg.tol:
        if stats.newton >= cfg.max_iter:
            raise DecouplingError(
                f"Newton did not reach tol {cfg.tol} in {cfg.max_iter} iterations",
                n,
                stats.history,
            )
        base, xn = S, x.copy()
        scale = 1.0 + np.linalg.norm(xn)

        def jac(d, base=base, xn=xn, scale=scale):
            dn = np.linalg.norm(d)
            if dn == 0.0:
                return np.zeros_like(d)
            eps = cfg.eps if cfg.eps is not None else sqrt_eps * scale / dn
            return (defect(xn + eps * d)[0] - base) / eps

        op = spla.LinearOperator((dim, dim), matvec=jac, dtype=float)
        rtol = cfg.gmres_tol
        if cfg.adaptive_forcing:
            rtol = min(rtol, 0.1 * cfg.tol / max(np.linalg.norm(S), 1e-300))
        count = [0]

        def cb(_, count=count):
            count[0] += 1

        d, info = spla.gmres(
            op,
            -S,
            rtol=rtol,
            atol=0.0,
            restart=cfg.gmres_max or dim,
            maxiter=1,
            callback=cb,
            callback_type="pr_norm",
        )
        if info < 0 or not np.all(np.isfinite(d)):
            raise DecouplingError("GMRES breakdown", n, stats.history)
        stats.gmres.append(count[0])
        stats.newton += 1
        x = xn + d
        S, fluid, solid = defect(x)
        r = float(np.max(np.abs(S), initial=0.0))
        stats.history.append(r)
        stats.iterations += 1
        if not np.isfinite(r):
            raise DecouplingError("Newton produced non-finite values", n, stats.history)
    stats.residual = r
    return fluid, solid, stats


def solve_primal(sd: SemiDiscrete, p: TimePartition, cfg: DecouplerConfig | None = None):
    """March macro intervals 1..N from zero initial data.

    Returns the trajectory and one IterationStats per macro step (monolithic
    steps report a single evaluation-free iteration).
    """
    cfg = cfg or DecouplerConfig(method="monolithic")
    fluid = np.zeros((p.M + 1, sd.dim_f))
    solid = np.zeros((p.L + 1, sd.dim_s))
    fi, si = p.macro_slices("fluid"), p.macro_slices("solid")
    stats = []
    for n in range(1, p.N + 1):
        x0, y0 = fluid[fi[n - 1]], solid[si[n - 1]]
        if cfg.method == "monolithic":
            Xf, Xs = monolithic_macro_solve(sd, p, n, x0, y0)
            st = IterationStats(step=n, method="monolithic", iterations=1)
        elif cfg.method == "relaxation":
            Xf, Xs, st = relax_macro_step(sd, p, n, x0, y0, cfg)
        else:
            Xf, Xs, st = shoot_macro_step(sd, p, n, x0, y0, cfg)
        fluid[fi[n - 1] : fi[n] + 1] = Xf
        solid[si[n - 1] : si[n] + 1] = Xs
        stats.append(st)
        log.debug("macro step %d: %s, %d evaluations", n, st.method, st.evaluations)
    return PrimalTrajectory(partition=p, fluid=fluid, solid=solid), stats
