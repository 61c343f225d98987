"""Solve, estimate, mark and refine."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint_solver import GoalFunctional, goal_value, solve_adjoint
from .coupled_forms import SemiDiscrete
from .dwr_estimator import ErrorBreakdown, estimate
from .primal_solver import DecouplerConfig, solve_primal
from .time_grid import MarkSet, TimePartition, refine

log = logging.getLogger(__name__)


def mark(b: ErrorBreakdown) -> MarkSet:
    """Flag intervals whose |theta| or |vartheta| reaches sigma_bar (non-strict)."""
    bar = b.sigma_bar
    if bar == 0.0:
        return MarkSet()
    fluid = np.flatnonzero((np.abs(b.theta_f) >= bar) | (np.abs(b.vartheta_f) >= bar))
    solid = np.flatnonzero((np.abs(b.theta_s) >= bar) | (np.abs(b.vartheta_s) >= bar))
    return MarkSet(fluid=frozenset(fluid.tolist()), solid=frozenset(solid.tolist()))


@dataclass
class AdaptiveRecord:
    step: int
    N: int
    M: int
    L: int
    J: float
    sigma: float
    sigma_bar: float
    eff: float | None
    error: float | None
    marked_fluid: int
    marked_solid: int
    seconds: float
    totals: dict = field(default_factory=dict)


class AdaptiveError(RuntimeError):
    def __init__(self, message, step, records):
        super().__init__(f"adaptive step {step}: {message}")
        self.step = step
        self.records = records


def adaptive_loop(
    sd: SemiDiscrete,
    partition: TimePartition,
    goal: GoalFunctional,
    steps: int = 4,
    j_ref: float | None = None,
    cfg: DecouplerConfig | None = None,
    on_step=None,
):
    """Run ``steps`` rounds of solve -> estimate -> mark -> refine.

    Each record describes the partition that was solved; the returned
    partition is the one produced by the last refinement.  ``on_step`` is
    called with (record, partition) after every round.
    """
    records: list[AdaptiveRecord] = []
    p = partition
    for step in range(1, steps + 1):
        t0 = time.perf_counter()
        try:
            U, _ = solve_primal(sd, p, cfg)
            Z = solve_adjoint(sd, goal, U)
            b = estimate(sd, goal, U, Z)
            marks = mark(b)
            new = refine(p, marks)
        except Exception as exc:  # report stage failure with context
            raise AdaptiveError(str(exc), step, records) from exc
        j = goal_value(goal, sd, U)
        err = None if j_ref is None else j_ref - j
        eff = None if not err else b.sigma / err
        rec = AdaptiveRecord(
            step=step,
            N=p.N,
            M=p.M,
            L=p.L,
            J=j,
            sigma=b.sigma,
            sigma_bar=b.sigma_bar,
            eff=eff,
            error=err,
            marked_fluid=len(marks.fluid),
            marked_solid=len(marks.solid),
            seconds=time.perf_counter() - t0,
            totals=b.totals,
        )
        records.append(rec)
        log.info("adaptive step %d: N=%d M=%d L=%d sigma=%.3e", step, p.N, p.M, p.L, b.sigma)
        if on_step is not None:
            on_step(rec, p)
        p = new
    return records, p
