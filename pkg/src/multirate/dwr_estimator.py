"""Dual-weighted-residual indicators on a multirate partition.

Both residuals are evaluated with the time-continuous form in which the
other subdomain enters through its macro-linear interpolant.  On a micro
interval the trial function may carry a quadratic bubble and the test
function may be linear, so every integrand is a polynomial of degree <= 3
and the two-point Gauss rule integrates it exactly.  The source g2 is a
window indicator; its pairing with a linear test function is integrated
exactly over the active window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adjoint_solver import GAUSS, AdjointTrajectory, GoalFunctional, goal_derivative_load
from .coupled_forms import PrimalTrajectory, SemiDiscrete, source_windows
from .time_grid import TimePartition


# -- reconstructions ---------------------------------------------------------


def _neighbours(i: int, K: int) -> tuple[int, int]:
    if K == 1:
        return 0, 0
    if K == 2:
        return 0, 1
    if i == 0:
        return 1, 2
    if i == K - 1:
        return K - 3, K - 2
    return i - 1, i + 1


def reconstruct_adjoint(values: np.ndarray, times: np.ndarray):
    """Linear-in-time Z^(1) from interval values via neighbouring midpoints.

    Interval i uses the line through the midpoints of intervals i-1 and i+1;
    the first and last intervals extrapolate from their two nearest other
    intervals.  Returns the values of Z^(1) at the left and right end of
    every interval, each shaped like ``values``.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    K = len(values)
    mid = 0.5 * (times[:-1] + times[1:])
    left = np.empty_like(values)
    right = np.empty_like(values)
    for i in range(K):
        a, b = _neighbours(i, K)
        if a == b:
            left[i] = right[i] = values[i]
            continue
        slope = (values[b] - values[a]) / (mid[b] - mid[a])
        left[i] = values[a] + (times[i] - mid[a]) * slope
        right[i] = values[a] + (times[i + 1] - mid[a]) * slope
    return left, right


def _lagrange_mid(t3, X3, tm):
    t0, t1, t2 = t3
    l0 = (tm - t1) * (tm - t2) / ((t0 - t1) * (t0 - t2))
    l1 = (tm - t0) * (tm - t2) / ((t1 - t0) * (t1 - t2))
    l2 = (tm - t0) * (tm - t1) / ((t2 - t0) * (t2 - t1))
    return l0 * X3[0] + l1 * X3[1] + l2 * X3[2]


def reconstruct_primal(X: np.ndarray, times: np.ndarray, patches) -> np.ndarray:
    """Patchwise quadratic U^(2), returned as bubble amplitudes.

    On interval i, U^(2) - U = c_i * 4 s (1 - s) with s the local coordinate;
    c_i is the gap at the interval midpoint.  An unpaired interval borrows a
    neighbour to form its three-node stencil.
    """
    X = np.asarray(X, dtype=float)
    times = np.asarray(times, dtype=float)
    K = len(times) - 1
    c = np.zeros((K,) + X.shape[1:])
    if not patches and K > 0:
        raise ValueError("missing patch structure")
    for patch in patches:
        if len(patch) == 2:
            first = patch[0]
        elif K < 2:
            continue
        else:
            first = patch[0] - 1 if patch[0] > 0 else patch[0]
        idx = [first, first + 1, first + 2]
        t3 = times[idx]
        for i in patch:
            tm = 0.5 * (times[i] + times[i + 1])
            c[i] = _lagrange_mid(t3, X[idx], tm) - 0.5 * (X[i] + X[i + 1])
    return c


def evaluate_primal_reconstruction(X, times, c, t: float) -> np.ndarray:
    """Value of the piecewise-linear-plus-bubble function at time t."""
    i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    s = (t - times[i]) / (times[i + 1] - times[i])
    return (1 - s) * X[i] + s * X[i + 1] + c[i] * 4.0 * s * (1.0 - s)


# -- forms -------------------------------------------------------------------


def _other_at(p: TimePartition, which: str, other_nodes: np.ndarray, t: np.ndarray):
    """Macro-linear interpolant of the other subdomain at times t (one per interval)."""
    mac = p.interval_macro(which)
    other = "solid" if which == "fluid" else "fluid"
    idx = p.macro_slices(other)
    tm = p.macro_times()
    t0, t1 = tm[mac - 1], tm[mac]
    w = ((t - t0) / (t1 - t0))[:, None]
    return (1.0 - w) * other_nodes[idx[mac - 1]] + w * other_nodes[idx[mac]]


def _side(sd: SemiDiscrete, which: str):
    if which == "fluid":
        return sd.E_f, sd.A_f, sd.B_f, sd.G_f
    return sd.E_s, sd.A_s, sd.B_s, sd.G_s


def form_action(sd, p, which, X_own, X_other, W0, W1, bubble=None) -> np.ndarray:
    """Per-interval contributions of B(X)(W) for the rows of one subdomain.

    X is nodal (plus optional bubbles) on the own micro mesh; the other
    subdomain's nodal states enter only through the macro interpolant.  W is
    linear on each interval with end values W0, W1.
    """
    E, A, B, _ = _side(sd, which)
    t = p.times(which)
    k = np.diff(t)
    dX = X_own[1:] - X_own[:-1]
    out = np.zeros(len(k))
    for s in GAUSS:
        tg = t[:-1] + s * k
        Xg = (1.0 - s) * X_own[:-1] + s * X_own[1:]
        dXg = dX / k[:, None]
        if bubble is not None:
            Xg = Xg + 4.0 * s * (1.0 - s) * bubble
            dXg = dXg + (4.0 * (1.0 - 2.0 * s) / k)[:, None] * bubble
        Og = _other_at(p, which, X_other, tg)
        R = (E @ dXg.T + A @ Xg.T + B @ Og.T).T
        Wg = (1.0 - s) * W0 + s * W1
        out += 0.5 * k * np.einsum("ij,ij->i", Wg, R)
    return out


def source_action(sd, p, which, W0, W1) -> np.ndarray:
    """Per-interval F(W): exact integral of g2(t) (g1, W(t))."""
    _, _, _, G = _side(sd, which)
    t = p.times(which)
    out = np.zeros(len(t) - 1)
    if not np.any(G):
        return out
    g0, g1 = W0 @ G, W1 @ G
    for i in range(len(t) - 1):
        a, b = t[i], t[i + 1]
        for lo, hi in source_windows(a, b):
            s = 0.5 * (lo + hi - 2 * a) / (b - a)
            out[i] += (hi - lo) * ((1 - s) * g0[i] + s * g1[i])
    return out


def goal_derivative_action(sd, J: GoalFunctional, U: PrimalTrajectory, which, Xi, bubble=None):
    """Per-interval J'(U)(Xi) on the given subdomain (zero off the goal's owner)."""
    t = U.partition.times(which)
    k = np.diff(t)
    if which != J.kind:
        return np.zeros(len(k))
    Q = J.matrix(sd)
    X = U.fluid if which == "fluid" else U.solid
    out = np.zeros(len(k))
    for s in GAUSS:
        Ug = (1.0 - s) * X[:-1] + s * X[1:]
        Xg = (1.0 - s) * Xi[:-1] + s * Xi[1:]
        if bubble is not None:
            Xg = Xg + 4.0 * s * (1.0 - s) * bubble
        out += 0.5 * k * 2.0 * np.einsum("ij,ij->i", (Q @ Ug.T).T, Xg)
    return out


def primal_residual(sd, U: PrimalTrajectory, weights) -> dict:
    """rho(U)(W) = F(W) - B(U)(W) per interval; ``weights`` maps subdomain -> (W0, W1)."""
    p = U.partition
    out = {}
    for which, other in (("fluid", U.solid), ("solid", U.fluid)):
        own = U.fluid if which == "fluid" else U.solid
        W0, W1 = weights[which]
        out[which] = source_action(sd, p, which, W0, W1) - form_action(
            sd, p, which, own, other, W0, W1
        )
    return out


def adjoint_residual(sd, J, U, Z: AdjointTrajectory, xi: dict, bubbles: dict | None = None):
    """rho*(Z)(Xi) = J'(U)(Xi) - B(Xi)(Z) per interval of the trial function.

    ``xi`` maps subdomain -> nodal values of Xi (with Xi(t_0) = 0, as the
    adjoint's initial value is not paired), ``bubbles`` optional amplitudes.
    The coupling of Xi into the other subdomain's rows is attributed to the
    interval of the other subdomain that holds the row.  Bubble coupling
    vanishes because bubbles are zero at macro nodes.
    """
    p = U.partition
    bubbles = bubbles or {}
    res = {}
    for which in ("fluid", "solid"):
        res[which] = goal_derivative_action(sd, J, U, which, xi[which], bubbles.get(which))
    zf, zs = Z.fluid, Z.solid
    # own-row terms with the other subdomain switched off
    zero_s = np.zeros((p.L + 1, sd.dim_s))
    zero_f = np.zeros((p.M + 1, sd.dim_f))
    res["fluid"] -= form_action(
        sd, p, "fluid", xi["fluid"], zero_s, zf, zf, bubbles.get("fluid")
    )
    res["solid"] -= form_action(
        sd, p, "solid", xi["solid"], zero_f, zs, zs, bubbles.get("solid")
    )
    # cross terms: Xi_s seen by fluid rows, Xi_f seen by solid rows
    res["solid"] -= _cross(sd, p, "fluid", xi["solid"], zf)
    res["fluid"] -= _cross(sd, p, "solid", xi["fluid"], zs)
    return res


def _cross(sd, p, rows, X_other, W):
    """Sum over the rows' intervals of the coupling of X_other, reported per other interval.

    The pairing of the interpolated other state with the rows' test values
    splits into contributions of the two macro nodes; each macro node's share
    is assigned to the other subdomain's interval ending (or starting) there.
    """
    E, A, B, _ = _side(sd, rows)
    t = p.times(rows)
    k = np.diff(t)
    other = "solid" if rows == "fluid" else "fluid"
    mac = p.interval_macro(rows)
    tm = p.macro_times()
    idx = p.macro_slices(other)
    K_other = len(p.nodes(other)) - 1
    out = np.zeros(K_other)
    for s in GAUSS:
        tg = t[:-1] + s * k
        w = (tg - tm[mac - 1]) / (tm[mac] - tm[mac - 1])
        left = np.einsum("ij,ij->i", W, (B @ X_other[idx[mac - 1]].T).T)
        right = np.einsum("ij,ij->i", W, (B @ X_other[idx[mac]].T).T)
        np.add.at(out, np.maximum(idx[mac - 1] - 1, 0), 0.5 * k * (1.0 - w) * left)
        np.add.at(out, idx[mac] - 1, 0.5 * k * w * right)
    return out


# -- indicators ---------------------------------------------------------------


@dataclass
class ErrorBreakdown:
    theta_f: np.ndarray
    theta_s: np.ndarray
    vartheta_f: np.ndarray
    vartheta_s: np.ndarray

    @property
    def totals(self) -> dict:
        return {
            "theta_f": float(np.sum(self.theta_f)),
            "theta_s": float(np.sum(self.theta_s)),
            "vartheta_f": float(np.sum(self.vartheta_f)),
            "vartheta_s": float(np.sum(self.vartheta_s)),
        }

    @property
    def sigma(self) -> float:
        return total_estimate(self)

    @property
    def sigma_bar(self) -> float:
        return indicator_average(self)

    def fluid_share(self) -> float:
        return float(np.sum(np.abs(self.theta_f)) + np.sum(np.abs(self.vartheta_f)))

    def solid_share(self) -> float:
        return float(np.sum(np.abs(self.theta_s)) + np.sum(np.abs(self.vartheta_s)))


def primal_indicators(sd, U: PrimalTrajectory, Z: AdjointTrajectory):
    """theta = 1/2 rho(U)(Z^(1) - Z) per micro interval, fluid and solid."""
    p = U.partition
    weights = {}
    for which, vals in (("fluid", Z.fluid), ("solid", Z.solid)):
        left, right = reconstruct_adjoint(vals, p.times(which))
        weights[which] = (left - vals, right - vals)
    res = primal_residual(sd, U, weights)
    return 0.5 * res["fluid"], 0.5 * res["solid"]


def adjoint_indicators(sd, J: GoalFunctional, U: PrimalTrajectory, Z: AdjointTrajectory):
    """vartheta = 1/2 rho*(Z)(U^(2) - U) per micro interval, fluid and solid."""
    p = U.partition
    bubbles = {
        "fluid": reconstruct_primal(U.fluid, p.times("fluid"), p.fluid_patches),
        "solid": reconstruct_primal(U.solid, p.times("solid"), p.solid_patches),
    }
    xi = {"fluid": np.zeros_like(U.fluid), "solid": np.zeros_like(U.solid)}
    res = adjoint_residual(sd, J, U, Z, xi, bubbles)
    return 0.5 * res["fluid"], 0.5 * res["solid"]


def estimate(sd, J, U, Z) -> ErrorBreakdown:
    tf, ts = primal_indicators(sd, U, Z)
    vf, vs = adjoint_indicators(sd, J, U, Z)
    return ErrorBreakdown(theta_f=tf, theta_s=ts, vartheta_f=vf, vartheta_s=vs)


def total_estimate(b: ErrorBreakdown) -> float:
    t = b.totals
    return t["theta_f"] + t["theta_s"] + t["vartheta_f"] + t["vartheta_s"]


def indicator_average(b: ErrorBreakdown) -> float:
    """sigma_bar = (1/2M) sum_f (|theta|+|vartheta|) + (1/2L) sum_s (|theta|+|vartheta|)."""
    M, L = len(b.theta_f), len(b.theta_s)
    return b.fluid_share() / (2 * M) + b.solid_share() / (2 * L)


@dataclass(frozen=True)
class Extrapolation:
    value: float
    order: float
    fallback: bool


def extrapolate_reference(values) -> Extrapolation:
    """Fit J_k = J + C k^p through three values on meshes with step ratio 2.

    ``values`` runs coarse to fine.  Non-monotone or non-contracting
    differences fall back to Richardson extrapolation with p = 2.
    """
    j1, j2, j3 = (float(v) for v in values)
    d1, d2 = j2 - j1, j3 - j2
    if d1 != 0.0 and d1 * d2 > 0 and abs(d2) < abs(d1):
        q = d2 / d1
        return Extrapolation(value=j3 + d2 * q / (1.0 - q), order=-math.log2(q), fallback=False)
    return Extrapolation(value=j3 + d2 / 3.0, order=2.0, fallback=True)


def effectivity(sigma: float, j_ref: float, j_k: float) -> float:
    err = j_ref - j_k
    if err == 0.0:
        raise ZeroDivisionError("effectivity undefined: reference equals computed goal value")
    return sigma / err
