"""Goal functionals and the backward adjoint problem.

The adjoint is the exact transpose of the discrete forward problem: on macro
interval n it solves ``A_n^T Z_n = L_n - S_n^T C_{n+1}^T Z_{n+1}`` where
``S_n`` picks the last fluid and last solid unknown.  Values are piecewise
constant in time, one per micro interval, stored in the equation-row order
``[y, z]`` (multiplier of the psi rows, then of the phi rows).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupled_forms import PrimalTrajectory, SemiDiscrete, initial_block, macro_operator
from .time_grid import TimePartition

GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
KINDS = ("fluid", "solid")


@dataclass(frozen=True)
class GoalFunctional:
    """Gradient energy over the right half (x > 2) of one subdomain.

    fluid: int nu |grad v_f|^2 dt,  solid: int lambda |grad u_s|^2 dt.
    """

    kind: str = "fluid"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"goal kind must be one of {KINDS}, got {self.kind!r}")

    def matrix(self, sd: SemiDiscrete) -> sp.csr_matrix:
        """Symmetric Q with J = int U^T Q U dt on the owning subdomain's state."""
        o, p = sd.ops, sd.ops.params
        if self.kind == "fluid":
            zero = sp.csr_matrix((o.nf, o.nf))
            return sp.block_diag((zero, p.nu * o.Kr_f), format="csr")
        zero = sp.csr_matrix((o.ns, o.ns))
        return sp.block_diag((p.lam * o.Kr_s, zero), format="csr")


def _owned(J: GoalFunctional, U: PrimalTrajectory):
    return (U.fluid, U.partition.times("fluid")) if J.kind == "fluid" else (
        U.solid,
        U.partition.times("solid"),
    )


def goal_value(J: GoalFunctional, sd: SemiDiscrete, U: PrimalTrajectory) -> float:
    """Two-point Gauss rule per micro interval; exact for piecewise-linear U."""
    X, t = _owned(J, U)
    Q = J.matrix(sd)
    k = np.diff(t)
    total = 0.0
    for s in GAUSS:
        G = (1.0 - s) * X[:-1] + s * X[1:]
        total += float(np.sum(0.5 * k * np.einsum("ij,ij->i", G, (Q @ G.T).T)))
    return total


def goal_derivative_load(J: GoalFunctional, sd: SemiDiscrete, U: PrimalTrajectory):
    """Nodal loads (fluid, solid) with J'(U)(Xi) = sum_j load_j . Xi(t_j)."""
    X, t = _owned(J, U)
    Q = J.matrix(sd)
    k = np.diff(t)
    load = np.zeros_like(X)
    for s in GAUSS:
        G = (1.0 - s) * X[:-1] + s * X[1:]
        QG = (Q @ G.T).T * k[:, None]
        load[:-1] += (1.0 - s) * QG
        load[1:] += s * QG
    other = np.zeros_like(U.solid if J.kind == "fluid" else U.fluid)
    return (load, other) if J.kind == "fluid" else (other, load)


@dataclass
class AdjointTrajectory:
    partition: TimePartition
    fluid: np.ndarray  # (M, dim_f): value on each fluid micro interval
    solid: np.ndarray  # (L, dim_s)
    fluid0: np.ndarray  # extra value at t_0
    solid0: np.ndarray


def _macro_load(p, n, Lf, Ls):
    fi, si = p.macro_slices("fluid"), p.macro_slices("solid")
    return np.concatenate(
        [Lf[fi[n - 1] + 1 : fi[n] + 1].ravel(), Ls[si[n - 1] + 1 : si[n] + 1].ravel()]
    )


def _coupled_back(sd, system, Zn):
    """C_n^T Z_n split into the parts acting on x(t_{n-1}) and y(t_{n-1})."""
    v = system.C.T @ Zn
    return v[: sd.dim_f], v[sd.dim_f :]


def _block_relax_solve(sd, system, rhs, tol, tau, max_iter):
    """Solve A^T z = rhs by damped block Gauss-Seidel between fluid and solid.

    Stops when the solid update is below ``tol`` relative to its size.
    """
    A = system.A.tocsc()
    nf = system.M * system.dim_f
    Aff, Afs = A[:nf, :nf], A[:nf, nf:]
    Asf, Ass = A[nf:, :nf], A[nf:, nf:]
    lu_f = spla.splu(Aff.T.tocsc())
    lu_s = spla.splu(Ass.T.tocsc())
    zs = np.zeros(A.shape[0] - nf)
    for it in range(1, max_iter + 1):
        zf = lu_f.solve(rhs[:nf] - Asf.T @ zs)
        new = lu_s.solve(rhs[nf:] - Afs.T @ zf)
        r = np.max(np.abs(new - zs), initial=0.0)
        if r <= tol * max(np.max(np.abs(new), initial=0.0), np.finfo(float).tiny):
            zf = lu_f.solve(rhs[:nf] - Asf.T @ new)
            return np.concatenate([zf, new]), it
        zs = tau * new + (1.0 - tau) * zs
    raise RuntimeError(f"adjoint relaxation did not converge in {max_iter} iterations")


def solve_adjoint(
    sd: SemiDiscrete,
    J: GoalFunctional,
    U: PrimalTrajectory,
    method: str = "monolithic",
    tol: float = 1e-13,
    tau: float = 0.7,
    max_iter: int = 500,
    load=None,
) -> AdjointTrajectory:
    """Backward macro loop n = N..1 with the goal load of U.

    ``load`` overrides the nodal goal load as a (fluid, solid) pair.
    """
    if method not in ("monolithic", "relaxation"):
        raise ValueError(f"unknown adjoint method {method!r}")
    p = U.partition
    df, ds = sd.dim_f, sd.dim_s
    Lf, Ls = goal_derivative_load(J, sd, U) if load is None else load
    Zf = np.zeros((p.M, df))
    Zs = np.zeros((p.L, ds))
    fi, si = p.macro_slices("fluid"), p.macro_slices("solid")
    carry_f = np.zeros(df)
    carry_s = np.zeros(ds)
    for n in range(p.N, 0, -1):
        system, lu, _, _ = macro_operator(sd, p, n)
        rhs = _macro_load(p, n, Lf, Ls)
        nf = system.M * df
        rhs[nf - df : nf] -= carry_f
        rhs[-ds:] -= carry_s
        try:
            if method == "monolithic":
                Zn = lu.solve(rhs, trans="T")
            else:
                Zn, _ = _block_relax_solve(sd, system, rhs, tol, tau, max_iter)
        except RuntimeError as exc:
            raise RuntimeError(f"adjoint macro step {n}: {exc}") from exc
        zf, zs = system.split(Zn)
        Zf[fi[n - 1] : fi[n]] = zf
        Zs[si[n - 1] : si[n]] = zs
        carry_f, carry_s = _coupled_back(sd, system, Zn)
    E0 = initial_block(sd).tocsc()
    z0 = spla.spsolve(E0.T, np.concatenate([Lf[0] - carry_f, Ls[0] - carry_s]))
    return AdjointTrajectory(
        partition=p, fluid=Zf, solid=Zs, fluid0=z0[:df], solid0=z0[df:]
    )


def flatten_adjoint(Z: AdjointTrajectory) -> np.ndarray:
    """Adjoint values in the row order of ``coupled_forms.global_system``."""
    from .coupled_forms import flatten

    fluid = np.vstack([Z.fluid0, Z.fluid])
    solid = np.vstack([Z.solid0, Z.solid])
    return flatten(Z.partition, fluid, solid)
