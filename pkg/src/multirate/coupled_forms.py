"""Semi-discrete forms: block operators, interpolation, micro-step sweeps.

State vectors are stacked as ``[u, v]`` on the free nodes of a subdomain.
Equation rows are stacked the same way: first the rows tested with the
displacement test function psi, then those tested with phi.

Fluid micro step m on a macro interval, step size k::

    E_f (x^m - x^{m-1}) + k/2 [A_f x^m + B_fs s(t^m) + A_f x^{m-1} + B_fs s(t^{m-1})]
        = (int_{I^m} g2 dt) G_f

with ``s(t)`` the solid trace interpolated linearly between the macro
endpoints.  The solid step mirrors it with the fluid state interpolated the
same way.  The printed solid scheme weights its second a_s term by a fluid
step size; the solid step size is used here, which is the only reading that
keeps the solid sum a trapezoidal rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .space_disc import OperatorSet
from .time_grid import TimePartition

WINDOW = 0.1


def source_time_integral(a: float, b: float) -> float:
    """Exact integral of the indicator of [floor(t), floor(t) + 0.1) over [a, b]."""
    if b < a:
        raise ValueError(f"reversed bounds: a={a} > b={b}")
    total = 0.0
    for j in range(math.floor(a), math.floor(b) + 1):
        lo, hi = max(a, j), min(b, j + WINDOW)
        if hi > lo:
            total += hi - lo
    return total


def source_windows(a: float, b: float) -> list[tuple[float, float]]:
    """Sub-intervals of [a, b] on which the time source equals one."""
    out = []
    for j in range(math.floor(a), math.floor(b) + 1):
        lo, hi = max(a, j), min(b, j + WINDOW)
        if hi > lo:
            out.append((lo, hi))
    return out


def _interp(t, t0, t1, U0, U1):
    if not t0 <= t <= t1:
        raise ValueError(f"t={t} outside macro interval [{t0}, {t1}]")
    k = t1 - t0
    return ((t1 - t) / k) * np.asarray(U0) + ((t - t0) / k) * np.asarray(U1)


def interp_fluid(t, t0, t1, Us0, Us1):
    """Solid part of the fluid-side interpolation: linear in time on [t0, t1]."""
    return _interp(t, t0, t1, Us0, Us1)


def interp_solid(t, t0, t1, Uf0, Uf1):
    """Fluid part of the solid-side interpolation: linear in time on [t0, t1]."""
    return _interp(t, t0, t1, Uf0, Uf1)


@dataclass
class SemiDiscrete:
    """Block operators of the two micro-step systems, with cached factorisations."""

    ops: OperatorSet
    E_f: sp.csr_matrix = field(init=False)
    A_f: sp.csr_matrix = field(init=False)
    B_trace: sp.csr_matrix = field(init=False)
    E_s: sp.csr_matrix = field(init=False)
    A_s: sp.csr_matrix = field(init=False)
    B_s: sp.csr_matrix = field(init=False)
    R_s: sp.csr_matrix = field(init=False)
    G_f: np.ndarray = field(init=False)
    G_s: np.ndarray = field(init=False)

    def __post_init__(self):
        o, p = self.ops, self.ops.params
        g = o.penalty
        nf, ns = o.nf, o.ns
        ntr = len(o.solid_trace)
        self.E_f = sp.block_diag((sp.csr_matrix((nf, nf)), o.M_f), format="csr")
        self.A_f = sp.block_diag(
            (
                o.K_f - o.N_f + g * o.P_f,
                p.nu * o.K_f + o.C_f - p.nu * o.N_f + g * o.P_f,
            ),
            format="csr",
        )
        # solid trace (u, v) on free interface nodes -> fluid rows
        self.B_trace = sp.block_diag((-g * o.P_fs, -g * o.P_fs), format="csr")
        self.E_s = sp.block_diag((o.M_s, o.M_s), format="csr")
        self.A_s = sp.bmat(
            [[None, -o.M_s], [p.lam * o.K_s, p.delta * (o.K_s - o.N_s)]], format="csr"
        )
        zero_sf = sp.csr_matrix((ns, nf))
        self.B_s = sp.bmat([[zero_sf, None], [None, p.nu * o.N_sf]], format="csr")
        sel = sp.csr_matrix(
            (np.ones(ntr), (np.arange(ntr), o.solid_trace)), shape=(ntr, ns)
        )
        self.R_s = sp.block_diag((sel, sel), format="csr")
        self.G_f = np.concatenate([np.zeros(nf), o.load_f])
        self.G_s = np.concatenate([np.zeros(ns), o.load_s])
        self._lu: dict = {}
        self._macro: dict = {}

    # sizes
    @property
    def dim_f(self) -> int:
        return 2 * self.ops.nf

    @property
    def dim_s(self) -> int:
        return 2 * self.ops.ns

    @property
    def dim_trace(self) -> int:
        return self.R_s.shape[0]

    @property
    def B_f(self) -> sp.csr_matrix:
        """Solid state -> fluid rows."""
        return (self.B_trace @ self.R_s).tocsr()

    def trace(self, y: np.ndarray) -> np.ndarray:
        return self.R_s @ y

    def _factor(self, which: str, k: float):
        key = (which, k)
        lu = self._lu.get(key)
        if lu is None:
            E, A = (self.E_f, self.A_f) if which == "f" else (self.E_s, self.A_s)
            lu = spla.splu((E + 0.5 * k * A).tocsc())
            self._lu[key] = lu
        return lu

    def step_matrix(self, which: str, k: float) -> sp.csr_matrix:
        E, A = (self.E_f, self.A_f) if which == "f" else (self.E_s, self.A_s)
        return (E + 0.5 * k * A).tocsr()


def fluid_macro_sweep(sd: SemiDiscrete, times, x0, trace0, trace1) -> np.ndarray:
    """March the fluid micro steps of one macro interval.

    ``times`` are the fluid micro nodes t^0..t^M (t^0, t^M the macro
    endpoints); ``trace0``/``trace1`` the solid interface traces at the macro
    endpoints.  Returns states at all micro nodes, row 0 being ``x0``.
    """
    times = np.asarray(times, dtype=float)
    t0, t1 = times[0], times[-1]
    out = np.empty((len(times), sd.dim_f))
    out[0] = x0
    s_prev = sd.B_trace @ np.asarray(trace0)
    s_next = sd.B_trace @ np.asarray(trace1)
    for m in range(1, len(times)):
        a, b = times[m - 1], times[m]
        k = b - a
        w = ((b - t0) + (a - t0)) / (t1 - t0)
        coupling = (2.0 - w) * s_prev + w * s_next
        rhs = sd.E_f @ out[m - 1] - 0.5 * k * (sd.A_f @ out[m - 1] + coupling)
        rhs += source_time_integral(a, b) * sd.G_f
        out[m] = sd._factor("f", k).solve(rhs)
    return out


def solid_macro_sweep(sd: SemiDiscrete, times, y0, xf0, xf1) -> np.ndarray:
    """March the solid micro steps of one macro interval.

    ``xf0``/``xf1`` are the full fluid states at the macro endpoints; the
    solid only sees them through the fluid normal flux on the interface.
    """
    times = np.asarray(times, dtype=float)
    t0, t1 = times[0], times[-1]
    out = np.empty((len(times), sd.dim_s))
    out[0] = y0
    q_prev = sd.B_s @ np.asarray(xf0)
    q_next = sd.B_s @ np.asarray(xf1)
    for l in range(1, len(times)):
        a, b = times[l - 1], times[l]
        k = b - a
        w = ((b - t0) + (a - t0)) / (t1 - t0)
        coupling = (2.0 - w) * q_prev + w * q_next
        rhs = sd.E_s @ out[l - 1] - 0.5 * k * (sd.A_s @ out[l - 1] + coupling)
        rhs += source_time_integral(a, b) * sd.G_s
        out[l] = sd._factor("s", k).solve(rhs)
    return out


@dataclass(frozen=True)
class MacroSystem:
    """All micro steps of one macro interval as a single linear system.

    Unknowns are the fluid states at t_f^1..t_f^M followed by the solid
    states at t_s^1..t_s^L.  ``C`` maps the state at the previous macro node
    ``[x(t_{n-1}), y(t_{n-1})]`` into the equations, so the system reads
    ``A X = F - C P`` with F from ``macro_source``.
    """

    A: sp.csr_matrix
    C: sp.csr_matrix
    M: int
    L: int
    dim_f: int
    dim_s: int

    def split(self, X):
        nf = self.M * self.dim_f
        return X[:nf].reshape(self.M, self.dim_f), X[nf:].reshape(self.L, self.dim_s)


def macro_system(sd: SemiDiscrete, tf, ts) -> MacroSystem:
    tf = np.asarray(tf, dtype=float)
    ts = np.asarray(ts, dtype=float)
    t0, t1 = tf[0], tf[-1]
    K = t1 - t0
    M, L = len(tf) - 1, len(ts) - 1
    df, ds = sd.dim_f, sd.dim_s
    Bf = sd.B_f  # solid state -> fluid rows
    rows = [[None] * (M + L) for _ in range(M + L)]
    prev = [[None, None] for _ in range(M + L)]

    def add(block, i, j, mat):
        block[i][j] = mat if block[i][j] is None else block[i][j] + mat

    for m in range(1, M + 1):
        a, b = tf[m - 1], tf[m]
        k = b - a
        w = ((b - t0) + (a - t0)) / K
        i = m - 1
        add(rows, i, i, sd.E_f + 0.5 * k * sd.A_f)
        back = -(sd.E_f - 0.5 * k * sd.A_f)
        if m == 1:
            prev[i][0] = back
        else:
            add(rows, i, i - 1, back)
        add(rows, i, M + L - 1, 0.5 * k * w * Bf)
        prev[i][1] = 0.5 * k * (2.0 - w) * Bf
    for l in range(1, L + 1):
        a, b = ts[l - 1], ts[l]
        k = b - a
        w = ((b - t0) + (a - t0)) / K
        i = M + l - 1
        add(rows, i, i, sd.E_s + 0.5 * k * sd.A_s)
        back = -(sd.E_s - 0.5 * k * sd.A_s)
        if l == 1:
            prev[i][1] = back
        else:
            add(rows, i, i - 1, back)
        add(rows, i, M - 1, 0.5 * k * w * sd.B_s)
        prev[i][0] = 0.5 * k * (2.0 - w) * sd.B_s

    sizes = [df] * M + [ds] * L
    for i in range(M + L):
        if rows[i][i] is None:
            rows[i][i] = sp.csr_matrix((sizes[i], sizes[i]))
        for j, width in enumerate((df, ds)):
            if prev[i][j] is None:
                prev[i][j] = sp.csr_matrix((sizes[i], width))
    A = sp.bmat(rows, format="csr")
    C = sp.bmat(prev, format="csr")
    return MacroSystem(A=A, C=C, M=M, L=L, dim_f=df, dim_s=ds)


def macro_source(sd: SemiDiscrete, tf, ts) -> np.ndarray:
    """Right-hand side F of the macro system (fluid block, then solid block)."""
    parts = [source_time_integral(a, b) * sd.G_f for a, b in zip(tf[:-1], tf[1:])]
    parts += [source_time_integral(a, b) * sd.G_s for a, b in zip(ts[:-1], ts[1:])]
    return np.concatenate(parts)


def macro_key(p: TimePartition, n: int):
    """Hashable description of the micro layout of macro interval n."""
    t0 = p.macro[n - 1]
    return (
        p.T,
        tuple(s - t0 for s in p.micro_nodes("fluid", n)),
        tuple(s - t0 for s in p.micro_nodes("solid", n)),
    )


def macro_times(p: TimePartition, n: int):
    tf = np.array([p.T * float(s) for s in p.micro_nodes("fluid", n)])
    ts = np.array([p.T * float(s) for s in p.micro_nodes("solid", n)])
    return tf, ts


@dataclass
class PrimalTrajectory:
    """Nodal states of both subdomains at every micro node (piecewise linear in time)."""

    partition: TimePartition
    fluid: np.ndarray
    solid: np.ndarray

    def fluid_at_macro(self, n: int) -> np.ndarray:
        return self.fluid[self.partition.macro_slices("fluid")[n]]

    def solid_at_macro(self, n: int) -> np.ndarray:
        return self.solid[self.partition.macro_slices("solid")[n]]

    def state_at_macro(self, n: int) -> np.ndarray:
        return np.concatenate([self.fluid_at_macro(n), self.solid_at_macro(n)])


def macro_operator(sd: SemiDiscrete, p: TimePartition, n: int):
    """Cached (MacroSystem, LU of A) for macro interval n, plus its micro times.

    The system only depends on the relative micro layout, so equal layouts
    share one factorisation.
    """
    tf, ts = macro_times(p, n)
    key = macro_key(p, n)
    hit = sd._macro.get(key)
    if hit is None:
        system = macro_system(sd, tf, ts)
        hit = (system, spla.splu(system.A.tocsc()))
        sd._macro[key] = hit
    return hit[0], hit[1], tf, ts


def initial_block(sd: SemiDiscrete) -> sp.csr_matrix:
    """Rows fixing the state at t_0: identity on u_f, mass matrices elsewhere."""
    nf = sd.ops.nf
    return sp.block_diag((sp.identity(nf), sd.ops.M_f, sd.E_s), format="csr")


def flatten(p: TimePartition, fluid: np.ndarray, solid: np.ndarray) -> np.ndarray:
    """Stack nodal states as [x(t_0), y(t_0), then per macro: fluid micro, solid micro]."""
    fi, si = p.macro_slices("fluid"), p.macro_slices("solid")
    parts = [fluid[0], solid[0]]
    for n in range(1, p.N + 1):
        parts.append(fluid[fi[n - 1] + 1 : fi[n] + 1].ravel())
        parts.append(solid[si[n - 1] + 1 : si[n] + 1].ravel())
    return np.concatenate(parts)


def unflatten(p: TimePartition, vec: np.ndarray, dim_f: int, dim_s: int):
    fi, si = p.macro_slices("fluid"), p.macro_slices("solid")
    fluid = np.empty((p.M + 1, dim_f))
    solid = np.empty((p.L + 1, dim_s))
    fluid[0], solid[0] = vec[:dim_f], vec[dim_f : dim_f + dim_s]
    pos = dim_f + dim_s
    for n in range(1, p.N + 1):
        a, b = fi[n - 1] + 1, fi[n] + 1
        size = (b - a) * dim_f
        fluid[a:b] = vec[pos : pos + size].reshape(b - a, dim_f)
        pos += size
        a, b = si[n - 1] + 1, si[n] + 1
        size = (b - a) * dim_s
        solid[a:b] = vec[pos : pos + size].reshape(b - a, dim_s)
        pos += size
    return fluid, solid


def global_system(sd: SemiDiscrete, p: TimePartition):
    """The whole discrete problem as one sparse system G U = F in ``flatten`` order.

    Intended for verification on small meshes; the solvers march macro by macro.
    """
    df, ds = sd.dim_f, sd.dim_s
    sizes = [df + ds]
    blocks = []
    for n in range(1, p.N + 1):
        system, _, _, _ = macro_operator(sd, p, n)
        sizes.append(system.A.shape[0])
        blocks.append(system)
    nb = len(sizes)
    rows = [[None] * nb for _ in range(nb)]
    rows[0][0] = initial_block(sd)
    F = [np.zeros(df + ds)]
    for n, system in enumerate(blocks, start=1):
        rows[n][n] = system.A
        # previous state = last fluid and last solid unknown of block n-1
        prev_size = sizes[n - 1]
        if n == 1:
            sel = sp.identity(df + ds, format="csr")
        else:
            Mp, Lp = blocks[n - 2].M, blocks[n - 2].L
            r = np.concatenate([np.arange(df), df + np.arange(ds)])
            c = np.concatenate(
                [(Mp - 1) * df + np.arange(df), Mp * df + (Lp - 1) * ds + np.arange(ds)]
            )
            sel = sp.csr_matrix((np.ones(df + ds), (r, c)), shape=(df + ds, prev_size))
        rows[n][n - 1] = (system.C @ sel).tocsr()
        tf, ts = macro_times(p, n)
        F.append(macro_source(sd, tf, ts))
    return sp.bmat(rows, format="csr"), np.concatenate(F)
