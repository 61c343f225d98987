"""Structured Q1 discretisation of the fluid and solid rectangles.

The fluid occupies (0, 4) x (0, 1), the solid (0, 4) x (-1, 0); both share the
interface y = 0.  Every matrix here is time independent and assembled once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LENGTH = 4.0
HEIGHT = 1.0
SUBREGION_X = 2.0

_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# local node order: (0,0), (1,0), (1,1), (0,1) of the reference square
_LOCAL = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


@dataclass(frozen=True)
class PhysicalParams:
    nu: float = 0.001
    beta: tuple[float, float] = (2.0, 0.0)
    lam: float = 1000.0
    delta: float = 0.1
    gamma: float = 1000.0
    h: float = 0.25

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        cells_per_unit(self.h)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))


def cells_per_unit(h: float) -> int:
    """Return 1/h, rejecting widths that do not tile the unit length."""
    if not h > 0:
        raise ValueError(f"cell width must be positive, got {h}")
    n = int(round(1.0 / h))
    if n < 1 or abs(n * h - 1.0) > 1e-12:
        raise ValueError(f"cell width h={h}: 4/h and 1/h must be positive integers")
    return n


@dataclass(frozen=True)
class SubdomainGrid:
    """Uniform quadrilateral grid of one subdomain.

    ``coords`` holds node coordinates, ``cells`` the four node ids of every
    cell in reference order, ``interface`` the nodes on y = 0 sorted by x.
    """

    coords: np.ndarray
    cells: np.ndarray
    cell_origin: np.ndarray
    interface: np.ndarray
    dirichlet: np.ndarray
    interface_cells: np.ndarray
    interface_side: int  # reference eta of the interface edge (0 or 1)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class SpaceMesh:
    h: float
    nx: int
    ny: int
    fluid: SubdomainGrid
    solid: SubdomainGrid


def build_domain_mesh(h: float) -> SpaceMesh:
    n = cells_per_unit(h)
    nx, ny = int(round(LENGTH * n)), int(round(HEIGHT * n))
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    ii, jj = ii.ravel(), jj.ravel()

    def node(i, j):
        return j * (nx + 1) + i

    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    interface = node(np.arange(nx + 1), 0)

    # fluid: row j sits at y = j*h, top row is Dirichlet
    f_coords = np.column_stack([ii * h, jj * h])
    f_cells = np.column_stack(
        [node(ci, cj), node(ci + 1, cj), node(ci + 1, cj + 1), node(ci, cj + 1)]
    )
    f_origin = np.column_stack([ci * h, cj * h])
    fluid = SubdomainGrid(
        coords=f_coords,
        cells=f_cells,
        cell_origin=f_origin,
        interface=interface,
        dirichlet=node(np.arange(nx + 1), ny),
        interface_cells=np.flatnonzero(cj == 0),
        interface_side=0,
    )

    # solid: row j sits at y = -j*h, left and right columns are Dirichlet
    s_coords = np.column_stack([ii * h, -jj * h])
    s_cells = np.column_stack(
        [node(ci, cj + 1), node(ci + 1, cj + 1), node(ci + 1, cj), node(ci, cj)]
    )
    s_origin = np.column_stack([ci * h, -(cj + 1) * h])
    side = np.arange(ny + 1)
    solid = SubdomainGrid(
        coords=s_coords,
        cells=s_cells,
        cell_origin=s_origin,
        interface=interface,
        dirichlet=np.union1d(node(0, side), node(nx, side)),
        interface_cells=np.flatnonzero(cj == 0),
        interface_side=1,
    )
    return SpaceMesh(h=h, nx=nx, ny=ny, fluid=fluid, solid=solid)


def _shape(xi, eta):
    """Q1 values and reference gradients at (xi, eta); shapes (4,), (4, 2)."""
    lx, ly = _LOCAL[:, 0], _LOCAL[:, 1]
    fx = np.where(lx == 1, xi, 1.0 - xi)
    fy = np.where(ly == 1, eta, 1.0 - eta)
    dfx = np.where(lx == 1, 1.0, -1.0)
    dfy = np.where(ly == 1, 1.0, -1.0)
    return fx * fy, np.column_stack([dfx * fy, fx * dfy])


def reference_element(h: float, beta=(0.0, 0.0)):
    """Element mass, stiffness and convection matrices of one h x h cell.

    Rows index test functions and columns trial functions, so the convection
    entry [a, b] is the integral of (beta . grad phi_b) phi_a.
    """
    mass = np.zeros((4, 4))
    stiff = np.zeros((4, 4))
    conv = np.zeros((4, 4))
    w = h * h / 4.0
    b = np.asarray(beta, dtype=float)
    for xi in _GP:
        for eta in _GP:
            phi, dphi = _shape(xi, eta)
            grad = dphi / h
            mass += w * np.outer(phi, phi)
            stiff += w * grad @ grad.T
            conv += w * np.outer(phi, grad @ b)
    return mass, stiff, conv


def _edge_element(h: float, eta: float, normal_sign: float):
    """Edge mass and normal-derivative trace on the edge at reference eta.

    ``normal_sign`` is the y component of the outward normal, so the trace
    entry [a, b] is the edge integral of (d phi_b / dn) phi_a.
    """
    mass = np.zeros((4, 4))
    trace = np.zeros((4, 4))
    for xi in _GP:
        phi, dphi = _shape(xi, eta)
        dn = normal_sign * dphi[:, 1] / h
        mass += 0.5 * h * np.outer(phi, phi)
        trace += 0.5 * h * np.outer(phi, dn)
    return mass, trace


def _scatter(cells: np.ndarray, elem: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    vals = np.broadcast_to(elem.ravel(), (len(cells), 16)).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def gaussian_bump(center):
    cx, cy = center

    def g(x, y):
        return np.exp(-((x - cx) ** 2 + (y - cy) ** 2))

    return g


def _load(grid: SubdomainGrid, h: float, func) -> np.ndarray:
    out = np.zeros(grid.n_nodes)
    for xi in _GP:
        for eta in _GP:
            phi, _ = _shape(xi, eta)
            x = grid.cell_origin[:, 0] + xi * h
            y = grid.cell_origin[:, 1] + eta * h
            vals = (h * h / 4.0) * func(x, y)
            np.add.at(out, grid.cells, vals[:, None] * phi[None, :])
    return out


@dataclass(frozen=True)
class SubdomainMatrices:
    """Full (pre-elimination) matrices of one subdomain."""

    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    convection: sp.csr_matrix
    stiffness_right: sp.csr_matrix
    interface_mass: sp.csr_matrix
    normal_trace: sp.csr_matrix
    load: np.ndarray


def assemble_subdomain(grid: SubdomainGrid, h: float, beta, source) -> SubdomainMatrices:
    n = grid.n_nodes
    m_e, k_e, c_e = reference_element(h, beta)
    right = grid.cell_origin[:, 0] >= SUBREGION_X - 1e-12
    eta = float(grid.interface_side)
    normal_sign = -1.0 if grid.interface_side == 0 else 1.0
    pm_e, nt_e = _edge_element(h, eta, normal_sign)
    icells = grid.cells[grid.interface_cells]
    return SubdomainMatrices(
        mass=_scatter(grid.cells, m_e, n),
        stiffness=_scatter(grid.cells, k_e, n),
        convection=_scatter(grid.cells, c_e, n),
        stiffness_right=_scatter(grid.cells[right], k_e, n),
        interface_mass=_scatter(icells, pm_e, n),
        normal_trace=_scatter(icells, nt_e, n),
        load=np.zeros(n) if source is None else _load(grid, h, source),
    )


@dataclass(frozen=True)
class OperatorSet:
    """Spatial operators restricted to the free (non-Dirichlet) nodes.

    Fluid matrices carry the suffix ``_f``, solid ones ``_s``.  ``P_fs`` maps
    the free solid interface trace onto fluid test functions, ``N_sf`` maps
    fluid nodal values to solid test functions through the fluid normal
    derivative on the interface.
    """

    mesh: SpaceMesh
    params: PhysicalParams
    config_id: int
    M_f: sp.csr_matrix
    K_f: sp.csr_matrix
    C_f: sp.csr_matrix
    N_f: sp.csr_matrix
    P_f: sp.csr_matrix
    Kr_f: sp.csr_matrix
    load_f: np.ndarray
    M_s: sp.csr_matrix
    K_s: sp.csr_matrix
    N_s: sp.csr_matrix
    Kr_s: sp.csr_matrix
    load_s: np.ndarray
    P_fs: sp.csr_matrix
    N_sf: sp.csr_matrix
    solid_trace: np.ndarray
    fluid_trace: np.ndarray
    full_f: SubdomainMatrices = field(repr=False)
    full_s: SubdomainMatrices = field(repr=False)

    @property
    def nf(self) -> int:
        return self.M_f.shape[0]

    @property
    def ns(self) -> int:
        return self.M_s.shape[0]

    @property
    def penalty(self) -> float:
        return self.params.gamma / self.params.h


def _restrict(mat, rows, cols):
    return mat[rows][:, cols].tocsr()


def assemble_operators(mesh: SpaceMesh, p: PhysicalParams, config_id: int) -> OperatorSet:
    if config_id not in (1, 2):
        raise ValueError(f"config_id must be 1 or 2, got {config_id}")
    if abs(p.h - mesh.h) > 1e-14:
        raise ValueError(f"params.h={p.h} does not match mesh width {mesh.h}")
    h = mesh.h
    src_f = gaussian_bump((0.5, 0.5)) if config_id == 1 else None
    src_s = gaussian_bump((0.5, -0.5)) if config_id == 2 else None
    full_f = assemble_subdomain(mesh.fluid, h, p.beta, src_f)
    full_s = assemble_subdomain(mesh.solid, h, (0.0, 0.0), src_s)

    ff, fs = mesh.fluid.free, mesh.solid.free
    # interface node i of the fluid and of the solid share the same x
    f_pos = np.searchsorted(ff, mesh.fluid.interface)
    s_is_free = np.isin(mesh.solid.interface, fs)
    s_trace_nodes = mesh.solid.interface[s_is_free]
    solid_trace = np.searchsorted(fs, s_trace_nodes)
    fluid_trace = f_pos

    # fluid-side interface mass with the column moved to the matching solid node
    P_full = full_f.interface_mass
    P_cols = _restrict(P_full, ff, mesh.fluid.interface[s_is_free])
    # solid test functions against fluid normal derivative
    to_solid = sp.csr_matrix(
        (np.ones(len(s_trace_nodes)), (s_trace_nodes, mesh.fluid.interface[s_is_free])),
        shape=(mesh.solid.n_nodes, mesh.fluid.n_nodes),
    )
    N_sf = _restrict(to_solid @ full_f.normal_trace, fs, ff)

    return OperatorSet(
        mesh=mesh,
        params=p,
        config_id=config_id,
        M_f=_restrict(full_f.mass, ff, ff),
        K_f=_restrict(full_f.stiffness, ff, ff),
        C_f=_restrict(full_f.convection, ff, ff),
        N_f=_restrict(full_f.normal_trace, ff, ff),
        P_f=_restrict(P_full, ff, ff),
        Kr_f=_restrict(full_f.stiffness_right, ff, ff),
        load_f=full_f.load[ff],
        M_s=_restrict(full_s.mass, fs, fs),
        K_s=_restrict(full_s.stiffness, fs, fs),
        N_s=_restrict(full_s.normal_trace, fs, fs),
        Kr_s=_restrict(full_s.stiffness_right, fs, fs),
        load_s=full_s.load[fs],
        P_fs=P_cols,
        N_sf=N_sf,
        solid_trace=solid_trace,
        fluid_trace=fluid_trace,
        full_f=full_f,
        full_s=full_s,
    )
