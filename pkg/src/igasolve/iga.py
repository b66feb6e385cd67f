"""Galerkin assembly on tensor-product B-spline spaces (1D/2D).

Stiffness/mass matrices, nonlinear load vectors for the Bratu and
Monge-Ampere fixed-point maps, Dirichlet handling by boundary-coefficient
interpolation plus stiffness lifting, spline-field evaluation and L2 norms.

Assembly loops run element by element with per-direction Gauss tables;
2D local blocks are formed as outer products of 1D element matrices
(sum factorization) and scattered into global coordinate triplets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import bspline
from .bspline import ElementTable, KnotVector, eval_basis, greville_abscissae, tabulate
from .linalg import coo_to_csr

log = logging.getLogger(__name__)


class ExpOverflow(Exception):
    """The lagged Bratu iterate exceeds the exp() range at a quadrature point.

    Signals divergence of the outer iteration.
    """


class DegreeTooLow(Exception):
    """Operation requires second derivatives (p >= 2)."""


class SplineSpace:
    """Tensor-product B-spline space on the unit interval or square.

    Degrees of freedom are numbered x-major in 2D: flat = ix * Ny + iy.
    """

    def __init__(self, knotvectors):
        if isinstance(knotvectors, KnotVector):
            knotvectors = (knotvectors,)
        kvs = tuple(knotvectors)
        if len(kvs) not in (1, 2):
            raise ValueError("only 1D and 2D spaces are supported")
        self.kvs = kvs
        self._table_cache: dict = {}

    @property
    def dims(self) -> int:
        return len(self.kvs)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.n_basis for kv in self.kvs)

    @property
    def n_dof(self) -> int:
        return int(np.prod(self.shape))

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(kv.p for kv in self.kvs)

    def tables(self, extra: int = 0, max_deriv: int = 1) -> tuple[ElementTable, ...]:
        """Per-direction quadrature tables with p+1+extra Gauss points per span."""
        key = (extra, max_deriv)
        if key not in self._table_cache:
            self._table_cache[key] = tuple(
                tabulate(kv, kv.p + 1 + extra, max_deriv) for kv in self.kvs
            )
        return self._table_cache[key]

    def __repr__(self):
        return f"SplineSpace(p={self.degrees}, n_el={tuple(kv.n_elements for kv in self.kvs)})"


def make_space(p, n_elements, dims: int = 1, interval=(0.0, 1.0)) -> SplineSpace:
    """Uniform open spline space with the same degree and resolution per direction."""
    kv = bspline.make_open_uniform_knots(p, n_elements, interval)
    return SplineSpace((kv,) * dims)


@dataclass
class SplineField:
    """A spline function given by its control-point vector."""

    space: SplineSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        if self.coefficients.size != self.space.n_dof:
            raise ValueError("coefficient length does not match the space")

    def eval(self, point):
        return eval_field(self, point)


def _local_dof_indices(table: ElementTable) -> np.ndarray:
    # (n_el, p+1) global dof index of each local function
    p1 = table.basis.shape[3]
    return table.first_dof[:, None] + np.arange(p1)[None, :]


def _grid_values(space: SplineSpace, coeffs: np.ndarray, tables, dorders) -> np.ndarray:
    """Evaluate a coefficient vector's derivative on the quadrature grid.

    Returns shape (n_el, nq) in 1D and (n_ex, nqx, n_ey, nqy) in 2D;
    ``dorders`` is the per-direction derivative order.
    """
    if space.dims == 1:
        (t,) = tables
        idx = _local_dof_indices(t)
        return np.einsum("eqa,ea->eq", t.basis[dorders[0]], coeffs[idx])
    tx, ty = tables
    idxx, idxy = _local_dof_indices(tx), _local_dof_indices(ty)
    C = coeffs.reshape(space.shape)
    blocks = C[idxx[:, None, :, None], idxy[None, :, None, :]]
    return np.einsum(
        "eqa,efab,frb->eqfr", tx.basis[dorders[0]], blocks, ty.basis[dorders[1]],
        optimize=True,
    )


def _quad_points(space: SplineSpace, tables):
    """Quadrature point coordinates, broadcastable against grid values."""
    if space.dims == 1:
        return (tables[0].points,)
    tx, ty = tables
    return tx.points[:, :, None, None], ty.points[None, None, :, :]


def _grid_shape(space: SplineSpace, tables) -> tuple[int, ...]:
    if space.dims == 1:
        return tables[0].points.shape
    tx, ty = tables
    return tx.points.shape + ty.points.shape


def _scatter_load(space: SplineSpace, tables, integrand: np.ndarray) -> np.ndarray:
    """Load vector F_i = sum of w * integrand * B_i over the quadrature grid."""
    if space.dims == 1:
        (t,) = tables
        loc = np.einsum("eq,eq,eqa->ea", integrand, t.weights, t.basis[0])
        F = np.zeros(space.n_dof)
        np.add.at(F, _local_dof_indices(t), loc)
        return F
    tx, ty = tables
    weighted = integrand * tx.weights[:, :, None, None] * ty.weights[None, None, :, :]
    loc = np.einsum("eqfr,eqa,frb->efab", weighted, tx.basis[0], ty.basis[0], optimize=True)
    idxx, idxy = _local_dof_indices(tx), _local_dof_indices(ty)
    F = np.zeros(space.shape)
    np.add.at(F, (idxx[:, None, :, None], idxy[None, :, None, :]), loc)
    return F.ravel()


def _element_matrices_1d(table: ElementTable, du: int, dv: int) -> np.ndarray:
    """Per-element (p+1) x (p+1) matrices of int B^(du)_a B^(dv)_b."""
    return np.einsum("eqa,eqb,eq->eab", table.basis[du], table.basis[dv], table.weights)


def _assemble_1d(space: SplineSpace, table: ElementTable, du: int, dv: int) -> sp.csr_matrix:
    vals = _element_matrices_1d(table, du, dv)
    idx = _local_dof_indices(table)
    rows = np.broadcast_to(idx[:, :, None], vals.shape)
    cols = np.broadcast_to(idx[:, None, :], vals.shape)
    n = space.n_dof
    return coo_to_csr(rows.ravel(), cols.ravel(), vals.ravel(), (n, n))


def _assemble_2d(space: SplineSpace, tables, pairs) -> sp.csr_matrix:
    """Scatter sum of kron(X_e, Y_f) element blocks for each (X, Y) pair.

    ``pairs`` is a list of per-direction element-matrix arrays, e.g.
    [(Kx, My), (Mx, Ky)] for the stiffness bilinear form.
    """
    tx, ty = tables
    idxx, idxy = _local_dof_indices(tx), _local_dof_indices(ty)
    nx1, ny1 = idxx.shape[1], idxy.shape[1]
    Ny = space.shape[1]
    rows2 = (idxx[:, None, :, None, None, None] * Ny + idxy[None, :, None, None, :, None])
    cols2 = (idxx[:, None, None, :, None, None] * Ny + idxy[None, :, None, None, None, :])
    n = space.n_dof
    acc = None
    # chunk over x-elements to bound the triplet arrays
    n_ex = idxx.shape[0]
    per_e = idxy.shape[0] * (nx1 * ny1) ** 2
    chunk = max(1, int(2e6 / per_e))
    for start in range(0, n_ex, chunk):
        sl = slice(start, min(start + chunk, n_ex))
        vals = np.zeros((sl.stop - sl.start, idxy.shape[0], nx1, nx1, ny1, ny1))
        for X, Y in pairs:
            vals += X[sl, None, :, :, None, None] * Y[None, :, None, None, :, :]
        shape6 = vals.shape
        r = np.broadcast_to(rows2[sl], shape6).ravel()
        c = np.broadcast_to(cols2[sl], shape6).ravel()
        part = coo_to_csr(r, c, vals.ravel(), (n, n))
        acc = part if acc is None else acc + part
    return acc.tocsr()


def assemble_stiffness(space: SplineSpace) -> sp.csr_matrix:
    """Full stiffness matrix, entry (i,j) = int grad B_i . grad B_j."""
    tables = space.tables(0, 1)
    if space.dims == 1:
        return _assemble_1d(space, tables[0], 1, 1)
    tx, ty = tables
    Kx, Mx = _element_matrices_1d(tx, 1, 1), _element_matrices_1d(tx, 0, 0)
    Ky, My = _element_matrices_1d(ty, 1, 1), _element_matrices_1d(ty, 0, 0)
    return _assemble_2d(space, tables, [(Kx, My), (Mx, Ky)])


def assemble_mass(space: SplineSpace) -> sp.csr_matrix:
    """Full mass matrix, entry (i,j) = int B_i B_j."""
    tables = space.tables(0, 1)
    if space.dims == 1:
        return _assemble_1d(space, tables[0], 0, 0)
    tx, ty = tables
    Mx = _element_matrices_1d(tx, 0, 0)
    My = _element_matrices_1d(ty, 0, 0)
    return _assemble_2d(space, tables, [(Mx, My)])


def _call_on_grid(func, space, tables):
    pts = _quad_points(space, tables)
    vals = np.asarray(func(*pts), dtype=float)
    return np.broadcast_to(vals, _grid_shape(space, tables))


def assemble_bratu_rhs(space: SplineSpace, lam: float, f, u_prev: SplineField | None) -> np.ndarray:
    """Load vector F_i = int (f - lam * exp(u_prev)) B_i over all dof.

    ``f`` may be a callable on quadrature coordinates or None for zero.
    Raises :class:`ExpOverflow` when the lagged iterate exceeds 700 anywhere,
    which signals a diverging outer iteration.
    """
    tables = space.tables(0, 1)
    if u_prev is None:
        u_vals = np.zeros(_grid_shape(space, tables))
    else:
        u_vals = _grid_values(space, u_prev.coefficients, tables, (0,) * space.dims)
        if np.max(u_vals) > 700.0:
            raise ExpOverflow("exp argument exceeds 700")
    f_vals = _call_on_grid(f, space, tables) if f is not None else 0.0
    integrand = np.broadcast_to(f_vals - lam * np.exp(u_vals), _grid_shape(space, tables))
    return _scatter_load(space, tables, integrand)


def monge_ampere_operator(lap: np.ndarray, det_hess: np.ndarray, f_vals, d: int = 2):
    """Pointwise G(u) = ((lap u)^d + d! (f - det H(u)))^(1/d), radicand clamped at 0.

    Returns the values and the fraction of clamped points.
    """
    radicand = lap**d + math.factorial(d) * (f_vals - det_hess)
    clamped = radicand < 0.0
    frac = float(np.mean(clamped))
    vals = np.maximum(radicand, 0.0) ** (1.0 / d)
    return vals, frac


def assemble_monge_ampere_rhs(space: SplineSpace, f, u_prev: SplineField, d: int = 2) -> np.ndarray:
    """Load vector F_i = -int G(u_prev) B_i for the Laplacian fixed-point map."""
    if min(space.degrees) < 2:
        raise DegreeTooLow("Monge-Ampere assembly needs p >= 2")
    if space.dims != 2 or d != 2:
        raise ValueError("only the planar case d = 2 is implemented")
    tables = space.tables(0, 2)
    c = u_prev.coefficients
    u_xx = _grid_values(space, c, tables, (2, 0))
    u_yy = _grid_values(space, c, tables, (0, 2))
    u_xy = _grid_values(space, c, tables, (1, 1))
    f_vals = _call_on_grid(f, space, tables)
    g_vals, frac = monge_ampere_operator(u_xx + u_yy, u_xx * u_yy - u_xy**2, f_vals, d)
    if frac > 0.01:
        log.warning("negative radicand clamped on %.1f%% of quadrature points", 100 * frac)
    return _scatter_load(space, tables, -g_vals)


def eval_field(field: SplineField, point):
    """Value, gradient and Hessian of the spline at one point.

    Gradient has shape (dims,), the Hessian (dims, dims). For p = 1 the
    (piecewise zero) second derivatives are reported as zero.
    """
    space = field.space
    evs = []
    for kv, x in zip(space.kvs, np.atleast_1d(np.asarray(point, dtype=float))):
        evs.append(eval_basis(kv, float(x), max_deriv=min(2, kv.p)))

    def der(ev, r):
        return ev.derivs[r] if r < ev.derivs.shape[0] else np.zeros_like(ev.derivs[0])

    if space.dims == 1:
        (ev,) = evs
        sl = slice(ev.first_dof, ev.first_dof + ev.derivs.shape[1])
        c = field.coefficients[sl]
        value = float(der(ev, 0) @ c)
        grad = np.array([der(ev, 1) @ c])
        hess = np.array([[der(ev, 2) @ c]])
        return value, grad, hess

    evx, evy = evs
    C = field.coefficients.reshape(space.shape)
    blk = C[
        evx.first_dof: evx.first_dof + evx.derivs.shape[1],
        evy.first_dof: evy.first_dof + evy.derivs.shape[1],
    ]

    def combine(rx, ry):
        return float(der(evx, rx) @ blk @ der(evy, ry))

    value = combine(0, 0)
    grad = np.array([combine(1, 0), combine(0, 1)])
    hess = np.array(
        [[combine(2, 0), combine(1, 1)], [combine(1, 1), combine(0, 2)]]
    )
    return value, grad, hess


class DirichletLayout:
    """Interior/boundary dof split with boundary coefficient values."""

    def __init__(self, n_dof: int, boundary: np.ndarray, boundary_values: np.ndarray):
        self.n_dof = n_dof
        self.boundary = np.asarray(boundary, dtype=int)
        self.boundary_values = np.asarray(boundary_values, dtype=float)
        mask = np.ones(n_dof, dtype=bool)
        mask[self.boundary] = False
        self.interior = np.flatnonzero(mask)

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    def restrict_matrix(self, A: sp.csr_matrix) -> sp.csr_matrix:
        return A[self.interior][:, self.interior].tocsr()

    def coupling(self, A: sp.csr_matrix) -> sp.csr_matrix:
        """Interior x boundary block used for the lifting correction."""
        return A[self.interior][:, self.boundary].tocsr()

    def restrict_vector(self, F: np.ndarray) -> np.ndarray:
        return F[self.interior]

    def lift_vector(self, A: sp.csr_matrix, F: np.ndarray) -> np.ndarray:
        """Interior right-hand side including -A_ib * g_b."""
        rhs = F[self.interior]
        if len(self.boundary) and np.any(self.boundary_values != 0.0):
            rhs = rhs - self.coupling(A) @ self.boundary_values
        return rhs

    def expand(self, u_interior: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_dof)
        full[self.interior] = u_interior
        full[self.boundary] = self.boundary_values
        return full


def _interpolate_1d(kv: KnotVector, values_at_greville: np.ndarray) -> np.ndarray:
    """Spline coefficients collocating the given values at the Greville points."""
    pts = greville_abscissae(kv)
    n = kv.n_basis
    B = np.zeros((n, n))
    for r, t in enumerate(pts):
        ev = eval_basis(kv, float(t))
        B[r, ev.first_dof: ev.first_dof + len(ev.values)] = ev.values
    return np.linalg.solve(B, values_at_greville)


def apply_dirichlet(space: SplineSpace, g=None) -> DirichletLayout:
    """Dirichlet layout for the whole boundary of the interval/square.

    ``g`` is None (or 0) for homogeneous data, else a callable evaluated
    with one argument per dimension. Boundary coefficients interpolate g at
    the Greville abscissae of the boundary dof.
    """
    if space.dims == 1:
        (kv,) = space.kvs
        n = kv.n_basis
        boundary = np.array([0, n - 1])
        if g is None:
            vals = np.zeros(2)
        else:
            a, b = kv.domain
            vals = np.array([float(g(a)), float(g(b))])
        return DirichletLayout(space.n_dof, boundary, vals)

    kvx, kvy = space.kvs
    nx, ny = space.shape
    coeffs = np.zeros((nx, ny))
    if g is not None:
        ax, bx = kvx.domain
        ay, by = kvy.domain
        gx = greville_abscissae(kvx)
        gy = greville_abscissae(kvy)
        coeffs[:, 0] = _interpolate_1d(kvx, np.array([g(x, ay) for x in gx]))
        coeffs[:, -1] = _interpolate_1d(kvx, np.array([g(x, by) for x in gx]))
        coeffs[0, :] = _interpolate_1d(kvy, np.array([g(ax, y) for y in gy]))
        coeffs[-1, :] = _interpolate_1d(kvy, np.array([g(bx, y) for y in gy]))
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    on_edge = (ix == 0) | (ix == nx - 1) | (iy == 0) | (iy == ny - 1)
    boundary = np.flatnonzero(on_edge.ravel())
    return DirichletLayout(space.n_dof, boundary, coeffs.ravel()[boundary])


def l2_error(field: SplineField, exact) -> float:
    """sqrt(int (u_h - exact)^2) with p+2 Gauss points per span."""
    space = field.space
    tables = space.tables(1, 1)
    u_vals = _grid_values(space, field.coefficients, tables, (0,) * space.dims)
    e_vals = _call_on_grid(exact, space, tables) if exact is not None else 0.0
    diff2 = (u_vals - e_vals) ** 2
    if space.dims == 1:
        return float(np.sqrt(np.sum(diff2 * tables[0].weights)))
    tx, ty = tables
    w = tx.weights[:, :, None, None] * ty.weights[None, None, :, :]
    return float(np.sqrt(np.sum(diff2 * w)))


def l2_projection(space: SplineSpace, f) -> SplineField:
    """Global L2 projection of a function onto the spline space."""
    tables = space.tables(1, 1)
    M = assemble_mass(space)
    rhs = _scatter_load(space, tables, _call_on_grid(f, space, tables))
    coeffs = spla.spsolve(M.tocsc(), rhs)
    return SplineField(space, coeffs)
