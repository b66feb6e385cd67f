"""Geometric multigrid over nested spline spaces.

Hierarchies are built by dyadic element coarsening; transfer operators come
from the B-spline two-scale relation restricted to interior dof, with
restriction R = P^T. Coarse operators are Galerkin products R A P by default
(rediscretization is available for cross-checks). The cycle is the classic
V-cycle: pre-smooth, restrict the residual, recurse with zero coarse initial
error, prolong-correct, post-smooth, with a direct LU on the coarsest level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import iga
from .bspline import KnotVector, insert_knots
from .iga import DirichletLayout, SplineSpace, apply_dirichlet
from .linalg import DenseLU


class TooCoarse(Exception):
    """Requested a coarse level with no interior dof or odd element count."""


class ZeroDiagonal(Exception):
    def __init__(self, row: int):
        super().__init__(f"zero diagonal at row {row}")
        self.row = row


@dataclass
class SmootherConfig:
    """Weighted-Jacobi relaxation: x <- x + omega D^-1 (b - A x)."""

    omega: float = 2.0 / 3.0
    pre: int = 1
    post: int = 1

    def __post_init__(self):
        if not 0.0 < self.omega < 2.0:
            raise ValueError("omega must lie in (0, 2)")


@dataclass
class CycleReport:
    initial_residual_norm: float
    final_residual_norm: float
    levels_visited: int
    n_cycles: int = 1
    converged: bool = True


@dataclass
class Level:
    """One grid in the hierarchy (operator on interior dof)."""

    space: SplineSpace
    layout: DirichletLayout
    A: sp.csr_matrix
    P: sp.csr_matrix | None = None  # prolongation to the next finer level
    R: sp.csr_matrix | None = None  # restriction from the next finer level
    inv_diag: np.ndarray = field(init=False)

    def __post_init__(self):
        d = self.A.diagonal()
        zero = np.flatnonzero(d == 0.0)
        if zero.size:
            raise ZeroDiagonal(int(zero[0]))
        self.inv_diag = 1.0 / d


class GridHierarchy:
    """Nested levels ordered coarse to fine, with a cached coarsest-grid LU."""

    def __init__(self, levels: list[Level]):
        self.levels = levels
        self._coarse_lu = DenseLU(levels[0].A.toarray())

    @property
    def fine(self) -> Level:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)


def _coarsen_kv(kv: KnotVector) -> KnotVector:
    bp = kv.breakpoints
    if (len(bp) - 1) % 2 or len(bp) < 3:
        raise TooCoarse(f"cannot halve {len(bp) - 1} elements")
    p = kv.p
    coarse = np.concatenate([np.full(p, bp[0]), bp[::2], np.full(p, bp[-1])])
    return KnotVector(p, coarse)


def _interior_prolongation(coarse: SplineSpace, fine: SplineSpace,
                           lc: DirichletLayout, lf: DirichletLayout) -> sp.csr_matrix:
    maps = []
    for kvc, kvf in zip(coarse.kvs, fine.kvs):
        inserted = np.setdiff1d(kvf.breakpoints, kvc.breakpoints)
        maps.append(insert_knots(kvc, inserted).P)
    P = maps[0] if len(maps) == 1 else sp.kron(maps[0], maps[1], format="csr")
    return P[lf.interior][:, lc.interior].tocsr()


def build_hierarchy(fine_space: SplineSpace, n_levels: int | None = None,
                    coarsening: str = "galerkin", direct_threshold: int = 16,
                    fine_matrix: sp.csr_matrix | None = None) -> GridHierarchy:
    """Build a V-cycle hierarchy under the given fine space.

    Each coarser level halves the element count per direction. With
    ``n_levels=None``, coarsening continues while the interior dof count per
    direction exceeds ``direct_threshold`` and elements stay halvable.
    ``coarsening`` selects Galerkin products (default) or rediscretization.
    The full fine stiffness matrix may be passed to avoid reassembly.
    """
    if coarsening not in ("galerkin", "rediscretize"):
        raise ValueError(f"unknown coarsening {coarsening!r}")

    spaces = [fine_space]
    while True:
        if n_levels is not None and len(spaces) == n_levels:
            break
        cur = spaces[-1].kvs
        if n_levels is None:
            if max(kv.n_basis - 2 for kv in cur) <= direct_threshold:
                break
            if any((kv.n_elements % 2) or kv.n_elements < 2 for kv in cur):
                break
        try:
            coarse = SplineSpace(tuple(_coarsen_kv(kv) for kv in cur))
        except TooCoarse:
            if n_levels is None:
                break
            raise
        if min(kv.n_basis - 2 for kv in coarse.kvs) < 1:
            if n_levels is None:
                break
            raise TooCoarse("coarse level would have no interior dof")
        spaces.append(coarse)
    spaces.reverse()  # coarse -> fine

    layouts = [apply_dirichlet(s) for s in spaces]
    fine_full = fine_matrix if fine_matrix is not None else iga.assemble_stiffness(spaces[-1])
    A_fine = layouts[-1].restrict_matrix(fine_full)

    levels: list[Level] = [None] * len(spaces)  # type: ignore[list-item]
    levels[-1] = Level(space=spaces[-1], layout=layouts[-1], A=A_fine)
    for i in range(len(spaces) - 2, -1, -1):
        P = _interior_prolongation(spaces[i], spaces[i + 1], layouts[i], layouts[i + 1])
        R = P.T.tocsr()
        if coarsening == "galerkin":
            A = (R @ levels[i + 1].A @ P).tocsr()
        else:
            A = layouts[i].restrict_matrix(iga.assemble_stiffness(spaces[i]))
        levels[i] = Level(space=spaces[i], layout=layouts[i], A=A, P=P, R=R)
    return GridHierarchy(levels)


def smooth(A: sp.csr_matrix, b: np.ndarray, x: np.ndarray, cfg: SmootherConfig,
           sweeps: int, inv_diag: np.ndarray | None = None) -> np.ndarray:
    """Weighted-Jacobi sweeps; returns the relaxed iterate."""
    if inv_diag is None:
        d = A.diagonal()
        zero = np.flatnonzero(d == 0.0)
        if zero.size:
            raise ZeroDiagonal(int(zero[0]))
        inv_diag = 1.0 / d
    x = np.array(x, dtype=float)
    for _ in range(sweeps):
        x += cfg.omega * inv_diag * (b - A @ x)
    return x


def _vcycle_recursive(h: GridHierarchy, idx: int, b: np.ndarray, x: np.ndarray,
                      cfg: SmootherConfig) -> np.ndarray:
    if idx == 0:
        return h._coarse_lu.solve(b)
    lvl = h.levels[idx]
    below = h.levels[idx - 1]
    x = smooth(lvl.A, b, x, cfg, cfg.pre, lvl.inv_diag)
    r = b - lvl.A @ x
    rc = below.R @ r
    ec = _vcycle_recursive(h, idx - 1, rc, np.zeros_like(rc), cfg)
    x = x + below.P @ ec
    return smooth(lvl.A, b, x, cfg, cfg.post, lvl.inv_diag)


def v_cycle(h: GridHierarchy, b: np.ndarray, x0: np.ndarray,
            cfg: SmootherConfig | None = None) -> tuple[np.ndarray, CycleReport]:
    """One V-cycle on the finest level of the hierarchy."""
    cfg = cfg or SmootherConfig()
    A = h.fine.A
    r0 = float(np.linalg.norm(b - A @ x0))
    x = _vcycle_recursive(h, h.n_levels - 1, np.asarray(b, dtype=float),
                          np.asarray(x0, dtype=float), cfg)
    r1 = float(np.linalg.norm(b - A @ x))
    return x, CycleReport(r0, r1, levels_visited=h.n_levels)


def solve_to_tolerance(h: GridHierarchy, b: np.ndarray, x0: np.ndarray,
                       cfg: SmootherConfig | None = None, tol: float = 1e-8,
                       maxiter: int = 100) -> tuple[np.ndarray, CycleReport]:
    """Repeat V-cycles until ||b - A x|| / ||b|| <= tol or maxiter cycles.

    With b = 0 the criterion degenerates to the absolute residual. Running out
    of cycles is non-fatal: the report returns converged=False.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    cfg = cfg or SmootherConfig()
    A = h.fine.A
    b = np.asarray(b, dtype=float)
    x = np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    denom = bnorm if bnorm > 0.0 else 1.0
    r0 = float(np.linalg.norm(b - A @ x))
    res = r0
    n = 0
    while res / denom > tol and n < maxiter:
        x = _vcycle_recursive(h, h.n_levels - 1, b, x, cfg)
        res = float(np.linalg.norm(b - A @ x))
        n += 1
    return x, CycleReport(r0, res, levels_visited=h.n_levels, n_cycles=n,
                          converged=res / denom <= tol)
