"""Trilinear hexahedral finite elements on the Omega node box.

Nodes are numbered in C order of the ``(nx, ny, nz)`` node array, so a nodal
vector is ``field.ravel()``. Every element of a uniform grid has the same
local matrices, which keeps assembly a matter of broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import boundary_mask

SOLVER_RTOL = 1e-10

_CORNERS = np.array([(i, j, k) for k in (0, 1) for j in (0, 1) for i in (0, 1)])
_GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class SolverError(RuntimeError):
    """Krylov iteration did not reach the requested residual."""


def _reference_basis():
    """Shape values (nq, 8) and reference gradients (nq, 8, 3) at Gauss points."""
    pts = np.array([(a, b, c) for c in _GAUSS_1D for b in _GAUSS_1D for a in _GAUSS_1D])
    lin = np.where(_CORNERS[None] == 1, pts[:, None, :], 1.0 - pts[:, None, :])
    dlin = np.where(_CORNERS[None] == 1, 1.0, -1.0) * np.ones_like(lin)
    N = lin.prod(axis=2)
    dN = np.empty(N.shape + (3,))
    for d in range(3):
        others = [e for e in range(3) if e != d]
        dN[..., d] = dlin[..., d] * lin[..., others[0]] * lin[..., others[1]]
    return pts, N, dN


@dataclass(frozen=True)
class FemSystem:
    """Assembled operators for the box with given node counts and spacing."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ValueError("need at least two nodes per axis")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def _basis(self):
        pts, N, dN_ref = _reference_basis()
        h = np.asarray(self.spacing)
        dN = dN_ref / h
        wq = np.full(len(pts), np.prod(h) / 8.0)
        return pts, N, dN, wq

    @cached_property
    def conn(self) -> np.ndarray:
        nx, ny, nz = self.shape
        ix, iy, iz = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
        base = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)
        nodes = base[:, None, :] + _CORNERS[None]
        return np.ravel_multi_index((nodes[..., 0], nodes[..., 1], nodes[..., 2]), self.shape)

    @cached_property
    def boundary(self) -> np.ndarray:
        """Flattened Dirichlet mask of the box faces."""
        return boundary_mask(self.shape).ravel()

    def _assemble(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices; ``local`` is (8, 8) or (nel, 8, 8)."""
        conn = self.conn
        nel = conn.shape[0]
        rows = np.broadcast_to(conn[:, :, None], (nel, 8, 8)).ravel()
        cols = np.broadcast_to(conn[:, None, :], (nel, 8, 8)).ravel()
        data = np.broadcast_to(local, (nel, 8, 8)).ravel()
        return sp.coo_matrix((data, (rows, cols)), shape=(self.n_nodes,) * 2).tocsr()

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        _, _, dN, wq = self._basis
        return self._assemble(np.einsum("q,qad,qbd->ab", wq, dN, dN))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        _, N, _, wq = self._basis
        return self._assemble(np.einsum("q,qa,qb->ab", wq, N, N))

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        return np.asarray(self.mass.sum(axis=1)).ravel()

    def qp_coords(self) -> np.ndarray:
        """Physical coordinates of the quadrature points, shape (nel, nq, 3)."""
        pts, _, _, _ = self._basis
        h = np.asarray(self.spacing)
        first = np.stack(np.unravel_index(self.conn[:, 0], self.shape), axis=1)
        return np.asarray(self.origin) + (first[:, None, :] + pts[None]) * h

    def node_coords(self) -> np.ndarray:
        idx = np.stack(np.unravel_index(np.arange(self.n_nodes), self.shape), axis=1)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def values_at_qp(self, u: np.ndarray) -> np.ndarray:
        _, N, _, _ = self._basis
        return np.asarray(u).ravel()[self.conn] @ N.T

    def grad_at_qp(self, u: np.ndarray) -> np.ndarray:
        """Gradient of a nodal field at quadrature points, shape (nel, nq, 3)."""
        _, _, dN, _ = self._basis
        return np.einsum("ea,qad->eqd", np.asarray(u).ravel()[self.conn], dN)

    def load(self, values_qp: np.ndarray) -> np.ndarray:
        """Load vector ``int r phi_i`` from values at quadrature points."""
        _, N, _, wq = self._basis
        local = np.einsum("eq,qa->ea", values_qp, N * wq[:, None])
        return np.bincount(self.conn.ravel(), weights=local.ravel(), minlength=self.n_nodes)

    def convection(self, b_qp: np.ndarray) -> sp.csr_matrix:
        """Matrix of ``int (b . grad phi_j) phi_i`` for a field b at quadrature points."""
        _, N, dN, wq = self._basis
        bg = np.einsum("eqd,qbd->eqb", b_qp, dN)
        return self._assemble(np.einsum("qa,eqb->eab", N * wq[:, None], bg))

    # -- solves ---------------------------------------------------------------

    def _split(self):
        if "split" not in self._cache:
            bnd = self.boundary
            self._cache["split"] = (np.flatnonzero(~bnd), np.flatnonzero(bnd))
        return self._cache["split"]

    def _laplace_operator(self):
        if "lap" not in self._cache:
            inner, bnd = self._split()
            K = self.stiffness
            K_ii = K[inner][:, inner].tocsc()
            # Jacobi keeps the preconditioner symmetric for CG
            dinv = 1.0 / K_ii.diagonal()
            prec = spla.LinearOperator(K_ii.shape, lambda x: dinv * x)
            self._cache["lap"] = (K_ii, K[inner][:, bnd], prec)
        return self._cache["lap"]

    def _full(self, interior: np.ndarray, g_bnd: np.ndarray) -> np.ndarray:
        inner, bnd = self._split()
        u = np.empty(self.n_nodes)
        u[inner] = interior
        u[bnd] = g_bnd
        return u.reshape(self.shape)

    def _boundary_values(self, boundary_values) -> np.ndarray:
        g = np.broadcast_to(np.asarray(boundary_values, dtype=float), self.shape).ravel()
        _, bnd = self._split()
        g_b = g[bnd]
        if not np.all(np.isfinite(g_b)):
            raise ValueError("boundary data must be finite on every boundary node")
        return g_b


def _check_residual(A, x, b, what):
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return
    res = np.linalg.norm(b - A @ x) / bnorm
    if not res <= SOLVER_RTOL * 10:
        raise SolverError(f"{what}: relative residual {res:.2e} above {SOLVER_RTOL:.0e}")


def solve_dirichlet_laplace(fem: FemSystem, boundary_values, source_qp: np.ndarray | None = None) -> np.ndarray:
    """Discrete harmonic extension of boundary data (or ``-Laplace u = source``).

    ``boundary_values`` is an array of node-box shape (only boundary entries
    are read) or a scalar.
    """
    g_b = fem._boundary_values(boundary_values)
    inner, _ = fem._split()
    K_ii, K_ib, prec = fem._laplace_operator()
    rhs = -(K_ib @ g_b)
    if source_qp is not None:
        rhs = rhs + fem.load(source_qp)[inner]
    if inner.size == 0:
        return fem._full(np.empty(0), g_b)
    maxiter = 10 * inner.size
    if np.linalg.norm(rhs) == 0.0:
        x = np.zeros(inner.size)
    else:
        x, info = spla.cg(K_ii, rhs, rtol=SOLVER_RTOL, atol=0.0, maxiter=maxiter, M=prec)
        if info != 0:
            raise SolverError(f"CG did not converge (info={info})")
    _check_residual(K_ii, x, rhs, "Laplace solve")
    return fem._full(x, g_b)


def solve_q_equation(fem: FemSystem, sum_grad_q: np.ndarray, grad_V: np.ndarray, A1: float, A2: float,
                     psi_n, source_qp: np.ndarray | None = None) -> np.ndarray:
    """Solve ``Laplace q + b . grad q = -A2 |grad V - P|^2`` with ``q = psi_n`` on the boundary.

    Parameters
    ----------
    sum_grad_q : (nel, nq, 3)
        ``P = h * sum_{j<n} grad q_j`` at quadrature points.
    grad_V : (nel, nq, 3)
        Gradient of the current tail at quadrature points.
    A1, A2 : float
        Interval coefficients; ``b = A1 (grad V - P)``.
    source_qp : optional (nel, nq)
        Extra right-hand side added to the equation (manufactured solutions).
    """
    for name, arr in (("sum_grad_q", sum_grad_q), ("grad_V", grad_V)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite values")
    g_b = fem._boundary_values(psi_n)
    inner, bnd = fem._split()
    diff = grad_V - sum_grad_q
    b = A1 * diff
    r = -A2 * np.einsum("eqd,eqd->eq", diff, diff)
    if source_qp is not None:
        r = r + source_qp
    A = (fem.stiffness - fem.convection(b)).tocsr()
    A_ii = A[inner][:, inner].tocsc()
    rhs = -fem.load(r)[inner] - A[inner][:, bnd] @ g_b
    if inner.size == 0:
        return fem._full(np.empty(0), g_b)
    if np.linalg.norm(rhs) == 0.0:
        x = np.zeros(inner.size)
    else:
        ilu = spla.spilu(A_ii, drop_tol=1e-5, fill_factor=10)
        prec = spla.LinearOperator(A_ii.shape, ilu.solve)
        x, info = spla.bicgstab(A_ii, rhs, rtol=SOLVER_RTOL, atol=0.0, maxiter=10 * inner.size, M=prec)
        if info != 0:
            raise SolverError(f"BiCGSTAB did not converge (info={info})")
    _check_residual(A_ii, x, rhs, "q solve")
    return fem._full(x, g_b)


def _one_sided_normal(v: np.ndarray, axis: int, side: int, h: float) -> np.ndarray:
    """Outward normal derivative on one face, second-order one-sided."""
    a = np.moveaxis(v, axis, 0)
    if side == 0:
        return -(-3.0 * a[0] + 4.0 * a[1] - a[2]) / (2.0 * h)
    return (3.0 * a[-1] - 4.0 * a[-2] + a[-3]) / (2.0 * h)


def _mass_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 4.0)
    main[0] = main[-1] = 2.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1]) * (h / 6.0)


def boundary_flux_load(fem: FemSystem, w: np.ndarray, v: np.ndarray, s: float) -> np.ndarray:
    """``int_{boundary} (d_n w) phi_i`` with ``d_n w = s^2 w d_n v``."""
    F = np.zeros(fem.shape)
    h = fem.spacing
    for axis in range(3):
        if fem.shape[axis] < 3:
            raise ValueError("one-sided differences need three nodes per axis")
        others = [d for d in range(3) if d != axis]
        m1 = _mass_1d(fem.shape[others[0]], h[others[0]])
        m2 = _mass_1d(fem.shape[others[1]], h[others[1]])
        for side in (0, 1):
            idx = [slice(None)] * 3
            idx[axis] = 0 if side == 0 else -1
            face_w = w[tuple(idx)]
            f = s * s * face_w * _one_sided_normal(v, axis, side, h[axis])
            F[tuple(idx)] += m1 @ f @ m2.T
    return F


def recover_epsilon(fem: FemSystem, w: np.ndarray, s: float) -> np.ndarray:
    """Coefficient from ``w`` via the Galerkin identity ``Laplace w = s^2 eps w``.

    ``eps = (-K w + F) / (s^2 M w)`` per node, where ``M w`` is the mass form
    weighted by w and F the Neumann load of the normal derivative of w.
    The result is invariant under scaling ``w``.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    w = np.asarray(w, dtype=float).reshape(fem.shape)
    if not np.all(w > 0):
        raise ValueError(f"w must be positive; {int(np.count_nonzero(~(w > 0)))} node(s) are not")
    w = w / w.max()
    v = np.log(w) / (s * s)
    F = boundary_flux_load(fem, w, v, s).ravel()
    num = -(fem.stiffness @ w.ravel()) + F
    den = s * s * (fem.mass @ w.ravel())
    return (num / den).reshape(fem.shape)
