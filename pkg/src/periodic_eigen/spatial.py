"""Frozen-time spatial operator and elliptic principal eigenvalues.

The operator ``L(t) phi = -div(A grad phi) - grad m . grad phi + V phi`` is
discretised on the node mesh with one control cell per node (half cells on
the boundary). Fluxes across interior cell faces use two-point differences
for the normal part and averaged centred differences for the mixed part of a
full 2x2 ``A``; the flux across a boundary face is eliminated through the
Robin condition ``[A grad phi].n = -kappa phi``, which is the ghost-node
closure written in flux form. With trapezoid weights ``W`` the pure
diffusion part satisfies ``W L = L^T W``.

Dirichlet problems (``b = 1``) drop the boundary nodes from the unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NonConvergence, PositivityLoss, ProblemError, SolverError
from .problem import FACE_NORMAL, CoefficientField, Grid, ProblemSpec, sample_coefficients

DEFAULT_TOL = 1e-10
DEFAULT_MAXITER = 10_000


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Assembled ``L(t)`` restricted to the unknowns of ``grid``."""

    matrix: sp.csr_matrix
    grid: Grid
    t: float
    b: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, vec):
        return self.matrix @ vec

    def gershgorin_bounds(self) -> tuple:
        """(lower, upper) bounds on the real parts of the eigenvalues."""
        return gershgorin_bounds(self.matrix)

    def to_coo_text(self) -> str:
        """One ``row col value`` triple per line, for debugging."""
        coo = self.matrix.tocoo()
        return "".join(f"{r} {c} {float(v)!r}\n" for r, c, v in zip(coo.row, coo.col, coo.data))


def gershgorin_bounds(matrix) -> tuple:
    m = sp.csr_matrix(matrix)
    diag = m.diagonal()
    radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def _diff_matrix(Nx: int, Ny: int, axis: int, h: float) -> sp.csr_matrix:
    """Node derivative along ``axis``: centred inside, one-sided at the ends."""
    n_axis = Nx if axis == 0 else Ny
    d = sp.lil_matrix((n_axis, n_axis))
    for i in range(1, n_axis - 1):
        d[i, i - 1] = -0.5 / h
        d[i, i + 1] = 0.5 / h
    if n_axis > 1:
        d[0, 0], d[0, 1] = -1.0 / h, 1.0 / h
        d[-1, -2], d[-1, -1] = -1.0 / h, 1.0 / h
    d = d.tocsr()
    if axis == 0:
        return sp.kron(d, sp.identity(Ny), format="csr")
    return sp.kron(sp.identity(Nx), d, format="csr")


def _face_operators(Nx: int, Ny: int, axis: int, h: float, lengths: np.ndarray):
    """Two-point gradient, averaging and signed-area matrices for faces
    normal to ``axis``. ``lengths`` is the face measure per face."""
    idx = np.arange(Nx * Ny).reshape(Nx, Ny)
    if axis == 0:
        lo, hi = idx[:-1, :].ravel(), idx[1:, :].ravel()
    else:
        lo, hi = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    nf = len(lo)
    rows = np.arange(nf)
    shape = (nf, Nx * Ny)
    grad = sp.csr_matrix((np.r_[-np.ones(nf), np.ones(nf)] / h, (np.r_[rows, rows], np.r_[lo, hi])), shape=shape)
    avg = sp.csr_matrix((np.full(2 * nf, 0.5), (np.r_[rows, rows], np.r_[lo, hi])), shape=shape)
    # outward flux of the low cell is +F, of the high cell -F
    area = sp.csr_matrix((np.r_[lengths, -lengths], (np.r_[lo, hi], np.r_[rows, rows])), shape=(Nx * Ny, nf))
    return grad, avg, area


def assemble_spatial_operator(field: CoefficientField, grid: Grid, b: float | None = None) -> SparseOperator:
    """Assemble ``L(t)`` from sampled coefficients.

    ``b`` only distinguishes Dirichlet (``b == 1``) from Robin-type rows; the
    Robin coefficients themselves come from ``field.kappa``.
    """
    dirichlet = grid.dirichlet if b is None else (b == 1.0)
    if dirichlet != grid.dirichlet:
        raise ProblemError("grid and boundary parameter disagree about Dirichlet conditions")
    if grid.nx < 1 or (grid.dim == 2 and grid.ny < 1):
        raise ProblemError("degenerate grid")
    Nx, Ny = grid.shape
    N = Nx * Ny
    hx, hy = grid.hx, grid.hy
    wx, wy = grid.cell_widths
    W = grid.weights_full
    two_d = grid.dim == 2

    Dx_t = _diff_matrix(Nx, Ny, 0, hx)
    Dy_t = _diff_matrix(Nx, Ny, 1, hy) if two_d else None

    len_x = np.broadcast_to(wy[None, :], (Nx - 1, Ny)).ravel()
    gx, avx, sx = _face_operators(Nx, Ny, 0, hx, len_x)
    flux_x = sp.diags(avx @ field.a11) @ gx
    div_flux = sx @ flux_x
    if two_d:
        flux_x = flux_x + sp.diags(avx @ field.a12) @ avx @ Dy_t
        div_flux = sx @ flux_x
        len_y = np.broadcast_to(wx[:, None], (Nx, Ny - 1)).ravel()
        gy, avy, sy = _face_operators(Nx, Ny, 1, hy, len_y)
        flux_y = sp.diags(avy @ field.a22) @ gy + sp.diags(avy @ field.a12) @ avy @ Dx_t
        div_flux = div_flux + sy @ flux_y
    L = -sp.diags(1.0 / W) @ div_flux

    # first-order term; boundary rows take the normal derivative from the BC
    Dx, Dy = Dx_t, Dy_t
    if not dirichlet:
        boundary_diag = np.zeros(N)
        kap = {}
        for face in field.kappa:
            mask = grid.face_mask(face)
            axis, _ = FACE_NORMAL[face]
            length = np.outer(np.ones(Nx), wy).ravel() if axis == 0 else np.outer(wx, np.ones(Ny)).ravel()
            k = np.where(mask, field.kappa[face], 0.0)
            boundary_diag += k * length / W
            kap[face] = (mask, k)
        L = L + sp.diags(boundary_diag)
        Dx, Dy = _boundary_gradients(field, grid, kap, Dx_t, Dy_t)

    drift = sp.diags(field.dm[0]) @ Dx
    if two_d:
        drift = drift + sp.diags(field.dm[1]) @ Dy
    L = (L - drift + sp.diags(field.V)).tocsr()

    unk = grid.unknown
    if dirichlet:
        L = L[unk][:, unk]
    L.sum_duplicates()
    L.eliminate_zeros()
    return SparseOperator(L.tocsr(), grid, field.t, 1.0 if dirichlet else (b if b is not None else 0.0))


def _boundary_gradients(field, grid, kap, Dx_t, Dy_t):
    """Node gradient matrices whose boundary rows satisfy the Robin condition."""
    N = grid.Nx * grid.Ny
    on_x = np.zeros(N, bool)
    on_y = np.zeros(N, bool)
    kx = np.zeros(N)
    ky = np.zeros(N)
    nx_sign = np.zeros(N)
    ny_sign = np.zeros(N)
    for face, (mask, k) in kap.items():
        axis, sign = FACE_NORMAL[face]
        if axis == 0:
            on_x |= mask
            kx = np.where(mask, k, kx)
            nx_sign = np.where(mask, sign, nx_sign)
        else:
            on_y |= mask
            ky = np.where(mask, k, ky)
            ny_sign = np.where(mask, sign, ny_sign)

    if grid.dim == 1:
        keep = sp.diags((~on_x).astype(float))
        bc = sp.diags(np.where(on_x, -kx * nx_sign / field.a11, 0.0))
        return keep @ Dx_t + bc, None

    a11, a12, a22 = field.a11, field.a12, field.a22
    corner = on_x & on_y
    edge_x = on_x & ~corner
    edge_y = on_y & ~corner
    interior = ~(on_x | on_y)
    P = lambda mask: sp.diags(mask.astype(float))
    # x-faces: a11 phi_x + a12 phi_y = -kappa n_x phi, with phi_y tangential
    bx_rows = sp.diags(-kx * nx_sign / a11) - sp.diags(a12 / a11) @ Dy_t
    by_rows = sp.diags(-ky * ny_sign / a22) - sp.diags(a12 / a22) @ Dx_t
    # corners: A grad phi = (-kx n_x, -ky n_y) phi
    det = a11 * a22 - a12**2
    gx_c = (a22 * (-kx * nx_sign) - a12 * (-ky * ny_sign)) / det
    gy_c = (-a12 * (-kx * nx_sign) + a11 * (-ky * ny_sign)) / det
    Dx = P(interior | edge_y) @ Dx_t + P(edge_x) @ bx_rows + sp.diags(np.where(corner, gx_c, 0.0))
    Dy = P(interior | edge_x) @ Dy_t + P(edge_y) @ by_rows + sp.diags(np.where(corner, gy_c, 0.0))
    return Dx.tocsr(), Dy.tocsr()


# -- elliptic principal eigenvalue --------------------------------------------


@dataclass(frozen=True, eq=False)
class EllipticEig:
    """Principal eigenpair; ``psi`` is positive with ``sum(w psi^2) = 1``."""

    lam: float
    psi: np.ndarray
    residual: float
    iterations: int
    shift: float


def elliptic_principal_eig(op: SparseOperator, tol: float = DEFAULT_TOL, maxiter: int = DEFAULT_MAXITER) -> EllipticEig:
    """Principal eigenpair of ``op`` by shifted inverse iteration.

    The shift sits strictly below the Gershgorin lower bound, so for the
    Z-matrices produced by the assembly ``L - shift I`` is a nonsingular
    M-matrix and its inverse maps positive vectors to positive vectors.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    L = op.matrix.tocsc()
    w = op.grid.w
    lower, upper = gershgorin_bounds(L)
    shift = lower - 0.5 * max(1.0, 1e-3 * abs(lower))
    lu = splu((L - shift * sp.identity(L.shape[0], format="csc")).tocsc())

    x = np.ones(L.shape[0])
    lam = np.nan
    res = np.inf
    # residuals cannot drop much below eps * ||L||
    floor = 8 * np.finfo(float).eps * max(abs(lower), abs(upper))
    for it in range(1, maxiter + 1):
        y = lu.solve(x)
        y /= np.max(np.abs(y))
        Ly = L @ y
        lam = float((w * y) @ Ly / ((w * y) @ y))
        res = float(np.max(np.abs(Ly - lam * y)))
        x = y
        if res <= max(0.5 * tol, floor):  # margin for the final rescaling
            break
    else:
        raise NonConvergence("inverse iteration did not converge", res, maxiter)

    x = x if x.sum() > 0 else -x
    if np.min(x) <= 0:
        raise PositivityLoss(f"principal eigenvector not positive (min {np.min(x):.3e})")
    x = x / np.sqrt(w @ x**2)
    return EllipticEig(lam, x, res, it, shift)


# -- slices and the two limit problems -----------------------------------------


@lru_cache(maxsize=8)
def slice_fields(spec: ProblemSpec, grid: Grid) -> tuple:
    """Coefficient fields at the ``grid.nt`` periodic time slices."""
    return tuple(sample_coefficients(spec, grid, t) for t in grid.t)


@lru_cache(maxsize=8)
def slice_operators(spec: ProblemSpec, grid: Grid) -> tuple:
    """Assembled ``L(t_k)``, k = 0..nt-1 (slice nt coincides with slice 0)."""
    return tuple(assemble_spatial_operator(f, grid, spec.b) for f in slice_fields(spec, grid))


@lru_cache(maxsize=8)
def frozen_time_eigs(spec: ProblemSpec, grid: Grid, tol: float = DEFAULT_TOL) -> tuple:
    """Frozen-time eigenvalues ``lambda0(t_k)`` and eigenvectors, one per slice."""
    lams = np.empty(grid.nt)
    psis = np.empty((grid.nt, grid.n))
    for k, op in enumerate(slice_operators(spec, grid)):
        try:
            eig = elliptic_principal_eig(op, tol)
        except NonConvergence as exc:
            raise NonConvergence(f"time slice {k} (t={grid.t[k]:.6g})", exc.residual, exc.iterations) from exc
        except SolverError as exc:
            raise type(exc)(f"time slice {k} (t={grid.t[k]:.6g}): {exc}") from exc
        lams[k] = eig.lam
        psis[k] = eig.psi
    lams.setflags(write=False)
    psis.setflags(write=False)
    return lams, psis


def frozen_time_average(spec: ProblemSpec, grid: Grid, nt: int | None = None, tol: float = DEFAULT_TOL) -> float:
    """Periodic-trapezoid mean of the frozen-time eigenvalue over one period."""
    if nt is not None:
        if nt < 2:
            raise ValueError("nt must be at least 2")
        grid = grid.with_nt(nt)
    lams, _ = frozen_time_eigs(spec, grid, tol)
    return float(grid.time_weights @ lams)


def averaged_problem_eig(spec: ProblemSpec, grid: Grid, nt: int | None = None, tol: float = DEFAULT_TOL) -> EllipticEig:
    """Principal eigenpair of the problem with time-averaged coefficients."""
    if nt is not None:
        if nt < 2:
            raise ValueError("nt must be at least 2")
        grid = grid.with_nt(nt)
    mean_field = CoefficientField.average(slice_fields(spec, grid))
    return elliptic_principal_eig(assemble_spatial_operator(mean_field, grid, spec.b), tol)
