"""Verification quantities built on a computed Floquet pair.

All space-time integrals use the grid quadrature: trapezoid weights in space
and uniform periodic weights in time. Time derivatives of positive functions
are taken in log form, ``tau * (log z[k+1] - log z[k-1]) / (2 dt)``, which is
the centred periodic difference of ``z_t / z``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConeError, ProblemError
from .expression import Num, add, div, mul, sub
from .floquet import FloquetSolution, principal_floquet
from .problem import (
    CONST_A_GRADIENT_DRIFT,
    FACE_NORMAL,
    GENERAL,
    M_ZERO,
    Grid,
    ProblemSpec,
    classify,
    constant_diffusion,
    m_gradient,
)
from .spatial import _diff_matrix, frozen_time_eigs, slice_fields, slice_operators

DEFAULT_SLACK = 1e-4
LOG_FLOOR = 1e-13


# -- cone functions ------------------------------------------------------------


class ConeFunction:
    """Positive periodic space-time function on the unknowns of a grid.

    ``values`` has shape ``(nt, n)``; slice ``nt`` is slice 0. Under
    Dirichlet conditions the boundary nodes are not unknowns, so ``zeta``
    vanishes there and is positive next to it, which is the discrete
    version of an inward-pointing positive normal derivative.
    """

    def __init__(self, values, grid: Grid):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != grid.n:
            raise ConeError(f"expected shape (nt, {grid.n}), got {values.shape}")
        if values.shape[0] < 2:
            raise ConeError("need at least two time slices")
        if not np.all(np.isfinite(values)):
            raise ConeError("non-finite entries")
        if np.min(values) <= 0:
            k, i = np.unravel_index(np.argmin(values), values.shape)
            raise ConeError(f"not positive: value {values[k, i]:.3e} at slice {k}, unknown {i}")
        self.values = values
        self.grid = grid.with_nt(values.shape[0])

    @property
    def nt(self) -> int:
        return self.values.shape[0]

    def __mul__(self, c: float) -> "ConeFunction":
        return ConeFunction(self.values * c, self.grid)

    __rmul__ = __mul__

    @classmethod
    def bump(cls, sol: FloquetSolution, grid: Grid, amplitude: float = 0.5) -> "ConeFunction":
        """``u * (1 + amplitude * c(x) cos(2 pi t))`` with ``c`` a cosine bump
        whose normal derivative vanishes on the boundary, so the product keeps
        the boundary condition satisfied by ``u``."""
        if not 0 <= amplitude < 1:
            raise ValueError("amplitude must lie in [0, 1)")
        grid = grid.with_nt(sol.nt)
        shape = 1.0
        for axis, (lo, hi) in enumerate(grid.domain):
            x = grid.coords[axis].ravel()[grid.unknown]
            shape = shape * np.cos(math.pi * (x - lo) / (hi - lo))
        factor = 1.0 + amplitude * np.cos(2 * math.pi * grid.t)[:, None] * shape[None, :]
        return cls(sol.u * factor, grid)


def _as_cone(zeta, grid: Grid) -> ConeFunction:
    return zeta if isinstance(zeta, ConeFunction) else ConeFunction(zeta, grid)


def _solution_grid(sol: FloquetSolution, grid: Grid, zeta: ConeFunction | None = None) -> Grid:
    if grid.n != sol.u.shape[1]:
        raise ValueError("solution and grid have different unknown counts")
    if zeta is not None and zeta.nt != sol.nt:
        raise ConeError(f"trial function has {zeta.nt} slices, solution has {sol.nt}")
    return grid.with_nt(sol.nt)


def _log_time_derivative(log_z: np.ndarray) -> np.ndarray:
    nt = log_z.shape[0]
    return (np.roll(log_z, -1, axis=0) - np.roll(log_z, 1, axis=0)) * (nt / 2.0)


# -- the functional J and the lemma identity -----------------------------------


def evaluate_J(sol: FloquetSolution, zeta, spec: ProblemSpec, grid: Grid) -> float:
    """Quadrature of ``u v (tau zeta_t + L zeta) / zeta`` over one period."""
    grid = _solution_grid(sol, grid)
    zeta = _as_cone(zeta, grid)
    _solution_grid(sol, grid, zeta)
    ops = slice_operators(spec, grid)
    z = zeta.values
    ratio = np.array([ops[k].matrix @ z[k] for k in range(grid.nt)]) / z
    return grid.integrate(sol.u * sol.v * (sol.tau_eff * _log_time_derivative(np.log(z)) + ratio))


def _edge_data(grid: Grid, axis: int):
    """Node pairs along ``axis`` restricted to unknowns, with face lengths."""
    idx = np.arange(grid.Nx * grid.Ny).reshape(grid.shape)
    lo = (idx[:-1, :] if axis == 0 else idx[:, :-1]).ravel()
    hi = (idx[1:, :] if axis == 0 else idx[:, 1:]).ravel()
    wx, wy = grid.cell_widths
    if axis == 0:
        length = np.broadcast_to(wy[None, :], (grid.Nx - 1, grid.Ny)).ravel()
    else:
        length = np.broadcast_to(wx[:, None], (grid.Nx, grid.Ny - 1)).ravel()
    pos = np.full(grid.Nx * grid.Ny, -1)
    pos[grid.unknown] = np.arange(grid.n)
    keep = (pos[lo] >= 0) & (pos[hi] >= 0)
    h = grid.hx if axis == 0 else grid.hy
    return pos[lo[keep]], pos[hi[keep]], length[keep], h, lo[keep], hi[keep]


def log_ratio_form(u, v, r, spec: ProblemSpec, grid: Grid) -> float:
    """``sum_k dt  int u v grad r . A grad r`` for a log-ratio ``r`` (nt, n).

    Diagonal terms use edge differences with the weight ``u v`` and the
    entries of ``A`` averaged to the edge midpoint; the 2D mixed term uses
    node-centred gradients. Nodes where ``u`` or ``v`` falls below
    ``1e-13 * max`` are left out together with their edges.
    """
    fields = slice_fields(spec, grid)
    unk = grid.unknown
    ok = (u >= LOG_FLOOR * np.max(u)) & (v >= LOG_FLOOR * np.max(v))
    uv = np.where(ok, u * v, 0.0)
    r = np.where(ok, r, 0.0)
    axes = [0] if grid.dim == 1 else [0, 1]
    total = np.zeros(grid.nt)
    for axis in axes:
        i, j, length, h, gi, gj = _edge_data(grid, axis)
        for k, f in enumerate(fields):
            a = f.a11 if axis == 0 else f.a22
            a_mid = 0.5 * (a[gi] + a[gj])
            both = ok[k, i] & ok[k, j]
            w_mid = 0.5 * (uv[k, i] + uv[k, j])
            grad = (r[k, j] - r[k, i]) / h
            total[k] += np.sum(np.where(both, length * h * a_mid * w_mid * grad**2, 0.0))
    if grid.dim == 2:
        Dx = _diff_matrix(grid.Nx, grid.Ny, 0, grid.hx)
        Dy = _diff_matrix(grid.Nx, grid.Ny, 1, grid.hy)
        W = grid.weights_full
        for k, f in enumerate(fields):
            full_r = grid.expand(r[k])
            full_ok = np.zeros(grid.Nx * grid.Ny, bool)
            full_ok[unk] = ok[k]
            # a node-centred gradient needs valid neighbours
            valid = full_ok & (np.abs(Dx) @ (~full_ok).astype(float) == 0) & (np.abs(Dy) @ (~full_ok).astype(float) == 0)
            cross = 2 * f.a12 * (Dx @ full_r) * (Dy @ full_r) * grid.expand(uv[k])
            total[k] += np.sum(np.where(valid, W * cross, 0.0))
    return float(grid.time_weights @ total)


def lemma_identity_residual(sol: FloquetSolution, zeta, spec: ProblemSpec, grid: Grid) -> float:
    """``|J(u) - J(zeta) - int u v grad log(zeta/u) . A grad log(zeta/u)|``."""
    if classify(spec) != M_ZERO:
        raise ProblemError("the identity is stated for problems without drift (m constant)")
    grid = _solution_grid(sol, grid)
    zeta = _as_cone(zeta, grid)
    _solution_grid(sol, grid, zeta)
    u = ConeFunction(sol.u, grid)
    r = np.log(zeta.values) - np.log(sol.u)
    quad = log_ratio_form(sol.u, sol.v, r, spec, grid)
    return abs(evaluate_J(sol, u, spec, grid) - evaluate_J(sol, zeta, spec, grid) - quad)


# -- derivative of lambda in tau -------------------------------------------------


def dlambda_dtau_formula(sol: FloquetSolution, spec: ProblemSpec, grid: Grid) -> float:
    """``(1 / (2 tau)) int u v grad log(v/u) . A grad log(v/u)``.

    For constant ``A = D I`` with a time-independent drift potential the
    log-ratio is taken in the gauge-transformed variables, i.e. ``m / D`` is
    subtracted from ``log(v/u)``.
    """
    cls = classify(spec)
    if cls == GENERAL:
        raise ProblemError("derivative formula needs m constant or A = D I with time-independent m")
    grid = _solution_grid(sol, grid)
    r = np.log(np.maximum(sol.v, 1e-300)) - np.log(np.maximum(sol.u, 1e-300))
    if cls == CONST_A_GRADIENT_DRIFT:
        D = constant_diffusion(spec)
        coords = {"x": grid.coords[0].ravel()[grid.unknown]}
        if grid.dim == 2:
            coords["y"] = grid.coords[1].ravel()[grid.unknown]
        m = np.broadcast_to(np.asarray(spec.m(**coords), dtype=float), (grid.n,))
        r = r - m[None, :] / D
    return log_ratio_form(sol.u, sol.v, r, spec, grid) / (2.0 * sol.tau)


def fd_step(tau: float) -> float:
    """Central-difference step used for the derivative oracle."""
    return min(max(1e-3, 1e-3 * tau), 0.5 * tau)


@dataclass(frozen=True)
class DerivativeReport:
    tau: float
    dlambda_formula: float
    dlambda_fd: float
    delta: float

    @property
    def relative_gap(self) -> float:
        return abs(self.dlambda_formula - self.dlambda_fd) / max(abs(self.dlambda_fd), 1e-12)


def derivative_report(spec, grid, tau, delta=None, sol=None, tol=1e-10) -> DerivativeReport:
    """Formula value next to the central finite difference of ``lambda``."""
    delta = fd_step(tau) if delta is None else delta
    sol = principal_floquet(spec, grid, tau, tol=tol) if sol is None else sol
    g = grid.with_nt(sol.nt)
    plus = principal_floquet(spec, g, tau + delta, tol=tol).lam
    minus = principal_floquet(spec, g, tau - delta, tol=tol).lam
    return DerivativeReport(tau, dlambda_dtau_formula(sol, spec, g), (plus - minus) / (2 * delta), delta)


# -- gauge transformation ------------------------------------------------------


def gauge_transform(spec: ProblemSpec, D: float | None = None) -> ProblemSpec:
    """Remove the drift of a problem with ``A = D I`` and time-independent m.

    ``u = exp(-m / 2D) phi`` turns the problem into a drift-free one with
    potential ``h = lap(m)/2 + |grad m|^2/(4D) + V`` and Robin coefficient
    ``kappa - (grad m . n)/2`` on each face; Dirichlet conditions are kept.
    """
    from .problem import build_problem

    D_spec = constant_diffusion(spec)
    if D_spec is None:
        raise ProblemError("gauge transform needs A = D I with constant D")
    if D is not None and not math.isclose(D, D_spec, rel_tol=1e-12):
        raise ProblemError(f"D = {D} does not match the diffusion {D_spec} of the problem")
    if "t" in spec.m.variables():
        raise ProblemError("gauge transform needs a time-independent drift potential")
    grad = m_gradient(spec)
    if grad is None:
        raise ProblemError("drift potential is not differentiable by the expression engine")
    if classify(spec) == M_ZERO:
        return spec
    D = D_spec
    names = ("x", "y")[: spec.dim]
    lap = Num(0.0)
    sq = Num(0.0)
    for name, g in zip(names, grad):
        lap = add(lap, g.derivative(name))
        sq = add(sq, mul(g, g))
    h = add(add(div(lap, Num(2.0)), div(sq, Num(4.0 * D))), spec.V)
    robin = {}
    if not spec.dirichlet:
        for face in spec.faces:
            axis, sign = FACE_NORMAL[face]
            robin[face] = sub(spec.kappa(face), mul(Num(0.5 * sign), grad[axis]))
    A = str(spec.A[0][0]) if spec.dim == 1 else [[str(e) for e in row] for row in spec.A]
    domain = spec.domain[0] if spec.dim == 1 else spec.domain
    return build_problem(
        dim=spec.dim,
        domain=domain,
        b=spec.b,
        period=spec.period,
        A=A,
        m="0",
        V=h,
        robin=robin or None,
        name=f"{spec.name}-gauge" if spec.name else "",
    )


# -- small-tau sub-solution ----------------------------------------------------


def subsolution_rho(lambda0_samples, tau: float) -> np.ndarray:
    """Periodic weight ``rho(t) = exp[(t * mean - int_0^t lambda0) / tau]``.

    ``lambda0_samples`` are values at ``t_k = k/nt``, k = 0..nt-1. Returns
    ``rho`` at the ``nt + 1`` points ``t_0..t_nt``; both ends equal 1.
    """
    lam = np.asarray(lambda0_samples, dtype=float)
    nt = len(lam)
    if nt < 1:
        raise ValueError("need at least one sample")
    if not tau > 0:
        raise ValueError("tau must be positive")
    closed = np.append(lam, lam[0])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (closed[1:] + closed[:-1]) / nt)])
    t = np.arange(nt + 1) / nt
    expo = (t * cum[-1] - cum) / tau
    expo[-1] = 0.0
    return np.exp(expo)


@dataclass(frozen=True, eq=False)
class SubsolutionCheck:
    residual: np.ndarray  # (nt, n)
    rho: np.ndarray  # (nt + 1,)
    tau_star: float  # largest tau with tau * max|d/dt log u0| <= eps

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))


def subsolution_residual(spec: ProblemSpec, grid: Grid, tau: float, eps: float) -> SubsolutionCheck:
    """Nodewise residual of ``tau w_t + L w - (mean lambda0 + eps) w`` for
    ``w = rho(t) u0(x, t)`` with ``u0`` the frozen-time eigenfunctions."""
    lams, psis = frozen_time_eigs(spec, grid)
    tau_eff = spec.tau_eff(tau)
    rho = subsolution_rho(lams, tau_eff)
    mean = float(grid.time_weights @ lams)
    ops = slice_operators(spec, grid)
    log_psi = np.log(psis)
    dlog_psi = _log_time_derivative(log_psi)
    dlog_rho = _log_time_derivative(np.log(rho[:-1])[:, None])
    Lpsi = np.array([ops[k].matrix @ psis[k] for k in range(grid.nt)]) / psis
    w = rho[:-1, None] * psis
    residual = w * (tau_eff * (dlog_rho + dlog_psi) + Lpsi - (mean + eps))
    rate = float(np.max(np.abs(dlog_psi)))
    tau_star = math.inf if rate == 0 else eps / rate * spec.period
    return SubsolutionCheck(residual, rho, tau_star)


# -- theorem verdicts ----------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    spec_class: str
    monotone: bool
    constant: bool
    bounds_ok: object  # bool, or "n/a"
    max_violation: float
    slack: float
    verdict: str
    asserted: bool
    ok: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class"] = d.pop("spec_class")
        return d


def check_theorems(sweep, spec_class: str, separable: bool | None = None, slack: float = DEFAULT_SLACK) -> Verdict:
    """Monotonicity, constancy and bound verdicts for a tau sweep.

    ``sweep`` needs ``rows`` (objects with ``tau`` and ``lam``; failed rows
    carry ``lam = None``) and optionally ``limits`` with ``int_lambda0`` and
    ``lambda_inf``. The checks are only asserted for the covered classes;
    for ``general`` the outcome is reported but never counted as a failure.
    """
    if spec_class not in (M_ZERO, CONST_A_GRADIENT_DRIFT, GENERAL):
        raise ValueError(f"unknown class {spec_class!r}")
    if separable is None:
        separable = bool(getattr(sweep, "separable", False))
    rows = sorted((r for r in sweep.rows if r.lam is not None), key=lambda r: r.tau)
    lams = np.array([r.lam for r in rows], dtype=float)
    drops = np.maximum(lams[:-1] - lams[1:], 0.0) if len(lams) > 1 else np.zeros(0)
    worst_drop = float(drops.max()) if drops.size else 0.0
    monotone = worst_drop <= slack
    spread = float(lams.max() - lams.min()) if lams.size else 0.0
    constant = spread <= slack

    asserted = spec_class != GENERAL
    limits = getattr(sweep, "limits", None) or {}
    lo, hi = limits.get("int_lambda0"), limits.get("lambda_inf")
    violation = worst_drop
    if asserted and lo is not None and hi is not None and lams.size:
        below = float(np.max(lo - lams))
        above = float(np.max(lams - hi))
        bounds_ok = bool(max(below, above) <= slack)
        violation = max(violation, below, above)
    else:
        bounds_ok = "n/a"

    if not asserted:
        verdict = "monotone observed" if monotone else "non-monotone observed"
        ok = True
    else:
        passed = monotone and bounds_ok in (True, "n/a") and (constant or not separable)
        if separable and constant and passed:
            verdict = "constant"
        elif passed:
            verdict = "monotone"
        else:
            verdict = "violation"
        ok = passed
    return Verdict(spec_class, bool(monotone), bool(constant), bounds_ok, max(violation, 0.0), slack, verdict, asserted, ok)
