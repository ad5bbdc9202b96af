"""Principal periodic eigenvalue through the period (monodromy) map.

If ``tau u_t + L(t) u = lambda u`` with ``u`` periodic, then
``w = exp(-lambda t / tau) u`` solves ``tau w_t = -L(t) w`` and the period map
``P`` has the dominant eigenvalue ``mu = exp(-lambda / tau)``.

Each Crank-Nicolson step is applied to the shifted operators
``L(t_k) - c_k`` with ``c_k`` the frozen-time principal eigenvalue; the shift
is restored exactly through the scalar factor ``exp(-dt (c_k + c_k+1)/(2 tau))``.
This keeps the iterated map well scaled at small ``tau`` and makes problems
whose time dependence is a pure additive function of ``t`` exact in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NonConvergence, PositivityLoss, ProblemError, SingularStep, SolverError
from .problem import Grid, ProblemSpec
from .spatial import frozen_time_eigs, slice_operators

DEFAULT_TOL = 1e-10
DEFAULT_MAXITER = 50_000
DENSE_LIMIT = 1500
ORACLE_LIMIT = 5000
N_RITZ = 3
EPS = np.finfo(float).eps
# fixed cost of one sparse solve, in right-hand-side columns
SOLVE_OVERHEAD = 16


@dataclass(frozen=True)
class EvolutionState:
    w: np.ndarray
    k: int = 0


@dataclass(frozen=True, eq=False)
class FloquetSolution:
    """Principal Floquet pair on a grid.

    ``u`` and ``v`` have shape ``(nt, n)``: one row per time slice ``k/nt``
    (slice ``nt`` equals slice 0 and is not stored). ``mu`` is the dominant
    eigenvalue of the internal unit-period map; it can underflow to 0 for
    very small ``tau``, in which case ``log_mu`` still carries it.
    """

    tau: float
    tau_eff: float
    lam: float
    log_mu: float
    u: np.ndarray
    v: np.ndarray
    iterations: int
    residual: float
    gap: float
    scheme: str
    nt: int

    @property
    def mu(self) -> float:
        return math.exp(self.log_mu)

    @property
    def lambda_(self) -> float:
        return self.lam


# -- discretisation ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Slices:
    ops: tuple  # csr L(t_k), k = 0..nt-1
    shift: np.ndarray  # c_k
    n: int
    nt: int


@lru_cache(maxsize=8)
def _slices(spec: ProblemSpec, grid: Grid) -> _Slices:
    ops = tuple(op.matrix for op in slice_operators(spec, grid))
    lams, _ = frozen_time_eigs(spec, grid)
    return _Slices(ops, np.array(lams), grid.n, grid.nt)


def _shift_integral(shift: np.ndarray, scheme: str) -> np.ndarray:
    """Cumulative quadrature F_k of the shift, k = 0..nt, matching the scheme."""
    nt = len(shift)
    dt = 1.0 / nt
    nxt = np.roll(shift, -1)
    per_step = 0.5 * dt * (shift + nxt) if scheme == "cn" else dt * nxt
    return np.concatenate([[0.0], np.cumsum(per_step)])


class _Stepper:
    """Per-call step maps ``M_k`` of the shifted scheme on one grid.

    ``forward(x, k)`` applies ``M_k`` (slice k -> k+1) and ``adjoint(z, k)``
    its transpose in the ``w``-weighted inner product. Factorisations are
    owned by the instance and reused between identical steps.
    """

    def __init__(self, slices: _Slices, tau_eff: float, scheme: str = "cn", shifted: bool = True, w=None):
        if scheme not in ("cn", "ie"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        self.nt = slices.nt
        self.n = slices.n
        self.w = w
        self.dt = 1.0 / slices.nt
        self.tau_eff = tau_eff
        self.shift = slices.shift if shifted else np.zeros(slices.nt)
        eye = sp.identity(slices.n, format="csr")
        shifted_ops = [L - c * eye for L, c in zip(slices.ops, self.shift)]
        alpha = self.dt / (2.0 * tau_eff) if scheme == "cn" else self.dt / tau_eff
        self._lus = []
        self._rhs = []
        prev_B = prev_lu = None
        for k in range(self.nt):
            Lnext = shifted_ops[(k + 1) % self.nt]
            B = (eye + alpha * Lnext).tocsc()
            if prev_B is not None and B.shape == prev_B.shape and (B != prev_B).nnz == 0:
                lu = prev_lu
            else:
                try:
                    lu = splu(B)
                except RuntimeError as exc:
                    raise SingularStep(f"step matrix {k} is singular: {exc}") from exc
            self._lus.append(lu)
            self._rhs.append(None if scheme == "ie" else (eye - alpha * shifted_ops[k]).tocsr())
            prev_B, prev_lu = B, lu
        self.F = _shift_integral(self.shift, scheme)

    def forward(self, x, k):
        rhs = x if self._rhs[k] is None else self._rhs[k] @ x
        return self._lus[k].solve(rhs)

    def adjoint(self, z, k):
        w = self.w if z.ndim == 1 else self.w[:, None]
        y = self._lus[k].solve(w * z, trans="T")
        if self._rhs[k] is not None:
            y = self._rhs[k].T @ y
        return y / w

    def log_scalar(self, k) -> float:
        """Log of the scalar factor restoring the shift over step k."""
        return -(self.F[k + 1] - self.F[k]) / self.tau_eff

    def sweep(self, X, reverse=False):
        """Apply the full shifted period map (or its adjoint), normalising on
        the way. Returns the result and the accumulated log scale."""
        logs = 0.0
        steps = range(self.nt - 1, -1, -1) if reverse else range(self.nt)
        for k in steps:
            X = self.adjoint(X, k) if reverse else self.forward(X, k)
            s = np.max(np.abs(X))
            if not np.isfinite(s):
                raise SolverError("non-finite iterate during time stepping")
            if s == 0.0:
                return X, -np.inf
            X = X / s
            logs += math.log(s)
        return X, logs

    def dense_map(self, adjoint=False):
        """Dense shifted period map as (matrix, log scale)."""
        return self.sweep(np.eye(self.n), reverse=adjoint)


def _check_tau(tau: float) -> None:
    if not (tau > 0) or not math.isfinite(tau):
        raise ValueError(f"tau must be positive and finite, got {tau}")


# -- public stepping API -------------------------------------------------------


def step_evolution(
    state: EvolutionState,
    spec: ProblemSpec,
    grid: Grid,
    tau: float,
    dt: float | None = None,
    scheme: str = "cn",
    shifted: bool = False,
) -> EvolutionState:
    """One step of ``tau w_t = -L(t) w`` from slice ``state.k`` to ``k+1``.

    With ``scheme='cn'`` this solves
    ``(I + dt/(2 tau) L(t+dt)) w+ = (I - dt/(2 tau) L(t)) w``; ``'ie'`` is
    implicit Euler. ``shifted=True`` uses the integrating-factor form of the
    solver (same order, exact for additive time dependence).
    """
    _check_tau(tau)
    if dt is not None and not math.isclose(dt, grid.dt, rel_tol=1e-12):
        raise ValueError(f"dt must be 1/nt = {grid.dt}, got {dt}")
    stepper = _Stepper(_slices(spec, grid), spec.tau_eff(tau), scheme, shifted, grid.w)
    k = state.k % grid.nt
    w = stepper.forward(np.asarray(state.w, dtype=float), k) * math.exp(stepper.log_scalar(k))
    return EvolutionState(w, state.k + 1)


def period_map_apply(w0, spec: ProblemSpec, grid: Grid, tau: float, nt: int | None = None, shifted: bool = True):
    """Apply the period map ``P`` (one internal period of ``nt`` steps)."""
    _check_tau(tau)
    if nt is not None:
        grid = grid.with_nt(nt)
    if grid.nt < 16:
        raise ValueError("period_map_apply needs nt >= 16")
    stepper = _Stepper(_slices(spec, grid), spec.tau_eff(tau), "cn", shifted, grid.w)
    x = np.asarray(w0, dtype=float)
    if not np.any(x):
        return np.zeros_like(x)
    x, logs = stepper.sweep(x)
    return x * math.exp(logs - stepper.F[-1] / stepper.tau_eff)


# -- dominant eigenpair of the period map --------------------------------------


@dataclass
class _Dominant:
    x: np.ndarray
    log_nu: float
    iterations: int
    residual: float
    gap: float


def _orthonormalise(Y):
    Q, R = np.linalg.qr(Y)
    # keep column 0 aligned with the plain power iterate
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _dominant(apply_block, n, tol, maxiter, densify=None, rng_seed=0) -> _Dominant:
    """Block power iteration for the dominant eigenpair of a positive map.

    ``apply_block(X)`` returns ``(P X / s, log s)``. ``densify()`` returns the
    same map as a normalised dense matrix with its log scale; it is called
    once the observed contraction predicts more work than building it, after
    which the iteration squares the matrix whenever contraction is slow.
    """
    rng = np.random.default_rng(rng_seed)
    k = min(N_RITZ, n)
    X = np.empty((n, k))
    X[:, 0] = 1.0 / math.sqrt(n)
    if k > 1:
        X[:, 1:] = rng.standard_normal((n, k - 1))
    X = _orthonormalise(X)
    P = Q = None
    dense_logs = 0.0
    squarings = 0
    prev_drift = None
    drift = math.inf
    q = 1.0
    it = 0
    polish = 0
    while True:
        it += 1
        if it > maxiter:
            raise NonConvergence("power iteration on the period map did not converge", drift, maxiter)
        Y = Q @ X if Q is not None else apply_block(X)[0]
        if not np.all(np.isfinite(Y)):
            raise SolverError("non-finite values in power iteration")
        Xn = _orthonormalise(Y)
        if Xn[:, 0].sum() < 0:
            Xn[:, 0] *= -1.0
        drift = float(np.max(np.abs(Xn[:, 0] - X[:, 0])))
        if prev_drift and drift > 0:
            q = min(drift / prev_drift, 1.0)
        prev_drift = drift
        X = Xn
        # at round-off the contraction estimate is noise; the iterate is stationary
        if drift < tol and (drift <= 64 * EPS or (q < 1.0 and drift * q / (1.0 - q) < tol)):
            if Q is None or polish >= 20:
                break
            # dense iteration is cheap: polish towards round-off
            if _eig_residual(P, X[:, 0]) <= max(1e-3 * tol, 1e-14):
                break
            polish += 1
        if Q is None and densify is not None and it >= 4:
            remaining = math.log(tol / drift) / math.log(q) if 0 < q < 1 and drift > tol else 0.0
            if q >= 1.0 or remaining * (k + SOLVE_OVERHEAD) > n + SOLVE_OVERHEAD:
                P, dense_logs = densify()
                Q = P
                prev_drift = None
                continue
        if Q is not None and q > 0.5 and squarings < 40:
            Q = Q @ Q
            Q /= np.max(np.abs(Q))
            squarings += 1
            prev_drift = None

    x = X[:, 0]
    if np.min(x) < -1e-10 * np.max(np.abs(x)):
        raise PositivityLoss("dominant iterate of the period map is not one-signed")
    PX, logs = apply_block(X) if P is None else (P @ X, dense_logs)
    H = X.T @ PX
    ritz = np.linalg.eigvals(H)
    order = np.argsort(-np.abs(ritz))
    ritz = ritz[order]
    nu = float(x @ PX[:, 0])
    if nu <= 0 or abs(ritz[0].imag) > 1e-8 * abs(ritz[0]) or ritz[0].real <= 0:
        raise PositivityLoss(f"dominant Ritz value {ritz[0]:.6g} is not real positive")
    res = float(np.max(np.abs(PX[:, 0] - nu * x)) / (nu * np.max(np.abs(x))))
    gap = 1.0 - abs(ritz[1]) / abs(ritz[0]) if len(ritz) > 1 else 1.0
    return _Dominant(x, math.log(nu) + logs, it, res, float(gap))


def _eig_residual(Q, x):
    y = Q @ x
    nu = x @ y
    return float(np.max(np.abs(y - nu * x)) / max(abs(nu) * np.max(np.abs(x)), 1e-300))


def _solve_on_grid(spec, grid, tau, tol, maxiter, scheme):
    tau_eff = spec.tau_eff(tau)
    slices = _slices(spec, grid)
    stepper = _Stepper(slices, tau_eff, scheme, True, grid.w)
    n = grid.n
    # beyond this size the dense map is too costly to build or hold
    can_densify = n <= DENSE_LIMIT
    fwd = _dominant(
        lambda X: stepper.sweep(X), n, tol, maxiter, densify=stepper.dense_map if can_densify else None
    )
    adj = _dominant(
        lambda X: stepper.sweep(X, reverse=True),
        n,
        tol,
        maxiter,
        densify=(lambda: stepper.dense_map(adjoint=True)) if can_densify else None,
    )

    log_mu_shifted = fwd.log_nu
    total_shift = stepper.F[-1]
    lam = -tau_eff * log_mu_shifted + total_shift
    u, v = _reconstruct(stepper, fwd.x, adj.x, lam, grid)
    return dict(
        lam=lam,
        u=u,
        v=v,
        iterations=fwd.iterations + adj.iterations,
        residual=max(fwd.residual, adj.residual),
        gap=fwd.gap,
    )


def _reconstruct(stepper: _Stepper, x0, y0, lam, grid):
    """Space-time eigenfunctions from the dominant vectors of the shifted map
    and its adjoint, normalised to sum dt w u^2 = 1 and sum dt w u v = 1."""
    nt, n = stepper.nt, stepper.n
    tau = stepper.tau_eff
    t = np.arange(nt + 1) / nt
    log_a = (lam * t - stepper.F) / tau

    xs = np.empty((nt, n))
    log_u = np.empty(nt)
    x = x0 / np.max(np.abs(x0))
    ell = 0.0
    for k in range(nt):
        xs[k] = x
        log_u[k] = ell + log_a[k]
        x = stepper.forward(x, k)
        s = np.max(np.abs(x))
        x, ell = x / s, ell + math.log(s)

    zs = np.empty((nt, n))
    log_v = np.empty(nt)
    z = y0 / np.max(np.abs(y0))
    ell = 0.0
    for k in range(nt - 1, -1, -1):
        z = stepper.adjoint(z, k)
        s = np.max(np.abs(z))
        z, ell = z / s, ell + math.log(s)
        zs[k] = z
        log_v[k] = ell - log_a[k]

    u = xs * np.exp(log_u - log_u.max())[:, None]
    v = zs * np.exp(log_v - log_v.max())[:, None]
    u /= math.sqrt(grid.with_nt(nt).integrate(u * u))
    v /= grid.with_nt(nt).integrate(u * v)
    return u, v


def principal_floquet(
    spec: ProblemSpec,
    grid: Grid,
    tau: float,
    nt: int | None = None,
    tol: float = DEFAULT_TOL,
    scheme: str = "auto",
    maxiter: int = DEFAULT_MAXITER,
) -> FloquetSolution:
    """Principal eigenvalue ``lambda(tau)`` with its normalised pair (u, v).

    ``scheme='auto'`` starts with Crank-Nicolson on ``nt`` steps; if the
    dominant iterate loses positivity it retries with ``2 nt`` steps and then
    falls back to implicit Euler with Richardson extrapolation over
    ``nt``/``2 nt``. ``'cn'`` and ``'ie'`` force a single scheme.
    """
    _check_tau(tau)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scheme not in ("auto", "cn", "ie"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if nt is not None:
        grid = grid.with_nt(nt)
    tau_eff = spec.tau_eff(tau)

    def attempt(g, sch):
        for _ in range(3):
            try:
                return g, _solve_on_grid(spec, g, tau, tol, maxiter, sch)
            except SingularStep:
                g = g.with_nt(2 * g.nt)
        raise SingularStep("step matrices stay singular after halving dt twice")

    def finish(g, out, label, lam=None):
        lam = out["lam"] if lam is None else lam
        return FloquetSolution(
            tau=float(tau),
            tau_eff=tau_eff,
            lam=float(lam),
            log_mu=-lam / tau_eff,
            u=out["u"],
            v=out["v"],
            iterations=out["iterations"],
            residual=out["residual"],
            gap=out["gap"],
            scheme=label,
            nt=g.nt,
        )

    if scheme in ("auto", "cn"):
        tries = [grid] if scheme == "cn" else [grid, grid.with_nt(2 * grid.nt)]
        for g in tries:
            try:
                g, out = attempt(g, "cn")
                _require_positive(out)
                return finish(g, out, "cn")
            except PositivityLoss:
                if scheme == "cn":
                    raise
    if scheme == "ie":
        g, out = attempt(grid, "ie")
        _require_positive(out)
        return finish(g, out, "ie")

    g1, coarse = attempt(grid, "ie")
    g2, fine = attempt(grid.with_nt(2 * g1.nt), "ie")
    _require_positive(fine)
    lam = 2.0 * fine["lam"] - coarse["lam"]
    fine["iterations"] += coarse["iterations"]
    return finish(g2, fine, "ie-richardson", lam)


def _require_positive(out):
    for name in ("u", "v"):
        if np.min(out[name]) <= 0:
            raise PositivityLoss(f"eigenfunction {name} is not positive")


# -- residuals -----------------------------------------------------------------


def discrete_residual(sol: FloquetSolution, spec: ProblemSpec, grid: Grid) -> tuple:
    """Relative residuals of the discrete periodic problem for ``u`` and ``v``.

    For Crank-Nicolson this is the step equation
    ``tau (u_k+1 - u_k)/dt + (L_k+1 u_k+1 + L_k u_k)/2 - lambda (u_k+1 + u_k)/2``
    in the integrating-factor form actually solved, measured in the max norm
    relative to ``max |L u|``; the adjoint uses the transposed steps.
    """
    grid = grid.with_nt(sol.nt)
    scheme = "ie" if sol.scheme.startswith("ie") else "cn"
    stepper = _Stepper(_slices(spec, grid), sol.tau_eff, scheme, True, grid.w)
    nt = sol.nt
    t = np.arange(nt + 1) / nt
    log_a = (sol.lam * t - stepper.F) / sol.tau_eff
    if scheme.startswith("ie") and sol.scheme == "ie-richardson":
        # lambda was extrapolated; the stored pair belongs to the fine scheme
        return float("nan"), float("nan")
    u = np.vstack([sol.u, sol.u[:1]])
    v = np.vstack([sol.v, sol.v[:1]])
    scale_u = max(np.max(np.abs(sol.u)), 1e-300)
    scale_v = max(np.max(np.abs(sol.v)), 1e-300)
    ru = rv = 0.0
    for k in range(nt):
        ratio = math.exp(log_a[k + 1] - log_a[k])
        ru = max(ru, np.max(np.abs(u[k + 1] - ratio * stepper.forward(u[k], k))))
        rv = max(rv, np.max(np.abs(v[k] - ratio * stepper.adjoint(v[k + 1], k))))
    return float(ru / scale_u), float(rv / scale_v)


# -- dense space-time oracle ---------------------------------------------------


def spacetime_oracle_eig(spec: ProblemSpec, grid: Grid, tau: float, nt: int | None = None, scheme: str = "cn") -> float:
    """Principal eigenvalue from a dense eigen-decomposition of the block
    cyclic space-time matrix of the same time discretisation.

    The frozen-time shifts are recomputed with a dense eigensolver, so the
    only shared code with :func:`principal_floquet` is the assembly.
    """
    _check_tau(tau)
    if nt is not None:
        grid = grid.with_nt(nt)
    nt, n = grid.nt, grid.n
    if nt * n > ORACLE_LIMIT:
        raise ProblemError(f"space-time oracle limited to {ORACLE_LIMIT} unknowns, got {nt * n}")
    tau_eff = spec.tau_eff(tau)
    ops = [op.matrix.toarray() for op in slice_operators(spec, grid)]
    c = np.array([np.min(np.linalg.eigvals(L).real) for L in ops])
    dt = 1.0 / nt
    eye = np.eye(n)
    Z = np.zeros((nt * n, nt * n))
    for k in range(nt):
        k1 = (k + 1) % nt
        if scheme == "cn":
            a = dt / (2 * tau_eff)
            M = np.linalg.solve(eye + a * (ops[k1] - c[k1] * eye), eye - a * (ops[k] - c[k] * eye))
            M *= math.exp(-dt * (c[k] + c[k1]) / (2 * tau_eff))
        else:
            a = dt / tau_eff
            M = np.linalg.solve(eye + a * (ops[k1] - c[k1] * eye), eye) * math.exp(-dt * c[k1] / tau_eff)
        Z[k1 * n : (k1 + 1) * n, k * n : (k + 1) * n] = M
    nus, vecs = np.linalg.eig(Z)
    best = None
    for j in np.argsort(-np.abs(nus)):
        nu = nus[j]
        if nu.real <= 0 or abs(nu.imag) > 1e-9 * abs(nu):
            continue
        vec = vecs[:, j].real
        vec = vec if vec.sum() > 0 else -vec
        if np.min(vec) > -1e-9 * np.max(np.abs(vec)):
            best = nu.real
            break
    if best is None:
        raise SolverError("no real positive eigenvalue with a one-signed eigenvector")
    return float(-tau_eff * nt * math.log(best))
