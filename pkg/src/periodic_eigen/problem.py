"""Problem definitions, validation, grids and coefficient sampling.

A problem is the periodic-parabolic operator

    tau u_t - div(A grad u) - grad m . grad u + V u = lambda u

on a box, with the boundary family ``b u + (1-b) [A grad u].n = 0`` and
period ``T`` in time. Internally time is rescaled to the unit period, so
coefficients are sampled at physical time ``s * T`` for internal ``s`` in
[0, 1] and the frequency becomes ``tau / T``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ExpressionDomainError, NotDifferentiable, ProblemError
from .expression import ZERO, Expression, Num, as_expression, evaluate

FACES_1D = ("left", "right")
FACES_2D = ("left", "right", "bottom", "top")
# outward normal (axis, sign) of each face
FACE_NORMAL = {"left": (0, -1.0), "right": (0, 1.0), "bottom": (1, -1.0), "top": (1, 1.0)}

VALIDATION_POINTS = 65  # 4x refinement of a 16-interval base lattice, per axis
PERIODICITY_TOL = 1e-12


@dataclass(frozen=True)
class ProblemSpec:
    """Validated problem definition. Build through :func:`load_problem`.

    ``robin`` optionally overrides the boundary condition face by face with
    ``[A grad u].n = -kappa u``; faces not listed use ``kappa = b/(1-b)``.
    """

    dim: int
    domain: tuple
    b: float
    period: float
    A: tuple
    m: Expression
    V: Expression
    robin: tuple = ()
    name: str = ""
    gamma1: float = field(default=float("nan"), compare=False)
    gamma2: float = field(default=float("nan"), compare=False)

    @property
    def dirichlet(self) -> bool:
        return self.b == 1.0

    @property
    def faces(self) -> tuple:
        return FACES_1D if self.dim == 1 else FACES_2D

    @property
    def internal_period(self) -> float:
        return 1.0

    def tau_eff(self, tau: float) -> float:
        return tau / self.period

    def kappa(self, face: str) -> Expression | None:
        """Robin coefficient on ``face`` (None under Dirichlet conditions)."""
        if self.dirichlet:
            return None
        overrides = dict(self.robin)
        if face in overrides:
            return overrides[face]
        return Num(self.b / (1.0 - self.b))

    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.domain]))

    def to_dict(self) -> dict:
        doc = {
            "dim": self.dim,
            "domain": list(self.domain[0]) if self.dim == 1 else [list(d) for d in self.domain],
            "b": self.b,
            "period": self.period,
            "A": str(self.A[0][0]) if self.dim == 1 else [[str(e) for e in row] for row in self.A],
            "m": str(self.m),
            "V": str(self.V),
        }
        if self.robin:
            doc["robin"] = {face: str(k) for face, k in self.robin}
        if self.name:
            doc["name"] = self.name
        return doc

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    # expression views used by the solvers

    def a_entries(self) -> tuple:
        if self.dim == 1:
            return (self.A[0][0],)
        return (self.A[0][0], self.A[0][1], self.A[1][1])

    def all_expressions(self) -> list:
        exprs = [e for row in self.A for e in row] + [self.m, self.V]
        exprs += [k for _, k in self.robin]
        return exprs


def _lattice(spec: ProblemSpec, n: int = VALIDATION_POINTS):
    axes = [np.linspace(lo, hi, n) for lo, hi in spec.domain]
    return np.meshgrid(*axes, indexing="ij")


def _space_env(spec: ProblemSpec, coords) -> dict:
    env = {"x": coords[0]}
    if spec.dim == 2:
        env["y"] = coords[1]
    return env


def _eval(expr: Expression, env: dict, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(evaluate(expr, env), dtype=float), shape)


def _a_min_max(a11, a12=None, a22=None):
    if a12 is None:
        return a11, a11
    mid = 0.5 * (a11 + a22)
    rad = np.sqrt((0.5 * (a11 - a22)) ** 2 + a12**2)
    return mid - rad, mid + rad


def _validate(spec: ProblemSpec) -> ProblemSpec:
    if spec.dim not in (1, 2):
        raise ProblemError(f"dim must be 1 or 2, got {spec.dim}")
    if not (0.0 <= spec.b <= 1.0) or not math.isfinite(spec.b):
        raise ProblemError(f"b outside [0,1]: {spec.b}")
    if not (spec.period > 0.0) or not math.isfinite(spec.period):
        raise ProblemError(f"period must be positive, got {spec.period}")
    if len(spec.domain) != spec.dim:
        raise ProblemError("domain does not match dim")
    for lo, hi in spec.domain:
        if not (hi > lo):
            raise ProblemError(f"domain edges not strictly ordered: [{lo}, {hi}]")

    allowed = {"x", "t"} if spec.dim == 1 else {"x", "y", "t"}
    for expr in spec.all_expressions():
        extra = expr.variables() - allowed
        if extra:
            raise ProblemError(f"expression {expr} uses variables {sorted(extra)} not available in {spec.dim}D")
    for face, _ in spec.robin:
        if face not in spec.faces:
            raise ProblemError(f"unknown face {face!r}")
    if spec.robin and spec.dirichlet:
        raise ProblemError("robin overrides are meaningless with b = 1")

    coords = _lattice(spec)
    shape = coords[0].shape
    env0 = _space_env(spec, coords)
    ts = np.linspace(0.0, 1.0, VALIDATION_POINTS)
    gmin, gmax = np.inf, -np.inf
    try:
        for s in ts:
            env = dict(env0, t=s * spec.period)
            if spec.dim == 1:
                lo, hi = _a_min_max(_eval(spec.A[0][0], env, shape))
            else:
                a11 = _eval(spec.A[0][0], env, shape)
                a12 = _eval(spec.A[0][1], env, shape)
                a21 = _eval(spec.A[1][0], env, shape)
                a22 = _eval(spec.A[1][1], env, shape)
                if np.max(np.abs(a12 - a21)) > 1e-12 * max(1.0, np.max(np.abs(a12))):
                    raise ProblemError("A is not symmetric")
                lo, hi = _a_min_max(a11, a12, a22)
            gmin = min(gmin, float(np.min(lo)))
            gmax = max(gmax, float(np.max(hi)))
            _eval(spec.m, env, shape)
            _eval(spec.V, env, shape)
        for face, k in spec.robin:
            for s in ts:
                _eval(k, dict(env0, t=s * spec.period), shape)
    except ExpressionDomainError as exc:
        raise ProblemError(f"coefficient cannot be evaluated on the validation lattice: {exc}") from exc
    if not gmin > 0.0:
        raise ProblemError(f"ellipticity violated: smallest eigenvalue of A is {gmin:.6g} on the validation lattice")

    for expr in spec.all_expressions():
        if "t" not in expr.variables():
            continue
        v0 = _eval(expr, dict(env0, t=0.0), shape)
        v1 = _eval(expr, dict(env0, t=spec.period), shape)
        if np.max(np.abs(v0 - v1)) > PERIODICITY_TOL * max(1.0, float(np.max(np.abs(v0)))):
            raise ProblemError(f"coefficient {expr} is not periodic with period {spec.period}")
    return replace(spec, gamma1=gmin, gamma2=gmax)


def build_problem(
    *,
    dim: int,
    domain,
    b: float,
    period: float = 1.0,
    A="1",
    m="0",
    V="0",
    robin: Mapping | None = None,
    name: str = "",
) -> ProblemSpec:
    """Construct and validate a problem from Python values."""
    if dim == 1:
        if np.ndim(domain) == 2:
            domain = domain[0]
        dom = ((float(domain[0]), float(domain[1])),)
        if isinstance(A, (list, tuple)):
            A = A[0][0] if isinstance(A[0], (list, tuple)) else A[0]
        mat = ((as_expression(A),),)
    elif dim == 2:
        dom = tuple((float(lo), float(hi)) for lo, hi in domain)
        if isinstance(A, (list, tuple)):
            if len(A) != 2 or any(len(row) != 2 for row in A):
                raise ProblemError("2D A must be a 2x2 matrix of expressions")
            mat = tuple(tuple(as_expression(e) for e in row) for row in A)
        else:
            a = as_expression(A)
            mat = ((a, ZERO), (ZERO, a))
    else:
        raise ProblemError(f"dim must be 1 or 2, got {dim}")
    spec = ProblemSpec(
        dim=int(dim),
        domain=dom,
        b=float(b),
        period=float(period),
        A=mat,
        m=as_expression(m),
        V=as_expression(V),
        robin=tuple(sorted((face, as_expression(k)) for face, k in (robin or {}).items())),
        name=name,
    )
    return _validate(spec)


def load_problem(doc) -> ProblemSpec:
    """Load a problem from a JSON string, a parsed mapping or a file path.

    Keys: ``dim``, ``domain``, ``b``, ``period``, ``A``, ``m``, ``V`` and the
    optional ``robin`` (face -> kappa expression) and ``name``.
    """
    if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
        doc = Path(doc).read_text()
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"problem file is not valid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ProblemError("problem document must be a JSON object")
    missing = {"dim", "domain", "b"} - set(doc)
    if missing:
        raise ProblemError(f"problem document lacks keys {sorted(missing)}")
    unknown = set(doc) - {"dim", "domain", "b", "period", "A", "m", "V", "robin", "name"}
    if unknown:
        raise ProblemError(f"unknown keys {sorted(unknown)}")
    return build_problem(
        dim=doc["dim"],
        domain=doc["domain"],
        b=doc["b"],
        period=doc.get("period", 1.0),
        A=doc.get("A", "1"),
        m=doc.get("m", "0"),
        V=doc.get("V", "0"),
        robin=doc.get("robin"),
        name=doc.get("name", ""),
    )


# -- grids ---------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform tensor mesh of the periodicity cell.

    ``nx`` (and ``ny``) count interior nodes; the mesh also carries the
    boundary nodes, which are unknowns except under Dirichlet conditions.
    Time uses ``nt`` uniform steps per unit period, slices ``k/nt``.
    """

    dim: int
    domain: tuple
    nx: int
    ny: int
    nt: int
    dirichlet: bool

    @property
    def Nx(self) -> int:
        return self.nx + 2

    @property
    def Ny(self) -> int:
        return self.ny + 2 if self.dim == 2 else 1

    @property
    def shape(self) -> tuple:
        return (self.Nx, self.Ny)

    @property
    def hx(self) -> float:
        lo, hi = self.domain[0]
        return (hi - lo) / (self.nx + 1)

    @property
    def hy(self) -> float:
        if self.dim == 1:
            return 1.0
        lo, hi = self.domain[1]
        return (hi - lo) / (self.ny + 1)

    @cached_property
    def xs(self) -> np.ndarray:
        lo, hi = self.domain[0]
        return np.linspace(lo, hi, self.Nx)

    @cached_property
    def ys(self) -> np.ndarray:
        if self.dim == 1:
            return np.zeros(1)
        lo, hi = self.domain[1]
        return np.linspace(lo, hi, self.Ny)

    @cached_property
    def coords(self) -> tuple:
        """Node coordinates on the full mesh, each of shape ``self.shape``."""
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        return (X,) if self.dim == 1 else (X, Y)

    @cached_property
    def cell_widths(self) -> tuple:
        wx = np.full(self.Nx, self.hx)
        wx[[0, -1]] *= 0.5
        if self.dim == 1:
            return wx, np.ones(1)
        wy = np.full(self.Ny, self.hy)
        wy[[0, -1]] *= 0.5
        return wx, wy

    @cached_property
    def weights_full(self) -> np.ndarray:
        """Trapezoid weights on the full mesh, flattened; they sum to |domain|."""
        wx, wy = self.cell_widths
        return np.outer(wx, wy).ravel()

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[[0, -1], :] = True
        if self.dim == 2:
            mask[:, [0, -1]] = True
        return mask.ravel()

    @cached_property
    def unknown(self) -> np.ndarray:
        """Flat indices (into the full mesh) of the unknowns."""
        if self.dirichlet:
            return np.flatnonzero(~self.boundary_mask)
        return np.arange(self.Nx * self.Ny)

    @property
    def n(self) -> int:
        return len(self.unknown)

    @cached_property
    def w(self) -> np.ndarray:
        """Quadrature weights restricted to the unknowns."""
        return self.weights_full[self.unknown]

    def face_mask(self, face: str) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if face == "left":
            mask[0, :] = True
        elif face == "right":
            mask[-1, :] = True
        elif face == "bottom":
            mask[:, 0] = True
        elif face == "top":
            mask[:, -1] = True
        else:
            raise ValueError(face)
        return mask.ravel()

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @cached_property
    def t(self) -> np.ndarray:
        """Time slices of one period, the endpoint excluded (it equals slice 0)."""
        return np.arange(self.nt) / self.nt

    @cached_property
    def time_weights(self) -> np.ndarray:
        return np.full(self.nt, 1.0 / self.nt)

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter unknown-vector(s) onto the full mesh, zero elsewhere."""
        values = np.asarray(values)
        out = np.zeros(values.shape[:-1] + (self.Nx * self.Ny,), dtype=values.dtype)
        out[..., self.unknown] = values
        return out

    def with_nt(self, nt: int) -> "Grid":
        return replace(self, nt=int(nt))

    def integrate(self, values: np.ndarray) -> float:
        """Quadrature of a space-time array (nt, n) or a space vector (n,)."""
        values = np.asarray(values)
        if values.ndim == 1:
            return float(values @ self.w)
        return float(self.time_weights @ (values @ self.w))


def make_grid(spec: ProblemSpec, nx: int = 128, ny: int | None = None, nt: int = 256) -> Grid:
    if nx < 1 or (spec.dim == 2 and (ny if ny is not None else nx) < 1):
        raise ProblemError("degenerate grid: need at least one interior node per axis")
    if nt < 1:
        raise ProblemError("nt must be positive")
    return Grid(
        dim=spec.dim,
        domain=spec.domain,
        nx=int(nx),
        ny=int(ny if ny is not None else nx) if spec.dim == 2 else 0,
        nt=int(nt),
        dirichlet=spec.dirichlet,
    )


# -- coefficient sampling ------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients on the full mesh at one internal time slice.

    Arrays have shape ``(Nx*Ny,)``. ``a12``/``a22`` are None in 1D.
    ``kappa`` maps each face to its Robin coefficient on the full mesh (NaN
    off the face); it is empty under Dirichlet conditions.
    """

    t: float
    a11: np.ndarray
    a12: np.ndarray | None
    a22: np.ndarray | None
    dm: tuple
    V: np.ndarray
    kappa: dict

    @property
    def dim(self) -> int:
        return len(self.dm)

    def a_min_eig(self) -> np.ndarray:
        return _a_min_max(self.a11, self.a12, self.a22)[0]

    @staticmethod
    def average(fields) -> "CoefficientField":
        """Uniform-weight mean of fields over periodic slices."""
        fields = list(fields)
        mean = lambda get: np.mean([get(f) for f in fields], axis=0)
        first = fields[0]
        return CoefficientField(
            t=float("nan"),
            a11=mean(lambda f: f.a11),
            a12=None if first.a12 is None else mean(lambda f: f.a12),
            a22=None if first.a22 is None else mean(lambda f: f.a22),
            dm=tuple(mean(lambda f, i=i: f.dm[i]) for i in range(first.dim)),
            V=mean(lambda f: f.V),
            kappa={face: mean(lambda f, face=face: f.kappa[face]) for face in first.kappa},
        )


@lru_cache(maxsize=64)
def m_gradient(spec: ProblemSpec) -> tuple | None:
    """Symbolic gradient of ``m``, or None when it is not differentiable."""
    try:
        return tuple(spec.m.derivative(v) for v in ("x", "y")[: spec.dim])
    except NotDifferentiable:
        return None


def _located(exc: ExpressionDomainError, grid: Grid, t: float, indices=None) -> ExpressionDomainError:
    where = ""
    if exc.index is not None:
        flat = exc.index if indices is None else int(indices[exc.index])
        point = [float(c.ravel()[flat]) for c in grid.coords]
        where = f" at node {flat} (x={point}, t={t})"
    return ExpressionDomainError(exc.message, exc.subexpression, exc.index, where)


def sample_coefficients(spec: ProblemSpec, grid: Grid, t: float) -> CoefficientField:
    """Sample ``A``, ``grad m``, ``V`` and the Robin data at internal time ``t``."""
    shape = (grid.Nx * grid.Ny,)
    coords = [c.ravel() for c in grid.coords]
    env = _space_env(spec, coords)
    env["t"] = float(t) * spec.period
    try:
        a = [np.array(_eval(e, env, shape)) for e in spec.a_entries()]
        V = np.array(_eval(spec.V, env, shape))
        grad = m_gradient(spec)
        if grad is not None:
            dm = tuple(np.array(_eval(g, env, shape)) for g in grad)
        else:
            msamp = np.array(_eval(spec.m, env, shape)).reshape(grid.shape)
            if spec.dim == 1:
                dm = (np.gradient(msamp[:, 0], grid.hx, edge_order=2),)
            else:
                gx, gy = np.gradient(msamp, grid.hx, grid.hy, edge_order=2)
                dm = (gx.ravel(), gy.ravel())
    except ExpressionDomainError as exc:
        raise _located(exc, grid, t) from exc

    kappa = {}
    if not spec.dirichlet:
        for face in spec.faces:
            idx = np.flatnonzero(grid.face_mask(face))
            sub_env = {k: (v[idx] if isinstance(v, np.ndarray) else v) for k, v in env.items()}
            vals = np.full(shape, np.nan)
            try:
                vals[idx] = _eval(spec.kappa(face), sub_env, (len(idx),))
            except ExpressionDomainError as exc:
                raise _located(exc, grid, t, idx) from exc
            kappa[face] = vals

    if spec.dim == 1:
        return CoefficientField(float(t), a[0], None, None, dm, V, kappa)
    return CoefficientField(float(t), a[0], a[1], a[2], dm, V, kappa)


# -- classification ------------------------------------------------------------

M_ZERO = "m_zero"
CONST_A_GRADIENT_DRIFT = "const_A_gradient_drift"
GENERAL = "general"


def _is_zero(expr: Expression) -> bool:
    return expr == ZERO or (expr.is_constant and evaluate(expr, {}) == 0.0)


def constant_diffusion(spec: ProblemSpec) -> float | None:
    """Return D when ``A = D I`` with constant D, else None."""
    entries = [e for row in spec.A for e in row]
    if any(not e.is_constant for e in entries):
        return None
    vals = np.array([[evaluate(e, {}) for e in row] for row in spec.A])
    if not np.allclose(vals, vals[0, 0] * np.eye(spec.dim), rtol=0, atol=0):
        return None
    return float(vals[0, 0])


def classify(spec: ProblemSpec) -> str:
    """Which monotonicity theorem, if any, covers this problem."""
    grad = m_gradient(spec)
    if spec.m.is_constant or (grad is not None and all(_is_zero(g) for g in grad)):
        return M_ZERO
    if constant_diffusion(spec) is not None and "t" not in spec.m.variables():
        return CONST_A_GRADIENT_DRIFT
    return GENERAL


def is_separable(spec: ProblemSpec) -> bool:
    """True when lambda(tau) is constant in tau: a covered class with
    time-independent ``A``, ``m`` and boundary data, and ``V = V0(x) + g(t)``."""
    cls = classify(spec)
    if cls == GENERAL:
        return False
    if any("t" in e.variables() for row in spec.A for e in row):
        return False
    if any("t" in k.variables() for _, k in spec.robin):
        return False
    if "t" not in spec.V.variables():
        return True
    coords = _lattice(spec, 17)
    shape = coords[0].shape
    env = _space_env(spec, coords)
    ref = tuple(c.ravel()[0] for c in coords)
    ref_env = {"x": ref[0]} if spec.dim == 1 else {"x": ref[0], "y": ref[1]}
    v00 = evaluate(spec.V, dict(ref_env, t=0.0))
    vx0 = _eval(spec.V, dict(env, t=0.0), shape)
    for s in np.linspace(0.0, 1.0, 17):
        ts = s * spec.period
        mixed = _eval(spec.V, dict(env, t=ts), shape) - vx0 - evaluate(spec.V, dict(ref_env, t=ts)) + v00
        if np.max(np.abs(mixed)) > 1e-12 * max(1.0, float(np.max(np.abs(vx0)))):
            return False
    return True
