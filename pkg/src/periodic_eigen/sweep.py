"""Frequency sweeps and their CSV/JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .analysis import check_theorems, dlambda_dtau_formula, fd_step
from .errors import PeriodicEigenError
from .floquet import principal_floquet
from .problem import GENERAL, Grid, ProblemSpec, classify, is_separable
from .spatial import averaged_problem_eig, frozen_time_average

CSV_COLUMNS = ("tau", "lambda", "mu", "iterations", "residual", "dlambda_formula", "dlambda_fd")


@dataclass
class SweepRow:
    tau: float
    lam: float | None = None
    mu: float | None = None
    iterations: int | None = None
    residual: float | None = None
    dlambda_formula: float | None = None
    dlambda_fd: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class SweepReport:
    digest: str
    name: str
    spec_class: str
    separable: bool
    grid: dict
    rows: list
    limits: dict | None = None
    verdict: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "digest": self.digest,
            "name": self.name,
            "class": self.spec_class,
            "separable": self.separable,
            "grid": self.grid,
            "rows": [r.to_dict() for r in self.rows],
            "limits": self.limits,
            "verdict": self.verdict,
        }

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r.error is not None]


def _solve_row(spec: ProblemSpec, grid: Grid, tau: float, tol: float, derivative: bool) -> SweepRow:
    row = SweepRow(tau=float(tau))
    try:
        sol = principal_floquet(spec, grid, tau, tol=tol)
        row.lam = sol.lam
        row.mu = sol.mu
        row.iterations = sol.iterations
        row.residual = sol.residual
        if derivative:
            if classify(spec) != GENERAL:
                row.dlambda_formula = dlambda_dtau_formula(sol, spec, grid)
            delta = fd_step(tau)
            g = grid.with_nt(sol.nt)
            plus = principal_floquet(spec, g, tau + delta, tol=tol).lam
            minus = principal_floquet(spec, g, tau - delta, tol=tol).lam
            row.dlambda_fd = (plus - minus) / (2 * delta)
    except (PeriodicEigenError, ArithmeticError, ValueError) as exc:
        row = SweepRow(tau=float(tau), error=f"ERROR:{type(exc).__name__}")
    return row


def run_sweep(
    spec: ProblemSpec,
    grid: Grid,
    taus,
    derivative: bool = False,
    limits: bool = False,
    tol: float = 1e-10,
    jobs: int = 1,
    slack: float = 1e-4,
) -> SweepReport:
    """Solve for every tau, optionally with derivative columns and limits.

    A failing tau is recorded with an error token and the sweep continues.
    """
    taus = sorted(float(t) for t in taus)
    if not taus:
        raise ValueError("tau list is empty")
    if any(not (t > 0 and math.isfinite(t)) for t in taus):
        raise ValueError("tau values must be positive and finite")
    if jobs > 1 and len(taus) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_solve_row, *zip(*[(spec, grid, t, tol, derivative) for t in taus])))
    else:
        rows = [_solve_row(spec, grid, t, tol, derivative) for t in taus]

    lim = None
    if limits:
        try:
            lim = {
                "int_lambda0": frozen_time_average(spec, grid),
                "lambda_inf": averaged_problem_eig(spec, grid).lam,
            }
        except PeriodicEigenError as exc:
            lim = {"int_lambda0": None, "lambda_inf": None, "error": f"ERROR:{type(exc).__name__}"}
    report = SweepReport(
        digest=spec.digest(),
        name=spec.name,
        spec_class=classify(spec),
        separable=is_separable(spec),
        grid={"dim": grid.dim, "nx": grid.nx, "ny": grid.ny, "nt": grid.nt, "tol": tol},
        rows=rows,
        limits=lim,
    )
    report.verdict = check_theorems(report, report.spec_class, report.separable, slack).to_dict()
    return report


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(report: SweepReport, fmt: str = "csv") -> bytes:
    """Serialise a report. CSV holds the per-tau table; JSON the full report."""
    if fmt == "json":
        return (json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in report.rows:
        residual = r.error if r.error is not None else r.residual
        writer.writerow(
            [_cell(v) for v in (r.tau, r.lam, r.mu, r.iterations, residual, r.dlambda_formula, r.dlambda_fd)]
        )
    return buf.getvalue().encode()
