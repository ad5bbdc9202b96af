import math
from types import SimpleNamespace

import numpy as np
import pytest

from periodic_eigen import (
    ConeFunction,
    build_problem,
    check_theorems,
    derivative_report,
    dlambda_dtau_formula,
    evaluate_J,
    gauge_transform,
    lemma_identity_residual,
    make_grid,
    preset,
    principal_floquet,
    run_sweep,
    subsolution_residual,
    subsolution_rho,
)
from periodic_eigen.errors import ConeError, ProblemError
from periodic_eigen.problem import CONST_A_GRADIENT_DRIFT, GENERAL, M_ZERO


@pytest.fixture(scope="module")
def mzero():
    spec = preset("mzero")
    grid = make_grid(spec, nx=64, nt=128)
    return spec, grid, principal_floquet(spec, grid, 1.0)


def test_cone_validation(mzero):
    spec, grid, sol = mzero
    with pytest.raises(ConeError):
        ConeFunction(-sol.u, grid)
    with pytest.raises(ConeError):
        ConeFunction(sol.u[:, :-1], grid)
    with pytest.raises(ConeError):
        evaluate_J(sol, ConeFunction(sol.u[::2], grid), spec, grid)
    bad = sol.u.copy()
    bad[3, 5] = 0.0
    with pytest.raises(ConeError):
        lemma_identity_residual(sol, bad, spec, grid)


def test_J_at_eigenfunction_converges_to_lambda():
    spec = preset("mzero")
    errs = []
    for nx, nt in [(32, 64), (64, 128), (128, 256)]:
        g = make_grid(spec, nx=nx, nt=nt)
        sol = principal_floquet(spec, g, 1.0)
        errs.append(abs(evaluate_J(sol, sol.u, spec, g) - sol.lam))
    # centred differences in time leave an O(dt^2) defect
    assert errs[-1] <= 5e-6
    assert 3.5 <= errs[0] / errs[1] <= 4.5 and 3.5 <= errs[1] / errs[2] <= 4.5


def test_J_scale_invariance(mzero):
    spec, grid, sol = mzero
    assert abs(evaluate_J(sol, 3.7 * ConeFunction(sol.u, grid), spec, grid) - evaluate_J(sol, sol.u, spec, grid)) <= 1e-12


def test_J_gap_is_twice_tau_times_formula(mzero):
    spec, grid, sol = mzero
    gap = evaluate_J(sol, sol.u, spec, grid) - evaluate_J(sol, sol.v, spec, grid)
    formula = dlambda_dtau_formula(sol, spec, grid)
    assert gap == pytest.approx(2 * sol.tau * formula, rel=1e-2)


def test_lemma_trivial_cases(mzero):
    spec, grid, sol = mzero
    assert lemma_identity_residual(sol, sol.u, spec, grid) <= 1e-10
    assert lemma_identity_residual(sol, 0.25 * ConeFunction(sol.u, grid), spec, grid) <= 1e-10


def test_lemma_needs_no_drift():
    spec = preset("thm12")
    g = make_grid(spec, nx=16, nt=16)
    sol = principal_floquet(spec, g, 1.0)
    with pytest.raises(ProblemError):
        lemma_identity_residual(sol, sol.u, spec, g)


def test_J_maximality(mzero):
    spec, grid, sol = mzero
    rng = np.random.default_rng(7)
    x = grid.xs
    best = evaluate_J(sol, sol.u, spec, grid)
    for _ in range(5):
        a, b, c = rng.uniform(-0.5, 0.5, 3)
        # smooth positive perturbation with zero normal derivative at the ends
        f = np.exp(a * np.cos(x)[None, :] * np.cos(2 * math.pi * grid.with_nt(sol.nt).t + b)[:, None] + c * np.cos(2 * x)[None, :])
        assert evaluate_J(sol, sol.u * f, spec, grid) <= best + 1e-5


def test_dirichlet_lemma():
    spec = preset("dirichlet1d")
    g = make_grid(spec, nx=64, nt=128)
    sol = principal_floquet(spec, g, 1.0)
    zeta = ConeFunction.bump(sol, g)
    assert lemma_identity_residual(sol, zeta, spec, g) <= 1e-4
    assert dlambda_dtau_formula(sol, spec, g) >= -1e-10


def test_formula_zero_cases():
    spec = preset("separable")
    g = make_grid(spec, nx=32, nt=64)
    assert abs(dlambda_dtau_formula(principal_floquet(spec, g, 1.0), spec, g)) <= 1e-8
    spec = build_problem(dim=1, domain=(0, 2), b=0.4, A="1+x/3", V="sin(x)")
    g = make_grid(spec, nx=32, nt=32)
    assert abs(dlambda_dtau_formula(principal_floquet(spec, g, 2.0), spec, g)) <= 1e-8


def test_formula_against_fd(mzero):
    spec, grid, sol = mzero
    rep = derivative_report(spec, grid, 1.0, delta=1e-3, sol=sol)
    assert rep.dlambda_formula > 0
    assert rep.relative_gap <= 1e-2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dim=1, domain=(0, 1), b=0.3, A="1+x^2/2", V="sin(2*pi*(x+t))"),
        dict(dim=1, domain=(0, 2), b=1, A="1+sin(2*pi*t)/2", V="x*cos(2*pi*t)"),
        dict(dim=2, domain=[(0, 1), (0, 1)], b=0, A=[["1", "0"], ["0", "2"]], V="cos(3*x)*sin(2*pi*t)+y*cos(2*pi*t)"),
    ],
)
def test_formula_nonnegative(kwargs):
    spec = build_problem(**kwargs)
    g = make_grid(spec, nx=12 if spec.dim == 2 else 32, nt=32)
    for tau in (0.3, 3.0):
        assert dlambda_dtau_formula(principal_floquet(spec, g, tau), spec, g) >= -1e-10


def test_formula_rejects_general():
    spec = preset("ex2")
    g = make_grid(spec, nx=8, nt=16)
    with pytest.raises(ProblemError):
        dlambda_dtau_formula(principal_floquet(spec, g, 1.0), spec, g)


def test_gauge_identity_and_potential():
    spec = preset("mzero")
    assert gauge_transform(spec) is spec
    spec = build_problem(dim=1, domain=(0, math.pi), b=0, A="1", m="cos(x)", V="0")
    h = gauge_transform(spec, 1.0).V
    for x in np.linspace(0, math.pi, 7):
        assert h(x=x) == pytest.approx(-math.cos(x) / 2 + math.sin(x) ** 2 / 4, abs=1e-15)


def test_gauge_robin_and_dirichlet():
    spec = build_problem(dim=1, domain=(0, 1), b=0.5, A="2", m="x^2")
    gauged = gauge_transform(spec)
    # kappa' = kappa - (dm/dn)/2: left normal -1, dm/dx = 0; right dm/dx = 2
    assert gauged.kappa("left")(x=0.0) == pytest.approx(1.0)
    assert gauged.kappa("right")(x=1.0) == pytest.approx(0.0)
    dspec = build_problem(dim=1, domain=(0, 1), b=1, A="2", m="x^2")
    assert gauge_transform(dspec).dirichlet


def test_gauge_rejects_outside_class():
    with pytest.raises(ProblemError):
        gauge_transform(preset("ex1"))
    with pytest.raises(ProblemError):
        gauge_transform(preset("ex2"))
    with pytest.raises(ProblemError):
        gauge_transform(preset("thm12"), D=2.0)


def test_gauge_drift_formula_matches_fd():
    spec = preset("thm12")
    g = make_grid(spec, nx=64, nt=128)
    rep = derivative_report(spec, g, 1.0, delta=1e-3)
    assert rep.relative_gap <= 1e-2


def test_rho_examples():
    assert np.all(subsolution_rho(np.full(16, 2.5), 0.3) == 1.0)
    rng = np.random.default_rng(3)
    for _ in range(5):
        rho = subsolution_rho(rng.normal(size=int(rng.integers(2, 50))), rng.uniform(0.01, 5))
        assert rho[0] == 1.0 and abs(rho[-1] / rho[0] - 1) <= 1e-12
    nt = 2000
    t = np.arange(nt + 1) / nt
    rho = subsolution_rho(np.sin(2 * math.pi * t[:-1]), 1.0)
    np.testing.assert_allclose(rho, np.exp((np.cos(2 * math.pi * t) - 1) / (2 * math.pi)), rtol=1e-6)


def test_subsolution_residual():
    spec = preset("mzero")
    g = make_grid(spec, nx=64, nt=128)
    check = subsolution_residual(spec, g, 1e-3, 0.05)
    assert check.max_residual <= 0
    assert check.tau_star > 1e-3
    # far above tau*, the frozen profile is no longer a sub-solution
    assert subsolution_residual(spec, g, 1.0, 0.05).max_residual > 0


def _sweep(lams, limits=None, taus=None):
    taus = taus or list(range(1, len(lams) + 1))
    return SimpleNamespace(rows=[SimpleNamespace(tau=t, lam=l) for t, l in zip(taus, lams)], limits=limits)


def test_check_theorems_verdicts():
    v = check_theorems(_sweep([1.0, 1.00001, 0.99999]), M_ZERO, separable=True)
    assert v.verdict == "constant" and v.ok and v.asserted
    v = check_theorems(_sweep([0.0, 0.2, 0.1]), GENERAL)
    assert v.verdict == "non-monotone observed" and v.ok and not v.asserted and v.bounds_ok == "n/a"
    v = check_theorems(_sweep([0.0, 0.1, 0.2], {"int_lambda0": -0.01, "lambda_inf": 0.25}), M_ZERO)
    assert v.verdict == "monotone" and v.bounds_ok is True
    v = check_theorems(_sweep([0.0, 0.1, 0.3], {"int_lambda0": -0.01, "lambda_inf": 0.25}), CONST_A_GRADIENT_DRIFT)
    assert v.verdict == "violation" and not v.ok and v.max_violation == pytest.approx(0.05)
    v = check_theorems(_sweep([0.0, 0.2, None, 0.1]), M_ZERO)
    assert not v.monotone and not v.ok
    assert set(v.to_dict()) >= {"class", "monotone", "constant", "bounds_ok", "max_violation", "slack"}


def test_gauge_invariance_of_verdict():
    spec = preset("thm12")
    g = make_grid(spec, nx=32, nt=64)
    taus = [0.1, 1.0, 10.0]
    a = run_sweep(spec, g, taus, limits=True)
    b = run_sweep(gauge_transform(spec), g, taus, limits=True)
    assert a.verdict["monotone"] == b.verdict["monotone"]
    assert a.verdict["verdict"] == b.verdict["verdict"] == "monotone"
