import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracsde.bsde_solver import (
    DegradedBasisWarning,
    Driver,
    InvariantViolation,
    dyadic_nodes,
    hermite_basis,
    regress,
    solve_bsde,
    theta_bound,
    transformed_driver,
    z_bound,
    z_bound_check,
)
from fracsde.doss_flow import DossFlow
from fracsde.fbm import SamplePath, TimeGrid, sample_bm, sample_fbm
from fracsde.forward_sde import SdeCoefficients, solve_forward_sde
from fracsde.registry import lookup, reference_value, sde_coefficients

# g = sin jet at (y, z) = (1, 0.5), from the doss_flow oracle table
SIN_JET = (1.4664040060843666719, 1.1819255639543391115, -0.61254296778985258958)

GRID = TimeGrid(1.0, 64)
M = 16384


@pytest.fixture(scope="module")
def heat():
    W = sample_bm(GRID, seed=3, n_paths=M)
    X = solve_forward_sde(sde_coefficients("zero", "one"), 1.0, 0.0, W)
    B = sample_fbm(GRID, 0.75, seed=3)
    return W, X, B


@pytest.fixture(scope="module")
def small():
    g = TimeGrid(1.0, 16)
    W = sample_bm(g, seed=5, n_paths=1024)
    X = solve_forward_sde(sde_coefficients("zero", "one"), 1.0, 0.0, W)
    return W, X, sample_fbm(g, 0.75, seed=5)


def _td(f, g, B):
    return transformed_driver(lookup("f", f), DossFlow(lookup("g", g)), B)


class TestTransformedDriver:
    def test_zero_flow_returns_driver(self):
        B = sample_fbm(GRID, 0.75, seed=0)
        td = _td("cos_y_plus_half_z", "zero", B)
        x, y, z = np.zeros((5, 1)), np.linspace(-1, 1, 5), np.linspace(0, 2, 5)[:, None]
        np.testing.assert_array_equal(td.at_index(7, x, y, z), np.cos(y) + 0.5 * z[:, 0])

    def test_identity_scaling(self):
        B = sample_fbm(GRID, 0.75, seed=1)
        td = _td("cos_y_plus_half_z", "identity", B)
        x, y, z = np.zeros((5, 1)), np.linspace(-1, 1, 5), np.linspace(0, 2, 5)[:, None]
        e = math.exp(B.values[20])
        expect = (np.cos(y * e) + 0.5 * z[:, 0] * e) / e
        np.testing.assert_allclose(td.at_index(20, x, y, z), expect, rtol=1e-9)

    def test_sin_recomposition(self):
        B = SamplePath(TimeGrid(1.0, 1), [0.0, 0.5])
        td = _td("cos_y_plus_half_z", "sin", B)
        a, a1, a2 = SIN_JET
        z = 0.8
        expect = (math.cos(a) + 0.5 * a1 * z + 0.5 * a2 * z * z) / a1
        got = td.at_index(1, np.zeros((1, 1)), np.array([1.0]), np.array([[z]]))
        assert float(got[0]) == pytest.approx(expect, rel=1e-9)

    def test_is_zero_shortcut(self):
        B = sample_fbm(GRID, 0.75, seed=0)
        assert _td("zero", "identity", B).is_zero
        assert not _td("zero", "sin", B).is_zero
        assert not _td("linear", "zero", B).is_zero

    @pytest.mark.parametrize("g", ["sin", "cos", "identity_clamped"])
    def test_quadratic_growth(self, g):
        B = sample_fbm(GRID, 0.75, seed=2)
        assert _td("cos_y_plus_half_z", g, B).growth_check(1.0) <= 1.0

    def test_needs_single_path(self):
        B = sample_fbm(GRID, 0.75, seed=0, n_paths=2)
        with pytest.raises(ValueError):
            _td("zero", "sin", B)

    def test_registry_drivers(self):
        for name in ("zero", "cos_y_plus_half_z", "linear"):
            assert lookup("f", name).check() <= 1.0 + 1e-9


class TestSolver:
    def test_constant_terminal(self, small):
        W, X, B = small
        sol = solve_bsde(_td("zero", "sin", B), lambda x: np.full(len(x), 0.7), X, W, phi_bound=0.7)
        assert np.max(np.abs(sol.Y - 0.7)) < 1e-12
        assert np.max(np.abs(sol.Z)) < 1e-10

    def test_heat_anchor(self, heat):
        W, X, B = heat
        sol = solve_bsde(_td("zero", "zero", B), lookup("phi", "cos")[0], X, W, cells=16, phi_bound=1.0)
        assert abs(sol.anchor_value - reference_value("heat_cos", 1.0, 0.0)) < 3 * sol.std_error

    def test_linear_driver_closed_form(self, heat):
        # -dY = (-Y/2 + Z/4) dt - Z dW: Y = e^{-1/2} E cos(W_1 + 1/4) = e^{-1} cos(1/4)
        W, X, B = heat
        sol = solve_bsde(_td("linear", "zero", B), lookup("phi", "cos")[0], X, W, cells=16, phi_bound=1.0)
        assert abs(sol.anchor_value - math.exp(-1.0) * math.cos(0.25)) < 1e-2

    def test_cole_hopf(self, heat):
        W, X, _ = heat
        phi = lookup("phi", "cos")[0]
        const = solve_bsde(lookup("f", "half_z_squared"), lambda x: np.full(len(x), 0.4), X, W)
        assert const.anchor_value == pytest.approx(math.log(math.exp(0.4)), abs=1e-12)
        sol = solve_bsde(lookup("f", "half_z_squared"), phi, X, W, cells=16)
        oracle = math.log(np.mean(np.exp(phi(X.values[:, 0]))))
        assert abs(sol.anchor_value - oracle) < max(3 * sol.std_error, 5e-3)

    def test_theta_holds_pathwise(self, small):
        W, X, B = small
        sol = solve_bsde(_td("cos_y_plus_half_z", "sin", B), lookup("phi", "cos")[0], X, W, cells=4, phi_bound=1.0)
        assert np.all(np.abs(sol.Y) <= sol.theta)

    def test_theta_violation_raises(self, heat):
        W, X, B = heat
        with pytest.raises(InvariantViolation):
            solve_bsde(_td("zero", "zero", B), lambda x: np.full(len(x), 3.0), X, W, phi_bound=0.1)

    def test_bit_reproducible(self, small):
        W, X, B = small
        a = solve_bsde(_td("cos_y_plus_half_z", "sin", B), lookup("phi", "cos")[0], X, W, cells=4)
        b = solve_bsde(_td("cos_y_plus_half_z", "sin", B), lookup("phi", "cos")[0], X, W, cells=4)
        assert np.array_equal(a.Y, b.Y) and np.array_equal(a.Z, b.Z)

    def test_martingale_increments(self, heat):
        W, X, B = heat
        sol = solve_bsde(_td("zero", "zero", B), lookup("phi", "cos")[0], X, W, cells=1)
        k = 32
        inc = sol.Y[:, k - 1] - sol.Y[:, k]
        design = hermite_basis(X.values[:, k], 3)
        coef, *_ = np.linalg.lstsq(design, inc, rcond=None)
        resid = inc - design @ coef
        cov = np.linalg.inv(design.T @ design) * np.var(resid)
        assert np.all(np.abs(coef) <= 3 * np.sqrt(np.diag(cov)) + 1e-12)

    def test_too_few_paths(self):
        W = sample_bm(GRID, seed=0, n_paths=30)
        X = solve_forward_sde(sde_coefficients("zero", "one"), 1.0, 0.0, W)
        with pytest.raises(ValueError):
            solve_bsde(lookup("f", "zero"), lookup("phi", "cos")[0], X, W, degree=3)

    def test_degraded_basis_warning(self):
        W = sample_bm(TimeGrid(1.0, 8), seed=0, n_paths=200)
        frozen = SdeCoefficients(lambda x: 0 * x, lambda x: 0 * x[..., None], 0.0, 0.0)
        X = solve_forward_sde(frozen, 1.0, 0.3, W)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            solve_bsde(lookup("f", "zero"), lookup("phi", "cos")[0], X, W)
        assert any(issubclass(w.category, DegradedBasisWarning) for w in caught)


class TestTheta:
    def test_start(self):
        B = sample_fbm(GRID, 0.75, seed=0)
        assert theta_bound(0.8, B, 5.0, 0.0, 1.0) == 0.8

    def test_zero_path(self):
        B = SamplePath(GRID, np.zeros(65))
        s = np.linspace(0, 1, 11)
        np.testing.assert_allclose(theta_bound(1.0, B, 123.0, s, 1.0), 2.0 * np.exp(s) - 1.0, rtol=1e-14)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 3), st.floats(0, 5))
    def test_monotone(self, s1, s2, phi, C):
        B = sample_fbm(GRID, 0.75, seed=4)
        lo, hi = sorted((s1, s2))
        assert theta_bound(phi, B, C, lo, 1.0) <= theta_bound(phi, B, C, hi, 1.0)

    def test_domain(self):
        with pytest.raises(ValueError):
            theta_bound(1.0, sample_fbm(GRID, 0.75, seed=0), 1.0, 1.5, 1.0)


class TestZBound:
    def test_zero_z(self, heat):
        W, X, B = heat
        sol = solve_bsde(_td("zero", "zero", B), lookup("phi", "cos")[0], X, W)
        flat = sol.copy_with(sol.Y, np.zeros_like(sol.Z))
        assert z_bound_check(flat, B, 1.0).max_ratio == 0.0

    def test_heat_case_below_bound(self, heat):
        W, X, B = heat
        td = _td("zero", "zero", B)
        sol = solve_bsde(td, lookup("phi", "cos")[0], X, W, cells=16)
        rep = z_bound_check(sol, B, td.constant)
        assert rep.nodes == dyadic_nodes(64)
        assert 0 < rep.max_ratio <= 1.0

    def test_bound_monotone_in_sup(self):
        vals = [z_bound(SamplePath(TimeGrid(1.0, 1), [0.0, b]), 1.0, 1.0) for b in (0.0, 0.5, 1.0, 1.5)]
        assert vals == sorted(vals)
        assert vals[0] == pytest.approx(math.e)
        assert math.isinf(z_bound(SamplePath(TimeGrid(1.0, 1), [0.0, 10.0]), 1.0, 1.0))


class TestRegression:
    def test_dyadic_nodes(self):
        assert dyadic_nodes(64) == [1, 2, 4, 8, 16, 32, 64]
        assert dyadic_nodes(12) == [3, 6, 12]

    def test_basis_size_and_orthogonality(self):
        g = np.random.default_rng(0)
        X = g.standard_normal((200000, 2))
        H = hermite_basis(X, 3, center=0.0, scale=1.0)
        assert H.shape[1] == 10
        gram = H.T @ H / len(X)
        # He_k has E[He_k^2] = k!; products of independent coordinates multiply
        assert np.max(np.abs(gram - np.diag(np.diag(gram)))) < 0.1
        assert gram[3, 3] == pytest.approx(2.0, rel=0.05)

    @pytest.mark.parametrize("cells", [1, 4])
    def test_reproduces_polynomials(self, cells):
        x = np.linspace(-2, 2, 400)
        y = 1 - 2 * x + 0.5 * x**3
        fitted, cond = regress(x, y, 3, cells)
        np.testing.assert_allclose(fitted, y, atol=1e-10)
        assert np.isfinite(cond)

    def test_cells_need_scalar_state(self):
        with pytest.raises(ValueError):
            regress(np.zeros((10, 2)), np.zeros(10), 1, cells=2)


def test_driver_check_detects_bad_constants():
    bad = Driver(lambda t, x, y, z: 3.0 * y, lip=(0.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        bad.check()
