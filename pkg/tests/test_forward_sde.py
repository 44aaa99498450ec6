import numpy as np
import pytest

from fracsde.fbm import SamplePath, TimeGrid, sample_bm
from fracsde.forward_sde import SdeCoefficients, solve_forward_sde
from fracsde.registry import sde_coefficients


def _linear(mu, c):
    return SdeCoefficients(lambda x: mu * x, lambda x: c * x[..., None], abs(mu), abs(c), name="gbm")


@pytest.fixture(scope="module")
def W():
    return sample_bm(TimeGrid(1.0, 256), seed=6, n_paths=400)


def test_frozen_state(W):
    zero = SdeCoefficients(lambda x: 0 * x, lambda x: 0 * x[..., None], 0.0, 0.0)
    X = solve_forward_sde(zero, 1.0, 0.7, W)
    assert np.all(X.values == 0.7)


def test_constant_diffusion(W):
    c = 0.8
    coeffs = SdeCoefficients(lambda x: 0 * x, lambda x: c + 0 * x[..., None], 0.0, 0.0)
    t = 0.5
    X = solve_forward_sde(coeffs, t, 0.2, W)
    k_t = W.grid.index_of(t)
    expect = 0.2 + c * (W.values[:, k_t, None] - W.values[:, : k_t + 1])
    np.testing.assert_allclose(X.values[..., 0], expect, atol=1e-12)


def test_anchor_exact(W):
    X = solve_forward_sde(sde_coefficients("mean_reverting", "bounded_smooth"), 0.75, 1.3, W)
    assert X.values.shape == (400, 193, 1)
    assert np.all(X.values[:, -1, 0] == 1.3)
    assert X.k_t == 192
    assert np.array_equal(X.reversed()[:, 0], X.values[:, -1])


def test_never_reads_noise_below_s(W):
    coeffs = sde_coefficients("mean_reverting", "bounded_smooth")
    X = solve_forward_sde(coeffs, 1.0, 0.0, W)
    s = 100
    tampered = W.values.copy()
    tampered[:, :s] += 5.0  # shifts increments only on [0, t_s]
    Y = solve_forward_sde(coeffs, 1.0, 0.0, SamplePath(W.grid, tampered))
    assert np.array_equal(X.values[:, s:], Y.values[:, s:])
    assert not np.array_equal(X.values[:, : s - 1], Y.values[:, : s - 1])


def test_linear_closed_form_and_strong_rate():
    mu, c, x, t = 0.3, 0.6, 1.0, 1.0
    fine = sample_bm(TimeGrid(t, 2**10), seed=2, n_paths=2000)
    exact = x * np.exp((mu - 0.5 * c * c) * t + c * (fine.values[:, -1] - fine.values[:, 0]))
    errs, dts = [], []
    for f in (64, 32, 16, 8):
        Wc = fine.coarsen(f)
        X = solve_forward_sde(_linear(mu, c), t, x, Wc)
        errs.append(np.sqrt(np.mean((X.values[:, 0, 0] - exact) ** 2)))
        dts.append(Wc.grid.dt)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 0.5) < 0.15


def test_off_grid_anchor(W):
    with pytest.raises(ValueError):
        solve_forward_sde(sde_coefficients("zero", "one"), 0.3, 0.0, W)
    with pytest.raises(ValueError):
        solve_forward_sde(sde_coefficients("zero", "one"), 0.0, 0.0, W)


def test_dimension_mismatch():
    W2 = sample_bm(TimeGrid(1.0, 8), dim=2, seed=0, n_paths=3)
    with pytest.raises(ValueError):
        solve_forward_sde(sde_coefficients("zero", "one"), 1.0, 0.0, W2)


def test_vector_state():
    W2 = sample_bm(TimeGrid(1.0, 16), dim=2, seed=1, n_paths=5)
    A = np.array([[1.0, 0.0], [0.5, 2.0]])
    coeffs = SdeCoefficients(lambda x: 0 * x, lambda x: np.broadcast_to(A, x.shape[:-1] + (2, 2)), 0.0, 0.0, n=2, d=2)
    X = solve_forward_sde(coeffs, 1.0, [1.0, -1.0], W2)
    expect = np.array([1.0, -1.0]) + (W2.values[:, -1] - W2.values[:, 0]) @ A.T
    np.testing.assert_allclose(X.values[:, 0], expect, atol=1e-12)


class TestCoefficientCheck:
    def test_registry_constants_hold(self):
        for b in ("zero", "mean_reverting"):
            for s in ("one", "half", "bounded_smooth"):
                sde_coefficients(b, s).check()

    def test_understated_constant(self):
        with pytest.raises(ValueError):
            _linear(2.0, 0.0).__class__(lambda x: 2.0 * x, lambda x: 0 * x[..., None], 1.0, 0.0).check()
