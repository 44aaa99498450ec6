import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracsde.doss_flow import DossFlow, FlowError, eta_and_E, flow, inverse_flow, verify_flow_bounds
from fracsde.fbm import TimeGrid, sample_fbm
from fracsde.registry import lookup

# mpmath (30 digits) derivatives of closed-form flows:
#   g = sin: alpha = 2 atan(tan(y/2) e^z),  |y| < pi
#   g = cos: alpha = gd(z + gd^{-1}(y)),    |y| < pi/2
SIN_JETS = {
    (1.0, 0.5): (1.4664040060843666719, 1.1819255639543391115, -0.61254296778985258958, 0.24160188061092444034),
    (-0.7, 1.3): (-1.858944200020312802, 1.4882730952739988861, 2.4234462732043704886, 5.0152753274529109106),
    (0.3, -2.0): (0.040902151737736319714, 0.13836870366896878154, 0.020520775387845572681, 0.072424756736801611245),
    (2.0, 1.0): (2.677670938880392723, 0.49209283243818558001, -0.2587690102681836224, 0.39057705793623624431),
}
COS_JETS = {
    (1.0, 0.5): (1.218561978687307101, 0.63852371474158738588, -0.11479105433269693063, 0.22004976138631652598),
    (-0.7, 1.3): (0.51085950623366221678, 1.140528867840437563, -1.6897400170292476988, 3.5835890693979351432),
    (0.3, -2.0): (-1.2077829556311706699, 0.37169399280185819003, 0.47869433836324088938, 1.0849166936722216931),
    (0.0, 1.0): (0.86576948323965862429, None, None, None),
}

ys = st.floats(min_value=-2.0, max_value=2.0)
zs = st.floats(min_value=-2.0, max_value=2.0)
g_names = st.sampled_from(["identity", "identity_clamped", "sin", "cos"])


def _jet_tuple(j):
    return tuple(float(v) for v in (j.alpha, j.d1, j.d2, j.d3))


class TestClosedForms:
    def test_zero_is_identity(self):
        j = flow(lookup("g", "zero"), 1.3, 0.8)
        assert _jet_tuple(j) == (1.3, 1.0, 0.0, 0.0)

    def test_identity_exponential(self):
        j = flow(lookup("g", "identity"), 1.0, 1.0)
        assert float(j.alpha) == pytest.approx(math.e, rel=1e-10)
        assert float(j.d1) == pytest.approx(math.e, rel=1e-10)
        assert abs(float(j.d2)) < 1e-12 and abs(float(j.d3)) < 1e-12

    @given(ys, zs)
    def test_identity_everywhere(self, y, z):
        j = flow(lookup("g", "identity"), y, z)
        assert float(j.alpha) == pytest.approx(y * math.exp(z), rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("yz", sorted(SIN_JETS))
    def test_sin(self, yz):
        np.testing.assert_allclose(_jet_tuple(flow(lookup("g", "sin"), *yz)), SIN_JETS[yz], rtol=1e-8, atol=1e-9)

    @pytest.mark.parametrize("yz", sorted(COS_JETS))
    def test_cos(self, yz):
        got = _jet_tuple(flow(lookup("g", "cos"), *yz))
        for a, b in zip(got, COS_JETS[yz]):
            if b is not None:
                assert a == pytest.approx(b, rel=1e-8, abs=1e-9)


class TestInverse:
    def test_zero_time(self):
        w, dh = inverse_flow(lookup("g", "sin"), 0.7, 0.0)
        assert float(w) == 0.7 and float(dh) == 1.0

    def test_identity(self):
        w, dh = inverse_flow(lookup("g", "identity"), math.e, 1.0)
        assert float(w) == pytest.approx(1.0, rel=1e-10)
        assert float(dh) == pytest.approx(math.exp(-1.0), rel=1e-9)

    @pytest.mark.parametrize("name", ["identity", "identity_clamped", "sin", "cos"])
    def test_round_trip_grid(self, name):
        fl = DossFlow(lookup("g", name))
        Y, Z = np.meshgrid(np.linspace(-2, 2, 21), np.linspace(-2, 2, 21))
        assert np.max(np.abs(fl.inverse(fl.alpha(Y, Z), Z) - Y)) < 1e-8

    @given(g_names, ys, zs)
    def test_inverse_jet_rules(self, name, y, z):
        fl = DossFlow(lookup("g", name))
        h = fl.inverse_jet(y, z)
        a = fl.jet(h.alpha, z)
        # differentiate alpha(h(y), z) = y three times
        assert float(a.d1 * h.d1) == pytest.approx(1.0, rel=1e-9)
        assert float(a.d2 * h.d1**2 + a.d1 * h.d2) == pytest.approx(0.0, abs=1e-8)
        third = a.d3 * h.d1**3 + 3 * a.d2 * h.d1 * h.d2 + a.d1 * h.d3
        assert float(third) == pytest.approx(0.0, abs=1e-7 * (1 + float(abs(a.d3 * h.d1**3))))

    @given(g_names, ys, zs)
    def test_chain_identity_in_z(self, name, y, z):
        g = lookup("g", name)
        fl = DossFlow(g)
        d = 1e-5
        dhdz = (fl.inverse(y, z + d) - fl.inverse(y, z - d)) / (2 * d)
        assert float(dhdz) == pytest.approx(float(-fl.inverse_jet(y, z).d1 * g.g(np.float64(y))), abs=1e-6)


class TestFlowProperties:
    @given(g_names, ys, st.floats(-1, 1), st.floats(-1, 1))
    def test_group_property(self, name, y, z1, z2):
        fl = DossFlow(lookup("g", name))
        assert float(fl.alpha(fl.alpha(y, z1), z2)) == pytest.approx(float(fl.alpha(y, z1 + z2)), abs=1e-8)

    @given(g_names, ys, zs)
    def test_monotone_and_fd_consistent(self, name, y, z):
        fl = DossFlow(lookup("g", name))
        j = fl.jet(y, z)
        assert float(j.d1) > 0
        d = 1e-5
        fd = (fl.alpha(y + d, z) - fl.alpha(y - d, z)) / (2 * d)
        assert float(j.d1) == pytest.approx(float(fd), abs=1e-6)

    def test_order_masks_higher_derivatives(self):
        j = DossFlow(lookup("g", "sin")).jet(0.5, 0.5, order=1)
        assert np.isnan(j.d2) and np.isnan(j.d3)
        with pytest.raises(ValueError):
            DossFlow(lookup("g", "sin")).jet(0.5, 0.5, order=4)

    def test_registry_coefficients_consistent(self):
        for name in ("zero", "identity", "identity_clamped", "sin", "cos"):
            assert lookup("g", name).check() < 1e-5


class TestPaths:
    def test_zero_coefficient(self):
        B = sample_fbm(TimeGrid(1.0, 32), 0.75, seed=0)
        eta, E = eta_and_E(lookup("g", "zero"), B, 0.4)
        assert np.all(eta.values == 0.4) and np.all(E.values == 0.4)

    def test_identity_path(self):
        B = sample_fbm(TimeGrid(1.0, 64), 0.75, seed=1)
        eta, E = eta_and_E(lookup("g", "identity"), B, 0.4)
        np.testing.assert_allclose(eta.values, 0.4 * np.exp(B.values), rtol=1e-9)
        np.testing.assert_allclose(E.values, 0.4 * np.exp(-B.values), rtol=1e-9)

    def test_round_trip_along_path(self):
        B = sample_fbm(TimeGrid(1.0, 128), 0.75, seed=2)
        fl = DossFlow(lookup("g", "sin"))
        eta = fl.eta(0.9, B, order=0).alpha
        assert np.max(np.abs(fl.inverse(eta, B.values) - 0.9)) < 1e-8


class TestBounds:
    def test_zero_with_zero_constant(self):
        rep = verify_flow_bounds(lookup("g", "zero"), np.linspace(-2, 2, 5), np.linspace(-2, 2, 5), C=0.0)
        assert rep.holds()

    def test_identity_attains_upper_bound(self):
        rep = verify_flow_bounds(lookup("g", "identity"), np.linspace(-2, 2, 9), np.linspace(0.1, 2, 9), C=1.0)
        assert rep.eta["d1_upper"] == pytest.approx(0.0, abs=1e-9)
        assert rep.eta["d1_lower"] <= 1e-9 and rep.E["d1_lower"] == pytest.approx(0.0, abs=1e-9)
        # growth needs a bounded g; y e^z escapes |y| + |z|
        assert rep.eta["growth"] > 1.0

    def test_sin_sweep(self):
        grid = np.linspace(-3, 3, 25)
        rep = verify_flow_bounds(lookup("g", "sin"), grid, grid)
        assert rep.C == 5.0
        assert rep.holds()

    def test_violation_reported(self):
        # C = 1/2 is too small for g(u) = u: alpha_y = e^z exceeds e^{z/2}
        rep = verify_flow_bounds(lookup("g", "identity"), [1.0], [1.0], C=0.5)
        assert not rep.holds()
        assert rep.eta["d1_upper"] == pytest.approx(math.e - math.exp(0.5), rel=1e-8)


def test_flow_error_carries_diagnostics():
    err = FlowError("boom", g="sin", steps=4)
    assert err.diagnostics == {"g": "sin", "steps": 4}
