"""Random-coefficient parabolic PDE and the fBm-driven SPDE, pathwise in the fBm.

For a fixed fBm path ``B`` the PDE::

    u_t = L u + ft(t, x, u, sigma u_x),    u(0, x) = Phi(x),    L = sigma^2/2 d_xx + b d_x

is solved by explicit Euler with central differences; ``ft`` is the
transformed driver. Then ``v(t, x) = alpha(u(t, x), B_t)`` is the candidate
solution of::

    dv = [L v + f(t, x, v, sigma v_x)] dt + g(v) dB_t,    v(0, x) = Phi(x)

which is checked through a discrete residual with the Russo-Vallois
integral. Boundary values are frozen at ``Phi``; only interior nodes away from
the boundary are used for acceptance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bsde_solver import Driver, TransformedDriver
from .doss_flow import DiffusionG, DossFlow
from .fbm import SamplePath, TimeGrid
from .forward_sde import SdeCoefficients
from .rv_calculus import backward_integral_array

__all__ = [
    "StabilityError",
    "SpaceTimeGrid",
    "RandomField",
    "solve_pde_random_coeff",
    "spde_transform",
    "spde_inverse",
    "spde_residual_profile",
    "spde_residual",
    "chain_rule_defects",
    "FeynmanKacReport",
    "feynman_kac_check",
    "SAFETY",
]

SAFETY = 1.1
BAND = 4


class StabilityError(ValueError):
    """The explicit scheme would violate its stability bound."""


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform ``(t, x)`` grid; ``h = (x_max - x_min) / (n_x - 1)``."""

    time: TimeGrid
    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("need x_max > x_min")
        if self.n_x < 2 * BAND + 3:
            raise ValueError(f"need at least {2 * BAND + 3} spatial nodes")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n_x)

    def interior(self, band: int = BAND) -> slice:
        """Nodes at least ``band`` steps away from either boundary."""
        return slice(band, self.n_x - band)

    def check_stability(self, sigma2_max: float) -> None:
        limit = self.h**2 / (SAFETY * max(sigma2_max, 1e-300))
        if self.time.dt > limit:
            raise StabilityError(f"dt={self.time.dt:.3g} exceeds h^2/(1.1 max sigma^2) = {limit:.3g}")

    @classmethod
    def stable(cls, time: TimeGrid, x_min: float, x_max: float, sigma2_max: float) -> "SpaceTimeGrid":
        """Finest grid on ``[x_min, x_max]`` that satisfies the stability bound."""
        h_min = math.sqrt(SAFETY * sigma2_max * time.dt)
        n_x = int(math.floor((x_max - x_min) / h_min)) + 1
        return cls(time, x_min, x_max, n_x)


@dataclass
class RandomField:
    """Values ``u(t_k, x_j)`` with shape ``(n_t + 1, n_x)`` for one fBm path."""

    grid: SpaceTimeGrid
    values: np.ndarray
    label: str = "u"
    meta: dict = field(default_factory=dict)

    def at(self, t: float, x: float) -> float:
        """Value at a grid time, linearly interpolated in space."""
        k = self.grid.time.index_of(t)
        return float(np.interp(x, self.grid.x, self.values[k]))


def _dx(u: np.ndarray, h: float) -> np.ndarray:
    return (u[..., 2:] - u[..., :-2]) / (2 * h)


def _dxx(u: np.ndarray, h: float) -> np.ndarray:
    return (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / (h * h)


def _generator(coeffs: SdeCoefficients, x: np.ndarray):
    if coeffs.n != 1 or coeffs.d != 1:
        raise ValueError("the finite-difference solver handles n = d = 1 only")
    xi = x[1:-1, None]
    b = coeffs.b(xi)[:, 0]
    s = coeffs.sigma(xi)[:, 0, 0]
    return b, s


def solve_pde_random_coeff(
    coeffs: SdeCoefficients,
    f: Driver,
    flow: DossFlow,
    B: SamplePath,
    terminal: Callable,
    grid: SpaceTimeGrid,
) -> RandomField:
    """Explicit Euler solution of the transformed PDE for one fBm path.

    Parameters
    ----------
    coeffs : SdeCoefficients
        Scalar drift and diffusion defining ``L``.
    f : Driver
        Untransformed driver; the flow turns it into ``ft``.
    flow : DossFlow
    B : SamplePath
        Single fBm path on ``grid.time``.
    terminal : callable
        ``Phi`` on ``(n_x, 1)`` states.
    grid : SpaceTimeGrid

    Raises
    ------
    StabilityError
        Before any time stepping when ``dt > h^2 / (1.1 max sigma^2)``.

    Notes
    -----
    The drift uses central differences, so the scheme is monotone only when
    also ``|b| h <= sigma^2`` on the grid.
    """
    if B.grid != grid.time:
        raise ValueError("fBm path and PDE grid use different time grids")
    x = grid.x
    b, s = _generator(coeffs, x)
    grid.check_stability(float(np.max(s * s)))
    h, dt = grid.h, grid.time.dt
    ft = TransformedDriver(f, flow, B)
    skip = ft.is_zero
    xi = x[1:-1, None]
    u = np.empty((grid.time.n_steps + 1, grid.n_x))
    u[0] = terminal(x[:, None])
    for k in range(grid.time.n_steps):
        cur = u[k]
        ux = _dx(cur, h)
        rate = 0.5 * s * s * _dxx(cur, h) + b * ux
        if not skip:
            rate = rate + ft.at_index(k, xi, cur[1:-1], (s * ux)[:, None])
        u[k + 1, 1:-1] = cur[1:-1] + dt * rate
        u[k + 1, 0], u[k + 1, -1] = u[0, 0], u[0, -1]
    return RandomField(grid, u, "u", {"fbm": B.meta})


def spde_transform(u: RandomField, flow: DossFlow, B: SamplePath) -> RandomField:
    """``v(t, x) = alpha(u(t, x), B_t)``."""
    v = flow.alpha(u.values, B.values[:, None])
    return RandomField(u.grid, v, "u_hat", dict(u.meta))


def spde_inverse(v: RandomField, flow: DossFlow, B: SamplePath) -> RandomField:
    """``u(t, x) = h(v(t, x), B_t)``."""
    u = flow.inverse(v.values, B.values[:, None])
    return RandomField(v.grid, u, "u", dict(v.meta))


def spde_residual_profile(
    v: RandomField,
    coeffs: SdeCoefficients,
    f: Driver,
    g: DiffusionG,
    B: SamplePath,
    eps: float,
    band: int = BAND,
) -> tuple[np.ndarray, np.ndarray]:
    """Per interior node, ``sup_t`` of the discrete SPDE residual.

    ``res_k = v_k - Phi - sum_{i<k} [L_h v_i + f(t_i, x, v_i, sigma D_x v_i)] dt - I(eps, t_k, g(v), dB)``
    with the same central differences as the PDE solver.

    Returns
    -------
    x : ndarray
        Interior node coordinates.
    res : ndarray
        Residual per node.
    """
    grid = v.grid
    m = grid.time.steps_for(eps)
    x = grid.x
    b, s = _generator(coeffs, x)
    h, dt = grid.h, grid.time.dt
    vals = v.values
    vx = _dx(vals, h)
    drift = 0.5 * s * s * _dxx(vals, h) + b * vx
    if not f.is_zero:
        xi = x[1:-1, None]
        drift = drift + np.stack(
            [f(k * dt, xi, vals[k, 1:-1], (s * vx[k])[:, None]) for k in range(grid.time.n_steps + 1)]
        )
    acc = np.zeros_like(drift)
    np.cumsum(drift[:-1] * dt, axis=0, out=acc[1:])
    inner = vals[:, 1:-1]
    rhs = vals[0, 1:-1] + acc
    if not g.is_zero:
        rhs = rhs + backward_integral_array(g.g(inner).T, B.values[None, :], m).T
    res = np.max(np.abs(inner - rhs), axis=0)
    keep = slice(band - 1, grid.n_x - 1 - band)
    return x[1:-1][keep], res[keep]


def spde_residual(v: RandomField, coeffs, f, g, B, eps, band: int = BAND) -> float:
    """Largest interior value of ``spde_residual_profile``."""
    return float(np.max(spde_residual_profile(v, coeffs, f, g, B, eps, band)[1]))


def chain_rule_defects(u: RandomField, flow: DossFlow, B: SamplePath, band: int = BAND) -> tuple[float, float]:
    """Finite-difference check of the spatial chain rule for ``v = alpha(u, B_t)``.

    Returns the largest interior mismatch of ``D_x v = alpha_y D_x u`` and of
    ``D_xx v = alpha_yy (D_x u)^2 + alpha_y D_xx u``; both are ``O(h^2)``.
    """
    h = u.grid.h
    jt = flow.jet(u.values, B.values[:, None], order=2)
    v = jt.alpha
    ux, uxx = _dx(u.values, h), _dxx(u.values, h)
    a1, a2 = jt.d1[:, 1:-1], jt.d2[:, 1:-1]
    keep = slice(band - 1, u.grid.n_x - 1 - band)
    d1 = np.abs(_dx(v, h) - a1 * ux)[:, keep]
    d2 = np.abs(_dxx(v, h) - (a2 * ux * ux + a1 * uxx))[:, keep]
    return float(d1.max()), float(d2.max())


@dataclass
class FeynmanKacReport:
    """PDE values against BSDE anchor estimates at probe points."""

    probes: list
    pde: list
    bsde: list
    std_errors: list
    tolerances: list

    @property
    def discrepancies(self) -> list:
        return [abs(a - b) for a, b in zip(self.pde, self.bsde)]

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies)

    @property
    def passed(self) -> bool:
        return all(d <= tol for d, tol in zip(self.discrepancies, self.tolerances))


def feynman_kac_check(u: RandomField, samples, model_const: float = 1.0, floor: float = 0.0) -> FeynmanKacReport:
    """Compare ``u(t, x)`` with BSDE estimates of ``Y_t^{t,x}``.

    Parameters
    ----------
    u : RandomField
    samples : iterable of (t, x, value, std_error)
        BSDE anchor estimates.
    model_const : float
        ``C`` in the tolerance ``max(3 SE, C (h^2 + dt), floor)``.
    floor : float
        Absolute tolerance floor.
    """
    disc = model_const * (u.grid.h**2 + u.grid.time.dt)
    probes, pde, bsde, ses, tols = [], [], [], [], []
    for t, x, val, se in samples:
        probes.append((t, x))
        pde.append(u.at(t, x))
        bsde.append(float(val))
        ses.append(float(se))
        tols.append(max(3 * se, disc, floor))
    return FeynmanKacReport(probes, pde, bsde, ses, tols)
