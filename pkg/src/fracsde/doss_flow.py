"""Doss flow of a diffusion coefficient and its inverse.

For a coefficient ``g`` the flow ``alpha(y, z)`` solves ``d alpha / dz = g(alpha)``
with ``alpha(y, 0) = y``. Differentiating in ``y`` gives a closed system for the
jet ``(alpha, alpha_y, alpha_yy, alpha_yyy)``::

    a0' = z g(a0)
    a1' = z g'(a0) a1
    a2' = z (g''(a0) a1^2 + g'(a0) a2)
    a3' = z (g'''(a0) a1^3 + 3 g''(a0) a1 a2 + g'(a0) a3)

written in the normalised variable ``theta in [0, 1]`` (``z`` scales the
right-hand side). The system is integrated jointly with classical RK4 and
step doubling; the final value is Richardson-extrapolated.

The y-inverse ``h(y, z)`` with ``alpha(h(y, z), z) = y`` is found by Newton's
method safeguarded by bisection. Along an fBm path, ``eta(t, y) = alpha(y, B_t)``
and ``E(t, y) = h(y, B_t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fbm import SamplePath

__all__ = [
    "FlowError",
    "DiffusionG",
    "FlowJet",
    "DossFlow",
    "flow",
    "inverse_flow",
    "eta_and_E",
    "FlowBoundReport",
    "verify_flow_bounds",
]

FD_TOL = 1e-5
MAX_STEPS = 2**16
MAX_NEWTON = 200


class FlowError(ArithmeticError):
    """Step control or root bracketing failed; ``diagnostics`` holds details."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class DiffusionG:
    """Coefficient ``g`` with derivatives up to order three and sup-norm bounds.

    Parameters
    ----------
    g, dg, d2g, d3g : callable
        Vectorised evaluators of ``g`` and its derivatives.
    bounds : tuple of float
        ``(sup|g|, sup|g'|, sup|g''|, sup|g'''|)``; ``inf`` marks an unbounded
        coefficient.
    name : str
    is_zero : bool
        ``g == 0``; the flow is the identity.
    affine : bool
        ``g'' == 0``; then ``alpha_yy == 0`` and callers may drop terms that
        carry it. The flow itself is still integrated numerically.
    """

    g: Callable
    dg: Callable
    d2g: Callable
    d3g: Callable
    bounds: tuple = (math.inf, math.inf, math.inf, math.inf)
    name: str = ""
    is_zero: bool = False
    affine: bool = False

    @property
    def flow_constant(self) -> float:
        """``C = 1 + sup|g| + sup|g'| + sup|g''| + sup|g'''|``."""
        return 1.0 + float(sum(self.bounds))

    def check(self, probe: Sequence[float] = tuple(np.linspace(-4, 4, 33)), h: float = 1e-4) -> float:
        """Finite-difference consistency and bound domination on ``probe``.

        Returns the largest derivative mismatch; raises ``ValueError`` if it
        exceeds ``FD_TOL`` or a sample exceeds its declared bound.
        """
        x = np.asarray(probe, dtype=float)
        fs = (self.g, self.dg, self.d2g, self.d3g)
        err = 0.0
        for lo, hi in zip(fs, fs[1:]):
            fd = (lo(x + h) - lo(x - h)) / (2 * h)
            err = max(err, float(np.max(np.abs(hi(x) - fd) / (1.0 + np.abs(fd)))))
        if err > FD_TOL:
            raise ValueError(f"derivatives of g={self.name!r} inconsistent (mismatch {err:.2e})")
        for k, (fn, bound) in enumerate(zip(fs, self.bounds)):
            peak = float(np.max(np.abs(np.broadcast_to(fn(x), x.shape))))
            if peak > bound * (1 + 1e-12):
                raise ValueError(f"|g^({k})| reaches {peak:.6g} above declared bound {bound:.6g}")
        return err


@dataclass
class FlowJet:
    """``alpha`` and its first three y-derivatives (arrays broadcast together)."""

    alpha: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    steps: int = 0

    def as_dict(self) -> dict:
        return {"alpha": _plain(self.alpha), "d1": _plain(self.d1), "d2": _plain(self.d2), "d3": _plain(self.d3)}


def _plain(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a.tolist()


@dataclass
class DossFlow:
    """Solvers for ``alpha``, ``h`` and their y-derivatives.

    Parameters
    ----------
    g : DiffusionG
    tol : float
        Relative tolerance of the Richardson error estimate and of Newton.
    min_steps : int
        Initial number of RK4 steps on ``[0, 1]``.
    """

    g: DiffusionG
    tol: float = 1e-10
    min_steps: int = 8
    stats: dict = field(default_factory=lambda: {"jet_calls": 0, "rk4_steps": 0})

    # -- forward flow -------------------------------------------------------

    def _rhs(self, z, s, order: int):
        g = self.g
        a0 = s[0]
        out = [z * g.g(a0)]
        if order >= 1:
            d1g = g.dg(a0)
            out.append(z * d1g * s[1])
        if order >= 2:
            d2g = g.d2g(a0)
            a1sq = s[1] * s[1]
            out.append(z * (d2g * a1sq + d1g * s[2]))
        if order >= 3:
            out.append(z * (g.d3g(a0) * a1sq * s[1] + 3.0 * d2g * s[1] * s[2] + d1g * s[3]))
        return out

    def _rk4(self, y, z, n: int, order: int):
        s = [y, np.ones_like(y), np.zeros_like(y), np.zeros_like(y)][: order + 1]
        h = 1.0 / n
        for _ in range(n):
            k1 = self._rhs(z, s, order)
            k2 = self._rhs(z, [a + 0.5 * h * b for a, b in zip(s, k1)], order)
            k3 = self._rhs(z, [a + 0.5 * h * b for a, b in zip(s, k2)], order)
            k4 = self._rhs(z, [a + h * b for a, b in zip(s, k3)], order)
            s = [a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)]
        self.stats["rk4_steps"] += n
        return s

    def jet(self, y, z, order: int = 3) -> FlowJet:
        """Flow jet at ``(y, z)``; derivatives above ``order`` are returned as NaN."""
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be 0, 1, 2 or 3")
        y, z = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(z, dtype=float))
        y = np.array(y, dtype=float)
        z = np.array(z, dtype=float)
        self.stats["jet_calls"] += 1
        nan = np.full(y.shape, np.nan)
        if self.g.is_zero or not np.any(z):
            # identity map: zero coefficient or z == 0 everywhere
            base = [y, np.ones_like(y), np.zeros_like(y), np.zeros_like(y)]
            return FlowJet(*[base[k] if k <= order else nan for k in range(4)], steps=0)
        n = self.min_steps
        coarse = self._rk4(y, z, n, order)
        while True:
            fine = self._rk4(y, z, 2 * n, order)
            ok = True
            worst = 0.0
            for c, f in zip(coarse, fine):
                e = np.abs(f - c) / 15.0
                lim = self.tol * (1.0 + np.abs(f))
                bad = ~(e <= lim)
                if np.any(bad):
                    ok = False
                    worst = max(worst, float(np.nanmax(e / lim)))
            if ok:
                break
            n *= 2
            if 2 * n > MAX_STEPS:
                raise FlowError(
                    f"flow step control failed for g={self.g.name!r}",
                    steps=2 * n,
                    worst_ratio=worst,
                    z_max=float(np.max(np.abs(z))),
                )
            coarse = fine
        ext = [f + (f - c) / 15.0 for c, f in zip(coarse, fine)]
        vals = [ext[k] if k <= order else nan for k in range(4)]
        return FlowJet(*vals, steps=2 * n)

    def alpha(self, y, z) -> np.ndarray:
        return self.jet(y, z, order=0).alpha

    # -- inverse ------------------------------------------------------------

    def _bracket(self, y, z):
        C = self.g.flow_constant
        if math.isfinite(C):
            r = np.abs(y) + C * np.abs(z) + 1.0
            lo, hi = -r, r
        else:
            r = (1.0 + np.abs(y)) * np.exp(np.abs(z))
            lo, hi = y - r, y + r
        for _ in range(60):
            flo = self.alpha(lo, z) - y
            fhi = self.alpha(hi, z) - y
            bad = (flo > 0) | (fhi < 0)
            if not np.any(bad):
                return lo, hi
            width = hi - lo
            lo = np.where(flo > 0, lo - width, lo)
            hi = np.where(fhi < 0, hi + width, hi)
        raise FlowError("could not bracket the inverse flow", g=self.g.name)

    def inverse(self, y, z) -> np.ndarray:
        """``h(y, z)`` with ``alpha(h, z) = y`` by safeguarded Newton."""
        y, z = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(z, dtype=float))
        y = np.array(y, dtype=float)
        z = np.array(z, dtype=float)
        if self.g.is_zero or not np.any(z):
            return y.copy()
        lo, hi = self._bracket(y, z)
        # first-order guess alpha(w, z) ~ w + z g(w)
        w = np.clip(y - z * self.g.g(y), lo, hi)
        for _ in range(MAX_NEWTON):
            jt = self.jet(w, z, order=1)
            F = jt.alpha - y
            lo = np.where(F <= 0, w, lo)
            hi = np.where(F >= 0, w, hi)
            step = F / jt.d1
            cand = w - step
            outside = ~((cand > lo) & (cand < hi)) & (F != 0)
            cand = np.where(outside, 0.5 * (lo + hi), cand)
            moved = np.abs(cand - w)
            w = np.where(F == 0, w, cand)
            if np.all(moved <= self.tol * (1.0 + np.abs(w))):
                return w
        raise FlowError("Newton iteration for the inverse flow did not converge", g=self.g.name)

    def inverse_jet(self, y, z) -> FlowJet:
        """``h`` and its y-derivatives from the inverse-function rule."""
        w = self.inverse(y, z)
        jt = self.jet(w, z, order=3)
        a1, a2, a3 = jt.d1, jt.d2, jt.d3
        if np.any(~(a1 > 0)):
            raise FlowError("flow lost monotonicity", g=self.g.name)
        h1 = 1.0 / a1
        h2 = -a2 * h1**3
        h3 = -a3 * h1**4 + 3.0 * a2 * a2 * h1**5
        return FlowJet(w, h1, h2, h3, steps=jt.steps)

    # -- along a path -------------------------------------------------------

    def eta(self, y, B: SamplePath, order: int = 3) -> FlowJet:
        """``eta(t, y) = alpha(y, B_t)`` at every node (``y`` broadcasts against ``B``)."""
        return self.jet(y, B.values, order)

    def E(self, y, B: SamplePath) -> np.ndarray:
        """``E(t, y) = h(y, B_t)`` at every node."""
        return self.inverse(y, B.values)


def flow(g: DiffusionG, y, z, tol: float = 1e-10) -> FlowJet:
    """Flow jet ``(alpha, alpha_y, alpha_yy, alpha_yyy)`` at ``(y, z)``."""
    return DossFlow(g, tol).jet(y, z, 3)


def inverse_flow(g: DiffusionG, y, z, tol: float = 1e-10):
    """``h(y, z)`` and ``dh/dy(y, z) = 1 / alpha_y(h, z)``."""
    fl = DossFlow(g, tol)
    w = fl.inverse(y, z)
    return w, 1.0 / fl.jet(w, z, order=1).d1


def eta_and_E(g: DiffusionG, B: SamplePath, y: float, tol: float = 1e-10) -> tuple[SamplePath, SamplePath]:
    """Paths ``t -> alpha(y, B_t)`` and ``t -> h(y, B_t)``."""
    fl = DossFlow(g, tol)
    eta = SamplePath(B.grid, fl.alpha(y, B.values), label="eta")
    E = SamplePath(B.grid, fl.inverse(y, B.values), label="E")
    return eta, E


@dataclass
class FlowBoundReport:
    """Largest value of ``lhs - rhs`` for each growth and derivative bound.

    Non-positive entries (up to rounding) mean the bound holds on the sweep.
    """

    C: float
    eta: dict
    E: dict

    @property
    def max_violation(self) -> float:
        return max(max(self.eta.values()), max(self.E.values()))

    def holds(self, slack: float = 1e-9) -> bool:
        return self.max_violation <= slack


def _bound_violations(jt: FlowJet, y, z, C: float) -> dict:
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(C * np.abs(z))
        lower = np.exp(-C * np.abs(z))
        checks = {
            "growth": np.abs(jt.alpha) - (np.abs(y) + C * np.abs(z)),
            "d1_upper": np.abs(jt.d1) - e,
            "d1_lower": lower - np.abs(jt.d1),
            "d2": np.abs(jt.d2) - e,
            "d3": np.abs(jt.d3) - e,
        }
    return {k: float(np.nanmax(v)) for k, v in checks.items()}


def verify_flow_bounds(g: DiffusionG, ys, zs, C: float | None = None, tol: float = 1e-10) -> FlowBoundReport:
    """Sweep ``(y, z)`` over the grid ``ys x zs`` and measure bound violations.

    Checks ``|xi| <= |y| + C|z|``, ``exp(-C|z|) <= |xi_y| <= exp(C|z|)``,
    ``|xi_yy| <= exp(C|z|)`` and ``|xi_yyy| <= exp(C|z|)`` for ``xi = alpha``
    and ``xi = h``.

    Parameters
    ----------
    g : DiffusionG
    ys, zs : array_like
        One-dimensional sweeps.
    C : float, optional
        Defaults to ``g.flow_constant``.
    """
    C = g.flow_constant if C is None else float(C)
    Y, Z = np.meshgrid(np.asarray(ys, float), np.asarray(zs, float), indexing="ij")
    fl = DossFlow(g, tol)
    fwd = fl.jet(Y, Z, 3)
    inv = fl.inverse_jet(Y, Z)
    return FlowBoundReport(C, _bound_violations(fwd, Y, Z, C), _bound_violations(inv, Y, Z, C))
