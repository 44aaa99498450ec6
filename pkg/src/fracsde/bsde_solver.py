"""Regression Monte Carlo for the transformed quadratic BSDE, pathwise in the fBm.

For a fixed fBm path ``B`` the equation in the original clock reads::

    Y_s = Phi(X_0) + int_0^s ft(r, X_r, Y_r, Z_r) dr - int_0^s Z_r dW_r,   s in [0, t]

with a backward Ito integral, so the known value sits at ``s = 0``. In the
reversed clock ``j = k_t - k`` this is a standard backward induction::

    Zr_j = E_j[Yr_{j+1} dWr_j] / dt
    Yr_j = E_j[Yr_{j+1}] + dt * ft(s_k, X_k, Yr_j, Zr_j)

The conditional expectations are least-squares projections on probabilists'
Hermite polynomials of the standardised state. The implicit ``y`` argument is
handled by an explicit predictor followed by ``picard`` fixed-point sweeps.
All outputs use the original clock: ``Y[:, k]`` is the value at ``t_k``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e

from .doss_flow import DossFlow
from .fbm import SamplePath
from .forward_sde import DiffusionPath

__all__ = [
    "InvariantViolation",
    "DegradedBasisWarning",
    "Driver",
    "TransformedDriver",
    "transformed_driver",
    "BsdeSolution",
    "hermite_basis",
    "cell_index",
    "regress",
    "solve_bsde",
    "theta_bound",
    "z_bound",
    "z_truncation_radius",
    "ZBoundReport",
    "z_bound_check",
    "dyadic_nodes",
]

COND_LIMIT = 1e10


class InvariantViolation(RuntimeError):
    """A pathwise invariant of the solution failed."""


class DegradedBasisWarning(RuntimeWarning):
    """Regression design is ill-conditioned."""


@dataclass
class Driver:
    """Generator ``f(t, x, y, z)``.

    ``x`` has shape ``(M, n)``, ``y`` ``(M,)`` and ``z`` ``(M, d)``; the
    result has shape ``(M,)``.

    Parameters
    ----------
    f : callable
    lip : tuple of float
        Lipschitz constants in ``(x, y, z)``.
    f0_bound : float
        Bound on ``|f(t, 0, 0, 0)|``.
    is_zero : bool
        Marks ``f == 0`` so callers may skip evaluation.
    """

    f: Callable
    lip: tuple = (0.0, 0.0, 0.0)
    f0_bound: float = 0.0
    name: str = ""
    is_zero: bool = False

    def __call__(self, t, x, y, z):
        return self.f(t, x, y, z)

    @property
    def lipschitz(self) -> float:
        return float(sum(self.lip))

    def check(self, n: int = 1, d: int = 1, n_probe: int = 200, seed: int = 0) -> float:
        """Largest Lipschitz ratio on random probe pairs; raises if above one."""
        g = np.random.default_rng(seed)
        x1, x2 = g.normal(size=(2, n_probe, n)) * 2
        y1, y2 = g.normal(size=(2, n_probe)) * 2
        z1, z2 = g.normal(size=(2, n_probe, d)) * 2
        t = g.uniform(0, 1)
        diff = np.abs(self.f(t, x1, y1, z1) - self.f(t, x2, y2, z2))
        L = self.lip
        scale = (
            L[0] * np.linalg.norm(x1 - x2, axis=-1) + L[1] * np.abs(y1 - y2) + L[2] * np.linalg.norm(z1 - z2, axis=-1)
        )
        ratio = float(np.max(diff / np.maximum(scale, 1e-300)))
        if np.any(diff > scale * (1 + 1e-9) + 1e-12):
            raise ValueError(f"driver {self.name!r} violates its Lipschitz constants (ratio {ratio:.3g})")
        f0 = np.abs(self.f(t, np.zeros((1, n)), np.zeros(1), np.zeros((1, d))))
        if float(f0.max()) > self.f0_bound * (1 + 1e-12):
            raise ValueError(f"|f(t,0,0,0)| = {float(f0.max()):.3g} exceeds {self.f0_bound}")
        return ratio


@dataclass
class TransformedDriver:
    """``ft = (f(t, x, eta, eta_y z) + |z|^2 eta_yy / 2) / eta_y`` with ``eta = alpha(., B_t)``."""

    driver: Driver
    flow: DossFlow
    B: SamplePath

    def __post_init__(self):
        if self.B.dim is not None or self.B.values.ndim != 1:
            raise ValueError("the transformed driver needs a single scalar fBm path")

    @property
    def is_zero(self) -> bool:
        # f == 0 and alpha_yy == 0 give ft == 0 identically
        g = self.flow.g
        return self.driver.is_zero and (g.is_zero or g.affine)

    @property
    def constant(self) -> float:
        """``C = C_flow + Lip(f) + sup|f(t, 0, 0, 0)|`` used by the a-priori bounds."""
        return self.flow.g.flow_constant + self.driver.lipschitz + self.driver.f0_bound

    def at_index(self, k: int, x, y, z) -> np.ndarray:
        """Evaluate at grid node ``k`` of the fBm path."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        t = k * self.B.grid.dt
        if self.flow.g.is_zero:
            return self.driver(t, x, y, z)
        jt = self.flow.jet(y, self.B.values[k], order=2)
        a1 = jt.d1
        if np.any(~(a1 > 0)):
            raise InvariantViolation("flow derivative d alpha/dy is not positive")
        z2 = np.sum(z * z, axis=-1)
        base = 0.0 if self.driver.is_zero else self.driver(t, x, jt.alpha, a1[..., None] * z)
        return (base + 0.5 * jt.d2 * z2) / a1

    def __call__(self, s: float, x, y, z) -> np.ndarray:
        return self.at_index(self.B.grid.index_of(s), x, y, z)

    def growth_check(self, t: float, n_probe: int = 400, seed: int = 0, n: int = 1, d: int = 1) -> float:
        """Largest ``|ft| / (K (1 + |z|^2))`` on random probes in ``[0, t]``.

        ``K = exp(C sup_{s<=t} |B_s|)``; values at most one mean the quadratic
        growth bound holds on the sample.
        """
        g = np.random.default_rng(seed)
        kt = self.B.grid.index_of(t)
        K = math.exp(self.constant * float(np.max(np.abs(self.B.values[: kt + 1]))))
        worst = 0.0
        for k in g.integers(0, kt + 1, size=8):
            x = g.normal(size=(n_probe, n)) * 2
            y = g.normal(size=n_probe) * 2
            z = g.normal(size=(n_probe, d)) * 2
            val = np.abs(self.at_index(int(k), x, y, z))
            worst = max(worst, float(np.max(val / (K * (1 + np.sum(z * z, axis=-1))))))
        return worst


def transformed_driver(f: Driver, flow: DossFlow, B: SamplePath) -> TransformedDriver:
    return TransformedDriver(f, flow, B)


def hermite_basis(X: np.ndarray, degree: int, center=None, scale=None) -> np.ndarray:
    """Total-degree products of probabilists' Hermite polynomials.

    Parameters
    ----------
    X : ndarray, shape (M, n)
    degree : int
    center, scale : array_like, optional
        Standardisation; defaults to the sample mean and standard deviation.

    Returns
    -------
    ndarray, shape (M, n_terms)
        The first column is the constant.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    mu = X.mean(axis=0) if center is None else np.asarray(center, float)
    sd = X.std(axis=0) if scale is None else np.asarray(scale, float)
    sd = np.where(sd > 0, sd, 1.0)
    U = (X - mu) / sd
    n = U.shape[1]
    # per-coordinate He_0..He_degree
    H = np.stack([hermite_e.hermeval(U, np.eye(degree + 1)[k]) for k in range(degree + 1)], axis=-1)
    cols = [np.ones(len(U))]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n), deg):
            counts = np.bincount(combo, minlength=n)
            col = np.ones(len(U))
            for i, c in enumerate(counts):
                if c:
                    col = col * H[:, i, c]
            cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class BsdeSolution:
    """Pathwise solution in the original clock.

    Attributes
    ----------
    Y : ndarray, shape (M, k_t + 1)
    Z : ndarray, shape (M, k_t + 1, d)
        ``Z[:, 0]`` repeats ``Z[:, 1]`` (no increment precedes node 0).
    X : DiffusionPath
    W : SamplePath
    B : SamplePath or None
    residual_norm : ndarray, shape (k_t,)
        RMS of in-sample regression residuals of ``Y`` per reversed step.
    condition : ndarray, shape (k_t,)
        Condition number of each regression design.
    std_error : float
        Monte Carlo standard error of ``Y`` at the anchor.
    """

    Y: np.ndarray
    Z: np.ndarray
    X: DiffusionPath
    W: SamplePath
    B: SamplePath | None
    residual_norm: np.ndarray
    condition: np.ndarray
    std_error: float
    theta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.X.grid

    @property
    def anchor_value(self) -> float:
        """Estimate of ``Y_t`` at the anchor ``(t, x)``."""
        return float(np.mean(self.Y[:, -1]))

    def copy_with(self, Y: np.ndarray, Z: np.ndarray) -> "BsdeSolution":
        return BsdeSolution(
            Y, Z, self.X, self.W, self.B, self.residual_norm, self.condition, self.std_error, self.theta, dict(self.meta)
        )


def theta_bound(phi_bound: float, B: SamplePath, C: float, s, t: float):
    """A-priori bound ``theta_s = (|Phi| + 1) exp(exp(C sup_{r<=t} |B_r|) s) - 1``.

    Parameters
    ----------
    phi_bound : float
        Bound on ``|Phi|``.
    B : SamplePath
        Single fBm path; only ``sup_{r<=t} |B_r|`` enters.
    C : float
    s : float or array_like
        Times in ``[0, t]``.
    t : float
    """
    s = np.asarray(s, dtype=float)
    if np.any(s > t + 1e-12) or np.any(s < 0):
        raise ValueError("theta_bound needs 0 <= s <= t")
    kt = B.grid.index_of(t)
    sup = float(np.max(np.abs(B.values[..., : kt + 1])))
    with np.errstate(over="ignore", invalid="ignore"):
        rate = math.exp(C * sup) if C * sup < 700 else math.inf
        out = (abs(phi_bound) + 1.0) * np.exp(rate * s) - 1.0
    # rate * 0 must stay 0 even when rate overflows
    out = np.where(s == 0, abs(phi_bound), out)
    return float(out) if out.ndim == 0 else out


def z_bound(B: SamplePath, C: float, t: float) -> float:
    """``exp(exp(C sup_{s<=t} |B_s|))``, ``inf`` on overflow."""
    kt = B.grid.index_of(t)
    sup = float(np.max(np.abs(B.values[..., : kt + 1])))
    inner = C * sup
    if inner > 6.5:
        return math.inf
    return math.exp(math.exp(inner))


def z_truncation_radius(B: SamplePath, C: float, t: float) -> float:
    """``R = 10 sqrt(z_bound)``."""
    zb = z_bound(B, C, t)
    return math.inf if math.isinf(zb) else 10.0 * math.sqrt(zb)


def _truncate(z: np.ndarray, R: float) -> np.ndarray:
    if not math.isfinite(R):
        return z
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return np.where(norm > R, z * (R / np.maximum(norm, 1e-300)), z)


def _project(design: np.ndarray, rhs: np.ndarray):
    coef, _, rank, sv = np.linalg.lstsq(design, rhs, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    return coef, cond


def cell_index(x: np.ndarray, cells: int) -> np.ndarray:
    """Equiprobable cell of each sample of a scalar state (sample quantiles)."""
    if cells == 1:
        return np.zeros(len(x), dtype=int)
    edges = np.quantile(x, np.linspace(0.0, 1.0, cells + 1)[1:-1])
    return np.searchsorted(edges, x, side="right")


def regress(X: np.ndarray, rhs: np.ndarray, degree: int, cells: int = 1):
    """Least-squares fitted values of ``rhs`` on a (piecewise) Hermite basis of ``X``.

    Parameters
    ----------
    X : ndarray, shape (M, n)
    rhs : ndarray, shape (M,) or (M, q)
    degree : int
    cells : int
        Number of equiprobable cells of a scalar state; each cell gets its
        own total-degree basis. ``1`` is a global fit.

    Returns
    -------
    fitted : ndarray, same shape as ``rhs``
    cond : float
        Largest condition number over the cell designs.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if cells > 1 and X.shape[1] != 1:
        raise ValueError("cell-local regression supports scalar states only")
    idx = cell_index(X[:, 0], cells)
    fitted = np.empty(np.shape(rhs))
    worst = 0.0
    for c in range(cells):
        sel = idx == c
        design = hermite_basis(X[sel], degree)
        coef, cond = _project(design, rhs[sel])
        fitted[sel] = design @ coef
        worst = max(worst, cond)
    return fitted, worst


def solve_bsde(
    driver,
    terminal: Callable,
    X: DiffusionPath,
    W: SamplePath,
    degree: int = 3,
    cells: int = 1,
    picard: int = 2,
    z_cap: float | None = None,
    phi_bound: float | None = None,
    check_theta: bool = True,
) -> BsdeSolution:
    """Backward induction by least-squares projection.

    Parameters
    ----------
    driver : TransformedDriver or Driver
        A plain ``Driver`` is used as is (no transformation).
    terminal : callable
        ``Phi``, mapping ``(M, n)`` states to ``(M,)``.
    X : DiffusionPath
        Forward paths built from ``W``.
    W : SamplePath
        Brownian batch used for ``X``.
    degree : int
        Total degree of the Hermite basis.
    cells : int
        Equiprobable state cells for piecewise regression (scalar states).
    picard : int
        Fixed-point sweeps after the explicit predictor.
    z_cap : float, optional
        Truncation radius for ``Z`` inside the driver. Defaults to
        ``z_truncation_radius`` for transformed drivers and no cap otherwise.
    phi_bound : float, optional
        Bound on ``|Phi|`` for the ``theta`` check.
    check_theta : bool
        Raise ``InvariantViolation`` if ``|Y_s| > theta_s`` on some path.

    Returns
    -------
    BsdeSolution
    """
    k_t = X.k_t
    dt = X.grid.dt
    M = X.values.shape[0]
    w = W.vector_values()
    if w.ndim == 2:
        w = w[None]
    d = w.shape[-1]
    n_terms = cells * hermite_basis(np.zeros((2, X.values.shape[-1])), degree).shape[1]
    if M < 10 * n_terms:
        raise ValueError(f"need at least {10 * n_terms} paths for {n_terms} basis functions, got {M}")
    transformed = isinstance(driver, TransformedDriver)
    B = driver.B if transformed else None
    if z_cap is None:
        z_cap = z_truncation_radius(B, driver.constant, X.t) if transformed else math.inf
    skip_f = driver.is_zero
    evaluate = driver.at_index if transformed else (lambda k, x, y, z: driver(k * dt, x, y, z))

    dW = w[:, 1 : k_t + 1] - w[:, :k_t]  # dW[:, k-1] = W_k - W_{k-1}
    Y = np.empty((M, k_t + 1))
    Z = np.zeros((M, k_t + 1, d))
    Y[:, 0] = terminal(X.values[:, 0])
    residual = np.zeros(k_t)
    cond = np.zeros(k_t)
    acc_f = np.zeros(M)  # pathwise sum of ft * dt, for the standard error
    for k in range(1, k_t + 1):
        # reversed step j = k_t - k: regress node k-1 quantities on the state at node k
        nxt = Y[:, k - 1]
        inc = dW[:, k - 1]
        xk = X.values[:, k]
        if k == k_t:
            # the state is deterministic at the anchor
            ey = np.full(M, nxt.mean())
            cond[0] = 1.0
        else:
            ey, cond[k_t - k] = regress(xk, nxt, degree, cells)
        # centring removes the O(1/dt) variance of nxt * inc / dt; E[c(X_k) inc | X_k] = 0
        zrhs = (nxt - ey)[:, None] * inc
        if k == k_t:
            z = np.broadcast_to(zrhs.mean(axis=0) / dt, (M, d))
        else:
            z = regress(xk, zrhs, degree, cells)[0] / dt
        y = ey
        if not skip_f:
            zc = _truncate(z, z_cap)
            for _ in range(1 + picard):
                fv = evaluate(k, xk, y, zc)
                y = ey + dt * fv
            acc_f += dt * fv
        Y[:, k] = y
        Z[:, k] = z
        residual[k_t - k] = math.sqrt(float(np.mean((nxt - ey - (inc * z).sum(axis=1)) ** 2)))
        if cond[k_t - k] > COND_LIMIT:
            warnings.warn(
                f"regression design condition number {cond[k_t - k]:.3g} at node {k}", DegradedBasisWarning, stacklevel=2
            )
    Z[:, 0] = Z[:, 1]
    std_error = float(np.std(Y[:, 0] + acc_f) / math.sqrt(M))
    sol = BsdeSolution(
        Y, Z, X, W, B, residual, cond, std_error, meta={"degree": degree, "cells": cells, "picard": picard}
    )
    if transformed and phi_bound is not None:
        theta = theta_bound(phi_bound, B, driver.constant, X.grid.nodes, X.t)
        sol.theta = theta
        if check_theta:
            bad = np.abs(Y) > theta[None, :] * (1 + 1e-12)
            if np.any(bad):
                k = int(np.argmax(bad.any(axis=0)))
                raise InvariantViolation(f"|Y_s| exceeds theta_s at node {k} on {int(bad.sum())} entries")
    return sol


def dyadic_nodes(k_t: int) -> list[int]:
    """Nodes ``k_t, k_t/2, k_t/4, ..., 1`` (integer halvings)."""
    out, k = [], k_t
    while k >= 1:
        out.append(k)
        if k % 2:
            break
        k //= 2
    return sorted(out)


@dataclass
class ZBoundReport:
    """Ratios of the regressed ``E[int_0^tau |Z|^2 ds | X_tau]`` to the bound."""

    nodes: list
    ratios: list
    bound: float

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


def z_bound_check(sol: BsdeSolution, B: SamplePath, C: float, nodes=None, degree: int | None = None) -> ZBoundReport:
    """Compare the conditional energy of ``Z`` with ``exp(exp(C sup|B|))``.

    At each stopping node ``tau`` the running sum ``sum_{i<=k} |Z_i|^2 dt`` is
    projected on the basis of ``X_tau``; the report holds the largest fitted
    value divided by the bound.
    """
    k_t = sol.X.k_t
    nodes = dyadic_nodes(k_t) if nodes is None else list(nodes)
    degree = sol.meta.get("degree", 3) if degree is None else degree
    cells = sol.meta.get("cells", 1)
    bound = z_bound(B, C, sol.X.t)
    energy = np.cumsum(np.sum(sol.Z[:, 1:] ** 2, axis=-1) * sol.grid.dt, axis=1)
    ratios = []
    for k in nodes:
        if k < 1 or k > k_t:
            raise ValueError(f"stopping node {k} outside 1..{k_t}")
        target = energy[:, k - 1]
        if not np.any(target):
            ratios.append(0.0)
            continue
        if k == k_t:
            fitted = np.array([target.mean()])
        else:
            fitted, _ = regress(sol.X.values[:, k], target, degree, cells)
        ratios.append(float(np.max(fitted)) / bound)
    return ZBoundReport(nodes, ratios, bound)
