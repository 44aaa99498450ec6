"""Discrete backward Russo-Vallois integrals, brackets and Ito-formula residuals.

All estimators work on uniform grids with ``eps = m * dt`` for an integer
``m >= 1``, so the shifted difference ``Y(s) - Y(s - eps)`` is an exact index
shift. Times before 0 use the value at 0 and the time integral is a
left-endpoint Riemann sum::

    I_k = (1/m) * sum_{j<k} X_j (Y_j - Y_{j-m})
    C_k = (1/m) * sum_{j<k} (X_j - X_{j-m}) (Y_j - Y_{j-m})

Every function accepts batches: time runs along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fbm import SamplePath, TimeGrid

__all__ = [
    "EpsSchedule",
    "default_eps_schedule",
    "ScalarField1",
    "ScalarField2",
    "shifted_increment",
    "backward_integral_array",
    "bracket_array",
    "rv_backward_integral",
    "rv_bracket",
    "young_integral",
    "backward_ito_sum",
    "ito_residual_1d",
    "mixed_ito_residual",
]

FD_TOL = 1e-5


@dataclass(frozen=True)
class EpsSchedule:
    """Strictly decreasing window sizes for a refinement study."""

    eps: tuple

    def __post_init__(self):
        e = tuple(float(x) for x in self.eps)
        if not e:
            raise ValueError("empty eps schedule")
        if any(x <= 0 for x in e):
            raise ValueError("eps values must be positive")
        if any(a <= b for a, b in zip(e, e[1:])):
            raise ValueError("eps schedule must be strictly decreasing")
        object.__setattr__(self, "eps", e)

    def __iter__(self):
        return iter(self.eps)

    def __len__(self):
        return len(self.eps)

    def check_grid(self, grid: TimeGrid) -> list[int]:
        """Window sizes in steps; each ``eps`` must be a multiple of ``grid.dt``."""
        return [grid.steps_for(e) for e in self.eps]


def default_eps_schedule(coarsest: int = 4, finest: int = 10) -> EpsSchedule:
    """``eps = 2^-coarsest, ..., 2^-finest``."""
    return EpsSchedule(tuple(2.0**-k for k in range(coarsest, finest + 1)))


@dataclass
class ScalarField1:
    """A C^2 function of one variable with its first two derivatives."""

    f: Callable
    df: Callable
    d2f: Callable
    name: str = ""

    def check(self, probe: Sequence[float] = tuple(np.linspace(-2, 2, 9)), h: float = 1e-4) -> float:
        """Largest finite-difference mismatch; raises above ``FD_TOL``."""
        x = np.asarray(probe, dtype=float)
        err = max(
            _rel(self.df(x), (self.f(x + h) - self.f(x - h)) / (2 * h)),
            _rel(self.d2f(x), (self.df(x + h) - self.df(x - h)) / (2 * h)),
        )
        if err > FD_TOL:
            raise ValueError(f"derivatives of {self.name or 'field'} inconsistent (mismatch {err:.2e})")
        return err


@dataclass
class ScalarField2:
    """A C^2 function ``F(x, y)`` with its partial derivatives up to order two."""

    F: Callable
    Fx: Callable
    Fy: Callable
    Fxx: Callable
    Fxy: Callable
    Fyy: Callable
    name: str = ""

    def check(self, probe: Sequence[float] = tuple(np.linspace(-1.5, 1.5, 7)), h: float = 1e-4) -> float:
        """Largest finite-difference mismatch over ``probe x probe``; raises above ``FD_TOL``."""
        x, y = np.meshgrid(np.asarray(probe, float), np.asarray(probe, float))
        fd_x = lambda g: (g(x + h, y) - g(x - h, y)) / (2 * h)
        fd_y = lambda g: (g(x, y + h) - g(x, y - h)) / (2 * h)
        err = max(
            _rel(self.Fx(x, y), fd_x(self.F)),
            _rel(self.Fy(x, y), fd_y(self.F)),
            _rel(self.Fxx(x, y), fd_x(self.Fx)),
            _rel(self.Fxy(x, y), fd_y(self.Fx)),
            _rel(self.Fxy(x, y), fd_x(self.Fy)),
            _rel(self.Fyy(x, y), fd_y(self.Fy)),
        )
        if err > FD_TOL:
            raise ValueError(f"derivatives of {self.name or 'field'} inconsistent (mismatch {err:.2e})")
        return err


def _rel(a, b) -> float:
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))


def shifted_increment(Y: np.ndarray, m: int) -> np.ndarray:
    """``Y_j - Y_{j-m}`` along the last axis, with ``Y_{j-m} = Y_0`` for ``j < m``."""
    if m < 1:
        raise ValueError("window must span at least one step")
    D = np.empty_like(Y)
    n1 = Y.shape[-1]
    k = min(m, n1)
    D[..., :k] = Y[..., :k] - Y[..., :1]
    D[..., k:] = Y[..., k:] - Y[..., : n1 - k]
    return D


def _cumulative(terms: np.ndarray, m: int) -> np.ndarray:
    # out_k = (1/m) sum_{j<k} terms_j; terms at the last node never enter
    out = np.zeros(terms.shape)
    np.cumsum(terms[..., :-1], axis=-1, out=out[..., 1:])
    out /= m
    return out


def backward_integral_array(X: np.ndarray, Y: np.ndarray, m: int) -> np.ndarray:
    """Array kernel of ``rv_backward_integral`` with the window given in steps."""
    X, Y = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float))
    return _cumulative(X * shifted_increment(Y, m), m)


def bracket_array(X: np.ndarray, Y: np.ndarray, m: int) -> np.ndarray:
    """Array kernel of ``rv_bracket`` with the window given in steps."""
    X, Y = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float))
    return _cumulative(shifted_increment(X, m) * shifted_increment(Y, m), m)


def _pair(X: SamplePath, Y: SamplePath) -> None:
    if X.grid != Y.grid:
        raise ValueError(f"grid mismatch: {X.grid} vs {Y.grid}")
    if X.dim is not None or Y.dim is not None:
        raise ValueError("Russo-Vallois estimators expect scalar processes")
    try:
        np.broadcast_shapes(X.values.shape, Y.values.shape)
    except ValueError as exc:
        raise ValueError(f"shape mismatch: {X.values.shape} vs {Y.values.shape}") from exc


def rv_backward_integral(X: SamplePath, Y: SamplePath, eps: float) -> SamplePath:
    """Backward integral ``t -> I(eps, t, X, dY)``.

    Parameters
    ----------
    X, Y : SamplePath
        Scalar processes on the same grid (batches broadcast).
    eps : float
        Window, a positive integer multiple of the grid step.

    Returns
    -------
    SamplePath
        The running integral, zero at ``t = 0``.
    """
    _pair(X, Y)
    m = X.grid.steps_for(eps)
    return SamplePath(X.grid, backward_integral_array(X.values, Y.values, m), label=f"I({X.label},d{Y.label})")


def rv_bracket(X: SamplePath, Y: SamplePath, eps: float) -> SamplePath:
    """Generalized bracket approximation ``t -> C_eps(X, Y)(t)``."""
    _pair(X, Y)
    m = X.grid.steps_for(eps)
    return SamplePath(X.grid, bracket_array(X.values, Y.values, m), label=f"C({X.label},{Y.label})")


def young_integral(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Left-point Riemann-Stieltjes sums ``sum_{j<k} X_j (Y_{j+1} - Y_j)``."""
    X, Y = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float))
    out = np.zeros(X.shape)
    np.cumsum(X[..., :-1] * np.diff(Y, axis=-1), axis=-1, out=out[..., 1:])
    return out


def backward_ito_sum(H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Right-endpoint sums ``sum_{j<k} H_{j+1} . (W_{j+1} - W_j)``.

    ``H`` and ``W`` carry time on axis -2 and coordinates on axis -1.
    """
    terms = np.sum(H[..., 1:, :] * np.diff(W, axis=-2), axis=-1)
    out = np.zeros(terms.shape[:-1] + (terms.shape[-1] + 1,))
    np.cumsum(terms, axis=-1, out=out[..., 1:])
    return out


def ito_residual_1d(
    f, X: SamplePath, eps: float, include_bracket: bool = True, terminal: bool = False
) -> np.ndarray | float:
    """Sup-norm residual of the one-dimensional change-of-variables formula.

    Computes ``sup_t |f(X_t) - f(X_0) - I(eps, t, f'(X), dX) + (1/2) int f''(X) dC_eps(X, X)|``
    per path. The bracket integral is the Stieltjes sum of ``f''(X_j)``
    against the increments of ``C_eps``.

    Parameters
    ----------
    f : ScalarField1 or tuple of three callables
    X : SamplePath
    eps : float
    include_bracket : bool
        Drop the bracket term to exhibit its contribution.
    terminal : bool
        Report ``|LHS - RHS|`` at the last node instead of the sup over time.
    """
    if not isinstance(f, ScalarField1):
        f = ScalarField1(*f)
    if X.dim is not None:
        raise ValueError("ito_residual_1d expects a scalar process")
    m = X.grid.steps_for(eps)
    x = X.values
    D = shifted_increment(x, m)
    rhs = _cumulative(f.df(x) * D, m)
    if include_bracket:
        rhs = rhs - 0.5 * _cumulative(f.d2f(x) * D * D, m)
    lhs = f.f(x) - f.f(x[..., :1])
    if terminal:
        return np.abs(lhs - rhs)[..., -1]
    return np.max(np.abs(lhs - rhs), axis=-1)


def _as_series(v, like: np.ndarray) -> np.ndarray:
    a = v.vector_values() if isinstance(v, SamplePath) else np.asarray(v, float)
    return np.broadcast_to(a, like.shape)


def mixed_ito_residual(
    F: ScalarField2,
    alpha0: float,
    beta,
    gamma,
    W: SamplePath,
    B: SamplePath,
    eps: float,
    return_paths: bool = False,
):
    """Sup-norm residual of the mixed change-of-variables formula.

    The process ``alpha_t = alpha0 + int_0^t beta ds + int_0^t gamma dW`` is
    built with right-endpoint (backward) sums. The right-hand side is::

        F(alpha0, 0) + int F_x beta ds + int F_x gamma dW + I(eps, t, F_y(alpha, B), dB)
                     - (1/2) int F_xx |gamma|^2 ds

    with the ``ds`` and ``dW`` integrands taken at the right endpoint.

    Parameters
    ----------
    F : ScalarField2
    alpha0 : float
    beta : SamplePath or float
        Drift of ``alpha`` (scalar).
    gamma : SamplePath or float or array
        Backward diffusion coefficient, one entry per Brownian coordinate.
    W : SamplePath
        Brownian path(s), scalar or vector.
    B : SamplePath
        fBm path(s), scalar.
    eps : float
    return_paths : bool
        Also return ``(alpha, lhs, rhs)``.

    Returns
    -------
    ndarray or float
        ``sup_t |lhs - rhs|`` per path.
    """
    if W.grid != B.grid:
        raise ValueError(f"grid mismatch: {W.grid} vs {B.grid}")
    if B.dim is not None:
        raise ValueError("B must be a scalar process")
    grid = W.grid
    m = grid.steps_for(eps)
    dt = grid.dt
    w = W.vector_values()
    lead = np.broadcast_shapes(w.shape[:-2], B.values.shape[:-1])
    w = np.broadcast_to(w, lead + w.shape[-2:])
    b = np.broadcast_to(B.values, lead + B.values.shape[-1:])
    g = _as_series(gamma, w)
    beta_v = beta.values if isinstance(beta, SamplePath) else np.asarray(beta, float)
    beta_v = np.broadcast_to(beta_v, b.shape)

    drift = np.zeros(b.shape)
    np.cumsum(beta_v[..., 1:] * dt, axis=-1, out=drift[..., 1:])
    alpha = alpha0 + drift + backward_ito_sum(g, w)

    fx = F.Fx(alpha, b)
    fxx = F.Fxx(alpha, b)
    g2 = np.sum(g * g, axis=-1)
    dt_terms = np.zeros(b.shape)
    np.cumsum((fx * beta_v - 0.5 * fxx * g2)[..., 1:] * dt, axis=-1, out=dt_terms[..., 1:])
    dw_terms = backward_ito_sum(fx[..., None] * g, w)
    db_terms = backward_integral_array(F.Fy(alpha, b), b, m)
    rhs = F.F(alpha0, 0.0) + dt_terms + dw_terms + db_terms
    lhs = F.F(alpha, b)
    res = np.max(np.abs(lhs - rhs), axis=-1)
    if return_paths:
        return res, alpha, lhs, rhs
    return res
