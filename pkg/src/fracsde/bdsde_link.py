"""From the transformed BSDE back to the doubly stochastic equation.

Given ``(Y, Z)`` for a fixed fBm path, ``U_s = alpha(Y_s, B_s)`` and
``V_s = alpha_y(Y_s, B_s) Z_s`` solve::

    U_s = Phi(X_0) + int_0^s f(r, X_r, U_r, V_r) dr + int_0^s g(U_r) dB_r - int_0^s V_r dW_r

where the ``dB`` integral is a backward Russo-Vallois integral and the ``dW``
integral is a backward Ito integral. That equation cannot be solved directly,
so it is verified through a discrete residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bsde_solver import BsdeSolution, Driver
from .doss_flow import DiffusionG, DossFlow
from .fbm import SamplePath
from .forward_sde import DiffusionPath
from .rv_calculus import backward_integral_array

__all__ = ["BdsdeSolution", "doss_sussman_lift", "inverse_transform", "bdsde_residual", "LIFT_CHUNK"]

LIFT_CHUNK = 64


@dataclass
class BdsdeSolution:
    """Pathwise ``(U, V)`` in the original clock.

    Attributes
    ----------
    U : ndarray, shape (P, k_t + 1)
    V : ndarray, shape (P, k_t + 1, d)
    paths : ndarray
        Indices of the underlying BSDE paths.
    source : BsdeSolution
    flow : DossFlow
    """

    U: np.ndarray
    V: np.ndarray
    paths: np.ndarray
    source: BsdeSolution
    flow: DossFlow
    meta: dict = field(default_factory=dict)

    @property
    def anchor_value(self) -> float:
        return float(np.mean(self.U[:, -1]))


def _fbm_nodes(B: SamplePath, k_t: int, dt: float) -> np.ndarray:
    if B.values.ndim != 1:
        raise ValueError("expected a single fBm path")
    if abs(B.grid.dt - dt) > 1e-12 * dt or B.grid.n_steps < k_t:
        raise ValueError("fBm grid does not match the solution grid")
    return B.values[: k_t + 1]


def _select(sol: BsdeSolution, paths) -> np.ndarray:
    M = sol.Y.shape[0]
    return np.arange(M) if paths is None else np.asarray(paths, dtype=int)


def doss_sussman_lift(sol: BsdeSolution, flow: DossFlow, B: SamplePath, paths=None) -> BdsdeSolution:
    """``U = alpha(Y, B)``, ``V = alpha_y(Y, B) Z`` node by node.

    Parameters
    ----------
    sol : BsdeSolution
    flow : DossFlow
    B : SamplePath
        The fBm path the BSDE was solved for.
    paths : array_like of int, optional
        Subset of paths to lift; all by default.
    """
    idx = _select(sol, paths)
    b = _fbm_nodes(B, sol.X.k_t, sol.grid.dt)
    Y = sol.Y[idx]
    Z = sol.Z[idx]
    U = np.empty_like(Y)
    D = np.empty_like(Y)
    for a in range(0, len(idx), LIFT_CHUNK):
        sl = slice(a, a + LIFT_CHUNK)
        jt = flow.jet(Y[sl], b[None, :], order=1)
        U[sl], D[sl] = jt.alpha, jt.d1
    return BdsdeSolution(U, D[..., None] * Z, idx, sol, flow)


def inverse_transform(bd: BdsdeSolution, flow: DossFlow, B: SamplePath) -> BsdeSolution:
    """``Y = h(U, B)``, ``Z = V / alpha_y(Y, B)``; returns the selected paths only."""
    src = bd.source
    b = _fbm_nodes(B, src.X.k_t, src.grid.dt)
    Y = np.empty_like(bd.U)
    D = np.empty_like(bd.U)
    for a in range(0, len(Y), LIFT_CHUNK):
        sl = slice(a, a + LIFT_CHUNK)
        Y[sl] = flow.inverse(bd.U[sl], b[None, :])
        D[sl] = flow.jet(Y[sl], b[None, :], order=1).d1
    out = src.copy_with(Y, bd.V / D[..., None])
    out.meta["paths"] = bd.paths
    return out


def bdsde_residual(
    bd: BdsdeSolution,
    f: Driver,
    g: DiffusionG,
    terminal: Callable,
    X: DiffusionPath,
    W: SamplePath,
    B: SamplePath,
    eps: float,
    return_paths: bool = False,
):
    """Per-path ``sup_s |U_s - RHS_s|`` of the doubly stochastic equation.

    ``RHS_k = Phi(X_0) + sum_{i=1..k} f(s_i, X_i, U_i, V_i) dt + I(eps, s_k, g(U), dB)
    - sum_{i=1..k} V_i (W_i - W_{i-1})``: right endpoints for the ``dr`` and
    ``dW`` sums, the windowed backward integral for ``dB``.

    Parameters
    ----------
    bd : BdsdeSolution
    f : Driver
    g : DiffusionG
    terminal : callable
    X : DiffusionPath
        Forward paths (all of them; ``bd.paths`` selects rows).
    W : SamplePath
    B : SamplePath
    eps : float
        Multiple of the grid step.
    return_paths : bool
        Also return the residual processes.

    Returns
    -------
    ndarray, shape (P,)
    """
    k_t = X.k_t
    dt = X.grid.dt
    idx = bd.paths
    U, V = bd.U, bd.V
    if U.shape[1] != k_t + 1:
        raise ValueError(f"U has {U.shape[1]} nodes, X has {k_t + 1}")
    m = X.grid.steps_for(eps)
    b = _fbm_nodes(B, k_t, dt)
    x = X.values[idx]
    w = W.vector_values()[idx][:, : k_t + 1]
    if w.shape[-1] != V.shape[-1]:
        raise ValueError("W and V dimensions differ")
    rhs = np.zeros_like(U)
    if not f.is_zero:
        fv = np.stack([f(k * dt, x[:, k], U[:, k], V[:, k]) for k in range(1, k_t + 1)], axis=1)
        rhs[:, 1:] += np.cumsum(fv * dt, axis=1)
    rhs[:, 1:] -= np.cumsum(np.sum(V[:, 1:] * np.diff(w, axis=1), axis=-1), axis=1)
    if not g.is_zero:
        rhs += backward_integral_array(g.g(U), b[None, :], m)
    rhs += terminal(x[:, 0])[:, None]
    res = np.max(np.abs(U - rhs), axis=1)
    if return_paths:
        return res, U - rhs
    return res
