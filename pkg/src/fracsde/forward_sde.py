"""Forward diffusion with a terminal anchor and a backward Ito integral.

Solves ``X_s = x + int_s^t b(X_r) dr + int_s^t sigma(X_r) dW_r`` (backward Ito
integral) on ``[0, t]``. Reversing time, ``Xr_r = X_{t-r}`` solves a standard
SDE driven by ``W_t - W_{t-r}`` and is integrated with Euler-Maruyama from
``Xr_0 = x``. Left-point evaluation in reversed time is right-point
evaluation in the original clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fbm import SamplePath, TimeGrid

__all__ = ["SdeCoefficients", "DiffusionPath", "solve_forward_sde"]


@dataclass
class SdeCoefficients:
    """Drift ``b: R^n -> R^n`` and diffusion ``sigma: R^n -> R^{n x d}``.

    Both act on arrays with the state on the last axis: ``b(x)`` returns
    ``x.shape`` and ``sigma(x)`` returns ``x.shape + (d,)``.
    """

    b: Callable
    sigma: Callable
    lip_b: float
    lip_sigma: float
    n: int = 1
    d: int = 1
    name: str = ""

    def check(self, probe: np.ndarray | None = None) -> tuple[float, float]:
        """Largest difference quotients on ``probe``; raises if a constant is exceeded."""
        if probe is None:
            probe = np.linspace(-3, 3, 13)[:, None] * np.ones(self.n)
        x = np.asarray(probe, dtype=float)
        i, j = np.triu_indices(len(x), 1)
        dx = np.linalg.norm(x[i] - x[j], axis=-1)
        qb = np.linalg.norm(self.b(x[i]) - self.b(x[j]), axis=-1) / dx
        qs = np.linalg.norm((self.sigma(x[i]) - self.sigma(x[j])).reshape(len(i), -1), axis=-1) / dx
        worst = (float(qb.max()), float(qs.max()))
        if worst[0] > self.lip_b * (1 + 1e-9) or worst[1] > self.lip_sigma * (1 + 1e-9):
            raise ValueError(f"Lipschitz constants of {self.name or 'coefficients'} exceeded: {worst}")
        return worst


@dataclass
class DiffusionPath:
    """Solution on ``[0, t]``.

    ``values`` has shape ``(M, k_t + 1, n)`` with paper-clock node ``k`` at
    index ``k``; ``values[:, k_t] == x``.
    """

    grid: TimeGrid
    values: np.ndarray
    t: float
    x: np.ndarray

    @property
    def k_t(self) -> int:
        return self.grid.n_steps

    def reversed(self) -> np.ndarray:
        """Values in reversed time: index ``j`` holds node ``k_t - j``."""
        return self.values[:, ::-1]


def solve_forward_sde(coeffs: SdeCoefficients, t: float, x, W: SamplePath) -> DiffusionPath:
    """Euler-Maruyama in reversed time.

    Parameters
    ----------
    coeffs : SdeCoefficients
    t : float
        Anchor time, a node of ``W.grid``.
    x : array_like
        Anchor value in ``R^n``.
    W : SamplePath
        Brownian batch, ``(M, N+1)`` for ``d = 1`` or ``(M, N+1, d)``.

    Returns
    -------
    DiffusionPath
        Node ``k`` depends only on the increments of ``W`` on ``[t_k, t]``.
    """
    k_t = W.grid.index_of(t)
    if k_t == 0:
        raise ValueError("anchor time must be positive")
    w = W.vector_values()
    if w.ndim == 2:
        w = w[None]
    if w.shape[-1] != coeffs.d:
        raise ValueError(f"W has {w.shape[-1]} coordinates, coefficients expect {coeffs.d}")
    M = w.shape[0]
    x = np.broadcast_to(np.asarray(x, dtype=float).reshape(-1), (coeffs.n,))
    dt = W.grid.dt
    # dWr[:, j] = W_{k_t - j} - W_{k_t - j - 1}
    dWr = (w[:, 1 : k_t + 1] - w[:, :k_t])[:, ::-1]
    Xr = np.empty((M, k_t + 1, coeffs.n))
    Xr[:, 0] = x
    cur = Xr[:, 0].copy()
    for j in range(k_t):
        cur = cur + coeffs.b(cur) * dt + np.einsum("mij,mj->mi", coeffs.sigma(cur), dWr[:, j])
        Xr[:, j + 1] = cur
    grid = TimeGrid(k_t * dt, k_t)
    return DiffusionPath(grid, np.ascontiguousarray(Xr[:, ::-1]), float(t), x.copy())
