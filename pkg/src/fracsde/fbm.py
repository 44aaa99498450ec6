"""Fractional and standard Brownian motion on uniform grids.

fBm paths are produced by circulant embedding of fractional Gaussian noise
(default, O(n log n)) or by a Cholesky factor of the increment covariance
(exactness oracle, n <= 2**11). Both generators draw each path from its own
counter-based stream, so a path depends only on ``(seed, path index)``.

Path batches are stored as ``SamplePath`` objects. Scalar processes keep time
on the last axis (``values.shape == (..., n+1)``); vector processes keep time
on the second to last axis (``(..., n+1, d)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from . import rng

__all__ = [
    "HurstParam",
    "TimeGrid",
    "SamplePath",
    "fbm_covariance",
    "fgn_autocovariance",
    "kernel_constant",
    "fbm_kernel",
    "sample_fbm",
    "sample_bm",
    "holder_statistic",
    "CHOLESKY_MAX_N",
]

CHOLESKY_MAX_N = 2**11
_EIG_TOL = 1e-10


@dataclass(frozen=True)
class HurstParam:
    """Hurst index restricted to the open interval (1/2, 1)."""

    H: float

    def __post_init__(self):
        h = float(self.H)
        if not (0.5 < h < 1.0) or math.isnan(h):
            raise ValueError(f"Hurst parameter must lie in (1/2, 1), got {self.H!r}")
        object.__setattr__(self, "H", h)

    def __float__(self) -> float:
        return self.H


def _hurst(H) -> float:
    return H.H if isinstance(H, HurstParam) else HurstParam(H).H


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_k = k * horizon / n_steps`` of ``[0, horizon]``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0) or not math.isfinite(self.horizon):
            raise ValueError(f"horizon must be a positive finite time, got {self.horizon!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        # integer multiples keep t_n == horizon exactly
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index ``k`` with ``t_k == t``; raises ``ValueError`` off the grid."""
        k = int(round(t / self.dt))
        if not (0 <= k <= self.n_steps) or abs(k * self.dt - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t!r} is not a node of {self}")
        return k

    def steps_for(self, eps: float, tol: float = 1e-9) -> int:
        """Number of grid steps ``m`` with ``eps == m * dt`` (``m >= 1``)."""
        m = int(round(eps / self.dt))
        if m < 1 or abs(m * self.dt - eps) > tol * eps:
            raise ValueError(f"eps={eps!r} is not a positive integer multiple of dt={self.dt!r}")
        return m

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.horizon, self.n_steps // factor)


@dataclass
class SamplePath:
    """Values of a process on a ``TimeGrid``, possibly for a batch of paths.

    Parameters
    ----------
    grid : TimeGrid
    values : ndarray
        ``(..., n+1)`` for scalar processes, ``(..., n+1, dim)`` otherwise.
    label : str
        Process name, used in output files.
    dim : int or None
        ``None`` marks a scalar process.
    """

    grid: TimeGrid
    values: np.ndarray
    label: str = ""
    dim: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        axis = -1 if self.dim is None else -2
        if self.values.ndim < (1 if self.dim is None else 2):
            raise ValueError("values has too few dimensions")
        if self.values.shape[axis] != self.grid.n_steps + 1:
            raise ValueError(
                f"values has {self.values.shape[axis]} time points, grid needs {self.grid.n_steps + 1}"
            )
        if self.dim is not None and self.values.shape[-1] != self.dim:
            raise ValueError(f"last axis {self.values.shape[-1]} != dim {self.dim}")

    @property
    def n_paths(self) -> int | None:
        """Batch size, or ``None`` for a single unbatched path."""
        lead = self.values.shape[:-1] if self.dim is None else self.values.shape[:-2]
        return int(np.prod(lead)) if lead else None

    def vector_values(self) -> np.ndarray:
        """Values with an explicit trailing coordinate axis."""
        return self.values[..., None] if self.dim is None else self.values

    def path(self, i: int) -> "SamplePath":
        return SamplePath(self.grid, self.values[i], self.label, self.dim)

    def take(self, idx) -> "SamplePath":
        return SamplePath(self.grid, self.values[idx], self.label, self.dim)

    def coarsen(self, factor: int) -> "SamplePath":
        """Subsample every ``factor``-th node (nested refinement levels)."""
        g = self.grid.coarsen(factor)
        v = self.values[..., ::factor] if self.dim is None else self.values[..., ::factor, :]
        return SamplePath(g, v, self.label, self.dim)

    def at(self, t: float) -> np.ndarray:
        """Value at time ``t`` under the constant extension outside ``[0, T]``."""
        if t <= 0:
            k = 0
        elif t >= self.grid.horizon:
            k = self.grid.n_steps
        else:
            k = self.grid.index_of(t)
        return self.values[..., k] if self.dim is None else self.values[..., k, :]


def fbm_covariance(t, s, H) -> np.ndarray | float:
    """Covariance ``R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2``.

    Parameters
    ----------
    t, s : float or array_like
        Non-negative times (broadcast together).
    H : float or HurstParam
    """
    h2 = 2.0 * _hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be non-negative")
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(n: int, H, dt: float = 1.0) -> np.ndarray:
    """Autocovariance ``gamma(0..n)`` of fBm increments over steps of length ``dt``."""
    h2 = 2.0 * _hurst(H)
    k = np.arange(n + 1, dtype=float)
    return 0.5 * dt**h2 * ((k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def kernel_constant(H) -> float:
    """Normalising constant of the kernel, ``sqrt(H(2H-1) / B(2-2H, H-1/2))``."""
    h = _hurst(H)
    return math.sqrt(h * (2 * h - 1) / special.beta(2 - 2 * h, h - 0.5))


def fbm_kernel(t: float, s: float, H, rtol: float = 1e-10) -> float:
    """Kernel ``K_H(t, s)`` of the representation ``B_t = int_0^t K_H(t, s) dW_s``.

    The singular factor ``(u - s)^{H - 3/2}`` is removed by the substitution
    ``u = s + v^p`` with ``p = 1/(H - 1/2)``, which leaves the smooth integrand
    ``p (s + v^p)^{H - 1/2}`` on ``[0, (t - s)^{H - 1/2}]``.
    """
    h = _hurst(H)
    if not (0 < s <= t):
        raise ValueError(f"fbm_kernel needs 0 < s <= t, got s={s!r}, t={t!r}")
    if s == t:
        return 0.0
    a = h - 0.5
    p = 1.0 / a
    upper = (t - s) ** a
    val, _ = integrate.quad(lambda v: p * (s + v**p) ** a, 0.0, upper, epsabs=0.0, epsrel=rtol, limit=200)
    return kernel_constant(h) * s ** (-a) * val


@lru_cache(maxsize=16)
def _circulant_sqrt_eig(n: int, h: float, dt: float) -> np.ndarray:
    gamma = fgn_autocovariance(n, h, dt)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -_EIG_TOL * lam.max():
        raise ArithmeticError(f"circulant embedding is not non-negative definite (min eigenvalue {lam.min():.3e})")
    return np.sqrt(np.clip(lam, 0.0, None) / (2 * n))


@lru_cache(maxsize=8)
def _cholesky_factor(n: int, h: float, dt: float) -> np.ndarray:
    gamma = fgn_autocovariance(n - 1, h, dt)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return np.linalg.cholesky(gamma[idx])


def _as_batch(values: np.ndarray, n_paths: int | None) -> np.ndarray:
    return values[0] if n_paths is None else values


def sample_fbm(
    grid: TimeGrid,
    H,
    seed: int,
    method: str = "circulant",
    n_paths: int | None = None,
    first_path: int = 0,
    threads: int | None = None,
) -> SamplePath:
    """Sample fBm paths with exact fractional Gaussian noise increments.

    Parameters
    ----------
    grid : TimeGrid
    H : float or HurstParam
    seed : int
        Master seed; paths come from the ``fbm`` stream.
    method : {"circulant", "cholesky"}
    n_paths : int, optional
        Batch size. ``None`` returns a single unbatched path.
    first_path : int
        Index of the first path, so batches can be generated piecewise.
    threads : int, optional
        Worker threads; the result does not depend on this value.

    Returns
    -------
    SamplePath
        ``values[..., 0] == 0``.
    """
    h = _hurst(H)
    n, dt = grid.n_steps, grid.dt
    if method == "circulant":
        sq = _circulant_sqrt_eig(n, h, dt)

        def work(part: range) -> np.ndarray:
            z = np.empty((len(part), 2, 2 * n))
            for i, p in enumerate(part):
                z[i] = rng.stream(seed, "fbm", p).standard_normal((2, 2 * n))
            w = np.fft.fft(sq * (z[:, 0] + 1j * z[:, 1]), axis=-1)
            return w[:, :n].real

    elif method == "cholesky":
        if n > CHOLESKY_MAX_N:
            raise ValueError(f"cholesky method limited to n <= {CHOLESKY_MAX_N}, got {n}")
        L = _cholesky_factor(n, h, dt)

        def work(part: range) -> np.ndarray:
            z = np.empty((len(part), n))
            for i, p in enumerate(part):
                z[i] = rng.stream(seed, "fbm", p).standard_normal(n)
            return z @ L.T

    else:
        raise ValueError(f"unknown method {method!r}; use 'circulant' or 'cholesky'")

    count = 1 if n_paths is None else n_paths
    # large grids: keep the complex work array around 64 MB
    size = max(1, min(rng.CHUNK_SIZE, 2**21 // (2 * n)))
    parts = rng.chunks(first_path, count, size)
    incs = np.concatenate(rng.map_chunks(work, parts, threads), axis=0)
    values = np.zeros((count, n + 1))
    np.cumsum(incs, axis=1, out=values[:, 1:])
    return SamplePath(grid, _as_batch(values, n_paths), label="B", meta={"H": h, "method": method, "seed": seed})


def sample_bm(
    grid: TimeGrid,
    dim: int = 1,
    seed: int = 0,
    n_paths: int | None = None,
    first_path: int = 0,
    threads: int | None = None,
) -> SamplePath:
    """Sample standard Brownian paths from the ``bm`` stream.

    For ``dim == 1`` the result uses the scalar layout; otherwise the values
    have a trailing coordinate axis. The ``bm`` and ``fbm`` streams are
    disjoint, so Brownian and fractional paths are independent.
    """
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    n, sd = grid.n_steps, math.sqrt(grid.dt)

    def work(part: range) -> np.ndarray:
        z = np.empty((len(part), n, dim))
        for i, p in enumerate(part):
            z[i] = rng.stream(seed, "bm", p).standard_normal((n, dim))
        return z

    count = 1 if n_paths is None else n_paths
    size = max(1, min(rng.CHUNK_SIZE, 2**22 // (n * dim)))
    incs = np.concatenate(rng.map_chunks(work, rng.chunks(first_path, count, size), threads), axis=0)
    values = np.zeros((count, n + 1, dim))
    np.cumsum(incs * sd, axis=1, out=values[:, 1:])
    if dim == 1:
        return SamplePath(grid, _as_batch(values[..., 0], n_paths), label="W", meta={"seed": seed})
    return SamplePath(grid, _as_batch(values, n_paths), label="W", dim=dim, meta={"seed": seed})


def holder_statistic(path: SamplePath, exponent: float) -> np.ndarray | float:
    """``max_k |X_{t_{k+1}} - X_{t_k}| / dt^exponent`` for each path in the batch."""
    if path.dim is not None:
        raise ValueError("holder_statistic expects a scalar process")
    inc = np.abs(np.diff(path.values, axis=-1))
    return inc.max(axis=-1) / path.grid.dt**exponent
