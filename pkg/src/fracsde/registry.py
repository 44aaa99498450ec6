"""Named coefficients for configuration files.

Configs refer to drifts, diffusions, drivers, flow coefficients, terminal maps
and test fields by name only; there is no expression parser. Each table maps
a name to a zero-argument factory so that every lookup returns a fresh object.
"""

from __future__ import annotations

import math

import numpy as np

from .bsde_solver import Driver
from .doss_flow import DiffusionG
from .forward_sde import SdeCoefficients
from .rv_calculus import ScalarField1, ScalarField2

__all__ = ["UnknownCoefficient", "lookup", "names", "TABLES", "reference_value", "sde_coefficients", "TANH_CLAMP"]

TANH_CLAMP = 3.0
# sup |d^2/du^2 c tanh(u/c)| = (4 / (3 sqrt 3)) / c
_TANH2 = 4.0 / (3.0 * math.sqrt(3.0))


class UnknownCoefficient(KeyError):
    """A configuration names a coefficient that is not registered."""


def _zero(x):
    return np.zeros_like(x)


def _ones_sigma(x):
    return np.ones(x.shape + (1,))


DRIFTS = {
    "zero": lambda x: np.zeros_like(x),
    "mean_reverting": lambda x: -0.5 * x,
}
DRIFT_LIP = {"zero": 0.0, "mean_reverting": 0.5}

SIGMAS = {
    "one": _ones_sigma,
    "half": lambda x: 0.5 * np.ones(x.shape + (1,)),
    "bounded_smooth": lambda x: (1.0 + 0.5 * np.sin(x))[..., None],
}
SIGMA_LIP = {"one": 0.0, "half": 0.0, "bounded_smooth": 0.5}


def _identity_clamped(c: float = TANH_CLAMP) -> DiffusionG:
    def d1(u):
        return 1.0 / np.cosh(u / c) ** 2

    def d2(u):
        th = np.tanh(u / c)
        return -2.0 / c * th * (1.0 - th * th)

    def d3(u):
        th = np.tanh(u / c)
        s2 = 1.0 - th * th
        return -2.0 / (c * c) * s2 * (1.0 - 3.0 * th * th)

    return DiffusionG(lambda u: c * np.tanh(u / c), d1, d2, d3, (c, 1.0, _TANH2 / c, 2.0 / c**2), "identity_clamped")


G_TABLE = {
    "zero": lambda: DiffusionG(_zero, _zero, _zero, _zero, (0.0, 0.0, 0.0, 0.0), "zero", is_zero=True, affine=True),
    "identity": lambda: DiffusionG(
        lambda u: np.asarray(u, float) * 1.0,
        lambda u: np.ones_like(np.asarray(u, float)),
        lambda u: np.zeros_like(np.asarray(u, float)),
        lambda u: np.zeros_like(np.asarray(u, float)),
        name="identity",
        affine=True,
    ),
    "identity_clamped": _identity_clamped,
    "sin": lambda: DiffusionG(np.sin, np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u), (1.0, 1.0, 1.0, 1.0), "sin"),
    "cos": lambda: DiffusionG(np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u), np.sin, (1.0, 1.0, 1.0, 1.0), "cos"),
}


def _z1(z):
    return np.asarray(z)[..., 0]


F_TABLE = {
    "zero": lambda: Driver(lambda t, x, y, z: np.zeros_like(np.asarray(y, float)), name="zero", is_zero=True),
    "cos_y_plus_half_z": lambda: Driver(
        lambda t, x, y, z: np.cos(y) + 0.5 * _z1(z), lip=(0.0, 1.0, 0.5), f0_bound=1.0, name="cos_y_plus_half_z"
    ),
    "linear": lambda: Driver(lambda t, x, y, z: -0.5 * np.asarray(y) + 0.25 * _z1(z), lip=(0.0, 0.5, 0.25), name="linear"),
    # quadratic in z: not Lipschitz, so the a-priori bounds are infinite
    "half_z_squared": lambda: Driver(
        lambda t, x, y, z: 0.5 * np.sum(np.asarray(z) ** 2, axis=-1), lip=(0.0, 0.0, math.inf), name="half_z_squared"
    ),
}

PHI_TABLE = {
    "cos": (lambda x: np.cos(x[..., 0]), 1.0),
    "sin": (lambda x: np.sin(x[..., 0]), 1.0),
    "tanh": (lambda x: np.tanh(x[..., 0]), 1.0),
    "one": (lambda x: np.ones(x.shape[:-1]), 1.0),
    "two": (lambda x: 2.0 * np.ones(x.shape[:-1]), 2.0),
}

F1_TABLE = {
    "linear": lambda: ScalarField1(lambda x: 2.0 * x + 1.0, lambda x: 2.0 + 0 * x, lambda x: 0 * x, "linear"),
    "half_square": lambda: ScalarField1(lambda x: 0.5 * x * x, lambda x: x * 1.0, lambda x: 1.0 + 0 * x, "half_square"),
    "sin": lambda: ScalarField1(np.sin, np.cos, lambda x: -np.sin(x), "sin"),
}

F2_TABLE = {
    "x": lambda: ScalarField2(
        lambda x, y: x + 0 * y, lambda x, y: 1 + 0 * x * y, lambda x, y: 0 * x * y,
        lambda x, y: 0 * x * y, lambda x, y: 0 * x * y, lambda x, y: 0 * x * y, "x",
    ),
    "y": lambda: ScalarField2(
        lambda x, y: y + 0 * x, lambda x, y: 0 * x * y, lambda x, y: 1 + 0 * x * y,
        lambda x, y: 0 * x * y, lambda x, y: 0 * x * y, lambda x, y: 0 * x * y, "y",
    ),
    "x_exp_y": lambda: ScalarField2(
        lambda x, y: x * np.exp(y), lambda x, y: np.exp(y) + 0 * x, lambda x, y: x * np.exp(y),
        lambda x, y: 0 * x * y, lambda x, y: np.exp(y) + 0 * x, lambda x, y: x * np.exp(y), "x_exp_y",
    ),
}

TABLES = {
    "b": DRIFTS,
    "sigma": SIGMAS,
    "f": F_TABLE,
    "g": G_TABLE,
    "phi": PHI_TABLE,
    "field1": F1_TABLE,
    "field2": F2_TABLE,
}


def names(kind: str) -> list[str]:
    return sorted(TABLES[kind])


def lookup(kind: str, name: str):
    """Resolve ``name`` in table ``kind``.

    ``b`` and ``sigma`` return plain callables, ``phi`` returns
    ``(callable, sup-norm)`` and the remaining tables return fresh objects.
    """
    try:
        entry = TABLES[kind][name]
    except KeyError:
        raise UnknownCoefficient(f"unknown {kind} coefficient {name!r}; known: {', '.join(names(kind))}") from None
    if kind in ("b", "sigma", "phi"):
        return entry
    return entry()


def sde_coefficients(b: str, sigma: str) -> SdeCoefficients:
    """Scalar forward coefficients from registry names."""
    return SdeCoefficients(lookup("b", b), lookup("sigma", sigma), DRIFT_LIP[b], SIGMA_LIP[sigma], name=f"{b}/{sigma}")


def reference_value(name: str, t: float, x: float, b_t: float = 0.0) -> float:
    """Closed-form anchor values used by the checks.

    ``heat_cos``: ``Y_t^{t,x} = e^{-t/2} cos x`` for ``b = 0, sigma = 1, Phi = cos, f = 0``.
    ``heat_cos_linear``: ``U_t^{t,x} = e^{-t/2} cos x e^{B_t}`` for ``g = identity``.
    """
    if name == "heat_cos":
        return math.exp(-0.5 * t) * math.cos(x)
    if name == "heat_cos_linear":
        return math.exp(-0.5 * t) * math.cos(x) * math.exp(b_t)
    raise UnknownCoefficient(f"unknown reference {name!r}")
