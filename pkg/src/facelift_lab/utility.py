"""CRRA utilities, their marginals and closed-form convex conjugates.

Power utility ``U(x) = x**p / p`` for ``p in (-inf, 1) \\ {0}`` and log utility.
``U`` is extended by ``-inf`` to ``x < 0`` (and to ``x = 0`` when ``p <= 0``).
All functions accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UtilitySpec:
    """A member of the CRRA family. ``p=None`` means log utility."""

    p: float | None = None

    def __post_init__(self):
        if self.p is not None:
            if not np.isfinite(self.p) or self.p >= 1.0 or self.p == 0.0:
                raise ValueError(f"power exponent must lie in (-inf, 1) \\ {{0}}, got {self.p}")

    @property
    def is_log(self) -> bool:
        return self.p is None

    @property
    def label(self) -> str:
        return "log" if self.is_log else f"power:{self.p:g}"

    @classmethod
    def parse(cls, text: str) -> "UtilitySpec":
        """Parse ``"log"`` or ``"power:<p>"``."""
        text = text.strip().lower()
        if text == "log":
            return cls(None)
        kind, _, arg = text.partition(":")
        if kind != "power" or not arg:
            raise ValueError(f"unknown utility {text!r}; expected 'log' or 'power:<p>'")
        p = float(arg)
        if p == 0.0:
            return cls(None)
        return cls(p)

    # thin method aliases so callers can write ``spec.u(x)``
    def u(self, x):
        return eval_u(self, x)

    def marginal(self, x):
        return marginal(self, x)

    def inv_marginal(self, z):
        return inv_marginal(self, z)

    def v(self, z):
        return eval_v(self, z)

    def v_prime(self, z):
        return dual_derivative(self, z)


def _positive(z, name="z"):
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ValueError(f"{name} must be strictly positive")
    return z


def _out(a):
    return a.item() if np.ndim(a) == 0 else a


def eval_u(spec: UtilitySpec, x):
    """U(x) with the extended-value convention."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    with np.errstate(divide="ignore", over="ignore"):
        if spec.is_log:
            out[pos] = np.log(x[pos])
        else:
            out[pos] = x[pos] ** spec.p / spec.p
            if spec.p > 0:
                out[x == 0] = 0.0
    return _out(out)


def marginal(spec: UtilitySpec, x):
    """U'(x) on x > 0; +inf at x = 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("marginal utility is defined on x >= 0 only")
    with np.errstate(divide="ignore", over="ignore"):
        if spec.is_log:
            out = 1.0 / x
        else:
            out = np.where(x > 0, x ** (spec.p - 1.0), np.inf)
    return _out(np.asarray(out, dtype=float))


def inv_marginal(spec: UtilitySpec, z):
    """The x with U'(x) = z; strictly decreasing in z."""
    z = _positive(z)
    if spec.is_log:
        out = 1.0 / z
    else:
        out = z ** (1.0 / (spec.p - 1.0))
    return _out(out)


def eval_v(spec: UtilitySpec, z):
    """Convex conjugate V(z) = sup_{x>0} (U(x) - x z), closed form."""
    z = _positive(z)
    if spec.is_log:
        out = -np.log(z) - 1.0
    else:
        p = spec.p
        out = (1.0 - p) / p * z ** (p / (p - 1.0))
    return _out(out)


def dual_derivative(spec: UtilitySpec, z):
    """V'(z) = -(U')^{-1}(z)."""
    return _out(-np.asarray(inv_marginal(spec, z)))


_ORACLE_GRID = np.logspace(-8.0, 8.0, 1_000_000)
_ORACLE_CACHE: dict[UtilitySpec, np.ndarray] = {}


def conjugate_oracle(spec: UtilitySpec, z: float, n_refine: int = 10_001) -> float:
    """Brute-force ``sup_x (U(x) - x z)`` over a log grid on [1e-8, 1e8].

    The coarse argmax is refined once on a finer log grid spanning its two
    neighbours. Independent of :func:`eval_v`.
    """
    if not z > 0:
        raise ValueError("z must be strictly positive")
    x = _ORACLE_GRID
    ux = _ORACLE_CACHE.get(spec)
    if ux is None:
        ux = np.asarray(eval_u(spec, x))
        _ORACLE_CACHE[spec] = ux
    vals = ux - x * z
    k = int(np.argmax(vals))
    lo = x[max(k - 1, 0)]
    hi = x[min(k + 1, x.size - 1)]
    fine = np.geomspace(lo, hi, n_refine)
    fine_vals = np.asarray(eval_u(spec, fine)) - fine * z
    return float(max(vals[k], fine_vals.max()))
