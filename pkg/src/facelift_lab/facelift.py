"""Facelift envelope of the dual utility.

For an endowment value ``phi`` and a floor ``psi <= phi`` the envelope is the
largest convex minorant of ``z -> V(z) + phi z`` whose difference with
``z psi`` is nonincreasing::

    Vf(z) = V(z) + phi z                          for z <= z_c
          = V(z_c) + phi z_c + psi (z - z_c)      for z >  z_c

with ``z_c = U'(phi - psi)`` (``+inf`` when ``phi == psi``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .utility import UtilitySpec, dual_derivative, eval_u, eval_v, inv_marginal, marginal

Z_BRACKET = (1e-10, 1e10)


def critical_z(utility: UtilitySpec, phi: float, psi: float) -> float:
    """Critical point where the tangent of slope ``psi`` takes over."""
    if phi < psi:
        raise ValueError(f"need phi >= psi, got phi={phi}, psi={psi}")
    gap = phi - psi
    if gap == 0.0:
        return math.inf
    with np.errstate(over="ignore", divide="ignore"):
        zc = float(marginal(utility, gap))
    if math.isfinite(zc) and zc > 0:
        return zc
    # closed form over/underflowed; root of V'(z) + gap = 0 instead
    f = lambda z: dual_derivative(utility, z) + gap
    lo, hi = Z_BRACKET
    if f(lo) * f(hi) > 0:
        return hi if f(hi) < 0 else lo
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)


def facelift_value(utility: UtilitySpec, z, phi, psi):
    """Vectorized envelope value; ``z``, ``phi`` and ``psi`` broadcast together."""
    z, phi, psi = np.broadcast_arrays(
        np.asarray(z, dtype=float), np.asarray(phi, dtype=float), np.asarray(psi, dtype=float)
    )
    if np.any(~(z > 0)):
        raise ValueError("z must be strictly positive")
    gap = phi - psi
    if np.any(gap < 0):
        raise ValueError("need phi >= psi")
    with np.errstate(divide="ignore", over="ignore"):
        zc = np.where(gap > 0, marginal(utility, np.where(gap > 0, gap, 1.0)), np.inf)
    naive = eval_v(utility, z) + phi * z
    above = z > zc
    if not np.any(above):
        return naive.item() if naive.ndim == 0 else naive
    zca = zc[above]
    out = np.array(naive, dtype=float, copy=True)
    out[above] = eval_v(utility, zca) + phi[above] * zca + psi[above] * (z[above] - zca)
    return out.item() if out.ndim == 0 else out


@dataclass(frozen=True)
class FaceliftEnvelope:
    utility: UtilitySpec
    phi: float
    psi: float
    z_c: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "z_c", critical_z(self.utility, self.phi, self.psi))

    def __call__(self, z):
        return facelift_eval(self, z)

    def naive(self, z):
        return eval_v(self.utility, z) + self.phi * np.asarray(z, dtype=float)


def facelift_eval(env: FaceliftEnvelope, z):
    """Piecewise (tangent-extension) form of the envelope."""
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise ValueError("z must be strictly positive")
    naive = eval_v(env.utility, z) + env.phi * z
    if math.isinf(env.z_c):
        return naive
    zc = env.z_c
    tangent = eval_v(env.utility, zc) + env.phi * zc + env.psi * (z - zc)
    out = np.where(z <= zc, naive, tangent)
    return out.item() if out.ndim == 0 else out


def facelift_sup_oracle(env: FaceliftEnvelope, z: float, n_grid: int = 200_001) -> float:
    """Brute-force ``sup_{x > -psi} (U(x + phi) - x z)``.

    Works in ``y = x + phi > d = phi - psi``: a log grid of offsets above
    ``d`` (plus the boundary limit when ``U`` is finite there), followed by
    a bounded scalar refinement around the best grid point.
    """
    if not z > 0:
        raise ValueError("z must be strictly positive")
    u, phi, d = env.utility, env.phi, env.phi - env.psi
    y_star = float(inv_marginal(u, z))
    y_max = max(1e4, 10.0 * y_star, 10.0 * abs(phi)) + d
    offsets = np.geomspace(1e-15, y_max, n_grid)
    if d > 0:
        offsets = np.concatenate(([0.0], offsets))
    y = d + offsets
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(eval_u(u, y)) - (y - phi) * z
    vals = np.where(np.isnan(vals), -np.inf, vals)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo, hi = y[max(k - 1, 0)], y[min(k + 1, y.size - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda t: -(float(eval_u(u, t)) - (t - phi) * z),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13 * max(1.0, hi)},
        )
        if res.success and np.isfinite(res.fun):
            best = max(best, -float(res.fun))
    return best


def primal_limit(utility: UtilitySpec, phi0: float, Phi: float, x):
    """Small-horizon limit of the primal value: ``U(x + phi0)`` on ``x >= -Phi``.

    At ``x == -Phi`` the right limit ``U(phi0 - Phi)`` is returned; the
    limit theorem itself does not fix that point.
    """
    if Phi > phi0:
        raise ValueError("need Phi <= phi0")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= -Phi, eval_u(utility, np.maximum(x, -Phi) + phi0), -np.inf)
    return out.item() if out.ndim == 0 else out
