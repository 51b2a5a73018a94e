"""Parametrized dual controls ``nu`` for the density ``dZ = -Z (lam dB + nu dW)``.

Under the measure ``Q^nu`` with density ``Z^nu`` the factor ``eta = eta0 + W``
acquires drift ``-nu``; the families below are built around that fact:

* ``constant``: ``nu = nu_bar``;
* ``push``: feedback toward a target, ``nu = kappa (eta - target)``;
* ``bang``: the bounded open-loop control that moves the factor mean to
  ``target`` during ``[0, 1/n]`` and switches off afterwards.

Realized rates are always clipped to ``[-nu_max, nu_max]``. A
:class:`Mixture` is a convex combination of densities, which is again a
density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NU_MAX_DEFAULT = 1e3
FAMILIES = ("constant", "push", "bang")


@dataclass(frozen=True)
class ControlParams:
    family: str = "constant"
    nu_bar: float = 0.0
    target: float = 0.0
    kappa: float = 0.0
    n: int = 1
    nu_max: float = NU_MAX_DEFAULT

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown control family {self.family!r}")
        if not (math.isfinite(self.nu_max) and self.nu_max > 0):
            raise ValueError("nu_max must be finite and positive")
        for name in ("nu_bar", "target", "kappa"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if abs(self.nu_bar) > self.nu_max:
            raise ValueError(f"|nu_bar|={abs(self.nu_bar)} exceeds nu_max={self.nu_max}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")

    @classmethod
    def constant(cls, nu_bar: float = 0.0, nu_max: float = NU_MAX_DEFAULT) -> "ControlParams":
        return cls("constant", nu_bar=nu_bar, nu_max=nu_max)

    @classmethod
    def push(cls, target: float, kappa: float, nu_max: float = NU_MAX_DEFAULT) -> "ControlParams":
        return cls("push", target=target, kappa=kappa, nu_max=nu_max)

    @classmethod
    def bang(cls, target: float, n: int, nu_max: float = NU_MAX_DEFAULT) -> "ControlParams":
        return cls("bang", target=target, n=int(n), nu_max=nu_max)

    @property
    def is_zero(self) -> bool:
        return self.family == "constant" and self.nu_bar == 0.0

    def describe(self) -> str:
        if self.family == "constant":
            return f"nu_bar={self.nu_bar:g}"
        if self.family == "push":
            return f"target={self.target:g};kappa={self.kappa:g};nu_max={self.nu_max:g}"
        return f"target={self.target:g};n={self.n};nu_max={self.nu_max:g}"

    def rate(self, t: float, eta: np.ndarray, dt: float, eta0: float) -> np.ndarray:
        """Rate held constant on ``[t, t + dt)`` given the factor value ``eta`` at ``t``.

        For ``push`` the per-step gain is ``(1 - exp(-kappa dt)) / dt`` so the
        step reproduces the exact mean reversion of the continuous feedback
        and never overshoots the target, however large ``kappa`` is.
        """
        if self.family == "constant":
            return np.full(eta.shape, self.nu_bar)
        if self.family == "push":
            gain = -math.expm1(-self.kappa * dt) / dt
            return np.clip(gain * (eta - self.target), -self.nu_max, self.nu_max)
        active = min(max((1.0 / self.n - t) / dt, 0.0), 1.0)
        nu = float(np.clip(self.n * (eta0 - self.target), -self.nu_max, self.nu_max)) * active
        return np.full(eta.shape, nu)


@dataclass(frozen=True)
class Mixture:
    """Density ``sum_j w_j Z^{c_j}`` for weights on the simplex."""

    components: tuple[ControlParams, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.components) == 0 or len(self.components) != len(self.weights):
            raise ValueError("components and weights must be nonempty and aligned")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1")

    @classmethod
    def of(cls, control: "ControlParams | Mixture") -> "Mixture":
        if isinstance(control, Mixture):
            return control
        return cls((control,), (1.0,))

    @classmethod
    def blend(cls, weight: float, control: ControlParams, base: ControlParams | None = None) -> "Mixture":
        """``(1 - weight) Z^base + weight Z^control``; ``base`` defaults to nu = 0."""
        base = base if base is not None else ControlParams.constant(0.0)
        if weight <= 0.0:
            return cls((base,), (1.0,))
        if weight >= 1.0:
            return cls((control,), (1.0,))
        return cls((base, control), (1.0 - weight, weight))

    @property
    def nu_max(self) -> float:
        return max(c.nu_max for c in self.components)

    def describe(self) -> str:
        if len(self.components) == 1:
            return self.components[0].describe()
        return " + ".join(
            f"{w:.6g}*[{c.family}:{c.describe()}]" for c, w in zip(self.components, self.weights)
        )

    @property
    def family(self) -> str:
        if len(self.components) == 1:
            return self.components[0].family
        return "mix(" + ",".join(c.family for c in self.components) + ")"
