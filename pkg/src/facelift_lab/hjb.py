"""Explicit finite differences for the dual HJB equation in ``(eta, log z)``.

With ``x = log z`` and ``D = u_xx - u_x`` (which equals ``z^2 v_zz``) the
equation reads::

    u_T = 1/2 lam^2 D + 1/2 u_ee + min_nu (1/2 nu^2 D - nu u_xe)

whose pointwise minimizer is ``nu* = u_xe / D``. The march starts from the
naive terminal condition ``V(z) + z phi(eta)``; ``D`` is floored at
``eps_zz`` inside the minimizer and ``nu*`` is clipped to
``[-nu_max, nu_max]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .facelift import facelift_value
from .market import EndowmentSpec, MarketParams
from .utility import UtilitySpec, eval_v


class NumericalFailure(RuntimeError):
    """Non-finite values appeared during the march."""


@dataclass(frozen=True)
class HjbGrid:
    eta_min: float
    eta_max: float
    n_eta: int
    logz_min: float
    logz_max: float
    n_z: int
    T_max: float
    nu_max: float = 100.0
    eps_zz: float = 1e-8
    lam: float = 0.3
    dT: float | None = None
    courant: float = 0.9

    def __post_init__(self):
        if self.n_eta < 5 or self.n_z < 5:
            raise ValueError("need at least 5 nodes per axis")
        if not (self.eta_max > self.eta_min and self.logz_max > self.logz_min):
            raise ValueError("empty grid range")
        if not (self.T_max > 0 and self.nu_max > 0 and self.eps_zz > 0):
            raise ValueError("T_max, nu_max and eps_zz must be positive")
        if not 0 < self.courant <= 1:
            raise ValueError("courant must lie in (0, 1]")
        limit = self.stable_dT
        if self.dT is None:
            object.__setattr__(self, "dT", self.courant * limit)
        elif not 0 < self.dT <= limit:
            raise ValueError(f"dT={self.dT:g} violates the stability bound {limit:g}")

    @property
    def d_eta(self) -> float:
        return (self.eta_max - self.eta_min) / (self.n_eta - 1)

    @property
    def d_x(self) -> float:
        return (self.logz_max - self.logz_min) / (self.n_z - 1)

    @property
    def stable_dT(self) -> float:
        """Largest step keeping the center weight of the stencil nonnegative."""
        return min(self.d_eta, self.d_x) ** 2 / (1.0 + self.lam**2 + self.nu_max**2)

    @property
    def eta(self) -> np.ndarray:
        return np.linspace(self.eta_min, self.eta_max, self.n_eta)

    @property
    def z(self) -> np.ndarray:
        return np.exp(np.linspace(self.logz_min, self.logz_max, self.n_z))

    def meta(self) -> dict:
        return {
            "eta_min": self.eta_min, "eta_max": self.eta_max, "n_eta": self.n_eta,
            "logz_min": self.logz_min, "logz_max": self.logz_max, "n_z": self.n_z,
            "T_max": self.T_max, "nu_max": self.nu_max, "eps_zz": self.eps_zz,
            "lam": self.lam, "dT": self.dT,
        }


@njit(cache=True)
def _step(u, out, nu_out, floor_out, dT, dx, de, lam2, nu_max, eps, r_lo, r_hi):
    n_e, n_x = u.shape
    ix2 = 1.0 / (dx * dx)
    ix = 0.5 / dx
    ie2 = 1.0 / (de * de)
    ixe = 0.25 / (dx * de)
    ixe_up = 0.5 / (dx * de)
    floored = 0
    for i in range(1, n_e - 1):
        for j in range(1, n_x - 1):
            c = u[i, j]
            uxx = (u[i, j + 1] - 2.0 * c + u[i, j - 1]) * ix2
            ux = (u[i, j + 1] - u[i, j - 1]) * ix
            uee = (u[i + 1, j] - 2.0 * c + u[i - 1, j]) * ie2
            uxe = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) * ixe
            D = uxx - ux
            f = 0
            Df = D
            if D < eps:
                Df = eps
                f = 1
                floored += 1
            nu = uxe / Df
            if nu > nu_max:
                nu = nu_max
            elif nu < -nu_max:
                nu = -nu_max
            # the floor only enters the minimizer; the update applies the
            # generator of the chosen nu to the raw differences, with the
            # eta-derivative of u_x taken upwind of the factor drift -nu
            if nu > 0:
                uxe_up = (u[i, j + 1] - u[i, j - 1] - u[i - 1, j + 1] + u[i - 1, j - 1]) * ixe_up
            else:
                uxe_up = (u[i + 1, j + 1] - u[i + 1, j - 1] - u[i, j + 1] + u[i, j - 1]) * ixe_up
            out[i, j] = c + dT * (0.5 * (lam2 + nu * nu) * D + 0.5 * uee - nu * uxe_up)
            nu_out[i, j] = nu
            floor_out[i, j] = f
    # v_zz = 0 at the z edges: linear extrapolation in z
    for i in range(1, n_e - 1):
        out[i, 0] = out[i, 1] + (out[i, 1] - out[i, 2]) * r_lo
        out[i, n_x - 1] = out[i, n_x - 2] + (out[i, n_x - 2] - out[i, n_x - 3]) * r_hi
    # v_ee = 0 at the eta edges
    for j in range(n_x):
        out[0, j] = 2.0 * out[1, j] - out[2, j]
        out[n_e - 1, j] = 2.0 * out[n_e - 2, j] - out[n_e - 3, j]
    return floored


@dataclass
class HjbSolution:
    grid: HjbGrid
    times: np.ndarray
    values: np.ndarray
    nu_star: np.ndarray
    floor_active: np.ndarray
    floor_counts: np.ndarray
    n_steps: int
    meta: dict = field(default_factory=dict)

    def index(self, T: float) -> int:
        k = int(np.argmin(np.abs(self.times - T)))
        if abs(self.times[k] - T) > 0.5 * self.meta.get("dT", 0.0) + 1e-12 * max(1.0, T):
            raise ValueError(f"T={T} is not a saved time")
        return k

    def at(self, T: float, eta: float, z: float) -> float:
        """Bilinear interpolation in ``(eta, log z)`` of the saved layer at ``T``."""
        g = self.grid
        layer = self.values[self.index(T)]
        fi = (eta - g.eta_min) / g.d_eta
        fj = (math.log(z) - g.logz_min) / g.d_x
        if not (0 <= fi <= g.n_eta - 1 and 0 <= fj <= g.n_z - 1):
            raise ValueError("probe point outside the grid")
        i = min(int(fi), g.n_eta - 2)
        j = min(int(fj), g.n_z - 2)
        a, b = fi - i, fj - j
        return float((1 - a) * (1 - b) * layer[i, j] + a * (1 - b) * layer[i + 1, j]
                     + (1 - a) * b * layer[i, j + 1] + a * b * layer[i + 1, j + 1])

    def large_z_slope(self, T: float, eta: float) -> float:
        """``(v(z_max) - v(z_max / 2)) / (z_max / 2)`` on the saved layer."""
        z_max = float(self.grid.z[-1])
        return (self.at(T, eta, z_max) - self.at(T, eta, z_max / 2)) / (z_max / 2)


def initial_layer(grid: HjbGrid, utility: UtilitySpec, endow: EndowmentSpec) -> np.ndarray:
    z = grid.z[None, :]
    return eval_v(utility, z) + z * np.asarray(endow.phi(grid.eta), dtype=float)[:, None]


def solve_dual_hjb(grid: HjbGrid, utility: UtilitySpec, endow: EndowmentSpec,
                   params: MarketParams | None = None, save_times=None) -> HjbSolution:
    """March ``v(T, eta, z)`` forward from ``V(z) + z phi(eta)`` up to ``grid.T_max``.

    Layers are kept at ``save_times`` (rounded to the nearest step) and at
    ``T_max``. ``params`` only serves as a consistency check on ``grid.lam``.
    Raises :class:`NumericalFailure` on non-finite values.
    """
    if params is not None and not math.isclose(grid.lam, params.lam, rel_tol=1e-12):
        raise ValueError("grid.lam must equal the market price of risk")
    n_steps = int(math.ceil(grid.T_max / grid.dT - 1e-9))
    dT = grid.T_max / n_steps
    wanted = sorted({float(t) for t in (save_times or ())} | {grid.T_max})
    if wanted[0] <= 0 or wanted[-1] > grid.T_max * (1 + 1e-12):
        raise ValueError("save times must lie in (0, T_max]")
    save_steps = {}
    for t in wanted:
        save_steps.setdefault(max(1, int(round(t / dT))), t)

    u = initial_layer(grid, utility, endow)
    nxt = u.copy()
    nu = np.zeros_like(u)
    fl = np.zeros(u.shape, dtype=np.int8)
    r_lo, r_hi = math.exp(-grid.d_x), math.exp(grid.d_x)
    values, nus, floors, counts, times = [], [], [], [], []
    for k in range(1, n_steps + 1):
        n_floor = _step(u, nxt, nu, fl, dT, grid.d_x, grid.d_eta, grid.lam**2, grid.nu_max,
                        grid.eps_zz, r_lo, r_hi)
        u, nxt = nxt, u
        if k in save_steps or k == n_steps:
            if not np.all(np.isfinite(u)):
                bad = np.argwhere(~np.isfinite(u))[0]
                raise NumericalFailure(
                    f"non-finite value at step {k} (T={k * dT:g}), node eta={grid.eta[bad[0]]:g}, "
                    f"z={grid.z[bad[1]]:g}"
                )
            times.append(k * dT)
            values.append(u.copy())
            nus.append(nu.copy())
            floors.append(fl.copy())
            counts.append(n_floor)
    return HjbSolution(grid, np.array(times), np.array(values), np.array(nus), np.array(floors),
                       np.array(counts), n_steps, {"dT": dT, **grid.meta()})


def facelift_distance(solution: HjbSolution, T_probe: float, endow: EndowmentSpec, utility: UtilitySpec,
                      Phi: float | None = None, margin: int = 10) -> float:
    """Relative sup distance between ``v(T_probe)`` and the envelope on interior nodes.

    ``max |v - Vf| / (1 + |Vf|)`` over nodes at least ``margin`` cells from
    every edge; ``Phi`` defaults to ``inf phi``.
    """
    g = solution.grid
    Phi = endow.inf_phi if Phi is None else Phi
    layer = solution.values[solution.index(T_probe)]
    sl = (slice(margin, g.n_eta - margin), slice(margin, g.n_z - margin))
    eta = g.eta[sl[0]][:, None]
    z = g.z[sl[1]][None, :]
    target = facelift_value(utility, z, np.asarray(endow.phi(eta), dtype=float), Phi)
    return float(np.max(np.abs(layer[sl] - target) / (1.0 + np.abs(target))))
