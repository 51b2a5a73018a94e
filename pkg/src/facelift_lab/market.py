"""Two-factor Brownian market: traded asset driven by ``B``, endowment factor by ``W``.

The stock price itself is never simulated: wealth only needs the dollar
exposure and ``B``, and every dual quantity only needs ``(Z, eta)``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.special import expit, logit

from .controls import ControlParams, Mixture

Z95 = 1.959963984540054
DEFAULT_BLOCK = 8192
_CACHE_LIMIT_BYTES = 400 * 2**20


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FACELIFT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class MarketParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive and finite")
        if self.mu == 0 or not math.isfinite(self.mu):
            raise ValueError("mu must be finite and nonzero")

    @property
    def lam(self) -> float:
        return self.mu / self.sigma


@dataclass(frozen=True)
class EndowmentSpec:
    """Bounded continuous payoff ``phi`` of the factor ``eta = eta0 + W``.

    ``kind="logistic"`` uses ``params = (c0, c1, m, s)`` for
    ``c0 + c1 / (1 + exp(-(eta - m) / s))``; ``kind="table"`` uses
    ``params = ((x0, y0), (x1, y1), ...)``, linearly interpolated and flat
    outside the table.
    """

    eta0: float
    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "logistic":
            if len(self.params) != 4 or not self.params[3] > 0:
                raise ValueError("logistic endowment needs (c0, c1, m, s) with s > 0")
        elif self.kind == "table":
            xs = [p[0] for p in self.params]
            if len(xs) == 0 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("table endowment needs strictly increasing knots")
        else:
            raise ValueError(f"unknown endowment kind {self.kind!r}")

    @classmethod
    def logistic(cls, c0=0.0, c1=1.0, m=0.0, s=1.0, eta0=0.0) -> "EndowmentSpec":
        return cls(float(eta0), "logistic", (float(c0), float(c1), float(m), float(s)))

    @classmethod
    def table(cls, points, eta0=0.0) -> "EndowmentSpec":
        return cls(float(eta0), "table", tuple((float(x), float(y)) for x, y in points))

    @classmethod
    def constant(cls, c: float, eta0=0.0) -> "EndowmentSpec":
        return cls.logistic(c0=c, c1=0.0, eta0=eta0)

    def phi(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "logistic":
            c0, c1, m, s = self.params
            out = c0 + c1 * expit((eta - m) / s)
        else:
            xs, ys = zip(*self.params)
            out = np.interp(eta, xs, ys)
        return out.item() if out.ndim == 0 else out

    @property
    def phi0(self) -> float:
        return float(self.phi(self.eta0))

    @property
    def inf_phi(self) -> float:
        if self.kind == "logistic":
            c0, c1, _, _ = self.params
            return min(c0, c0 + c1)
        return min(y for _, y in self.params)

    @property
    def sup_phi(self) -> float:
        if self.kind == "logistic":
            c0, c1, _, _ = self.params
            return max(c0, c0 + c1)
        return max(y for _, y in self.params)

    @property
    def is_constant(self) -> bool:
        return self.inf_phi == self.sup_phi

    @property
    def attains_inf_on_interval(self) -> bool:
        """True when ``{phi = inf phi}`` has positive Lebesgue measure."""
        if self.is_constant:
            return True
        if self.kind == "logistic":
            return False
        pts = self.params
        lo = self.inf_phi
        if pts[0][1] == lo or pts[-1][1] == lo:
            return True
        return any(a[1] == lo and b[1] == lo for a, b in zip(pts, pts[1:]))

    def argmin_hint(self, reach: float = 6.0) -> float:
        """A factor level where ``phi`` is (nearly) minimal, within ``reach`` of ``eta0``."""
        if self.kind == "logistic":
            c0, c1, m, s = self.params
            direction = -1.0 if c1 > 0 else 1.0
            return float(min(max(m + direction * 8.0 * s, self.eta0 - reach), self.eta0 + reach))
        xs = [x for x, y in self.params if y == self.inf_phi]
        return float(min(xs, key=lambda x: abs(x - self.eta0)))

    def deep_argmin(self, tol: float = 1e-6) -> float:
        """A factor level where ``phi - inf phi`` is within ``tol`` of its range."""
        if self.is_constant:
            return self.eta0
        if self.kind == "logistic":
            c0, c1, m, s = self.params
            return float(m + s * logit(tol) if c1 > 0 else m - s * logit(tol))
        return self.argmin_hint()

    def describe(self) -> str:
        if self.kind == "logistic":
            return "logistic:" + ",".join(f"{v:.17g}" for v in self.params)
        return "table:" + ",".join(f"{x:.17g}:{y:.17g}" for x, y in self.params)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Deterministic Brownian increments for ``(B, W)`` on a uniform grid.

    Paths are grouped in fixed-size blocks; block ``b`` is drawn from a
    Philox stream keyed by ``(seed, b)``, and path ``i`` is row
    ``i % block_size`` of block ``i // block_size``. Any subset of paths can
    therefore be regenerated from the seed alone.
    """

    n_paths: int
    n_steps: int
    T: float
    seed: int
    block_size: int = DEFAULT_BLOCK
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1 or self.block_size < 1:
            raise ValueError("n_paths, n_steps and block_size must be >= 1")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("horizon T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def n_blocks(self) -> int:
        return -(-self.n_paths // self.block_size)

    @cached_property
    def _cacheable(self) -> bool:
        return self.n_paths * self.n_steps * 16 <= _CACHE_LIMIT_BYTES

    def block_rows(self, b: int) -> int:
        return min(self.block_size, self.n_paths - b * self.block_size)

    def block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Increments ``(dB, dW)`` of block ``b``, each of shape ``(rows, n_steps)``."""
        if not 0 <= b < self.n_blocks:
            raise IndexError(b)
        hit = self._cache.get(b)
        if hit is not None:
            return hit
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(b,))))
        x = rng.standard_normal((self.block_rows(b), self.n_steps, 2))
        x *= math.sqrt(self.dt)
        out = (np.ascontiguousarray(x[:, :, 0]), np.ascontiguousarray(x[:, :, 1]))
        for a in out:
            a.setflags(write=False)
        if self._cacheable:
            self._cache[b] = out
        return out

    def paths(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Increments for arbitrary path indices."""
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        if np.any((idx < 0) | (idx >= self.n_paths)):
            raise IndexError("path index out of range")
        dB = np.empty((idx.size, self.n_steps))
        dW = np.empty((idx.size, self.n_steps))
        for b in np.unique(idx // self.block_size):
            sel = np.nonzero(idx // self.block_size == b)[0]
            bB, bW = self.block(int(b))
            rows = idx[sel] - b * self.block_size
            dB[sel] = bB[rows]
            dW[sel] = bW[rows]
        return dB, dW

    def map_blocks(self, func):
        """Apply ``func(dB, dW)`` to every block and return results in block order."""
        n = worker_count()
        if n == 1 or self.n_blocks == 1:
            return [func(*self.block(b)) for b in range(self.n_blocks)]
        with ThreadPoolExecutor(max_workers=n) as ex:
            return list(ex.map(lambda b: func(*self.block(b)), range(self.n_blocks)))

    def terminal(self) -> tuple[np.ndarray, np.ndarray]:
        """``(B_T, W_T)`` for all paths."""
        parts = self.map_blocks(lambda dB, dW: (dB.sum(axis=1), dW.sum(axis=1)))
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_paths(params: MarketParams, T: float, n_steps: int, n_paths: int, seed: int,
                   block_size: int = DEFAULT_BLOCK) -> PathBundle:
    """Build the (lazy, deterministic) bundle of driving increments.

    ``params`` is accepted for interface symmetry; the increments are
    model-free standard Brownian increments.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("zero-sized path request")
    return PathBundle(int(n_paths), int(n_steps), float(T), int(seed), int(block_size))


# --- controlled density kernel ------------------------------------------------

_FAMILY_CODE = {"constant": 0, "push": 1, "bang": 2}


def _pack(components):
    fam = np.array([_FAMILY_CODE[c.family] for c in components], dtype=np.int64)
    par = np.array([[c.nu_bar, c.target, c.kappa, float(c.n), c.nu_max] for c in components], dtype=float)
    return fam, par


@njit(cache=True)
def _drive(lam, fam, par, driver, dB, dW, dt, eta0, log_z, eta_out):
    m, n = dB.shape
    K = fam.shape[0]
    nu = np.empty(K)
    gain = np.empty(K)
    for k in range(K):
        # push: per-step gain reproducing exact mean reversion over one step
        gain[k] = -np.expm1(-par[k, 2] * dt) / dt
    half_lam2 = 0.5 * lam * lam
    for i in range(m):
        eta = eta0
        for k in range(K):
            log_z[k, i] = 0.0
        for s in range(n):
            t = s * dt
            for k in range(K):
                nu_max = par[k, 4]
                f = fam[k]
                if f == 0:
                    v = par[k, 0]
                elif f == 1:
                    v = gain[k] * (eta - par[k, 1])
                    v = min(max(v, -nu_max), nu_max)
                else:
                    active = min(max((1.0 / par[k, 3] - t) / dt, 0.0), 1.0)
                    v = par[k, 3] * (eta0 - par[k, 1])
                    v = min(max(v, -nu_max), nu_max) * active
                nu[k] = v
            db = dB[i, s]
            dw = dW[i, s]
            if driver >= 0:
                # simulated increments are Q-Brownian; recover the P-increments
                db -= lam * dt
                dw -= nu[driver] * dt
            for k in range(K):
                log_z[k, i] += -lam * db - nu[k] * dw - (half_lam2 + 0.5 * nu[k] * nu[k]) * dt
            eta += dw
        eta_out[i] = eta


@dataclass
class MixtureSample:
    """Paths drawn under each component measure of a mixture density.

    ``log_z[j, k, i]`` is ``log Z^{c_k}_T`` on path ``i`` simulated under
    ``Q^{c_j}``; ``eta_T[j, i]`` the terminal factor on that path. Then
    ``E_P[h(Z^mix_T, eta_T)] = sum_j w_j E_{Q^j}[h / Z^mix]``.
    """

    weights: np.ndarray
    log_z: np.ndarray
    eta_T: np.ndarray

    @property
    def log_zmix(self) -> np.ndarray:
        w = self.weights[None, :, None]
        mx = self.log_z.max(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            return (mx + np.log(np.sum(w * np.exp(self.log_z - mx), axis=1, keepdims=True)))[:, 0, :]

    def combine(self, per_driver: np.ndarray) -> np.ndarray:
        """Per-path estimator ``sum_j w_j g_j`` from per-driver values ``g[j, i]``."""
        return np.tensordot(self.weights, per_driver, axes=1)


def steps_for(bundle: PathBundle, T: float | None) -> int:
    """Number of grid steps reaching ``T`` (which must be a grid time <= horizon)."""
    if T is None:
        return bundle.n_steps
    k = T / bundle.dt
    steps = int(round(k))
    if T <= 0 or steps > bundle.n_steps or abs(k - steps) > 1e-9 * max(1.0, k):
        raise ValueError(f"T={T} is not a grid time of a bundle with horizon {bundle.T}")
    return steps


def sample_mixture(params: MarketParams, control, bundle: PathBundle, endow: EndowmentSpec,
                   T: float | None = None) -> MixtureSample:
    """Simulate every component measure of ``control`` on common increments up to ``T``."""
    steps = steps_for(bundle, T)
    mix = Mixture.of(control)
    fam, par = _pack(mix.components)
    K = len(mix.components)
    lam, dt, eta0 = params.lam, bundle.dt, endow.eta0

    def one_block(dB, dW):
        dB, dW = dB[:, :steps], dW[:, :steps]
        m = dB.shape[0]
        lz = np.empty((K, K, m))
        et = np.empty((K, m))
        for j in range(K):
            _drive(lam, fam, par, j, dB, dW, dt, eta0, lz[j], et[j])
        return lz, et

    parts = bundle.map_blocks(one_block)
    return MixtureSample(
        np.asarray(mix.weights, dtype=float),
        np.concatenate([p[0] for p in parts], axis=2),
        np.concatenate([p[1] for p in parts], axis=1),
    )


def density_terminal(params: MarketParams, nu: ControlParams, bundle: PathBundle, endow: EndowmentSpec,
                     measure: str = "P") -> tuple[np.ndarray, np.ndarray]:
    """Per-path ``(Z_T, eta_T)`` under a single control.

    ``measure="P"`` simulates the physical dynamics; ``measure="Q"`` moves
    the paths under ``Q^nu`` itself (factor drift ``-nu``), which is the
    right sampler for expectations dominated by the tilted paths.
    """
    if not isinstance(nu, ControlParams):
        raise TypeError("density_terminal takes a single ControlParams")
    if measure not in ("P", "Q"):
        raise ValueError("measure must be 'P' or 'Q'")
    fam, par = _pack((nu,))
    lam, dt, eta0 = params.lam, bundle.dt, endow.eta0
    driver = -1 if measure == "P" else 0

    def one_block(dB, dW):
        m = dB.shape[0]
        lz = np.empty((1, m))
        et = np.empty(m)
        _drive(lam, fam, par, driver, dB, dW, dt, eta0, lz, et)
        return lz[0], et

    parts = bundle.map_blocks(one_block)
    return np.exp(np.concatenate([p[0] for p in parts])), np.concatenate([p[1] for p in parts])


@dataclass
class WealthResult:
    X_T: np.ndarray
    min_X: np.ndarray
    floor: float
    breaches: int


def wealth_terminal(params: MarketParams, theta: float, bundle: PathBundle, x: float,
                    floor: float = 0.0, clip: bool = False) -> WealthResult:
    """Terminal wealth of a constant dollar exposure ``theta``.

    ``X_t = x + theta (mu t + sigma B_t)``. The running minimum on the grid is
    recorded; paths whose minimum falls below ``floor`` are counted as
    breaches. With ``clip=True`` trading stops at the first grid time the
    floor is reached, so the wealth is frozen from then on.
    """
    mu, sigma, dt = params.mu, params.sigma, bundle.dt

    def one_block(dB, dW):
        gains = theta * (mu * dt + sigma * dB)
        X = x + np.cumsum(gains, axis=1)
        if clip:
            hit = X <= floor
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
            rows = np.nonzero(first >= 0)[0]
            for r in rows:
                X[r, first[r]:] = X[r, first[r]]
        return X[:, -1].copy(), np.minimum(X.min(axis=1), x)

    parts = bundle.map_blocks(one_block)
    X_T = np.concatenate([p[0] for p in parts])
    min_X = np.concatenate([p[1] for p in parts])
    return WealthResult(X_T, min_X, floor, int(np.count_nonzero(min_X < floor)))


# --- reductions ----------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int

    @property
    def half_width(self) -> float:
        return Z95 * self.se

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - self.half_width, self.mean + self.half_width


def summarize(values: np.ndarray) -> Estimate:
    """Mean and standard error with exactly rounded (order-free) sums.

    Any ``-inf`` value makes the mean ``-inf``.
    """
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n == 0:
        raise ValueError("no samples")
    if np.any(np.isneginf(v)):
        return Estimate(-math.inf, math.inf, n)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite Monte Carlo samples")
    mean = math.fsum(v) / n
    if n == 1:
        return Estimate(mean, math.inf, n)
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return Estimate(mean, math.sqrt(var / n), n)
