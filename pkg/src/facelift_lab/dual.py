"""Monte Carlo dual and primal objectives and the small-horizon convergence study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controls import NU_MAX_DEFAULT, ControlParams, Mixture
from .facelift import facelift_value
from .germ import GOLDEN, _kappa_grid
from .market import (
    EndowmentSpec,
    Estimate,
    MarketParams,
    MixtureSample,
    PathBundle,
    sample_mixture,
    simulate_paths,
    summarize,
    wealth_terminal,
)
from .utility import UtilitySpec, eval_u, eval_v

ALPHA_GRID = np.round(np.linspace(0.0, 1.0, 41), 12)


def v_over_density(utility: UtilitySpec, z: float, log_z) -> np.ndarray:
    """``V(z Z) / Z`` from ``log Z``, without forming ``Z`` itself."""
    log_z = np.asarray(log_z, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        if utility.is_log:
            return (-math.log(z) - log_z - 1.0) * np.exp(-log_z)
        p = utility.p
        q = p / (p - 1.0)
        return (1.0 - p) / p * z**q * np.exp((q - 1.0) * log_z)


def dual_samples(sample: MixtureSample, utility: UtilitySpec, endow: EndowmentSpec, z: float) -> np.ndarray:
    """Per-path unbiased samples of ``E[V(z Z_T) + z Z_T phi(eta_T)]``."""
    g = v_over_density(utility, z, sample.log_zmix) + z * endow.phi(sample.eta_T)
    return sample.combine(g)


@dataclass
class DualEvalResult:
    T: float
    z: float
    control: Mixture
    estimate: Estimate
    naive: float
    facelift_target: float

    @property
    def ci(self):
        return self.estimate.ci

    @property
    def value(self) -> float:
        return self.estimate.mean

    def row(self) -> dict:
        lo, hi = self.estimate.ci
        return {
            "T": self.T,
            "z_or_x": self.z,
            "family": self.control.family,
            "params": self.control.describe(),
            "estimate": self.estimate.mean,
            "ci_low": lo,
            "ci_high": hi,
            "naive": self.naive,
            "facelift_target": self.facelift_target,
        }


def naive_value(utility: UtilitySpec, endow: EndowmentSpec, z: float) -> float:
    return float(eval_v(utility, z)) + z * endow.phi0


def facelift_target(utility: UtilitySpec, endow: EndowmentSpec, z: float) -> float:
    """Small-horizon limit with germ price ``inf phi``."""
    return float(facelift_value(utility, z, endow.phi0, endow.inf_phi))


def _check_z(z):
    if not z > 0:
        raise ValueError("z must be strictly positive")


def dual_objective_mc(T: float, z: float, control, endow: EndowmentSpec, params: MarketParams,
                      bundle: PathBundle, utility: UtilitySpec) -> DualEvalResult:
    """Estimate ``E[V(z Z_T) + z Z_T phi(eta_T)]`` for one (possibly mixed) density."""
    _check_z(z)
    sample = sample_mixture(params, control, bundle, endow, T=T)
    est = summarize(dual_samples(sample, utility, endow, z))
    return DualEvalResult(T, z, Mixture.of(control), est, naive_value(utility, endow, z),
                          facelift_target(utility, endow, z))


def _best_blend(sample: MixtureSample, utility, endow, z, control: ControlParams, base: ControlParams):
    """Scan the mixing weight of a two-component density on fixed paths."""
    best_a, best_mean = None, math.inf
    for a in ALPHA_GRID[1:-1]:
        sample.weights = np.array([1.0 - a, a])
        m = float(np.mean(dual_samples(sample, utility, endow, z)))
        if m < best_mean:
            best_a, best_mean = a, m
    sample.weights = np.array([1.0 - best_a, best_a])
    est = summarize(dual_samples(sample, utility, endow, z))
    return Mixture.blend(float(best_a), control, base), est


@dataclass
class DualSearch:
    control: Mixture
    result: DualEvalResult
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.control, self.result))


def optimize_dual(T: float, z: float, endow: EndowmentSpec, params: MarketParams, utility: UtilitySpec,
                  budget: int = 20, seed: int = 0, *, n_paths: int = 50_000, n_steps: int = 100,
                  nu_max: float = NU_MAX_DEFAULT, kappa_max: float = 1e3,
                  bundle: PathBundle | None = None) -> DualSearch:
    """Minimize the dual objective over densities ``(1 - a) Z^0 + a Z^c``.

    ``Z^0`` is the minimal density (``nu = 0``) and ``c`` ranges over push
    controls ``(target, kappa)`` and a few constants; for each simulated ``c``
    the weight ``a`` is scanned on a fixed grid, reusing the same paths. The
    evaluation order is fixed, so more budget never raises the result, and
    ``nu = 0`` itself is always the first candidate.
    """
    _check_z(z)
    if budget < 20:
        raise ValueError("budget must be at least 20 evaluations")
    bundle = bundle or simulate_paths(params, T, n_steps, n_paths, seed)
    zero = ControlParams.constant(0.0, nu_max=nu_max)
    history: list[tuple[Mixture, Estimate]] = []
    seen: dict[ControlParams, Estimate] = {}

    base_sample = sample_mixture(params, zero, bundle, endow, T=T)
    base_est = summarize(dual_samples(base_sample, utility, endow, z))
    history.append((Mixture.of(zero), base_est))
    seen[zero] = base_est

    def evaluate(c: ControlParams):
        if c in seen:
            return seen[c]
        if len(seen) >= budget:
            return None
        sample = sample_mixture(params, Mixture.blend(0.5, c, zero), bundle, endow, T=T)
        mix, est = _best_blend(sample, utility, endow, z, c, zero)
        history.append((mix, est))
        seen[c] = est
        return est

    if not endow.is_constant:
        hint = endow.argmin_hint()
        for kappa in _kappa_grid(kappa_max):
            evaluate(ControlParams.push(hint, kappa, nu_max=nu_max))
        push_seen = [c for c in seen if c.family == "push"]
        best_kappa = min(push_seen, key=lambda c: seen[c].mean).kappa
        for nu_bar in (1.0, -1.0, 0.25 * nu_max ** 0.5, -0.25 * nu_max ** 0.5):
            evaluate(ControlParams.constant(nu_bar, nu_max=nu_max))
        a, b = (hint - 4.0, endow.eta0) if hint < endow.eta0 else (endow.eta0, hint + 4.0)
        c1, c2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        while len(seen) < budget and b - a > 1e-3:
            e1 = evaluate(ControlParams.push(c1, best_kappa, nu_max=nu_max))
            e2 = evaluate(ControlParams.push(c2, best_kappa, nu_max=nu_max))
            if e1 is None or e2 is None:
                break
            if e1.mean <= e2.mean:
                b, c2 = c2, c1
                c1 = b - GOLDEN * (b - a)
            else:
                a, c1 = c1, c2
                c2 = a + GOLDEN * (b - a)

    best_mix, best_est = min(history, key=lambda h: h[1].mean)
    result = DualEvalResult(T, z, best_mix, best_est, naive_value(utility, endow, z),
                            facelift_target(utility, endow, z))
    return DualSearch(best_mix, result, history)


@dataclass
class PrimalResult:
    T: float
    x: float
    theta: float
    estimate: Estimate
    n_negative: int
    floor_breaches: int

    @property
    def admissible(self) -> bool:
        return self.n_negative == 0


def primal_objective_mc(T: float, x: float, theta: float, endow: EndowmentSpec, params: MarketParams,
                        bundle: PathBundle, utility: UtilitySpec) -> PrimalResult:
    """Estimate ``E[U(X_T + phi(eta_T))]`` for a constant dollar exposure.

    A single path with negative terminal argument makes the estimate
    ``-inf``; the breach count is reported alongside.
    """
    if abs(T - bundle.T) > 1e-12 * max(1.0, T):
        raise ValueError("primal estimates use the full bundle horizon")
    wealth = wealth_terminal(params, theta, bundle, x, floor=-endow.inf_phi)
    _, W_T = bundle.terminal()
    arg = wealth.X_T + endow.phi(endow.eta0 + W_T)
    vals = np.asarray(eval_u(utility, arg))
    est = summarize(vals)
    return PrimalResult(T, x, theta, est, int(np.count_nonzero(arg < 0)), wealth.breaches)


@dataclass
class ValueTable:
    rows: list
    trends: dict

    columns = ("T", "z_or_x", "family", "params", "estimate", "ci_low", "ci_high", "naive",
               "facelift_target", "gap_naive", "gap_target")


def cell_seed(seed: int, *index: int) -> int:
    """Independent, reproducible seed for one cell of a grid run."""
    return int(np.random.SeedSequence([int(seed), *map(int, index)]).generate_state(1, dtype=np.uint64)[0] >> 1)


def convergence_table(z_list, T_list, endow: EndowmentSpec, params: MarketParams, utility: UtilitySpec,
                      budget: int = 20, seed: int = 0, **kwargs) -> ValueTable:
    """Optimized dual values on a ``(z, T)`` grid with gaps to both candidate limits.

    ``trends[z]`` records whether the gap to the facelift target is
    nonincreasing as ``T`` decreases, allowing for the combined 95% interval
    of consecutive cells.
    """
    T_list = [float(t) for t in T_list]
    if any(b >= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T list must be strictly decreasing")
    rows, trends = [], {}
    for iz, z in enumerate(z_list):
        z = float(z)
        cells = []
        for iT, T in enumerate(T_list):
            res = optimize_dual(T, z, endow, params, utility, budget, cell_seed(seed, iz, iT), **kwargs).result
            row = res.row()
            row["gap_naive"] = res.value - res.naive
            row["gap_target"] = res.value - res.facelift_target
            rows.append(row)
            cells.append(res)
        trends[z] = all(
            b.value - b.facelift_target <= a.value - a.facelift_target
            + math.hypot(a.estimate.half_width, b.estimate.half_width)
            for a, b in zip(cells, cells[1:])
        )
    return ValueTable(rows, trends)


def richardson_limit(T_a: float, est_a: Estimate, T_b: float, est_b: Estimate) -> Estimate:
    """Linear extrapolation to ``T = 0`` from two independent cells."""
    w = T_a / (T_a - T_b)
    mean = w * est_b.mean + (1.0 - w) * est_a.mean
    se = math.hypot(w * est_b.se, (1.0 - w) * est_a.se)
    return Estimate(mean, se, est_a.n + est_b.n)
