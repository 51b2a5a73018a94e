"""Lower-hedging germ prices ``inf_Z E[Z_T phi(eta_T)]`` over parametrized controls.

Since ``E[Z_T phi(eta_T)] = E^Q[phi(eta_T)]`` the estimates are computed by
moving the factor under the tilted measure, which keeps the variance bounded
for arbitrarily strong controls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


from .controls import NU_MAX_DEFAULT, ControlParams
from .market import (
    EndowmentSpec,
    Estimate,
    MarketParams,
    PathBundle,
    sample_mixture,
    simulate_paths,
    summarize,
)

_DUMMY_MARKET = MarketParams(1.0, 1.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def germ_mc_estimate(T: float, endow: EndowmentSpec, control, bundle: PathBundle,
                     params: MarketParams | None = None) -> Estimate:
    """Monte Carlo estimate of ``E[Z^nu_T phi(eta_T)]`` with a 95% interval.

    ``T`` must be a grid time of ``bundle`` not exceeding its horizon.
    """
    if T > bundle.T * (1 + 1e-12):
        raise ValueError(f"T={T} exceeds the bundle horizon {bundle.T}")
    sample = sample_mixture(params or _DUMMY_MARKET, control, bundle, endow, T=T)
    return summarize(sample.combine(endow.phi(sample.eta_T)))


@dataclass
class GermSearch:
    """Outcome of :func:`optimize_germ`: the best control and every evaluation made."""

    control: ControlParams
    estimate: Estimate
    history: list

    def __iter__(self):
        return iter((self.control, self.estimate))


def _kappa_grid(kappa_max: float) -> list[float]:
    top = int(math.floor(math.log10(kappa_max) + 1e-12))
    grid = [10.0 ** k for k in range(0, top + 1)]
    if grid[-1] < kappa_max:
        grid.append(float(kappa_max))
    return grid


def optimize_germ(T: float, endow: EndowmentSpec, budget: int = 20, seed: int = 0, *,
                  n_paths: int = 20_000, n_steps: int = 100, nu_max: float = NU_MAX_DEFAULT,
                  kappa_max: float = 1e4, bundle: PathBundle | None = None) -> GermSearch:
    """Search push controls ``(target, kappa)`` for the smallest germ estimate.

    All candidates share one path bundle (common random numbers). The
    sequence of evaluated candidates does not depend on ``budget``, so a
    larger budget can only lower the returned estimate:

    1. the trivial control ``nu = 0``;
    2. a log-spaced sweep of ``kappa`` at the target hinted by the endowment;
    3. golden-section search over the target at the best ``kappa``.
    """
    if budget < 20:
        raise ValueError("budget must be at least 20 evaluations")
    bundle = bundle or simulate_paths(_DUMMY_MARKET, T, n_steps, n_paths, seed)
    cache: dict[ControlParams, Estimate] = {}
    history = []

    def evaluate(c: ControlParams) -> Estimate:
        if c not in cache:
            if len(cache) >= budget:
                return None
            cache[c] = germ_mc_estimate(T, endow, c, bundle)
            history.append((c, cache[c]))
        return cache[c]

    evaluate(ControlParams.constant(0.0, nu_max=nu_max))
    if not endow.is_constant:
        hint = endow.argmin_hint()
        for kappa in _kappa_grid(kappa_max):
            evaluate(ControlParams.push(hint, kappa, nu_max=nu_max))
        best_kappa = min(
            (c for c in cache if c.family == "push"), key=lambda c: cache[c].mean
        ).kappa
        a, b = (hint - 4.0, endow.eta0) if hint < endow.eta0 else (endow.eta0, hint + 4.0)
        c1, c2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        while len(cache) < budget:
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
            if b - a < 1e-3:
                break
    best = min(cache, key=lambda c: (cache[c].mean, history.index((c, cache[c]))))
    return GermSearch(best, cache[best], history)


def germ_A_detgrid(T: float, endow: EndowmentSpec, time_grid, budget: int = 20, seed: int = 0,
                   **kwargs) -> tuple[float, Estimate, dict]:
    """Deterministic-time stand-in for the American germ price.

    Returns ``(t_best, estimate, per_time)`` where the estimate is the
    minimum over ``time_grid`` of :func:`optimize_germ` outputs (same seed at
    every time).
    """
    grid = sorted(float(t) for t in time_grid)
    if not grid:
        raise ValueError("time grid is empty")
    if grid[0] <= 0 or grid[-1] > T * (1 + 1e-12):
        raise ValueError("time grid must lie in (0, T]")
    per_time = {t: optimize_germ(t, endow, budget, seed, **kwargs) for t in grid}
    t_best = min(grid, key=lambda t: per_time[t].estimate.mean)
    return t_best, per_time[t_best].estimate, per_time


def germ_analytic(regime: str, endow: EndowmentSpec) -> float:
    """Germ price in the two regimes with a closed form.

    ``complete``: the endowment value at the start; ``controllable``: the
    infimum of the payoff.
    """
    if regime == "complete":
        return endow.phi0
    if regime == "controllable":
        return endow.inf_phi
    raise ValueError(f"unknown regime {regime!r}")


def kappa_sweep(T: float, endow: EndowmentSpec, target: float, kappas, bundle: PathBundle,
                nu_max: float = NU_MAX_DEFAULT) -> list[tuple[float, Estimate]]:
    """Germ estimates along a sweep of push strengths on common paths."""
    return [
        (float(k), germ_mc_estimate(T, endow, ControlParams.push(target, float(k), nu_max=nu_max), bundle))
        for k in kappas
    ]


def bang_estimate(T: float, endow: EndowmentSpec, target: float, n: int, bundle: PathBundle,
                  nu_max: float = NU_MAX_DEFAULT) -> Estimate:
    """Germ estimate under the open-loop control that reaches ``target`` by time ``1/n``."""
    if 1.0 / n > T:
        raise ValueError("bang control needs 1/n <= T")
    return germ_mc_estimate(T, endow, ControlParams.bang(target, n, nu_max=nu_max), bundle)


__all__ = [
    "GermSearch",
    "bang_estimate",
    "germ_A_detgrid",
    "germ_analytic",
    "germ_mc_estimate",
    "kappa_sweep",
    "optimize_germ",
]
