"""Modified (facelifted) dual objective and non-attainment diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .controls import Mixture
from .dual import v_over_density
from .market import (
    EndowmentSpec,
    Estimate,
    MarketParams,
    MixtureSample,
    PathBundle,
    sample_mixture,
    simulate_paths,
    steps_for,
    summarize,
)
from .utility import UtilitySpec, eval_v, marginal

NO_PRESSURE = "no facelift pressure at this z"
NOT_ATTAINED = "minimizer cannot be attained in this class"
INCONCLUSIVE = "inconclusive"


def critical_z_path(utility: UtilitySpec, endow: EndowmentSpec, eta) -> np.ndarray:
    """``z_c(eta) = U'(phi(eta) - inf phi)``, ``+inf`` where the gap vanishes."""
    gap = np.asarray(endow.phi(eta), dtype=float) - endow.inf_phi
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(gap > 0, marginal(utility, np.where(gap > 0, gap, 1.0)), np.inf)


def _per_unit_density(utility: UtilitySpec, endow: EndowmentSpec, z: float, log_z, eta):
    """``(V(zZ) + zZ phi) / Z``, ``Vf(zZ; phi, inf phi) / Z`` and ``1{zZ >= z_c(eta)} / Z``."""
    phi = np.asarray(endow.phi(eta), dtype=float)
    psi = endow.inf_phi
    zc = critical_z_path(utility, endow, eta)
    with np.errstate(divide="ignore"):
        above = math.log(z) + log_z >= np.log(zc)
    plain = v_over_density(utility, z, log_z) + z * phi
    mod = plain.copy()
    if np.any(above):
        zca = zc[above]
        # tangent branch: (V(z_c) + (phi - psi) z_c) / Z + psi z, bounded since Z >= z_c / z
        tangent = (eval_v(utility, zca) + (phi[above] - psi) * zca) * np.exp(-log_z[above]) + psi * z
        mod[above] = np.minimum(tangent, plain[above])
    return plain, mod, np.where(above, np.exp(-log_z), 0.0)


def _mixture_terms(sample: MixtureSample, utility, endow, z):
    parts = _per_unit_density(utility, endow, z, sample.log_zmix, sample.eta_T)
    return tuple(sample.combine(p) for p in parts)


def modified_samples(sample: MixtureSample, utility: UtilitySpec, endow: EndowmentSpec, z: float) -> np.ndarray:
    return _mixture_terms(sample, utility, endow, z)[1]


def modified_objective_mc(T: float, z: float, control, endow: EndowmentSpec, params: MarketParams,
                          bundle: PathBundle, utility: UtilitySpec) -> Estimate:
    """Estimate ``E[Vf(z Z_T; phi(eta_T), inf phi)]`` on the paths of ``bundle``."""
    if not z > 0:
        raise ValueError("z must be strictly positive")
    if isinstance(control, LateSplit):
        return summarize(split_terms(T, z, control, endow, params, bundle, utility)[1])
    sample = sample_mixture(params, control, bundle, endow, T=T)
    return summarize(modified_samples(sample, utility, endow, z))


@dataclass(frozen=True)
class LateSplit:
    """Density that sheds mass in a final window of the horizon.

    Up to ``T - window`` the density is the minimal one, ``Z^0``. At that
    time a fraction ``A = 1 - min(1, z_c(eta) / (z Z^0))`` of each path's
    mass is handed to a push toward ``target`` with gain ``kappa``; the rest
    stays. The result ``Z^0_T ((1 - A) + A M_T)``, with ``M`` the push
    martingale over the window, is a density for every ``kappa``, and
    ``kappa = 0`` gives back ``Z^0``.
    """

    kappa: float
    target: float
    window: float
    nu_max: float = 1e3

    family = "split"

    def __post_init__(self):
        if self.kappa < 0 or not self.window > 0 or not self.nu_max > 0:
            raise ValueError("need kappa >= 0, window > 0 and nu_max > 0")

    def describe(self) -> str:
        return f"target={self.target:g};kappa={self.kappa:g};window={self.window:g};nu_max={self.nu_max:g}"


def split_terms(T: float, z: float, split: LateSplit, endow: EndowmentSpec, params: MarketParams,
                bundle: PathBundle, utility: UtilitySpec):
    """Per-path plain, modified and indicator estimators under a :class:`LateSplit`.

    Both continuations (stay under ``P``, push under the tilted measure)
    reuse the same increments; the per-path estimator weights them by
    ``1 - A`` and ``A``.
    """
    steps = steps_for(bundle, T)
    dt, lam, eta0 = bundle.dt, params.lam, endow.eta0
    k = min(steps, max(1, int(round(split.window / dt))))
    gain = -math.expm1(-split.kappa * dt) / dt

    def one_block(dB, dW):
        s = steps - k
        eta = eta0 + dW[:, :s].sum(axis=1)
        lz0 = -lam * dB[:, :s].sum(axis=1) - 0.5 * lam * lam * s * dt
        with np.errstate(divide="ignore"):
            log_zc = np.log(critical_z_path(utility, endow, eta))
        share = np.clip(1.0 - np.exp(log_zc - math.log(z) - lz0), 0.0, 1.0)
        lz0_T = lz0 - lam * dB[:, s:steps].sum(axis=1) - 0.5 * lam * lam * k * dt
        outs = []
        for tilted in (False, True):
            e, lm = eta.copy(), np.zeros_like(eta)
            for j in range(s, steps):
                nu = np.clip(gain * (e - split.target), -split.nu_max, split.nu_max)
                dw = dW[:, j] - nu * dt if tilted else dW[:, j]
                lm += -nu * dw - 0.5 * nu * nu * dt
                e += dw
            with np.errstate(divide="ignore"):
                lmix = np.logaddexp(np.log1p(-share), np.log(share) + lm)
            plain, mod, ind = _per_unit_density(utility, endow, z, lz0_T + lmix, e)
            scale = np.exp(lz0_T)
            outs.append((plain * scale, mod * scale, ind * scale))
        (p0, m0, i0), (p1, m1, i1) = outs
        w0, w1 = 1.0 - share, share
        return w0 * p0 + w1 * p1, w0 * m0 + w1 * m1, w0 * i0 + w1 * i1

    parts = bundle.map_blocks(one_block)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


@dataclass
class CandidateRow:
    control: object
    plain: Estimate
    modified: Estimate
    gap: Estimate
    frequency: Estimate
    min_pointwise_gap: float

    @property
    def gap_significant(self) -> bool:
        return self.gap.mean > 3.0 * self.gap.se

    def row(self) -> dict:
        return {
            "family": self.control.family,
            "params": self.control.describe(),
            "plain": self.plain.mean,
            "plain_se": self.plain.se,
            "modified": self.modified.mean,
            "modified_se": self.modified.se,
            "gap": self.gap.mean,
            "gap_se": self.gap.se,
            "freq_above_zc": self.frequency.mean,
            "min_pointwise_gap": self.min_pointwise_gap,
        }


def evaluate_candidate(T, z, control, endow, params, bundle, utility) -> CandidateRow:
    if isinstance(control, LateSplit):
        p, m, ind = split_terms(T, z, control, endow, params, bundle, utility)
    else:
        control = Mixture.of(control)
        p, m, ind = _mixture_terms(sample_mixture(params, control, bundle, endow, T=T), utility, endow, z)
    gap = p - m
    return CandidateRow(control, summarize(p), summarize(m), summarize(gap), summarize(ind),
                        float(np.min(gap)))


@dataclass
class Integrability:
    finite: bool
    value: float
    rel_change: float
    note: str

    @property
    def verdict(self) -> str:
        return "finite" if self.finite else "divergent"


def marginal_integrability(endow: EndowmentSpec, utility: UtilitySpec, T: float,
                           rtol: float = 1e-4) -> Integrability:
    """``E[U'(phi(eta0 + W_T) - inf phi)]`` by quadrature, or a divergence flag.

    A payoff that sits at its infimum on an interval puts positive
    probability on ``U'(0+) = inf``. Otherwise the integral is computed at
    two refinement levels; disagreement beyond ``rtol`` also counts as
    divergence.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if endow.attains_inf_on_interval:
        note = "payoff is constant" if endow.is_constant else "payoff is flat at its infimum"
        return Integrability(False, math.inf, math.nan, note)
    sd = math.sqrt(T)

    def integrand(y):
        gap = float(endow.phi(endow.eta0 + y)) - endow.inf_phi
        if gap <= 0.0:
            return math.inf
        return float(marginal(utility, gap)) * stats.norm.pdf(y, scale=sd)

    breaks = [endow.eta0 - x for x, _ in endow.params] if endow.kind == "table" else []
    results = []
    for limit, eps in ((200, 1e-9), (2000, 1e-12)):
        total, err = 0.0, 0.0
        edges = sorted({-40.0 * sd, 40.0 * sd, *[b for b in breaks if abs(b) < 40 * sd]})
        with np.errstate(all="ignore"):
            for a, b in zip(edges, edges[1:]):
                val, e = integrate.quad(integrand, a, b, limit=limit, epsabs=0.0, epsrel=eps)
                total, err = total + val, err + e
        results.append(total)
    coarse, fine = results
    rel = abs(fine - coarse) / max(abs(fine), 1e-300)
    ok = math.isfinite(fine) and rel < rtol
    return Integrability(ok, fine if ok else math.inf, rel,
                         "two refinement levels agree" if ok else "refinements disagree")


@dataclass
class NonattainReport:
    T: float
    z: float
    z0: float
    rows: list[CandidateRow]
    integrability: Integrability
    verdict: str
    min_plain: Estimate = field(default=None)
    min_modified: Estimate = field(default=None)

    @property
    def infima_gap(self) -> float:
        return self.min_plain.mean - self.min_modified.mean

    @property
    def infima_se(self) -> float:
        return math.hypot(self.min_plain.se, self.min_modified.se)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "z": self.z,
            "z0": self.z0,
            "verdict": self.verdict,
            "integrability": self.integrability.verdict,
            "integrability_value": self.integrability.value,
            "min_plain": self.min_plain.mean,
            "min_modified": self.min_modified.mean,
            "infima_gap": self.infima_gap,
            "infima_se": self.infima_se,
            "candidates": [r.row() for r in self.rows],
        }


def sweep_controls(endow: EndowmentSpec, T: float, kappas=(0.0, 10.0, 100.0, 1000.0),
                   window_fraction: float = 0.2, nu_max: float = 1e3) -> list[LateSplit]:
    """Late splits of increasing push strength toward the payoff minimum."""
    target = endow.deep_argmin()
    return [LateSplit(float(k), target, window_fraction * T, nu_max) for k in kappas]


def nonattainment_report(T: float, z: float, controls, endow: EndowmentSpec, params: MarketParams,
                         utility: UtilitySpec, seed: int = 0, *, n_paths: int = 50_000,
                         n_steps: int = 100, bundle: PathBundle | None = None) -> NonattainReport:
    """Compare the plain and modified objectives along a sequence of controls."""
    if not z > 0:
        raise ValueError("z must be strictly positive")
    bundle = bundle or simulate_paths(params, T, n_steps, n_paths, seed)
    rows = [evaluate_candidate(T, z, c, endow, params, bundle, utility) for c in controls]
    _, W_T = bundle.terminal()
    z0 = float(np.min(critical_z_path(utility, endow, endow.eta0 + W_T)))
    integ = marginal_integrability(endow, utility, T)
    if all(r.gap_significant for r in rows):
        verdict = NOT_ATTAINED
    elif all(r.frequency.mean < 1e-3 and not r.gap_significant for r in rows):
        verdict = NO_PRESSURE
    else:
        verdict = INCONCLUSIVE
    return NonattainReport(T, z, z0, rows, integ, verdict,
                           min((r.plain for r in rows), key=lambda e: e.mean),
                           min((r.modified for r in rows), key=lambda e: e.mean))
