"""Acceptance criteria at desk scale.

Each test prints one ``criterion N: PASS/FAIL`` line (also repeated in the
terminal summary) and asserts both the numerical claim and its runtime
budget.
"""
import math
import time

import numpy as np

from facelift_lab.cli import main
from facelift_lab.controls import ControlParams
from facelift_lab.dual import (
    cell_seed,
    dual_objective_mc,
    optimize_dual,
    primal_objective_mc,
    richardson_limit,
)
from facelift_lab.facelift import FaceliftEnvelope, facelift_eval, facelift_sup_oracle
from facelift_lab.germ import bang_estimate, kappa_sweep, optimize_germ
from facelift_lab.hjb import HjbGrid, solve_dual_hjb
from facelift_lab.market import EndowmentSpec, MarketParams, simulate_paths
from facelift_lab.nonattain import (
    NOT_ATTAINED,
    marginal_integrability,
    nonattainment_report,
    sweep_controls,
)
from facelift_lab.utility import UtilitySpec, conjugate_oracle, dual_derivative, eval_v

UTILITIES = [UtilitySpec(-1.0), UtilitySpec(0.5), UtilitySpec(None)]
MARKET = MarketParams(0.09, 0.3)
SQRT = UtilitySpec(0.5)
BENCH = EndowmentSpec.logistic(0.0, 2.0, 0.0, 1.0)


def test_conjugate_exactness(acceptance_line):
    t0 = time.perf_counter()
    worst = 0.0
    for u in UTILITIES:
        for z in np.geomspace(1e-3, 1e3, 200):
            exact = float(eval_v(u, z))
            worst = max(worst, abs(conjugate_oracle(u, z) - exact) / max(1.0, abs(exact)))
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and secs < 10
    acceptance_line(1, ok, f"max relative error {worst:.2e}", secs)
    assert worst <= 1e-6
    assert secs < 10


PHI_PSI = [(1.0, 0.0), (2.0, 1.0), (0.5, -0.5), (3.0, 0.0), (1.0, 0.9)]


def _left_slope(env, zc):
    # second-order one-sided difference on the naive branch
    h = 1e-4 * zc
    f = env.naive
    return (3 * f(zc) - 4 * f(zc - h) + f(zc - 2 * h)) / (2 * h)


def test_facelift_envelope(acceptance_line):
    t0 = time.perf_counter()
    z = np.geomspace(1e-2, 1e2, 100)
    worst_oracle = worst_slope = 0.0
    convex = monotone = True
    for u in UTILITIES:
        for phi, psi in PHI_PSI:
            env = FaceliftEnvelope(u, phi, psi)
            vals = np.asarray(facelift_eval(env, z))
            for zi, vi in zip(z, vals):
                worst_oracle = max(worst_oracle, abs(facelift_sup_oracle(env, zi) - vi))
            # convexity on a nonuniform grid: slopes of chords are nondecreasing
            chords = np.diff(vals) / np.diff(z)
            scale = 1e-9 * (1 + np.abs(chords[1:]))
            convex &= bool(np.all(np.diff(chords) >= -scale))
            excess = vals - psi * z
            monotone &= bool(np.all(np.diff(excess) <= 1e-12 * (1 + np.abs(excess[1:]))))
            zc = env.z_c
            analytic_left = float(dual_derivative(u, zc)) + phi
            worst_slope = max(worst_slope, abs(analytic_left - psi), abs(_left_slope(env, zc) - psi))
    secs = time.perf_counter() - t0
    ok = worst_oracle <= 1e-6 and worst_slope <= 1e-6 and convex and monotone and secs < 30
    acceptance_line(2, ok, f"oracle gap {worst_oracle:.2e}, slope mismatch {worst_slope:.2e}, "
                           f"convex={convex}, excess nonincreasing={monotone}", secs)
    assert worst_oracle <= 1e-6
    assert worst_slope <= 1e-6
    assert convex and monotone
    assert secs < 30


def test_germ_price(acceptance_line):
    t0 = time.perf_counter()
    endow = EndowmentSpec.logistic(0.0, 1.0, 0.0, 1.0)
    T = 0.1
    bundle = simulate_paths(MarketParams(1.0, 1.0), T, 100, 100_000, seed=0)
    best = optimize_germ(T, endow, 20, kappa_max=1e4, bundle=bundle)
    sweep = kappa_sweep(T, endow, best.control.target, [1, 10, 100, 1e3, 1e4], bundle)
    monotone = all(
        b.mean <= a.mean + math.hypot(a.half_width, b.half_width)
        for (_, a), (_, b) in zip(sweep, sweep[1:])
    )
    bang = bang_estimate(T, endow, best.control.target, 40, bundle)
    secs = time.perf_counter() - t0
    ok = best.estimate.mean <= 0.05 and monotone and bang.mean <= 0.15 and secs < 120
    acceptance_line(3, ok, f"optimized {best.estimate.mean:.3g}, monotone in kappa={monotone}, "
                           f"bang n=40 {bang.mean:.3g}", secs)
    assert best.estimate.mean <= 0.05
    assert monotone
    assert bang.mean <= 0.15
    assert secs < 120


def test_facelift_convergence(acceptance_line):
    t0 = time.perf_counter()
    T_list = [0.2, 0.1, 0.05, 0.025]
    kw = dict(n_paths=200_000, n_steps=50, kappa_max=1e3)
    cells = {}
    for iz, z in enumerate((2.0, 0.25)):
        for iT, T in enumerate(T_list):
            cells[z, T] = optimize_dual(T, z, BENCH, MARKET, SQRT, 20, cell_seed(0, iz, iT), **kw).result
    secs = time.perf_counter() - t0

    hi = [cells[2.0, T] for T in T_list]
    naive, target = hi[0].naive, hi[0].facelift_target
    width = lambda r: r.ci[1] - r.ci[0]
    below_naive = all(naive - r.value > 3 * width(r) for r in hi)
    gaps = [r.value - target for r in hi]
    toward = all(g >= -width(r) for g, r in zip(gaps, hi)) and all(b <= a for a, b in zip(gaps, gaps[1:]))
    close = gaps[-1] < 0.25 * (naive - target)

    lo = [cells[0.25, T] for T in T_list]
    lim = richardson_limit(T_list[-2], lo[-2].estimate, T_list[-1], lo[-1].estimate)
    low_naive = lo[0].naive
    lim_ok = lim.ci[0] <= low_naive <= lim.ci[1]
    low_monotone = all(b.value <= a.value for a, b in zip(lo, lo[1:]))

    ok = below_naive and toward and close and lim_ok and low_monotone and secs < 300
    acceptance_line(4, ok, f"z=2 values {[round(r.value, 4) for r in hi]} (naive {naive:g}, "
                           f"target {target:g}); z=0.25 values {[round(r.value, 4) for r in lo]}, "
                           f"T->0 extrapolation {lim.mean:.4f} +- {lim.half_width:.4f}", secs)
    assert below_naive
    assert toward
    assert close
    assert low_monotone
    assert lim_ok
    assert secs < 300


def test_weak_duality(acceptance_line):
    t0 = time.perf_counter()
    T, x = 0.1, 1.0
    bundle = simulate_paths(MARKET, T, 50, 100_000, seed=11)
    primal = {th: primal_objective_mc(T, x, th, BENCH, MARKET, bundle, SQRT) for th in (-1.0, 0.0, 1.0)}
    worst = -math.inf
    for nu in (-1.0, 0.0, 1.0):
        for z in (0.5, 1.0, 2.0):
            dual = dual_objective_mc(T, z, ControlParams.constant(nu), BENCH, MARKET, bundle, SQRT)
            for p in primal.values():
                pooled = math.hypot(p.estimate.se, dual.estimate.se)
                excess = (p.estimate.mean - x * z - dual.value) / pooled
                worst = max(worst, excess)
    secs = time.perf_counter() - t0
    ok = worst <= 3 and secs < 60
    acceptance_line(5, ok, f"largest violation {worst:.2f} pooled SE (bound 3)", secs)
    assert worst <= 3
    assert secs < 60


def test_mc_pde_crosscheck(acceptance_line):
    t0 = time.perf_counter()
    nu_max = 100.0
    grid = HjbGrid(-7.0, 7.0, 201, -6.0, 6.0, 201, T_max=0.05, nu_max=nu_max, lam=MARKET.lam)
    sol = solve_dual_hjb(grid, SQRT, BENCH, MARKET, save_times=[0.025, 0.05])
    probes, misses = [], 0
    for iT, T in enumerate((0.025, 0.05)):
        for iz, z in enumerate((0.5, 2.0, 4.0)):
            mc = optimize_dual(T, z, BENCH, MARKET, SQRT, 20, cell_seed(6, iz, iT), n_paths=100_000,
                               n_steps=50, nu_max=nu_max, kappa_max=1e3).result
            pde = sol.at(T, BENCH.eta0, z)
            tol = max(3 * (mc.ci[1] - mc.ci[0]), 0.02 * abs(mc.value))
            misses += abs(pde - mc.value) > tol
            probes.append(f"({T:g},{z:g}) {pde:.4f}/{mc.value:.4f}")
    slopes = []
    for T in (0.025, 0.05):
        germ = optimize_germ(T, BENCH, 20, seed=7, n_paths=100_000, n_steps=50, nu_max=nu_max,
                             kappa_max=1e3).estimate.mean
        slope = sol.large_z_slope(T, BENCH.eta0)
        slopes.append((T, slope, germ, abs(slope - germ) / germ))
    slope_ok = all(rel <= 0.05 for *_, rel in slopes)
    secs = time.perf_counter() - t0
    ok = misses == 0 and slope_ok and secs < 300
    acceptance_line(6, ok, "PDE/MC " + ", ".join(probes) + "; slope vs germ "
                    + ", ".join(f"T={T:g} {s:.4g}/{g:.4g}" for T, s, g, _ in slopes), secs)
    assert misses == 0
    assert slope_ok
    assert secs < 300


def test_modified_objective(acceptance_line):
    t0 = time.perf_counter()
    gaps_ok, signature_ok, notes = True, True, []
    for T in (0.1, 0.05):
        ctl = sweep_controls(BENCH, T, (0.0, 10.0, 100.0, 1000.0), window_fraction=0.04, nu_max=1e4)
        bundle = simulate_paths(MARKET, T, 50, 100_000, seed=cell_seed(7, int(T * 1000)))
        for z in (0.5, 2.0, 5.0):
            rep = nonattainment_report(T, z, ctl, BENCH, MARKET, SQRT, bundle=bundle)
            gaps_ok &= abs(rep.infima_gap) <= 3 * rep.infima_se
            if z >= 2.0:
                signature_ok &= rep.verdict == NOT_ATTAINED
            notes.append(f"({T:g},{z:g}) {rep.infima_gap:.1e}/{3 * rep.infima_se:.1e}")
    secs = time.perf_counter() - t0
    ok = gaps_ok and signature_ok and secs < 180
    acceptance_line(7, ok, f"infima gap/3SE {', '.join(notes)}; every candidate gap > 3 SE at z>=2: "
                           f"{signature_ok}", secs)
    assert gaps_ok
    assert signature_ok
    assert secs < 180


def test_integrability(acceptance_line):
    t0 = time.perf_counter()
    good = marginal_integrability(BENCH, SQRT, 0.1)
    flat = EndowmentSpec.table([(-2.0, 0.0), (0.0, 0.0), (2.0, 2.0)])
    bad = marginal_integrability(flat, SQRT, 0.1)
    secs = time.perf_counter() - t0
    ok = good.verdict == "finite" and good.rel_change < 1e-4 and bad.verdict == "divergent" and secs < 10
    acceptance_line(8, ok, f"logistic {good.verdict} ({good.value:.6g}, levels differ "
                           f"{good.rel_change:.1e}); flat-at-minimum {bad.verdict}", secs)
    assert good.verdict == "finite" and good.rel_change < 1e-4
    assert bad.verdict == "divergent"
    assert secs < 10


SMALL_RUNS = {
    "facelift": ["--z-grid", "0.1:4:40"],
    "germ": ["--set", "germ.n_paths=5000", "--set", "germ.n_steps=20"],
    "dual-mc": ["--set", "dual.n_paths=5000", "--set", "dual.n_steps=10",
                "--set", "dual.T_list=0.1,0.05"],
    "primal-mc": ["--set", "primal.n_paths=5000", "--set", "primal.n_steps=10"],
    "hjb": ["--set", "hjb.n_eta=41", "--set", "hjb.n_z=41", "--set", "hjb.nu_max=20",
            "--set", "hjb.T_max=0.02", "--set", "hjb.save_times=0.01,0.02"],
    "nonattain": ["--set", "nonattain.n_paths=5000", "--set", "nonattain.n_steps=20"],
}


def test_determinism(tmp_path, acceptance_line):
    t0 = time.perf_counter()
    model = ["--set", "model.mu=0.09", "--set", "model.sigma=0.3", "--seed", "5"]
    differing = []
    n_files = 0
    for cmd, extra in SMALL_RUNS.items():
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / cmd
            assert main([cmd, *model, *extra, "--out", str(out)]) == 0
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            n_files += 1
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                differing.append(f"{cmd}/{f.name}")
    secs = time.perf_counter() - t0
    ok = not differing and n_files >= len(SMALL_RUNS)
    acceptance_line(9, ok, f"{n_files} CSVs compared across reruns, differing: {differing or 'none'}", secs)
    assert n_files >= len(SMALL_RUNS)
    assert not differing
