import math

import numpy as np
import pytest

from facelift_lab.controls import ControlParams
from facelift_lab.market import EndowmentSpec, MarketParams, simulate_paths
from facelift_lab.nonattain import (
    INCONCLUSIVE,
    NO_PRESSURE,
    NOT_ATTAINED,
    LateSplit,
    critical_z_path,
    evaluate_candidate,
    marginal_integrability,
    modified_objective_mc,
    nonattainment_report,
    split_terms,
    sweep_controls,
)
from facelift_lab.utility import UtilitySpec

MARKET = MarketParams(0.09, 0.3)
U = UtilitySpec(0.5)


def test_critical_path(logistic_two):
    zc = critical_z_path(U, logistic_two, np.array([0.0, -1e4]))
    assert zc[0] == pytest.approx(1.0)
    assert math.isinf(zc[1])


@pytest.mark.parametrize("control", [
    ControlParams.constant(0.0),
    ControlParams.push(-5.0, 100.0),
    LateSplit(100.0, -10.0, 0.02),
])
def test_pointwise_gap_is_nonnegative(control, logistic_two):
    bundle = simulate_paths(MARKET, 0.1, 20, 4000, seed=1)
    row = evaluate_candidate(0.1, 2.0, control, logistic_two, MARKET, bundle, U)
    assert row.min_pointwise_gap >= -1e-12
    assert row.modified.mean <= row.plain.mean


def test_constant_payoff_has_no_gap():
    endow = EndowmentSpec.constant(1.0)
    bundle = simulate_paths(MARKET, 0.1, 10, 2000, seed=0)
    row = evaluate_candidate(0.1, 2.0, ControlParams.push(-1.0, 10.0), endow, MARKET, bundle, U)
    assert row.gap.mean == 0.0
    assert row.frequency.mean == 0.0


def test_split_with_zero_gain_is_the_minimal_density(logistic_two):
    bundle = simulate_paths(MARKET, 0.1, 20, 4000, seed=2)
    plain_split, mod_split, _ = split_terms(0.1, 2.0, LateSplit(0.0, -10.0, 0.02), logistic_two,
                                            MARKET, bundle, U)
    zero = evaluate_candidate(0.1, 2.0, ControlParams.constant(0.0), logistic_two, MARKET, bundle, U)
    # same density, sampled under P here and under the tilted measure there
    se = math.hypot(np.std(plain_split) / math.sqrt(plain_split.size), zero.plain.se)
    assert abs(np.mean(plain_split) - zero.plain.mean) < 4 * se
    est = modified_objective_mc(0.1, 2.0, LateSplit(0.0, -10.0, 0.02), logistic_two, MARKET, bundle, U)
    assert est.mean == pytest.approx(float(np.mean(mod_split)), rel=1e-12)


def test_split_validation():
    with pytest.raises(ValueError):
        LateSplit(-1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        LateSplit(1.0, 0.0, 0.0)


def test_sweep_targets_deep_minimum(logistic_two):
    ctl = sweep_controls(logistic_two, 0.1, kappas=(0, 10), window_fraction=0.5)
    assert [c.kappa for c in ctl] == [0.0, 10.0]
    assert all(c.window == pytest.approx(0.05) for c in ctl)
    assert ctl[0].target == pytest.approx(logistic_two.deep_argmin())


def test_integrability_verdicts(logistic_two):
    good = marginal_integrability(logistic_two, U, 1.0)
    assert good.verdict == "finite"
    assert good.rel_change < 1e-4
    assert good.value == pytest.approx(1.0987, abs=1e-3)
    flat = EndowmentSpec.table([(-1.0, 0.0), (0.0, 0.0), (1.0, 1.0)])
    assert marginal_integrability(flat, U, 1.0).verdict == "divergent"
    assert marginal_integrability(EndowmentSpec.constant(1.0), U, 1.0).verdict == "divergent"
    with pytest.raises(ValueError):
        marginal_integrability(logistic_two, U, 0.0)


def test_report_verdicts(logistic_two):
    ctl = sweep_controls(logistic_two, 0.1, kappas=(0, 100), window_fraction=0.04, nu_max=1e4)
    kw = dict(n_paths=20_000, n_steps=50, seed=3)
    far = nonattainment_report(0.1, 5.0, ctl, logistic_two, MARKET, U, **kw)
    assert far.verdict == NOT_ATTAINED
    low = nonattainment_report(0.1, 0.1, ctl, logistic_two, MARKET, U, **kw)
    assert low.verdict == NO_PRESSURE
    d = far.to_dict()
    assert d["verdict"] == NOT_ATTAINED and len(d["candidates"]) == 2
    assert far.z0 > 0
    assert {NOT_ATTAINED, NO_PRESSURE, INCONCLUSIVE} == {far.verdict, low.verdict, INCONCLUSIVE}
