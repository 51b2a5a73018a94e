import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facelift_lab.utility import (
    UtilitySpec,
    conjugate_oracle,
    dual_derivative,
    eval_u,
    eval_v,
    inv_marginal,
    marginal,
)

UTILS = [UtilitySpec(-1.0), UtilitySpec(0.5), UtilitySpec(None)]


def test_frozen_conjugate_values():
    # V(z) = (1-p)/p z^{p/(p-1)}; log: -log z - 1
    assert eval_v(UtilitySpec(0.5), 2.0) == pytest.approx(0.5)
    assert eval_v(UtilitySpec(0.5), 0.25) == pytest.approx(4.0)
    assert eval_v(UtilitySpec(-1.0), 4.0) == pytest.approx(-4.0)
    assert eval_v(UtilitySpec(None), 1.0) == pytest.approx(-1.0)
    assert eval_v(UtilitySpec(None), math.e) == pytest.approx(-2.0)


def test_frozen_utility_values():
    u = UtilitySpec(0.5)
    assert eval_u(u, 4.0) == pytest.approx(4.0)
    assert eval_u(u, 0.0) == 0.0
    assert eval_u(u, -1.0) == -math.inf
    assert eval_u(UtilitySpec(-1.0), 0.0) == -math.inf
    assert eval_u(UtilitySpec(None), 0.0) == -math.inf
    assert marginal(u, 1.0) == pytest.approx(1.0)
    assert marginal(u, 0.25) == pytest.approx(2.0)
    assert inv_marginal(u, 2.0) == pytest.approx(0.25)


@pytest.mark.parametrize("u", UTILS, ids=lambda u: u.label)
@pytest.mark.parametrize("z", [1e-3, 0.1, 1.0, 7.5, 1e3])
def test_closed_form_matches_brute_force(u, z):
    exact = eval_v(u, z)
    assert abs(conjugate_oracle(u, z) - exact) <= 1e-6 * max(1.0, abs(exact))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        UtilitySpec(1.0)
    with pytest.raises(ValueError):
        UtilitySpec(0.0)
    with pytest.raises(ValueError):
        eval_v(UtilitySpec(0.5), 0.0)
    with pytest.raises(ValueError):
        UtilitySpec.parse("exp:1")
    assert UtilitySpec.parse("power:-1").p == -1.0
    assert UtilitySpec.parse("log").is_log


exponents = st.one_of(st.floats(-5.0, -0.05), st.floats(0.05, 0.95))


@settings(max_examples=200, deadline=None)
@given(p=exponents, x=st.floats(1e-3, 1e3), z=st.floats(1e-3, 1e3))
def test_fenchel_inequality(p, x, z):
    u = UtilitySpec(p)
    lhs = eval_u(u, x)
    rhs = eval_v(u, z) + x * z
    assert lhs <= rhs + 1e-9 * (1 + abs(lhs) + abs(rhs))


@settings(max_examples=200, deadline=None)
@given(p=exponents, z=st.floats(1e-3, 1e3))
def test_sup_attained_at_inverse_marginal(p, z):
    u = UtilitySpec(p)
    x = inv_marginal(u, z)
    assert eval_u(u, x) - x * z == pytest.approx(eval_v(u, z), rel=1e-9, abs=1e-12)
    assert marginal(u, x) == pytest.approx(z, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(p=exponents, z=st.floats(1e-2, 1e2))
def test_dual_derivative_matches_difference_quotient(p, z):
    u = UtilitySpec(p)
    h = 1e-6 * z
    fd = (eval_v(u, z + h) - eval_v(u, z - h)) / (2 * h)
    assert dual_derivative(u, z) == pytest.approx(fd, rel=1e-5)


@settings(max_examples=100, deadline=None)
@given(p=exponents, a=st.floats(1e-2, 1e2), b=st.floats(1e-2, 1e2))
def test_conjugate_is_convex_and_decreasing(p, a, b):
    u = UtilitySpec(p)
    lo, hi = sorted((a, b))
    mid = 0.5 * (lo + hi)
    va, vb, vm = eval_v(u, lo), eval_v(u, hi), eval_v(u, mid)
    tol = 1e-9 * (1 + abs(va) + abs(vb))
    assert vm <= 0.5 * (va + vb) + tol
    assert vb <= va + tol


def test_vectorized_shapes():
    z = np.array([[0.5, 1.0], [2.0, 4.0]])
    assert np.shape(eval_v(UtilitySpec(0.5), z)) == (2, 2)
    assert np.isscalar(eval_v(UtilitySpec(0.5), 2.0))
