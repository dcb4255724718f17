import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddelab import scalar_maps as sm
from ddelab.dde_solver import NamedModel, normalize_model
from ddelab.errors import DivisionByZeroAtCriticalPoint, NonFiniteValue, OutOfDomain
from oracles import fd_schwarzian, tanh_cycle

TANH = sm.tanh()

# positive roots of zeta*tanh(b) = b, frozen from mpmath.findroot at 30 digits
B_CYCLE = {1.2: 0.790283592486905, 1.01: 0.173378397072127, 1.04: 0.347799350832915,
           1.0025: 0.0866241944922344, 1.0001: 0.0173206812818830}


def builtin_families():
    return [TANH, sm.lasota_wazewska_shifted(1.0), sm.lasota_wazewska_shifted(2.5),
            normalize_model(NamedModel("MackeyGlass", 2.0, 1.0, 3.0))[0],
            normalize_model(NamedModel("MackeyGlassHill", 2.0, 1.0, 4.0))[0],
            normalize_model(NamedModel("Nicholson", 10.0, 1.0))[0]]


def test_frozen_cycle_values_match_live_oracle():
    for z, b in B_CYCLE.items():
        assert tanh_cycle(z) == pytest.approx(b, rel=1e-13)


@pytest.mark.parametrize("x", [0.0, 1.0, -2.5])
def test_schwarzian_tanh_is_minus_two(x):
    assert sm.schwarzian(TANH, x) == pytest.approx(-2.0, abs=1e-12)


def test_schwarzian_zero_for_locally_linear_map():
    assert sm.schwarzian(sm.linear(), 0.3) == 0.0


def test_schwarzian_raises_at_critical_point():
    hill, _ = normalize_model(NamedModel("MackeyGlassHill", 2.0, 1.0, 4.0))
    with pytest.raises(DivisionByZeroAtCriticalPoint):
        sm.schwarzian(hill, hill.critical_point)


@pytest.mark.parametrize("nl", builtin_families(), ids=lambda nl: nl.family)
def test_schwarzian_matches_finite_differences(nl):
    rng = np.random.default_rng(3)
    xs = rng.uniform(-0.5, 2.0, 100)
    if nl.critical_point is not None:
        xs = xs[np.abs(xs - nl.critical_point) > 0.2]
    f = lambda x: float(nl.eval(x))  # noqa: E731
    for x in xs:
        exact = sm.schwarzian(nl, x)
        assert fd_schwarzian(f, x) == pytest.approx(exact, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("nl", builtin_families(), ids=lambda nl: nl.family)
def test_builtin_families_are_normalised(nl):
    assert abs(float(nl.eval(0.0))) < 1e-12
    assert abs(float(nl.d1(0.0)) + 1.0) < 1e-12


def test_hypotheses_tanh_all_ok():
    rep = sm.check_hypotheses(TANH, (-5, 5), 1000)
    assert rep.ok and rep.witnesses == []


def test_hypotheses_positive_feedback_fails_h1():
    nl = sm.custom(lambda x: x, lambda x: np.ones_like(x), lambda x: 0 * x, lambda x: 0 * x)
    rep = sm.check_hypotheses(nl, (-1, 1), 100)
    assert not rep.h1_ok
    sign = [(x, v) for x, q, v in rep.witnesses if q == "x*f(x)"]
    assert sign and all(x != 0 and v > 0 for x, v in sign)


def test_hypotheses_cubic_witness_beyond_one():
    nl = sm.custom(lambda x: -x + x ** 3, lambda x: -1 + 3 * x ** 2, lambda x: 6 * x,
                   lambda x: 6 + 0 * x, lower_bound=-math.inf)
    rep = sm.check_hypotheses(nl, (-2, 2), 500)
    assert not rep.h1_ok
    xs = [x for x, q, _ in rep.witnesses if q == "x*f(x)"]
    assert xs and all(abs(x) >= 1.0 for x in xs)


def test_hypotheses_report_serialises():
    d = sm.check_hypotheses(TANH).to_dict()
    assert set(d) >= {"h1_ok", "h2_ok", "h3_ok", "witnesses"}


def test_hypotheses_window_must_contain_zero():
    with pytest.raises(OutOfDomain):
        sm.check_hypotheses(TANH, (1, 2))


@pytest.mark.parametrize("nl", builtin_families(), ids=lambda nl: nl.family)
def test_witnesses_empty_iff_flags(nl):
    rep = sm.check_hypotheses(nl, (-0.5, 3.0), 2000)
    assert (rep.witnesses == []) == rep.ok


def test_attractor_trivial_below_one():
    iv = sm.attractor_interval(TANH, 1.0)
    assert (iv.a, iv.b) == (0.0, 0.0)


def test_attractor_tanh_cycle():
    iv = sm.attractor_interval(TANH, 1.2, 1e-10)
    assert iv.b == pytest.approx(B_CYCLE[1.2], abs=1e-12)
    assert iv.a == pytest.approx(-B_CYCLE[1.2], abs=1e-12)
    assert iv.residual < 1e-10


def test_attractor_small_gain():
    iv = sm.attractor_interval(TANH, 1.01, 1e-12)
    assert iv.b == pytest.approx(B_CYCLE[1.01], abs=1e-12)
    # the leading-order expansion sqrt(3(zeta-1)/zeta) is within 1 %
    assert iv.b == pytest.approx(math.sqrt(3 * 0.01 / 1.01), rel=0.01)


@given(st.floats(1.001, 1.2))
def test_attractor_cycle_residual(zeta):
    for nl in builtin_families():
        iv = sm.attractor_interval(nl, zeta, 1e-10)
        r = abs(zeta * float(nl.eval(iv.a)) - iv.b) + abs(zeta * float(nl.eval(iv.b)) - iv.a)
        assert r <= 1e-9
        assert iv.a <= 0 <= iv.b


@given(st.floats(1.001, 3.0), st.floats(1.001, 3.0))
def test_attractor_grows_with_gain(z1, z2):
    z1, z2 = sorted((z1, z2))
    a1, a2 = sm.attractor_interval(TANH, z1), sm.attractor_interval(TANH, z2)
    assert a2.a <= a1.a + 1e-12 and a1.b <= a2.b + 1e-12


@given(st.floats(1.01, 2.5), st.floats(-10, 10))
def test_iterates_absorbed_by_attractor(zeta, x0):
    tol = 1e-6
    iv = sm.attractor_interval(TANH, zeta)
    orbit = sm.iterate_map(TANH, zeta, x0, 4000)
    inside = (orbit >= iv.a - tol) & (orbit <= iv.b + tol)
    first = int(np.argmax(inside))
    assert inside[first] and inside[first:].all()


def test_iterate_converges_at_unit_gain():
    orbit = sm.iterate_map(TANH, 1.0, 0.5, 50)
    assert len(orbit) == 51 and abs(orbit[50]) < abs(orbit[0])


def test_iterate_tail_alternates_on_cycle():
    orbit = sm.iterate_map(TANH, 1.2, 0.3, 200)
    b = B_CYCLE[1.2]
    tail = orbit[-20:]
    assert np.all(np.abs(np.abs(tail) - b) < 1e-6)
    assert np.all(np.sign(tail[1:]) != np.sign(tail[:-1]))


def test_iterate_zero_is_fixed():
    assert not sm.iterate_map(sm.lasota_wazewska_shifted(), 3.0, 0.0, 10).any()


def test_iterate_overflow_is_reported():
    nl = sm.custom(lambda x: -np.exp(np.abs(x)) * x, None, None, None)
    with pytest.raises(NonFiniteValue), np.errstate(over="ignore"):
        sm.iterate_map(nl, 3.0, 2.0, 50)


def test_amplitude_scaling_rows():
    rows = sm.amplitude_scaling(TANH, [1.04])
    assert rows[0][2] == pytest.approx(math.sqrt(3) / math.sqrt(1.04), rel=0.03)
    assert sm.amplitude_scaling(TANH, [1.0001])[0][2] == pytest.approx(math.sqrt(3), rel=1e-3)


def test_amplitude_scaling_monotone_and_bounded():
    rows = sm.amplitude_scaling(TANH, [1.04, 1.01, 1.0025])
    ratios = [r[2] for r in rows]
    assert ratios == sorted(ratios, reverse=True)
    assert max(ratios) < 1.76
    assert sm.empirical_k1(rows) == max(ratios)


def test_amplitude_scaling_rejects_unit_gain():
    with pytest.raises(OutOfDomain):
        sm.amplitude_scaling(TANH, [1.0])
