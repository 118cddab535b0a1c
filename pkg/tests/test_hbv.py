import math

import numpy as np
import pytest

from hydrograd.gradcheck import grad_check
from hydrograd.hbv import (
    PARAM_BOUNDS,
    PARAM_NAMES,
    ForcingRecord,
    Forcings,
    HBVParameters,
    HBVState,
    default_initial_state,
    route,
    routing_weights,
    simulate,
    step,
    sum_discharge_builder,
    validate_parameters,
    water_balance,
)
from hydrograd.tape import FLOATS, Tape


def _params(**overrides):
    base = dict(
        TT=0.0, CFMAX=3.0, CFR=0.05, CWH=0.1, FC=200.0, BETA=2.0, LP=0.5,
        PERC=1.0, UZL=10.0, K0=0.2, K1=0.1, K2=0.05, MAXBAS=2.0,
    )
    base.update(overrides)
    return HBVParameters(**base)


def _random_params(rng, margin=0.0):
    vals = {}
    for name in PARAM_NAMES:
        lo, hi = PARAM_BOUNDS[name]
        pad = margin * (hi - lo)
        vals[name] = rng.uniform(lo + pad, hi - pad)
    return HBVParameters(**vals)


def test_validate_bounds_and_recession_warning():
    validate_parameters(_params())
    with pytest.raises(ValueError):
        validate_parameters(_params(FC=2000.0))
    with pytest.warns(UserWarning):
        validate_parameters(_params(K0=0.06, K1=0.3))


def test_step_without_drivers_changes_nothing():
    p = _params(K0=0.05, K1=0.01, K2=0.001, PERC=0.0)
    s = HBVState(SP=0.0, WC=0.0, SM=100.0, SUZ=0.0, SLZ=0.0)
    ns, flux = step(s, p, ForcingRecord(P=0.0, T=20.0, PET=0.0))
    assert (ns.SP, ns.WC, ns.SM) == (0.0, 0.0, 100.0)
    assert flux.rain == 0.0 and flux.melt == 0.0 and flux.ET == 0.0
    assert flux.recharge == 0.0 and flux.Q_generated == 0.0


def test_cold_day_routes_precipitation_to_snow():
    p = _params(TT=0.0)
    s = HBVState(SM=100.0)
    ns, flux = step(s, p, ForcingRecord(P=10.0, T=-20.0, PET=0.0))
    assert flux.rain < 1e-8 * 10.0
    assert abs(flux.snowfall - 10.0) < 1e-8 * 10.0
    assert ns.SP == pytest.approx(10.0, abs=1e-7)


def test_step_hand_example():
    # smooth partition at T - TT = 5 degC is within ~5e-4 of the hard split
    p = _params()
    s = HBVState(SP=0.0, WC=0.0, SM=100.0, SUZ=5.0, SLZ=20.0)
    ns, flux = step(s, p, ForcingRecord(P=10.0, T=5.0, PET=2.0))

    sig = 1.0 / (1.0 + math.exp(-10.0))
    rain = 10.0 * sig
    recharge = rain * (100.0 / 200.0) ** 2
    suz_after_perc = 5.0 + recharge - 1.0
    q1 = 0.1 * suz_after_perc

    assert flux.rain == pytest.approx(rain, abs=1e-12)
    assert flux.rain == pytest.approx(10.0, abs=1e-3)
    assert flux.recharge == pytest.approx(recharge, abs=1e-12)
    assert flux.recharge == pytest.approx(2.5, abs=1e-3)
    assert flux.ET == 2.0
    assert flux.percolation == 1.0
    assert flux.Q0 == 0.0
    assert flux.Q1 == pytest.approx(q1, abs=1e-12)
    assert flux.Q1 == pytest.approx(0.65, abs=1e-3)
    assert flux.Q2 == pytest.approx(0.05 * 21.0, abs=1e-12)
    assert flux.Q_generated == pytest.approx(1.7, abs=1e-3)
    assert ns.SM == pytest.approx(105.5, abs=1e-3)
    assert ns.SUZ == pytest.approx(5.85, abs=1e-3)
    assert ns.SLZ == pytest.approx(19.95, abs=1e-12)


def test_routing_weights_identity_for_maxbas_one():
    w = routing_weights(FLOATS, 1.0)
    assert w[0] == pytest.approx(1.0, abs=1e-15)
    assert all(abs(x) < 1e-15 for x in w[1:])
    routed, buf = route([3.0, 0.0, 5.0], 1.0)
    assert routed == pytest.approx([3.0, 0.0, 5.0], abs=1e-14)


def test_routing_weights_maxbas_two():
    # triangle on [0, 2]: both unit intervals integrate to 1/2
    w = routing_weights(FLOATS, 2.0)
    assert w[0] == pytest.approx(0.5, abs=1e-15)
    assert w[1] == pytest.approx(0.5, abs=1e-15)
    assert all(abs(x) < 1e-15 for x in w[2:])


def test_routing_weights_maxbas_three():
    # integrals of the unit triangle on [0, 3]: 2/9, 5/9, 2/9
    w = routing_weights(FLOATS, 3.0)
    assert w[0] == pytest.approx(2.0 / 9.0, abs=1e-14)
    assert w[1] == pytest.approx(5.0 / 9.0, abs=1e-14)
    assert w[2] == pytest.approx(2.0 / 9.0, abs=1e-14)


def test_routing_weights_sum_to_one_for_any_maxbas():
    for m in np.linspace(1.0, 7.0, 25):
        w = routing_weights(FLOATS, float(m))
        assert sum(w) == pytest.approx(1.0, abs=1e-12)
        assert all(x >= 0.0 for x in w)


def test_route_is_causal():
    routed, _ = route([0.0, 0.0, 10.0, 0.0, 0.0], 4.0)
    assert routed[0] == 0.0 and routed[1] == 0.0
    assert routed[2] > 0.0


def test_simulate_zero_forcing_zero_initial_gives_zero_discharge():
    n = 40
    f = Forcings([f"d{i}" for i in range(n)], np.zeros(n), np.full(n, 10.0), np.zeros(n))
    out = simulate(HBVState(SP=0, WC=0, SM=0, SUZ=0, SLZ=0), _params(), f)
    assert all(q == 0.0 for q in out.discharge)


def test_simulate_rejects_empty_or_short_series():
    f = Forcings(["2000-01-01"], np.array([1.0]), np.array([5.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        simulate(default_initial_state(), _params(), f, warmup=1)
    with pytest.raises(ValueError):
        simulate(default_initial_state(), _params(), Forcings([], [], [], []))


def test_impulse_recession_decays_monotonically():
    n = 60
    P = np.zeros(n)
    P[1] = 100.0
    f = Forcings([f"d{i}" for i in range(n)], P, np.full(n, 15.0), np.zeros(n))
    out = simulate(HBVState(SP=0, WC=0, SM=150.0, SUZ=0, SLZ=0), _params(MAXBAS=1.0), f)
    q = out.discharge
    assert all(v >= 0.0 for v in q)
    peak = int(np.argmax(q))
    assert all(q[i] >= q[i + 1] for i in range(peak, n - 1))


def test_monotone_recession_of_storages_without_input():
    n = 50
    f = Forcings([f"d{i}" for i in range(n)], np.zeros(n), np.full(n, 15.0), np.zeros(n))
    out = simulate(HBVState(SM=100.0, SUZ=40.0, SLZ=60.0), _params(), f)
    suz = [s.SUZ for s in out.states]
    slz = [s.SLZ for s in out.states]
    assert all(a >= b for a, b in zip(suz, suz[1:]))
    assert all(a >= b for a, b in zip(slz, slz[1:]))


def test_water_balance_closes_on_random_runs(short_forcings):
    rng = np.random.default_rng(17)
    for _ in range(10):
        p = _random_params(rng)
        init = HBVState(
            SP=rng.uniform(0, 50), WC=0.0, SM=rng.uniform(0, 1) * p.FC,
            SUZ=rng.uniform(0, 30), SLZ=rng.uniform(0, 80),
        )
        out = simulate(init, p, short_forcings)
        wb = water_balance(out, short_forcings, init)
        assert abs(wb.mass_residual) < 1e-9 * wb.total_precipitation
        assert abs(wb.routing_residual) < 1e-10 * wb.total_precipitation


def test_water_balance_zero_forcing_is_exact():
    n = 30
    f = Forcings([f"d{i}" for i in range(n)], np.zeros(n), np.full(n, -5.0), np.zeros(n))
    empty = HBVState(SP=0.0, WC=0.0, SM=0.0, SUZ=0.0, SLZ=0.0)
    out = simulate(empty, _params(), f)
    wb = water_balance(out, f, empty)
    assert wb.mass_residual == 0.0
    assert wb.routing_residual == 0.0
    # pure drainage from nonzero storages closes to summation dust
    init = HBVState(SP=10.0, WC=1.0, SM=80.0, SUZ=5.0, SLZ=20.0)
    out = simulate(init, _params(), f)
    wb = water_balance(out, f, init)
    assert abs(wb.mass_residual) < 1e-12


def test_flux_identity_and_non_negativity(short_forcings):
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = _random_params(rng)
        init = HBVState(SM=rng.uniform(0, 1) * p.FC, SUZ=rng.uniform(0, 40), SLZ=rng.uniform(0, 40))
        out = simulate(init, p, short_forcings)
        for flux, state in zip(out.fluxes, out.states):
            for name in ("rain", "snowfall", "melt", "refreeze", "recharge", "ET",
                         "percolation", "Q0", "Q1", "Q2", "Q_generated", "Q_routed"):
                assert getattr(flux, name) >= 0.0, name
            assert flux.Q_generated == pytest.approx(flux.Q0 + flux.Q1 + flux.Q2, abs=1e-12)
            for storage in state.storages():
                assert storage >= 0.0
            assert state.SM <= p.FC * (1.0 + 1e-12)
            assert all(x >= 0.0 for x in state.routing_buffer)


def test_non_negativity_at_extreme_recession_corner(short_forcings):
    # K0 + K1 > 1 with UZL = 0 would overdraw the upper zone without the caps
    p = _params(K0=0.9, K1=0.5, UZL=0.0, PERC=0.0)
    out = simulate(HBVState(SM=150.0, SUZ=30.0, SLZ=10.0), p, short_forcings)
    for state in out.states:
        assert state.SUZ >= 0.0
    wb = water_balance(out, short_forcings, HBVState(SM=150.0, SUZ=30.0, SLZ=10.0))
    assert abs(wb.mass_residual) < 1e-9 * wb.total_precipitation


def test_smooth_partition_close_to_hard_split_beyond_five_degrees():
    p = _params(TT=0.5)
    for dT in (5.01, 6.0, 10.0, 25.0):
        for sign in (1.0, -1.0):
            _, flux = step(HBVState(SM=50.0), p, ForcingRecord(P=8.0, T=0.5 + sign * dT, PET=0.0))
            hard_rain = 8.0 if sign > 0 else 0.0
            assert abs(flux.rain - hard_rain) < 1e-4 * 8.0


def test_traced_simulation_matches_untraced_bitwise(short_forcings):
    p = _params()
    init = default_initial_state()
    plain = simulate(init, p, short_forcings)
    tape = Tape()
    traced_params = HBVParameters.from_vector(
        [tape.leaf(v, k) for k, v in enumerate(p.as_vector())]
    )
    traced = simulate(init, traced_params, short_forcings, bk=tape, collect=False)
    assert [tape.value(i) for i in traced.discharge] == plain.discharge


def test_gradients_match_finite_differences(short_forcings):
    rng = np.random.default_rng(31)
    builder = sum_discharge_builder(short_forcings)
    for _ in range(3):
        p = _random_params(rng, margin=1e-3)
        report = grad_check(builder, p.as_vector(), 1e-6)
        assert report.flag_rate() < 0.10
        assert report.max_rel_error() < 1e-5


def test_gradient_of_routing_in_maxbas(short_forcings):
    # MAXBAS well inside (1, 7) and away from the integer kernel kinks
    builder = sum_discharge_builder(short_forcings)
    p = _params(MAXBAS=2.6).as_vector()
    report = grad_check(builder, p, 1e-6)
    row = report.rows[PARAM_NAMES.index("MAXBAS")]
    assert not row.flagged
    assert row.rel_error < 1e-5
