"""Differentiable HBV bucket model: snow, soil moisture, two groundwater zones,
and a triangular unit-hydrograph router, stepped daily.

Every flux is built from backend operations, so a simulation traced on a
:class:`~hydrograd.tape.Tape` yields exact reverse-mode gradients of any
downstream scalar with respect to all thirteen parameters and the initial
state, while the same code runs at plain-float speed with the default
backend.

Update order within a step is fixed (and is the order the worked examples in
the test suite assume): precipitation partition -> snowpack -> soil moisture
(recharge before evapotranspiration) -> upper zone (percolation, then quick
and interflow outlets both computed from post-percolation storage) -> lower
zone.  The rain/snow partition is smoothed over ~0.5 degC so the threshold
temperature stays trainable; all other thresholds keep hard min/max with the
tape's subgradient conventions.

One guard goes beyond the classical formulation: the two upper-zone outflows
are capped at available storage (quickflow first).  The caps are slack
whenever K0 + K1 <= 1, leaving the standard rates untouched, and keep every
storage non-negative for arbitrary in-range parameters.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .tape import FLOATS

PARAM_NAMES = (
    "TT",
    "CFMAX",
    "CFR",
    "CWH",
    "FC",
    "BETA",
    "LP",
    "PERC",
    "UZL",
    "K0",
    "K1",
    "K2",
    "MAXBAS",
)

# standard HBV calibration ranges; the synthetic generator and the bounded
# network outputs share this one table
PARAM_BOUNDS = {
    "TT": (-2.5, 2.5),  # rain/snow threshold temperature, degC
    "CFMAX": (0.5, 10.0),  # degree-day melt factor, mm/degC/day
    "CFR": (0.0, 0.1),  # refreezing coefficient, -
    "CWH": (0.0, 0.2),  # liquid holding capacity of the snowpack, -
    "FC": (50.0, 1000.0),  # soil field capacity, mm
    "BETA": (1.0, 6.0),  # recharge shape exponent, -
    "LP": (0.2, 1.0),  # ET reduction threshold fraction, -
    "PERC": (0.0, 10.0),  # max percolation, mm/day
    "UZL": (0.0, 100.0),  # quickflow threshold, mm
    "K0": (0.05, 0.9),  # quickflow recession, 1/day
    "K1": (0.01, 0.5),  # interflow recession, 1/day
    "K2": (0.001, 0.2),  # baseflow recession, 1/day
    "MAXBAS": (1.0, 7.0),  # routing base length, days
}

ROUTING_LEN = 7
# floor on SM/FC inside the recharge power law; keeps ln() admissible at SM=0
_RECHARGE_EPS = 1e-8
# 1/width of the sigmoid rain/snow partition (width 0.5 degC)
_PARTITION_SHARPNESS = 2.0


@dataclass
class HBVParameters:
    """The thirteen model parameters; plain floats or tape handles."""

    TT: float
    CFMAX: float
    CFR: float
    CWH: float
    FC: float
    BETA: float
    LP: float
    PERC: float
    UZL: float
    K0: float
    K1: float
    K2: float
    MAXBAS: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def as_vector(self) -> list:
        return [getattr(self, name) for name in PARAM_NAMES]

    @classmethod
    def from_vector(cls, values) -> "HBVParameters":
        values = list(values)
        if len(values) != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} values, got {len(values)}")
        return cls(**dict(zip(PARAM_NAMES, values)))

    @classmethod
    def midpoints(cls) -> "HBVParameters":
        return cls(**{n: 0.5 * (lo + hi) for n, (lo, hi) in PARAM_BOUNDS.items()})


def validate_parameters(p: HBVParameters) -> None:
    """Bounds check; the recession ordering K0 > K1 > K2 only warns."""
    for name in PARAM_NAMES:
        lo, hi = PARAM_BOUNDS[name]
        v = getattr(p, name)
        if not lo <= v <= hi:
            raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
    if not (p.K0 > p.K1 > p.K2):
        warnings.warn(
            f"recession constants not ordered K0 > K1 > K2 ({p.K0}, {p.K1}, {p.K2})",
            stacklevel=2,
        )


@dataclass
class HBVState:
    """Storage state, mm: snowpack, liquid water in snow, soil moisture,
    upper and lower groundwater zones, and in-flight routed runoff."""

    SP: float = 0.0
    WC: float = 0.0
    SM: float = 50.0
    SUZ: float = 10.0
    SLZ: float = 50.0
    routing_buffer: tuple = (0.0,) * ROUTING_LEN

    def storages(self) -> tuple:
        return (self.SP, self.WC, self.SM, self.SUZ, self.SLZ)


def default_initial_state() -> HBVState:
    return HBVState()


@dataclass
class ForcingRecord:
    """One day of drivers: precipitation and PET in mm/day, temperature degC."""

    P: float
    T: float
    PET: float


@dataclass
class Forcings:
    """Daily forcing series with ISO dates; P and PET must be non-negative."""

    dates: list
    P: np.ndarray
    T: np.ndarray
    PET: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        self.PET = np.asarray(self.PET, dtype=float)
        n = len(self.dates)
        if not (len(self.P) == len(self.T) == len(self.PET) == n):
            raise ValueError("forcing series lengths differ")
        if np.any(self.P < 0.0):
            raise ValueError("negative precipitation")
        if np.any(self.PET < 0.0):
            raise ValueError("negative PET")

    def __len__(self) -> int:
        return len(self.dates)

    def record(self, t: int) -> ForcingRecord:
        return ForcingRecord(float(self.P[t]), float(self.T[t]), float(self.PET[t]))

    def head(self, n: int) -> "Forcings":
        return Forcings(self.dates[:n], self.P[:n], self.T[:n], self.PET[:n])


@dataclass
class FluxRecord:
    """Per-day fluxes, mm/day; Q_routed is filled in after routing."""

    rain: float
    snowfall: float
    melt: float
    refreeze: float
    recharge: float
    ET: float
    percolation: float
    Q0: float
    Q1: float
    Q2: float
    Q_generated: float
    Q_routed: float = None


@dataclass
class SimulationOutput:
    """Routed discharge plus untrained diagnostics for every simulated day."""

    discharge: list
    fluxes: list
    states: list
    final_state: HBVState
    warmup: int = 0


def _precompute(bk, p: HBVParameters):
    # parameter-only subexpressions hoisted out of the day loop
    inv_fc = bk.rdivc(1.0, p.FC)
    inv_fclp = bk.rdivc(1.0, bk.mul(p.FC, p.LP))
    cfr_cfmax = bk.mul(p.CFR, p.CFMAX)
    return inv_fc, inv_fclp, cfr_cfmax


def step(
    state: HBVState,
    params: HBVParameters,
    forcing: ForcingRecord,
    bk=FLOATS,
    pre=None,
    recharge_fn=None,
    percolation_fn=None,
):
    """Advance the buckets one day; returns (new state, fluxes).

    With a Tape backend, ``state`` storages and ``params`` fields must be
    node handles on that tape.  ``recharge_fn(bk, sm_over_fc)`` optionally
    replaces the (SM/FC)**BETA recharge fraction (BETA then has no effect);
    ``percolation_fn(bk, suz)`` optionally replaces min(PERC, SUZ).
    """
    if pre is None:
        pre = _precompute(bk, params)
    inv_fc, inv_fclp, cfr_cfmax = pre
    P, T, PET = forcing.P, forcing.T, forcing.PET

    # precipitation partition, smooth across ~0.5 degC around TT
    dT = bk.rsubc(T, params.TT)
    rain = bk.mulc(bk.sigmoid(bk.mulc(dT, _PARTITION_SHARPNESS)), P)
    snowfall = bk.rsubc(P, rain)

    # snowpack with liquid water store
    melt = bk.minv(bk.mul(params.CFMAX, bk.relu(dT)), state.SP)
    refreeze = bk.minv(bk.mul(cfr_cfmax, bk.relu(bk.mulc(dT, -1.0))), state.WC)
    sp = bk.add(bk.add(bk.sub(state.SP, melt), snowfall), refreeze)
    wc = bk.add(bk.sub(state.WC, refreeze), melt)
    overflow = bk.relu(bk.sub(wc, bk.mul(params.CWH, sp)))
    wc = bk.sub(wc, overflow)

    # soil moisture: beta-curve recharge from old SM, then saturation excess,
    # then demand-limited ET
    inflow = bk.add(rain, overflow)
    sm_frac = bk.mul(state.SM, inv_fc)
    if recharge_fn is None:
        frac = bk.exp(bk.mul(params.BETA, bk.log(bk.maxc(sm_frac, _RECHARGE_EPS))))
    else:
        frac = recharge_fn(bk, sm_frac)
    recharge = bk.mul(inflow, frac)
    sm = bk.add(state.SM, bk.sub(inflow, recharge))
    excess = bk.relu(bk.sub(sm, params.FC))
    sm = bk.sub(sm, excess)
    recharge = bk.add(recharge, excess)
    et = bk.minv(bk.mulc(bk.minc(bk.mul(sm, inv_fclp), 1.0), PET), sm)
    sm = bk.sub(sm, et)

    # upper zone: percolation first, then both outlets from the same storage;
    # caps (slack when K0 + K1 <= 1) stop overdraw at extreme recessions
    suz = bk.add(state.SUZ, recharge)
    if percolation_fn is None:
        perc = bk.minv(params.PERC, suz)
    else:
        perc = percolation_fn(bk, suz)
    suz = bk.sub(suz, perc)
    q0 = bk.minv(bk.mul(params.K0, bk.relu(bk.sub(suz, params.UZL))), suz)
    rest = bk.sub(suz, q0)
    q1 = bk.minv(bk.mul(params.K1, suz), rest)
    suz = bk.sub(rest, q1)

    # lower zone: linear reservoir
    slz = bk.add(state.SLZ, perc)
    q2 = bk.mul(params.K2, slz)
    slz = bk.sub(slz, q2)

    qgen = bk.add(bk.add(q0, q1), q2)
    new_state = HBVState(sp, wc, sm, suz, slz, state.routing_buffer)
    flux = FluxRecord(
        rain=rain,
        snowfall=snowfall,
        melt=melt,
        refreeze=refreeze,
        recharge=recharge,
        ET=et,
        percolation=perc,
        Q0=q0,
        Q1=q1,
        Q2=q2,
        Q_generated=qgen,
    )
    return new_state, flux


def routing_weights(bk, maxbas):
    """Seven kernel weights from the unit triangle on [0, MAXBAS].

    Weight i integrates the triangle over [i-1, i] using the cumulative form
    F(t) = (2/M^2) * (t1^2 + t2*(M - t2)) with t1 = min(t, M/2) and
    t2 = min(max(t - M/2, 0), M/2); the weights are then renormalized to
    sum to one.  Differentiable in MAXBAS.
    """
    half = bk.mulc(maxbas, 0.5)
    scale = bk.rdivc(2.0, bk.mul(maxbas, maxbas))
    f_prev = None
    raw = []
    for t in range(1, ROUTING_LEN + 1):
        t1 = bk.minc(half, float(t))
        t2 = bk.minv(bk.relu(bk.rsubc(float(t), half)), half)
        f_t = bk.mul(scale, bk.add(bk.mul(t1, t1), bk.mul(t2, bk.sub(maxbas, t2))))
        raw.append(f_t if f_prev is None else bk.sub(f_t, f_prev))
        f_prev = f_t
    total = raw[0]
    for r in raw[1:]:
        total = bk.add(total, r)
    return [bk.div(r, total) for r in raw]


def route(q_generated, maxbas, bk=FLOATS, initial_buffer=None):
    """Convolve generated runoff with the triangular kernel, causally.

    Returns (routed series, final buffer).  ``initial_buffer[k]`` is runoff
    already scheduled for day k of the series; the final buffer holds water
    still in flight after the last day, so the two together conserve mass
    exactly: sum(routed) + sum(final buffer) = sum(q_generated) (+ whatever
    the initial buffer carried in).
    """
    weights = routing_weights(bk, maxbas)
    zero = bk.const(0.0)
    if initial_buffer is None:
        buf = [zero] * ROUTING_LEN
    else:
        buf = list(initial_buffer)
        if len(buf) != ROUTING_LEN:
            raise ValueError(f"routing buffer must have {ROUTING_LEN} entries")
    routed = []
    for q in q_generated:
        routed.append(bk.add(buf[0], bk.mul(weights[0], q)))
        buf = [
            bk.add(buf[k + 1], bk.mul(weights[k + 1], q)) for k in range(ROUTING_LEN - 1)
        ] + [zero]
    return routed, buf


def simulate(
    initial: HBVState,
    params: HBVParameters,
    forcings: Forcings,
    warmup: int = 0,
    bk=FLOATS,
    collect: bool = True,
    recharge_fn=None,
    percolation_fn=None,
) -> SimulationOutput:
    """Sequential daily stepping over the whole series, then routing.

    Discharge and fluxes cover every day; ``warmup`` is carried on the output
    so downstream metrics can exclude the spin-up window.  With
    ``collect=False`` only the discharge series and final state are kept
    (leaner for traced training runs).
    """
    n = len(forcings)
    if n == 0:
        raise ValueError("empty forcing series")
    if not 0 <= warmup < n:
        raise ValueError(f"warmup {warmup} must be shorter than the series ({n})")
    state = HBVState(
        bk.const(float(initial.SP)),
        bk.const(float(initial.WC)),
        bk.const(float(initial.SM)),
        bk.const(float(initial.SUZ)),
        bk.const(float(initial.SLZ)),
        tuple(bk.const(float(x)) for x in initial.routing_buffer),
    )
    pre = _precompute(bk, params)
    P = forcings.P.tolist()
    T = forcings.T.tolist()
    PET = forcings.PET.tolist()

    qgen = []
    fluxes = [] if collect else None
    states = [] if collect else None
    for t in range(n):
        state, flux = step(
            state,
            params,
            ForcingRecord(P[t], T[t], PET[t]),
            bk,
            pre,
            recharge_fn,
            percolation_fn,
        )
        qgen.append(flux.Q_generated)
        if collect:
            fluxes.append(flux)
            states.append(state)

    routed, final_buf = route(qgen, params.MAXBAS, bk, initial_buffer=state.routing_buffer)
    if collect:
        for flux, q in zip(fluxes, routed):
            flux.Q_routed = q
    final_state = replace(state, routing_buffer=tuple(final_buf))
    return SimulationOutput(routed, fluxes, states, final_state, warmup)


@dataclass
class WaterBalance:
    """Closure residuals of one simulation, mm over the whole run."""

    mass_residual: float  # P - ET - Q_generated - storage change
    routing_residual: float  # Q_routed + in-flight tail - Q_generated
    total_precipitation: float


def water_balance(output: SimulationOutput, forcings: Forcings, initial: HBVState) -> WaterBalance:
    """Conservation check over an untraced run (requires collect=True)."""
    if output.fluxes is None:
        raise ValueError("water_balance needs a simulation run with collect=True")
    total_p = sum(forcings.P.tolist())
    total_et = sum(f.ET for f in output.fluxes)
    total_qgen = sum(f.Q_generated for f in output.fluxes)
    final = output.final_state
    d_storage = sum(final.storages()) - sum(
        float(x) for x in HBVState(initial.SP, initial.WC, initial.SM, initial.SUZ, initial.SLZ).storages()
    )
    mass = total_p - total_et - total_qgen - d_storage
    tail = sum(final.routing_buffer) - sum(float(x) for x in initial.routing_buffer)
    routing = sum(output.discharge) + tail - total_qgen
    return WaterBalance(mass, routing, total_p)


def sum_discharge_builder(forcings: Forcings, initial: HBVState = None):
    """Expression builder for grad_check: total discharge as a function of the
    thirteen parameters (leaves in PARAM_NAMES order)."""
    if initial is None:
        initial = default_initial_state()

    def build(tape, leaf_vars):
        params = HBVParameters.from_vector([v.i for v in leaf_vars])
        out = simulate(initial, params, forcings, bk=tape, collect=False)
        total = out.discharge[0]
        for q in out.discharge[1:]:
            total = tape.add(total, q)
        return total

    return build
