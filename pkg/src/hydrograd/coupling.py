"""Couplings between the process model and neural components.

Four modes:

* ``parameter_learning`` -- one network shared across basins maps static
  attributes to a subset of the physical parameters (the remainder come from
  ``fixed_params``); the routing length MAXBAS is never network-derived.
* ``module_replacement`` / ``constitutive_learning`` -- one network shared
  across basins replaces a flux law inside the step equations: the recharge
  fraction (SM/FC)**BETA is swapped for sigmoid(NN(SM/FC)), or percolation
  for SUZ*sigmoid(NN(SUZ/(SUZ+10))).  Both modes use the same hook plumbing;
  they are listed separately because they answer different modeling
  questions (swap a module vs. learn a term of the governing equation).
* ``direct_calibration`` -- no network; a raw 13-vector per basin is the
  trainable object, squashed elementwise into the parameter ranges.

In every mode the full diagnostic flux record stays available.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .dataio import Basin, BasinAttributes
from .hbv import (
    PARAM_BOUNDS,
    PARAM_NAMES,
    HBVParameters,
    HBVState,
    default_initial_state,
    simulate,
)
from .tape import FLOATS

MODES = (
    "parameter_learning",
    "module_replacement",
    "constitutive_learning",
    "direct_calibration",
)
REPLACEABLE_FLUXES = ("recharge_fraction", "percolation")
# soft scale (mm) for the percolation hook input SUZ/(SUZ+scale)
_PERC_INPUT_SCALE = 10.0


def default_learned_params() -> tuple:
    """Every parameter except the routing length."""
    return tuple(n for n in PARAM_NAMES if n != "MAXBAS")


@dataclass
class CouplingSpec:
    mode: str
    learned_params: tuple = ()
    replaced_flux: str = "recharge_fraction"
    fixed_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown coupling mode {self.mode!r}")
        self.learned_params = tuple(self.learned_params)
        for name in list(self.learned_params) + list(self.fixed_params):
            if name not in PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
        if self.mode == "parameter_learning":
            if not self.learned_params:
                raise ValueError("parameter_learning needs a non-empty learned set")
            if "MAXBAS" in self.learned_params:
                raise ValueError("MAXBAS is never network-derived; fix it instead")
            learned, fixed = set(self.learned_params), set(self.fixed_params)
            if learned & fixed:
                raise ValueError(f"parameters both learned and fixed: {sorted(learned & fixed)}")
            missing = set(PARAM_NAMES) - learned - fixed
            if missing:
                raise ValueError(f"parameters neither learned nor fixed: {sorted(missing)}")
        elif self.mode in ("module_replacement", "constitutive_learning"):
            if self.replaced_flux not in REPLACEABLE_FLUXES:
                raise ValueError(f"unknown replaced flux {self.replaced_flux!r}")
            if self.learned_params:
                raise ValueError(f"{self.mode} does not learn physical parameters")
        else:  # direct_calibration
            if self.learned_params or self.fixed_params:
                raise ValueError("direct_calibration calibrates all 13 parameters")

    def bounds_arrays(self):
        lo = [PARAM_BOUNDS[n][0] for n in self.learned_params]
        hi = [PARAM_BOUNDS[n][1] for n in self.learned_params]
        return lo, hi


# --------------------------------------------------------------------- #
# the spec'd coupling operations (plain-float surface)
# --------------------------------------------------------------------- #

def derive_parameters(nn: mlp.MLPWeights, attributes: BasinAttributes, spec: CouplingSpec) -> HBVParameters:
    """theta = bound(NN(A)) for the learned subset, fixed values elsewhere."""
    layers = mlp.layer_handles(nn)
    return _derive(FLOATS, layers, nn.hidden_activation, attributes.values, spec)


def _derive(bk, layers, activation, attr_values, spec: CouplingSpec):
    n_out = len(layers[-1][0])
    if n_out != len(spec.learned_params):
        raise ValueError(
            f"network output dim {n_out} != {len(spec.learned_params)} learned parameters"
        )
    xs = [bk.const(float(a)) for a in attr_values]
    raw = mlp.forward(bk, layers, xs, activation)
    lo, hi = spec.bounds_arrays()
    bounded = mlp.bound(bk, raw, lo, hi)
    values = dict(zip(spec.learned_params, bounded))
    for name, v in spec.fixed_params.items():
        values[name] = bk.const(float(v))
    return HBVParameters(**values)


def recharge_override(nn: mlp.MLPWeights, sm_fraction: float) -> float:
    """sigmoid(NN(SM/FC)): the learnable recharge fraction in [0, 1]."""
    return _recharge_hook(mlp.layer_handles(nn), nn.hidden_activation)(FLOATS, sm_fraction)


def _recharge_hook(layers, activation):
    if len(layers[0][0][0]) != 1:
        raise ValueError("recharge network must take a single input")

    def hook(bk, sm_fraction):
        return bk.sigmoid(mlp.forward(bk, layers, [sm_fraction], activation)[0])

    return hook


def _percolation_hook(layers, activation):
    def hook(bk, suz):
        u = bk.div(suz, bk.addc(suz, _PERC_INPUT_SCALE))
        return bk.mul(suz, bk.sigmoid(mlp.forward(bk, layers, [u], activation)[0]))

    return hook


def extract_learned_relation(nn: mlp.MLPWeights, input_grid) -> list:
    """Evaluate the squashed network on each grid point; order preserved."""
    hook = _recharge_hook(mlp.layer_handles(nn), nn.hidden_activation)
    return [(float(x), hook(FLOATS, float(x))) for x in input_grid]


def direct_calibrate_params(raw) -> HBVParameters:
    """Squash a raw 13-vector elementwise into the parameter ranges."""
    raw = list(raw)
    if len(raw) != len(PARAM_NAMES):
        raise ValueError(f"expected {len(PARAM_NAMES)} raw values, got {len(raw)}")
    lo = [PARAM_BOUNDS[n][0] for n in PARAM_NAMES]
    hi = [PARAM_BOUNDS[n][1] for n in PARAM_NAMES]
    return HBVParameters.from_vector(mlp.bound(FLOATS, raw, lo, hi))


def _params_on_tape(bk, params: HBVParameters) -> HBVParameters:
    return HBVParameters(**{n: bk.const(float(getattr(params, n))) for n in PARAM_NAMES})


# --------------------------------------------------------------------- #
# the hybrid model driven by the training loop
# --------------------------------------------------------------------- #

@dataclass
class HybridModel:
    """Process model plus its learnable units, per the coupling spec.

    ``nn`` holds the shared network in the three NN modes; ``direct_raw``
    maps basin id -> raw 13-vector in direct calibration; ``basin_params``
    supplies the frozen physical parameters per basin in the flux modes.
    """

    spec: CouplingSpec
    nn: mlp.MLPWeights = None
    direct_raw: dict = None
    basin_params: dict = None
    initial_state: HBVState = field(default_factory=default_initial_state)

    def __post_init__(self):
        if self.spec.mode == "direct_calibration":
            if self.direct_raw is None:
                raise ValueError("direct_calibration needs per-basin raw vectors")
        elif self.nn is None:
            raise ValueError(f"{self.spec.mode} needs network weights")
        if self.spec.mode in ("module_replacement", "constitutive_learning"):
            if self.basin_params is None and not self.spec.fixed_params:
                raise ValueError(f"{self.spec.mode} needs per-basin or fixed parameters")

    # ---- flat trainable vector ---------------------------------------- #

    def _raw_ids(self):
        return sorted(self.direct_raw)

    def n_trainable(self) -> int:
        if self.spec.mode == "direct_calibration":
            return len(self.direct_raw) * len(PARAM_NAMES)
        return self.nn.n_params()

    def flat_params(self) -> np.ndarray:
        if self.spec.mode == "direct_calibration":
            return np.concatenate([self.direct_raw[b] for b in self._raw_ids()])
        return mlp.flatten(self.nn)

    def with_flat(self, flat: np.ndarray) -> "HybridModel":
        if flat.size != self.n_trainable():
            raise ValueError(f"flat vector size {flat.size} != {self.n_trainable()}")
        if self.spec.mode == "direct_calibration":
            raw = {
                b: flat[i * len(PARAM_NAMES) : (i + 1) * len(PARAM_NAMES)].copy()
                for i, b in enumerate(self._raw_ids())
            }
            return HybridModel(self.spec, self.nn, raw, self.basin_params, self.initial_state)
        return HybridModel(
            self.spec,
            mlp.unflatten(self.nn, flat),
            self.direct_raw,
            self.basin_params,
            self.initial_state,
        )

    # ---- per-basin parameterization ------------------------------------ #

    def _fixed_params_for(self, basin: Basin) -> HBVParameters:
        if self.basin_params is not None:
            try:
                return self.basin_params[basin.basin_id]
            except KeyError:
                raise KeyError(f"no fixed parameters for basin {basin.basin_id}") from None
        return HBVParameters(**{n: float(self.spec.fixed_params[n]) for n in PARAM_NAMES})

    def parameters_for(self, basin: Basin) -> HBVParameters:
        """Physical parameters this model assigns to one basin (plain floats)."""
        mode = self.spec.mode
        if mode == "direct_calibration":
            return direct_calibrate_params(self.direct_raw[basin.basin_id])
        if mode == "parameter_learning":
            if basin.attributes is None:
                raise ValueError(f"basin {basin.basin_id} has no attributes")
            return derive_parameters(self.nn, basin.attributes, self.spec)
        return self._fixed_params_for(basin)

    def _hooks(self, layers):
        if self.spec.mode not in ("module_replacement", "constitutive_learning"):
            return None, None
        if self.spec.replaced_flux == "recharge_fraction":
            return _recharge_hook(layers, self.nn.hidden_activation), None
        return None, _percolation_hook(layers, self.nn.hidden_activation)

    # ---- evaluation and training surfaces ------------------------------ #

    def simulate_basin(self, basin: Basin, warmup: int = 0, collect: bool = True):
        """Untraced simulation of one basin under the current model."""
        recharge_fn = percolation_fn = None
        if self.spec.mode in ("module_replacement", "constitutive_learning"):
            recharge_fn, percolation_fn = self._hooks(mlp.layer_handles(self.nn))
        return simulate(
            self.initial_state,
            self.parameters_for(basin),
            basin.forcings,
            warmup=warmup,
            collect=collect,
            recharge_fn=recharge_fn,
            percolation_fn=percolation_fn,
        )

    def trace_discharge(self, tape, leaves, basin: Basin):
        """Traced discharge series for one basin.

        ``leaves`` are the tape handles of the flat trainable vector (one
        leaf per entry, flat order); the model wires them into parameters or
        network weights as its mode dictates.
        """
        mode = self.spec.mode
        recharge_fn = percolation_fn = None
        if mode == "direct_calibration":
            i = self._raw_ids().index(basin.basin_id)
            span = leaves[i * len(PARAM_NAMES) : (i + 1) * len(PARAM_NAMES)]
            lo = [PARAM_BOUNDS[n][0] for n in PARAM_NAMES]
            hi = [PARAM_BOUNDS[n][1] for n in PARAM_NAMES]
            params = HBVParameters.from_vector(mlp.bound(tape, span, lo, hi))
        elif mode == "parameter_learning":
            if basin.attributes is None:
                raise ValueError(f"basin {basin.basin_id} has no attributes")
            layers = mlp.layers_from_flat(self.nn, leaves)
            params = _derive(
                tape, layers, self.nn.hidden_activation, basin.attributes.values, self.spec
            )
        else:
            layers = mlp.layers_from_flat(self.nn, leaves)
            params = _params_on_tape(tape, self._fixed_params_for(basin))
            recharge_fn, percolation_fn = self._hooks(layers)
        out = simulate(
            self.initial_state,
            params,
            basin.forcings,
            bk=tape,
            collect=False,
            recharge_fn=recharge_fn,
            percolation_fn=percolation_fn,
        )
        return out.discharge
