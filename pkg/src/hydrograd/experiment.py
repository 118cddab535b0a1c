"""Experiment orchestration: config parsing, train/evaluate runs, artifacts.

A configuration file is flat ``key = value`` text (unknown keys are
rejected).  Every run writes deterministic artifacts into its output
directory: per-basin metrics tables, the full diagnostic flux series for
every basin, the trained weights or calibrated parameters, the learned
relation curve where one exists, and the per-epoch training report.
Identical configurations reproduce the metrics files byte for byte.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mlp
from .coupling import (
    MODES,
    REPLACEABLE_FLUXES,
    CouplingSpec,
    HybridModel,
    default_learned_params,
    extract_learned_relation,
)
from .dataio import (
    BasinDataset,
    DataError,
    load_dataset,
    read_params_csv,
    save_dataset,
    write_metrics_csv,
    write_output_csv,
    write_params_csv,
    write_relation_csv,
    parse_kv_file,
)
from .hbv import PARAM_NAMES
from .metrics import compute_metrics
from .synthetic import CLIMATES, SyntheticSpec, generate_synthetic
from .training import LOSS_KINDS, LossSpec, OptimizerConfig, train


class ConfigError(DataError):
    """Bad experiment configuration."""


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _parse_name_list(s: str) -> tuple:
    return tuple(x.strip() for x in s.split(",") if x.strip())


# key -> (attribute, caster); fix_<P> and fixed_<P> are handled separately
_KEYS = {
    "mode": ("mode", str),
    "out_dir": ("out_dir", str),
    "dataset_dir": ("dataset_dir", str),
    "n_basins": ("n_basins", int),
    "n_days": ("n_days", int),
    "data_seed": ("data_seed", int),
    "attribute_dim": ("attribute_dim", int),
    "noise_std": ("noise_std", float),
    "climate": ("climate", str),
    "save_dataset": ("save_dataset", _parse_bool),
    "n_train": ("n_train", int),
    "n_test": ("n_test", int),
    "split_seed": ("split_seed", int),
    "loss": ("loss", str),
    "warmup": ("warmup", int),
    "holdout_days": ("holdout_days", int),
    "learning_rate": ("learning_rate", float),
    "beta1": ("beta1", float),
    "beta2": ("beta2", float),
    "epsilon": ("epsilon", float),
    "epochs": ("epochs", int),
    "basin_batch_size": ("basin_batch_size", int),
    "train_seed": ("train_seed", int),
    "nn_seed": ("nn_seed", int),
    "hidden": ("hidden", _parse_int_list),
    "flux_hidden": ("flux_hidden", _parse_int_list),
    "activation": ("activation", str),
    "learned_params": ("learned_params", _parse_name_list),
    "fixed_from_truth": ("fixed_from_truth", _parse_bool),
    "replaced_flux": ("replaced_flux", str),
    "relation_grid": ("relation_grid", str),
}


@dataclass
class ExperimentConfig:
    mode: str
    out_dir: str = None
    # data source: a directory, or a synthetic family
    dataset_dir: str = None
    n_basins: int = 0
    n_days: int = 1095
    data_seed: int = 0
    attribute_dim: int = 4
    noise_std: float = 0.0
    climate: str = "temperate"
    fix_truth: dict = field(default_factory=dict)  # pin true parameters
    save_dataset: bool = False
    # split
    n_train: int = 0
    n_test: int = 0
    split_seed: int = 0
    # loss / optimizer
    loss: str = "nse_batch"
    warmup: int = 365
    holdout_days: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 200
    basin_batch_size: int = 0
    train_seed: int = 0
    # model
    nn_seed: int = 0
    hidden: tuple = (16, 16)
    flux_hidden: tuple = (16,)
    activation: str = "tanh"
    learned_params: tuple = ()
    fixed_params: dict = field(default_factory=dict)
    fixed_from_truth: bool = False
    replaced_flux: str = "recharge_fraction"
    relation_grid: str = "0.0:1.0:101"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.dataset_dir is None and self.n_basins <= 0:
            raise ConfigError("need dataset_dir or a synthetic spec (n_basins > 0)")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.climate not in CLIMATES:
            raise ConfigError(f"unknown climate {self.climate!r}")
        if self.replaced_flux not in REPLACEABLE_FLUXES:
            raise ConfigError(f"unknown replaced_flux {self.replaced_flux!r}")
        if self.n_train <= 0:
            raise ConfigError("n_train must be positive")
        if self.n_test < 0 or self.holdout_days < 0:
            raise ConfigError("n_test and holdout_days must be non-negative")
        if self.mode == "direct_calibration":
            if self.n_test:
                raise ConfigError("direct_calibration cannot evaluate held-out basins")
            if self.learned_params:
                raise ConfigError("direct_calibration calibrates all parameters")
        if self.mode == "parameter_learning":
            if not self.learned_params:
                self.learned_params = default_learned_params()
            missing = set(PARAM_NAMES) - set(self.learned_params) - set(self.fixed_params)
            if missing:
                raise ConfigError(
                    f"parameters neither learned nor fixed: {sorted(missing)}"
                    " (add fixed_<NAME> entries; MAXBAS is never learned)"
                )
        if self.mode in ("module_replacement", "constitutive_learning"):
            if not self.fixed_from_truth and set(self.fixed_params) != set(PARAM_NAMES):
                raise ConfigError(
                    f"{self.mode} needs fixed_from_truth = true or all 13 fixed_<NAME> values"
                )


def parse_config(path) -> ExperimentConfig:
    """Read and validate a flat key=value experiment configuration."""
    raw = parse_kv_file(path)
    kwargs = {}
    fix_truth = {}
    fixed_params = {}
    for key, value in raw.items():
        try:
            if key in _KEYS:
                attr, cast = _KEYS[key]
                kwargs[attr] = cast(value)
            elif key.startswith("fix_") and key[4:] in PARAM_NAMES:
                fix_truth[key[4:]] = float(value)
            elif key.startswith("fixed_") and key[6:] in PARAM_NAMES:
                fixed_params[key[6:]] = float(value)
            else:
                raise ConfigError(f"unknown key {key!r}", path)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", path) from None
    if "mode" not in kwargs:
        raise ConfigError("missing required key 'mode'", path)
    kwargs["fix_truth"] = fix_truth
    kwargs["fixed_params"] = fixed_params
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), path) from None


# --------------------------------------------------------------------- #
# building blocks
# --------------------------------------------------------------------- #

def load_or_generate(config: ExperimentConfig) -> BasinDataset:
    if config.dataset_dir is not None:
        return load_dataset(config.dataset_dir)
    spec = SyntheticSpec(
        n_basins=config.n_basins,
        n_days=config.n_days,
        seed=config.data_seed,
        attribute_dim=config.attribute_dim,
        noise_std=config.noise_std,
        climate=config.climate,
        fixed_truth=config.fix_truth,
    )
    return generate_synthetic(spec)


def split_basins(dataset: BasinDataset, config: ExperimentConfig):
    """Seeded permutation split; the test block is taken from the permutation
    tail, so shrinking n_train under the same seed keeps the test set fixed."""
    ids = dataset.ids
    n = len(ids)
    if config.n_train + config.n_test > n:
        raise ConfigError(
            f"n_train + n_test = {config.n_train + config.n_test} exceeds {n} basins"
        )
    perm = np.random.default_rng(config.split_seed).permutation(n)
    train_ids = sorted(ids[j] for j in perm[: config.n_train])
    test_ids = sorted(ids[j] for j in perm[n - config.n_test :]) if config.n_test else []
    return train_ids, test_ids


def build_model(config: ExperimentConfig, dataset: BasinDataset, train_ids) -> HybridModel:
    mode = config.mode
    if mode == "direct_calibration":
        spec = CouplingSpec(mode)
        raw = {b: np.zeros(len(PARAM_NAMES)) for b in train_ids}
        return HybridModel(spec, direct_raw=raw)
    if mode == "parameter_learning":
        spec = CouplingSpec(
            mode, learned_params=config.learned_params, fixed_params=config.fixed_params
        )
        d = len(dataset.basins[0].attributes.values)
        sizes = (d, *config.hidden, len(spec.learned_params))
        net = mlp.init(mlp.MLPConfig(sizes, config.activation, config.nn_seed))
        return HybridModel(spec, nn=net)
    # flux replacement modes
    spec = CouplingSpec(
        mode, replaced_flux=config.replaced_flux, fixed_params=config.fixed_params
    )
    net = mlp.init(mlp.MLPConfig((1, *config.flux_hidden, 1), config.activation, config.nn_seed))
    basin_params = None
    if config.fixed_from_truth:
        basin_params = {}
        for b in dataset.basins:
            if b.truth_params is None:
                raise ConfigError(f"fixed_from_truth set but basin {b.basin_id} has no truth")
            basin_params[b.basin_id] = b.truth_params
    return HybridModel(spec, nn=net, basin_params=basin_params)


def _parse_grid(grid_spec: str) -> np.ndarray:
    try:
        lo, hi, n = grid_spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if n < 2 or not lo < hi:
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad grid {grid_spec!r}, expected lo:hi:n") from None
    return np.linspace(lo, hi, n)


# --------------------------------------------------------------------- #
# runs
# --------------------------------------------------------------------- #

def _evaluate_basins(model, dataset, ids, window, out_dir=None):
    """Per-basin metrics over a [start, stop) day window; optionally dump the
    full flux series."""
    rows = []
    start, stop = window
    for basin_id in ids:
        basin = dataset.basin(basin_id)
        out = model.simulate_basin(basin)
        sim = [float(q) for q in out.discharge[start:stop]]
        obs = basin.observed[start:stop]
        rows.append((basin_id, compute_metrics(sim, obs)))
        if out_dir is not None:
            write_output_csv(out_dir / f"fluxes_{basin_id}.csv", out, basin.forcings.dates)
    return rows


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Train per the config, evaluate train/holdout/test, write artifacts.

    Returns a summary dict with the artifact paths and headline metrics.
    On failure a FAILED.txt marker (with the error) is left in the output
    directory so partial artifacts are recognizable.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _run_experiment(config, out)
    except Exception as exc:
        (out / "FAILED.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        raise


def _run_experiment(config: ExperimentConfig, out: Path) -> dict:
    dataset = load_or_generate(config)
    if config.save_dataset:
        save_dataset(dataset, out / "dataset")
    train_ids, test_ids = split_basins(dataset, config)
    n_days = len(dataset.basins[0].forcings)
    if config.warmup + config.holdout_days >= n_days:
        raise ConfigError("warmup + holdout_days must leave a training window")
    train_days = n_days - config.holdout_days

    model = build_model(config, dataset, train_ids)
    loss_spec = LossSpec(config.loss, config.warmup)
    opt = OptimizerConfig(
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
        epochs=config.epochs,
        basin_batch_size=config.basin_batch_size,
        seed=config.train_seed,
    )
    trained, report = train(model, dataset.subset(train_ids).head(train_days), loss_spec, opt)
    report.write_csv(out / "train_report.csv")

    summary = {"out_dir": str(out)}
    train_rows = _evaluate_basins(
        trained, dataset, train_ids, (config.warmup, train_days), out_dir=out
    )
    write_metrics_csv(out / "metrics_train.csv", train_rows)
    summary["median_train_nse"] = float(np.median([m.nse for _, m in train_rows]))

    if config.holdout_days:
        holdout_rows = _evaluate_basins(trained, dataset, train_ids, (train_days, n_days))
        write_metrics_csv(out / "metrics_holdout.csv", holdout_rows)
        summary["median_holdout_nse"] = float(np.median([m.nse for _, m in holdout_rows]))

    if test_ids:
        test_rows = _evaluate_basins(
            trained, dataset, test_ids, (config.warmup, n_days), out_dir=out
        )
        write_metrics_csv(out / "metrics_test.csv", test_rows)
        summary["median_test_nse"] = float(np.median([m.nse for _, m in test_rows]))

    # learned objects
    if config.mode == "direct_calibration":
        write_params_csv(
            out / "params.csv", {b: trained.parameters_for(dataset.basin(b)) for b in train_ids}
        )
    else:
        mlp.save_weights(trained.nn, out / "weights.csv")
        ids = train_ids + test_ids
        write_params_csv(
            out / "params.csv", {b: trained.parameters_for(dataset.basin(b)) for b in ids}
        )
    if config.mode in ("module_replacement", "constitutive_learning"):
        grid = _parse_grid(config.relation_grid)
        write_relation_csv(out / "relation.csv", extract_learned_relation(trained.nn, grid))

    summary["final_loss"] = report.losses[-1] if report.losses else float("nan")
    return summary


def run_evaluation(config: ExperimentConfig, weights_path, out_dir=None) -> dict:
    """Evaluate stored weights (or a parameter dump) on the config's dataset.

    Writes metrics_eval.csv over all basins; no training happens.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_or_generate(config)
    n_days = len(dataset.basins[0].forcings)

    if config.mode == "direct_calibration":
        from .hbv import default_initial_state, simulate

        params = read_params_csv(weights_path)
        missing = [b for b in dataset.ids if b not in params]
        if missing:
            raise DataError(f"parameter dump lacks basins {missing}", weights_path)
        rows = []
        for basin in dataset.basins:
            sim_out = simulate(default_initial_state(), params[basin.basin_id], basin.forcings)
            sim = sim_out.discharge[config.warmup : n_days]
            obs = basin.observed[config.warmup : n_days]
            rows.append((basin.basin_id, compute_metrics(sim, obs)))
            write_output_csv(out / f"fluxes_{basin.basin_id}.csv", sim_out, basin.forcings.dates)
    else:
        net = mlp.load_weights(weights_path, config.activation)
        # rebuild the model around the stored weights
        train_ids, _ = split_basins(dataset, config)
        model = build_model(config, dataset, train_ids)
        if net.layer_sizes != model.nn.layer_sizes:
            raise DataError(
                f"stored network {net.layer_sizes} does not match config {model.nn.layer_sizes}",
                weights_path,
            )
        model = HybridModel(model.spec, nn=net, basin_params=model.basin_params)
        rows = _evaluate_basins(model, dataset, dataset.ids, (config.warmup, n_days), out_dir=out)

    write_metrics_csv(out / "metrics_eval.csv", rows)
    return {
        "out_dir": str(out),
        "median_nse": float(np.median([m.nse for _, m in rows])),
    }
