"""Command-line interface.

Subcommands: generate, train, evaluate, simulate, gradcheck, relation.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import mlp
from .coupling import extract_learned_relation
from .dataio import (
    DataError,
    load_forcings_csv,
    parse_kv_file,
    save_dataset,
    write_output_csv,
    write_relation_csv,
)
from .experiment import (
    ConfigError,
    _parse_grid,
    parse_config,
    run_evaluation,
    run_experiment,
)
from .gradcheck import grad_check
from .hbv import (
    PARAM_BOUNDS,
    PARAM_NAMES,
    HBVParameters,
    default_initial_state,
    simulate,
    sum_discharge_builder,
    validate_parameters,
)
from .synthetic import SyntheticSpec, generate_forcings, generate_synthetic
from .tape import DomainError
from .training import NumericalError

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

GRADCHECK_TOL = 1e-5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hydrograd", description="Differentiable rainfall-runoff modeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="key=value synthetic spec file")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", required=True, help="key=value experiment config")

    p = sub.add_parser("evaluate", help="evaluate stored weights or parameters")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True, help="weights.csv or params.csv")

    p = sub.add_parser("simulate", help="run the bucket model over a forcing file")
    p.add_argument("--params", required=True, help="key=value parameter file")
    p.add_argument("--forcings", required=True, help="forcing CSV (date,P,T,PET[,Q])")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--module", choices=("hbv", "nn", "all"), default="all")
    p.add_argument("--out", default=None, help="directory for per-module report CSVs")

    p = sub.add_parser("relation", help="sample a learned flux relation on a grid")
    p.add_argument("--weights", required=True)
    p.add_argument("--grid", required=True, help="lo:hi:n")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return parser


def _cmd_generate(args) -> int:
    raw = parse_kv_file(args.spec)
    kwargs = {}
    casts = {
        "n_basins": int,
        "n_days": int,
        "seed": int,
        "attribute_dim": int,
        "noise_std": float,
        "climate": str,
    }
    fixed = {}
    for key, value in raw.items():
        if key in casts:
            try:
                kwargs[key] = casts[key](value)
            except ValueError as exc:
                raise DataError(f"bad value for {key!r}: {exc}", args.spec) from None
        elif key.startswith("fix_") and key[4:] in PARAM_NAMES:
            fixed[key[4:]] = float(value)
        else:
            raise DataError(f"unknown key {key!r}", args.spec)
    if "n_basins" not in kwargs:
        raise DataError("missing required key 'n_basins'", args.spec)
    try:
        spec = SyntheticSpec(fixed_truth=fixed, **kwargs)
    except ValueError as exc:
        raise DataError(str(exc), args.spec) from None
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} basins x {spec.n_days} days to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = parse_config(args.config)
    if config.out_dir is None:
        raise ConfigError("config must set out_dir", args.config)
    summary = run_experiment(config)
    for key in sorted(summary):
        print(f"{key} = {summary[key]}")
    return 0


def _cmd_evaluate(args) -> int:
    config = parse_config(args.config)
    if config.out_dir is None:
        raise ConfigError("config must set out_dir", args.config)
    summary = run_evaluation(config, args.weights)
    for key in sorted(summary):
        print(f"{key} = {summary[key]}")
    return 0


def _load_params_file(path) -> HBVParameters:
    raw = parse_kv_file(path)
    unknown = set(raw) - set(PARAM_NAMES)
    if unknown:
        raise DataError(f"unknown parameters {sorted(unknown)}", path)
    missing = set(PARAM_NAMES) - set(raw)
    if missing:
        raise DataError(f"missing parameters {sorted(missing)}", path)
    try:
        params = HBVParameters(**{k: float(v) for k, v in raw.items()})
        validate_parameters(params)
    except ValueError as exc:
        raise DataError(str(exc), path) from None
    return params


def _cmd_simulate(args) -> int:
    import tempfile

    params = _load_params_file(args.params)
    forcings, _ = load_forcings_csv(args.forcings)
    output = simulate(default_initial_state(), params, forcings)
    if args.out is None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "out.csv"
            write_output_csv(path, output, forcings.dates)
            sys.stdout.write(path.read_text())
    else:
        write_output_csv(args.out, output, forcings.dates)
        print(f"wrote {len(forcings)} days to {args.out}")
    return 0


def _gradcheck_hbv(out_dir) -> bool:
    """Random in-bounds parameter vectors against central differences."""
    rng = np.random.default_rng(2024)
    forcings = generate_forcings(np.array([0.4, 0.5, 0.6, 0.5]), 120, 7, "temperate")
    builder = sum_discharge_builder(forcings)
    ok = True
    for trial in range(3):
        point = []
        for name in PARAM_NAMES:
            lo, hi = PARAM_BOUNDS[name]
            margin = 1e-3 * (hi - lo)
            point.append(rng.uniform(lo + margin, hi - margin))
        report = grad_check(builder, point, 1e-6)
        worst = report.max_rel_error()
        flags = sum(1 for r in report.rows if r.flagged)
        status = "ok" if worst < GRADCHECK_TOL else "FAIL"
        print(f"hbv trial {trial}: max rel error {worst:.3e} ({flags} flagged) {status}")
        if out_dir is not None:
            report.write_csv(Path(out_dir) / f"gradcheck_hbv_{trial}.csv")
        ok = ok and worst < GRADCHECK_TOL
    return ok


def _gradcheck_nn(out_dir) -> bool:
    """A small network's squared-error loss against central differences."""
    net = mlp.init(mlp.MLPConfig((2, 3, 1), "tanh", seed=5))
    flat = mlp.flatten(net)

    def builder(tape, leaf_vars):
        layers = mlp.layers_from_flat(net, [v.i for v in leaf_vars])
        out = mlp.forward(tape, layers, [tape.const(0.3), tape.const(-0.7)], "tanh")
        err = tape.subc(out[0], 0.25)
        return tape.mul(err, err)

    report = grad_check(builder, flat.tolist(), 1e-6)
    worst = report.max_rel_error()
    status = "ok" if worst < GRADCHECK_TOL else "FAIL"
    print(f"nn: max rel error {worst:.3e} {status}")
    if out_dir is not None:
        report.write_csv(Path(out_dir) / "gradcheck_nn.csv")
    return worst < GRADCHECK_TOL


def _cmd_gradcheck(args) -> int:
    if args.out is not None:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    ok = True
    if args.module in ("hbv", "all"):
        ok = _gradcheck_hbv(args.out) and ok
    if args.module in ("nn", "all"):
        ok = _gradcheck_nn(args.out) and ok
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def _cmd_relation(args) -> int:
    net = mlp.load_weights(args.weights, args.activation)
    grid = _parse_grid(args.grid)
    pairs = extract_learned_relation(net, grid)
    if args.out is None:
        print("input,output")
        for x, y in pairs:
            print(f"{x!r},{y!r}")
    else:
        write_relation_csv(args.out, pairs)
        print(f"wrote {len(pairs)} points to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "simulate": _cmd_simulate,
    "gradcheck": _cmd_gradcheck,
    "relation": _cmd_relation,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DomainError, NumericalError, FloatingPointError) as exc:
        # DomainError subclasses ValueError; numerical failures take priority
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
