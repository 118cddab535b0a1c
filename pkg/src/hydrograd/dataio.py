"""Dataset containers and the on-disk CSV formats.

A dataset directory holds one forcing file per basin plus shared tables:

* ``forcing_<basin_id>.csv`` -- ``date,P,T,PET[,Q]``, ISO dates, one row per
  day with no gaps; the optional Q column is observed discharge (mm/day).
* ``attributes.csv`` -- ``basin_id,a1..ad`` normalized basin attributes.
* ``normalization.csv`` -- ``component,lo,hi`` raw ranges behind the
  normalization (identity 0..1 for synthetic data).
* ``truth_params.csv`` -- optional wide table of generator ground truth.

All floats are written with shortest round-trip formatting (``repr``), which
makes save/load an exact identity and keeps repeated runs byte-identical.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .hbv import PARAM_NAMES, Forcings, HBVParameters, SimulationOutput


class DataError(ValueError):
    """Malformed or inconsistent input data; carries file and line context."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}: " if line is None else f"{path}:{line}: "
        super().__init__(f"{loc}{message}")


def fmt(x) -> str:
    """Shortest decimal string that round-trips the double exactly."""
    return repr(float(x))


@dataclass
class BasinAttributes:
    """Semi-static attribute vector, normalized to [0, 1] per component."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attributes must be finite")


@dataclass
class Basin:
    basin_id: str
    forcings: Forcings
    observed: np.ndarray = None  # discharge, mm/day
    attributes: BasinAttributes = None
    truth_params: HBVParameters = None

    def __post_init__(self):
        if self.observed is not None:
            self.observed = np.asarray(self.observed, dtype=float)
            if len(self.observed) != len(self.forcings):
                raise ValueError(
                    f"basin {self.basin_id}: observed length {len(self.observed)}"
                    f" != forcing length {len(self.forcings)}"
                )

    def head(self, n: int) -> "Basin":
        """First n days (used to trim a temporal holdout off the training run)."""
        return Basin(
            self.basin_id,
            self.forcings.head(n),
            None if self.observed is None else self.observed[:n],
            self.attributes,
            self.truth_params,
        )


@dataclass
class BasinDataset:
    basins: list
    attr_lo: np.ndarray = None  # raw range behind each normalized component
    attr_hi: np.ndarray = None

    def __post_init__(self):
        self.basins = sorted(self.basins, key=lambda b: b.basin_id)
        ids = [b.basin_id for b in self.basins]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate basin ids")
        self._by_id = {b.basin_id: b for b in self.basins}

    def __len__(self) -> int:
        return len(self.basins)

    @property
    def ids(self) -> list:
        return [b.basin_id for b in self.basins]

    def basin(self, basin_id: str) -> Basin:
        return self._by_id[basin_id]

    def subset(self, ids) -> "BasinDataset":
        return BasinDataset([self._by_id[i] for i in ids], self.attr_lo, self.attr_hi)

    def head(self, n_days: int) -> "BasinDataset":
        return BasinDataset([b.head(n_days) for b in self.basins], self.attr_lo, self.attr_hi)


# --------------------------------------------------------------------- #
# forcing files
# --------------------------------------------------------------------- #

_FORCING_HEADER = ["date", "P", "T", "PET"]


def save_forcings_csv(path, forcings: Forcings, observed=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if observed is None:
            w.writerow(_FORCING_HEADER)
            for t in range(len(forcings)):
                w.writerow(
                    [forcings.dates[t], fmt(forcings.P[t]), fmt(forcings.T[t]), fmt(forcings.PET[t])]
                )
        else:
            w.writerow(_FORCING_HEADER + ["Q"])
            for t in range(len(forcings)):
                w.writerow(
                    [
                        forcings.dates[t],
                        fmt(forcings.P[t]),
                        fmt(forcings.T[t]),
                        fmt(forcings.PET[t]),
                        fmt(observed[t]),
                    ]
                )


def load_forcings_csv(path):
    """Parse one forcing file; returns (Forcings, observed-or-None)."""
    dates, P, T, PET, Q = [], [], [], [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise DataError("empty file", path)
        if header != _FORCING_HEADER and header != _FORCING_HEADER + ["Q"]:
            raise DataError(
                f"expected header {','.join(_FORCING_HEADER)}[,Q], got {','.join(header)}",
                path,
                1,
            )
        has_q = len(header) == 5
        prev = None
        for ln, row in enumerate(rd, start=2):
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path, ln)
            try:
                d = date.fromisoformat(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise DataError(str(exc), path, ln) from None
            if prev is not None and d - prev != timedelta(days=1):
                raise DataError(f"date gap: {prev} -> {d}", path, ln)
            prev = d
            dates.append(row[0])
            P.append(vals[0])
            T.append(vals[1])
            PET.append(vals[2])
            if has_q:
                Q.append(vals[3])
    if not dates:
        raise DataError("no data rows", path)
    try:
        forcings = Forcings(dates, np.array(P), np.array(T), np.array(PET))
    except ValueError as exc:
        raise DataError(str(exc), path) from None
    return forcings, (np.array(Q) if has_q else None)


# --------------------------------------------------------------------- #
# dataset directories
# --------------------------------------------------------------------- #

def save_dataset(dataset: BasinDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for b in dataset.basins:
        save_forcings_csv(out / f"forcing_{b.basin_id}.csv", b.forcings, b.observed)
    if any(b.attributes is not None for b in dataset.basins):
        d = len(dataset.basins[0].attributes.values)
        with open(out / "attributes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["basin_id"] + [f"a{k + 1}" for k in range(d)])
            for b in dataset.basins:
                w.writerow([b.basin_id] + [fmt(v) for v in b.attributes.values])
        if dataset.attr_lo is not None:
            with open(out / "normalization.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["component", "lo", "hi"])
                for k in range(d):
                    w.writerow([f"a{k + 1}", fmt(dataset.attr_lo[k]), fmt(dataset.attr_hi[k])])
    if any(b.truth_params is not None for b in dataset.basins):
        with open(out / "truth_params.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["basin_id"] + list(PARAM_NAMES))
            for b in dataset.basins:
                if b.truth_params is not None:
                    w.writerow([b.basin_id] + [fmt(v) for v in b.truth_params.as_vector()])


def load_dataset(path) -> BasinDataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError("not a dataset directory", root)
    forcing_files = sorted(root.glob("forcing_*.csv"))
    if not forcing_files:
        raise DataError("no forcing_<basin_id>.csv files found", root)

    attrs = {}
    attr_path = root / "attributes.csv"
    if attr_path.exists():
        with open(attr_path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if not header or header[0] != "basin_id":
                raise DataError("expected header basin_id,a1..", attr_path, 1)
            d = len(header) - 1
            for ln, row in enumerate(rd, start=2):
                if len(row) != d + 1:
                    raise DataError(f"expected {d + 1} fields, got {len(row)}", attr_path, ln)
                try:
                    attrs[row[0]] = BasinAttributes(np.array([float(x) for x in row[1:]]))
                except ValueError as exc:
                    raise DataError(str(exc), attr_path, ln) from None

    truth = {}
    truth_path = root / "truth_params.csv"
    if truth_path.exists():
        with open(truth_path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header != ["basin_id"] + list(PARAM_NAMES):
                raise DataError("bad truth_params header", truth_path, 1)
            for ln, row in enumerate(rd, start=2):
                try:
                    truth[row[0]] = HBVParameters.from_vector([float(x) for x in row[1:]])
                except ValueError as exc:
                    raise DataError(str(exc), truth_path, ln) from None

    attr_lo = attr_hi = None
    norm_path = root / "normalization.csv"
    if norm_path.exists():
        lo, hi = [], []
        with open(norm_path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header != ["component", "lo", "hi"]:
                raise DataError("bad normalization header", norm_path, 1)
            for ln, row in enumerate(rd, start=2):
                try:
                    lo.append(float(row[1]))
                    hi.append(float(row[2]))
                except (IndexError, ValueError) as exc:
                    raise DataError(str(exc), norm_path, ln) from None
        attr_lo, attr_hi = np.array(lo), np.array(hi)

    basins = []
    for f in forcing_files:
        basin_id = f.stem[len("forcing_"):]
        forcings, observed = load_forcings_csv(f)
        basins.append(
            Basin(basin_id, forcings, observed, attrs.get(basin_id), truth.get(basin_id))
        )
    return BasinDataset(basins, attr_lo, attr_hi)


# --------------------------------------------------------------------- #
# result tables
# --------------------------------------------------------------------- #

def write_output_csv(path, output: SimulationOutput, dates) -> None:
    """Per-day simulation dump: discharge components, ET, recharge, melt, storages."""
    if output.fluxes is None or output.states is None:
        raise ValueError("output CSV needs a simulation run with collect=True")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["date", "Q_routed", "Q0", "Q1", "Q2", "ET", "recharge", "melt", "SM", "SUZ", "SLZ", "SP"]
        )
        for t, (fl, st) in enumerate(zip(output.fluxes, output.states)):
            w.writerow(
                [
                    dates[t],
                    fmt(fl.Q_routed),
                    fmt(fl.Q0),
                    fmt(fl.Q1),
                    fmt(fl.Q2),
                    fmt(fl.ET),
                    fmt(fl.recharge),
                    fmt(fl.melt),
                    fmt(st.SM),
                    fmt(st.SUZ),
                    fmt(st.SLZ),
                    fmt(st.SP),
                ]
            )


def write_params_csv(path, params_by_basin: dict) -> None:
    """Parameter dump, long format: basin_id,param_name,value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["basin_id", "param_name", "value"])
        for basin_id in sorted(params_by_basin):
            p = params_by_basin[basin_id]
            for name in PARAM_NAMES:
                w.writerow([basin_id, name, fmt(getattr(p, name))])


def read_params_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["basin_id", "param_name", "value"]:
            raise DataError("bad parameter dump header", path, 1)
        for ln, row in enumerate(rd, start=2):
            try:
                out.setdefault(row[0], {})[row[1]] = float(row[2])
            except (IndexError, ValueError) as exc:
                raise DataError(str(exc), path, ln) from None
    result = {}
    for basin_id, vals in out.items():
        missing = set(PARAM_NAMES) - set(vals)
        if missing:
            raise DataError(f"basin {basin_id} missing parameters {sorted(missing)}", path)
        result[basin_id] = HBVParameters(**{n: vals[n] for n in PARAM_NAMES})
    return result


def write_relation_csv(path, pairs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input", "output"])
        for x, y in pairs:
            w.writerow([fmt(x), fmt(y)])


def write_metrics_csv(path, rows) -> None:
    """rows: iterable of (basin_id, MetricsRow), written in basin-id order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["basin_id", "nse", "rmse", "bias"])
        for basin_id, m in sorted(rows, key=lambda r: r[0]):
            w.writerow([basin_id, fmt(m.nse), fmt(m.rmse), fmt(m.bias)])


def parse_kv_file(path) -> dict:
    """Flat ``key = value`` text; '#' starts a comment; later keys override."""
    out = {}
    p = Path(path)
    if not p.exists():
        raise DataError("file not found", p)
    with open(p) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"expected key = value, got {raw.strip()!r}", p, ln)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
