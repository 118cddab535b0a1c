"""Streamflow evaluation metrics on post-warmup windows.

NSE and Pearson correlation are undefined when the observations have no
variance; those cases return NaN as an explicit sentinel rather than a
silent zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _window(sim, obs, warmup):
    sim = np.asarray(sim, dtype=float)[warmup:]
    obs = np.asarray(obs, dtype=float)[warmup:]
    if sim.shape != obs.shape:
        raise ValueError(f"length mismatch: sim {sim.shape} vs obs {obs.shape}")
    if sim.size == 0:
        raise ValueError("empty post-warmup window")
    return sim, obs


def nse(sim, obs, warmup: int = 0) -> float:
    """Nash-Sutcliffe efficiency; 1 is perfect, 0 matches the mean predictor,
    NaN when the observations are constant."""
    sim, obs = _window(sim, obs, warmup)
    dev = obs - obs.mean()
    denom = float(dev @ dev)
    if denom == 0.0:
        return float("nan")
    err = sim - obs
    return 1.0 - float(err @ err) / denom


def rmse(sim, obs, warmup: int = 0) -> float:
    sim, obs = _window(sim, obs, warmup)
    err = sim - obs
    return math.sqrt(float(err @ err) / err.size)


def bias(sim, obs, warmup: int = 0) -> float:
    sim, obs = _window(sim, obs, warmup)
    return float((sim - obs).mean())


def pearson(sim, obs, warmup: int = 0) -> float:
    """Pearson correlation; NaN when either series is constant."""
    sim, obs = _window(sim, obs, warmup)
    ds = sim - sim.mean()
    do = obs - obs.mean()
    denom = math.sqrt(float(ds @ ds) * float(do @ do))
    if denom == 0.0:
        return float("nan")
    return float(ds @ do) / denom


@dataclass
class MetricsRow:
    nse: float
    rmse: float
    bias: float
    correlation: float


def compute_metrics(sim, obs, warmup: int = 0) -> MetricsRow:
    return MetricsRow(
        nse=nse(sim, obs, warmup),
        rmse=rmse(sim, obs, warmup),
        bias=bias(sim, obs, warmup),
        correlation=pearson(sim, obs, warmup),
    )
