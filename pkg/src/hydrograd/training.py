"""Losses, the Adam optimizer, and the gradient-descent training loop.

Each batch runs on a fresh tape: every trainable scalar becomes a leaf, all
batch basins are traced forward in ascending basin-id order (which makes the
accumulated full-batch gradient independent of the shuffle), the scalar loss
is swept backward, and one Adam step updates the flat parameter vector.
Given identical seeds, data, and configuration the whole weight trajectory
is reproducible.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataio import BasinDataset, fmt
from .metrics import nse
from .tape import Tape

LOSS_KINDS = ("mse", "rmse", "nse_batch")
# variance floor in the batch-NSE loss; keeps near-constant-flow basins from
# dominating the gradient
NSE_VARIANCE_FLOOR = 0.1


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class LossSpec:
    kind: str = "nse_batch"
    warmup: int = 0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    basin_batch_size: int = 0  # 0 = full batch
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class TrainReport:
    """Per-epoch loss / gradient-norm / wall-time plus final per-basin NSE."""

    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    final_nse: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "grad_norm", "seconds"])
            for e, (lo, gn, sec) in enumerate(
                zip(self.losses, self.grad_norms, self.seconds)
            ):
                w.writerow([e, fmt(lo), fmt(gn), fmt(sec)])


def batch_loss(tape: Tape, sims: dict, observations: dict, spec: LossSpec):
    """Scalar loss node over the batch (basins traversed in ascending id order).

    mse / rmse pool all post-warmup (basin, day) errors; nse_batch averages
    per-basin sum(err^2) / (sum(dev^2) + floor), which is mean(1 - NSE) up to
    the variance floor.
    """
    sse_nodes = {}
    n_days_total = 0
    for basin_id in sorted(sims):
        sim = sims[basin_id][spec.warmup :]
        obs = np.asarray(observations[basin_id], dtype=float)[spec.warmup :]
        if len(sim) != len(obs):
            raise ValueError(f"basin {basin_id}: sim/obs length mismatch")
        if len(obs) == 0:
            raise ValueError(f"basin {basin_id}: empty post-warmup window")
        obs_list = obs.tolist()
        sse = None
        for node, o in zip(sim, obs_list):
            err = tape.subc(node, o)
            sq = tape.mul(err, err)
            sse = sq if sse is None else tape.add(sse, sq)
        sse_nodes[basin_id] = (sse, obs)
        n_days_total += len(obs)

    if spec.kind in ("mse", "rmse"):
        total = None
        for basin_id in sorted(sse_nodes):
            sse, _ = sse_nodes[basin_id]
            total = sse if total is None else tape.add(total, sse)
        loss = tape.divc(total, float(n_days_total))
        if spec.kind == "rmse":
            loss = tape.powc(loss, 0.5)
        return loss

    total = None
    for basin_id in sorted(sse_nodes):
        sse, obs = sse_nodes[basin_id]
        dev = obs - obs.mean()
        term = tape.divc(sse, float(dev @ dev) + NSE_VARIANCE_FLOOR)
        total = term if total is None else tape.add(total, term)
    return tape.divc(total, float(len(sse_nodes)))


def adam_step(weights, grads, m, v, t: int, config: OptimizerConfig):
    """One bias-corrected Adam update; pure function of its inputs."""
    m = config.beta1 * m + (1.0 - config.beta1) * grads
    v = config.beta2 * v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    weights = weights - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return weights, m, v


def train(model, dataset: BasinDataset, loss_spec: LossSpec, opt: OptimizerConfig):
    """Fit the model's trainable vector on all dataset basins.

    Per epoch: seeded shuffle of basin ids, then per batch a fresh tape,
    traced forward for every batch basin, one backward sweep, one Adam step.
    Returns (trained model, TrainReport); with epochs=0 the model comes back
    unchanged.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    observations = {}
    for b in dataset.basins:
        if b.observed is None:
            raise ValueError(f"basin {b.basin_id} has no observed discharge")
        observations[b.basin_id] = b.observed

    flat = model.flat_params().astype(float).copy()
    n = flat.size
    m = np.zeros(n)
    v = np.zeros(n)
    t_step = 0
    rng = np.random.default_rng(opt.seed)
    ids = dataset.ids
    batch_size = opt.basin_batch_size or len(ids)
    report = TrainReport()

    for epoch in range(opt.epochs):
        tic = time.perf_counter()
        perm = [ids[j] for j in rng.permutation(len(ids))]
        epoch_loss = 0.0
        epoch_grad_sq = 0.0
        n_batches = 0
        for start in range(0, len(perm), batch_size):
            batch = perm[start : start + batch_size]
            tape = Tape()
            # leaves carry the current values; the model supplies structure only
            leaves = [tape.leaf(float(x), k) for k, x in enumerate(flat)]
            sims = {
                basin_id: model.trace_discharge(tape, leaves, dataset.basin(basin_id))
                for basin_id in sorted(batch)
            }
            loss_node = batch_loss(tape, sims, observations, loss_spec)
            loss_value = tape.value(loss_node)
            if not math.isfinite(loss_value):
                raise NumericalError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {n_batches}"
                )
            grad_map = tape.backward(loss_node)
            grads = np.fromiter((grad_map[k] for k in range(n)), dtype=float, count=n)
            t_step += 1
            flat, m, v = adam_step(flat, grads, m, v, t_step, opt)
            epoch_loss += loss_value
            epoch_grad_sq += float(grads @ grads)
            n_batches += 1
        report.losses.append(epoch_loss / n_batches)
        report.grad_norms.append(math.sqrt(epoch_grad_sq))
        report.seconds.append(time.perf_counter() - tic)

    trained = model.with_flat(flat)
    for b in dataset.basins:
        out = trained.simulate_basin(b, warmup=loss_spec.warmup, collect=False)
        report.final_nse[b.basin_id] = nse(out.discharge, b.observed, loss_spec.warmup)
    return trained, report
