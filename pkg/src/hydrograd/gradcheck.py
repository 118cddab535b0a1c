"""Central-finite-difference verification of reverse-mode gradients.

The checker evaluates a caller-supplied expression builder at a point and at
two probes per coordinate.  Each evaluation runs on a fresh tape; comparing
the tapes' branch bytes detects probes that straddle a piecewise breakpoint
(relu/min/max/clamp kinks), where a central difference measures the average
of two one-sided slopes and cannot be expected to match the subgradient.
Flagged coordinates are reported, not silently dropped.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .tape import Tape, Var


@dataclass
class GradCheckRow:
    """Per-coordinate comparison of analytic and numeric gradients."""

    coordinate: int
    analytic: float
    numeric: float
    rel_error: float
    flagged: bool  # probes crossed a piecewise breakpoint
    error: str = ""  # non-empty when a probe evaluation failed


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow] = field(default_factory=list)

    def max_rel_error(self) -> float:
        """Largest relative error over clean (unflagged, error-free) coordinates."""
        clean = [r.rel_error for r in self.rows if not r.flagged and not r.error]
        return max(clean) if clean else 0.0

    def flag_rate(self) -> float:
        if not self.rows:
            return 0.0
        return sum(1 for r in self.rows if r.flagged or r.error) / len(self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coordinate", "analytic", "numeric", "rel_error", "flagged", "error"])
            for r in self.rows:
                w.writerow(
                    [
                        r.coordinate,
                        repr(r.analytic),
                        repr(r.numeric),
                        repr(r.rel_error),
                        int(r.flagged),
                        r.error,
                    ]
                )


def _evaluate(builder, point):
    tape = Tape()
    leaves = [Var(tape, tape.leaf(float(x), i)) for i, x in enumerate(point)]
    out = builder(tape, leaves)
    idx = out.i if isinstance(out, Var) else out
    return tape, idx


def grad_check(builder, point, step: float = 1e-6) -> GradCheckReport:
    """Compare backward() gradients of ``builder`` against central differences.

    ``builder(tape, leaf_vars) -> Var`` must construct a scalar expression
    from the given leaves.  The probe step for coordinate i is
    ``step * max(1, |point[i]|)``.  The relative error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.  A probe failure is recorded on its
    coordinate and does not abort the rest of the report.
    """
    point = [float(x) for x in point]
    tape0, out0 = _evaluate(builder, point)
    bits0 = tape0.branch_bits
    grads = tape0.backward(out0)

    report = GradCheckReport()
    for i, x in enumerate(point):
        h = step * max(1.0, abs(x))
        analytic = grads[i]
        try:
            probe = list(point)
            probe[i] = x + h
            tp, op_ = _evaluate(builder, probe)
            f_plus, bits_plus = tp.value(op_), tp.branch_bits
            probe[i] = x - h
            tm, om = _evaluate(builder, probe)
            f_minus, bits_minus = tm.value(om), tm.branch_bits
        except Exception as exc:  # evaluation outside the domain, etc.
            report.rows.append(GradCheckRow(i, analytic, float("nan"), float("nan"), False, str(exc)))
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        flagged = bits_plus != bits0 or bits_minus != bits0
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        report.rows.append(GradCheckRow(i, analytic, numeric, rel, flagged))
    return report
