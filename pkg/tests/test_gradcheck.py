import math

import pytest

from hydrograd.gradcheck import grad_check
from hydrograd.tape import relu


def test_square_has_tiny_relative_error():
    report = grad_check(lambda t, vs: vs[0] * vs[0], [3.0], 1e-6)
    row = report.rows[0]
    assert row.analytic == 6.0
    assert row.rel_error < 1e-8
    assert not row.flagged


def test_constant_function_is_exactly_zero():
    report = grad_check(lambda t, vs: vs[0] * 0.0 + 7.0, [1.0], 1e-6)
    row = report.rows[0]
    assert row.analytic == 0.0
    assert row.numeric == 0.0
    assert row.rel_error == 0.0


def test_relu_at_breakpoint_raises_flag():
    report = grad_check(lambda t, vs: relu(vs[0]), [0.0], 1e-6)
    assert report.rows[0].flagged
    assert report.flag_rate() == 1.0


def test_relu_away_from_breakpoint_is_clean():
    report = grad_check(lambda t, vs: relu(vs[0]), [0.5], 1e-6)
    assert not report.rows[0].flagged
    assert report.rows[0].rel_error < 1e-10


def test_probe_failure_is_reported_not_fatal():
    from hydrograd.tape import log

    # log's domain boundary sits between the two probes of coordinate 0
    report = grad_check(lambda t, vs: log(vs[0]) + vs[1], [5e-7, 1.0], 1e-6)
    assert report.rows[0].error != ""
    assert math.isnan(report.rows[0].numeric)
    assert report.rows[1].error == ""
    assert report.rows[1].rel_error < 1e-9
    assert report.flag_rate() == pytest.approx(0.5)


def test_step_scales_with_coordinate_magnitude():
    # f(x) = x^2 at large x would lose precision with an absolute 1e-6 step
    report = grad_check(lambda t, vs: vs[0] * vs[0], [1e5], 1e-6)
    assert report.rows[0].rel_error < 1e-8


def test_report_csv_round_trip(tmp_path):
    report = grad_check(lambda t, vs: vs[0] * vs[1], [2.0, -3.0], 1e-6)
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "coordinate,analytic,numeric,rel_error,flagged,error"
    assert len(lines) == 3
    assert lines[1].startswith("0,-3.0,")
