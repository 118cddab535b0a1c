import math
import threading

import numpy as np
import pytest

from hydrograd.tape import FLOATS, DomainError, Tape, Var, exp, log, maximum, minimum, relu, sigmoid


def test_leaf_reads_back_value():
    t = Tape()
    i = t.leaf(3.0, "x")
    assert t.value(i) == 3.0
    assert t.leaves == {"x": i}


def test_leaves_appended_in_order():
    t = Tape()
    assert t.leaf(1.0, "a") == 0
    assert t.leaf(2.0, "b") == 1


def test_leaf_rejects_non_finite():
    t = Tape()
    with pytest.raises(DomainError):
        t.leaf(float("nan"), "x")
    with pytest.raises(DomainError):
        t.leaf(float("inf"), "y")


def test_leaf_rejects_duplicate_key():
    t = Tape()
    t.leaf(1.0, "x")
    with pytest.raises(ValueError):
        t.leaf(2.0, "x")


def test_mul_value_and_partials():
    t = Tape()
    x = t.leaf(2.0, "x")
    y = t.leaf(3.0, "y")
    i = t.mul(x, y)
    assert t.value(i) == 6.0
    node = t.node(i)
    assert node.predecessors == (x, y)
    assert node.local_partials == (3.0, 2.0)


def test_sigmoid_at_zero():
    t = Tape()
    x = t.leaf(0.0, "x")
    i = t.sigmoid(x)
    assert t.value(i) == 0.5
    assert t.node(i).local_partials == (0.25,)


def test_max_against_const_tie_gives_zero_partial():
    # d max(x, 0)/dx is defined as 0 exactly at the breakpoint
    t = Tape()
    x = t.leaf(0.0, "x")
    i = t.maxc(x, 0.0)
    assert t.node(i).local_partials == (0.0,)


def test_max_tie_between_nodes_goes_to_second_argument():
    t = Tape()
    a = t.leaf(1.0, "a")
    b = t.leaf(1.0, "b")
    g = t.backward(t.maxv(a, b))
    assert g == {"a": 0.0, "b": 1.0}
    t2 = Tape()
    a = t2.leaf(1.0, "a")
    b = t2.leaf(1.0, "b")
    g2 = t2.backward(t2.minv(a, b))
    assert g2 == {"a": 0.0, "b": 1.0}


def test_relu_zero_subgradient():
    t = Tape()
    x = t.leaf(0.0, "x")
    assert t.node(t.relu(x)).local_partials == (0.0,)


def test_clamp_gradient_convention():
    for v, expected in [(-1.0, 0.0), (0.0, 0.0), (0.5, 1.0), (1.0, 0.0), (2.0, 0.0)]:
        t = Tape()
        x = t.leaf(v, "x")
        assert t.backward(t.clampc(x, 0.0, 1.0))["x"] == expected


def test_domain_errors():
    t = Tape()
    x = t.leaf(-1.0, "x")
    with pytest.raises(DomainError):
        t.log(x)
    z = t.leaf(0.0, "z")
    y = t.leaf(1.0, "y")
    with pytest.raises(DomainError):
        t.div(y, z)
    with pytest.raises(DomainError):
        t.powc(z, 0.5)


def test_backward_product_rule():
    t = Tape()
    x = t.leaf(2.0, "x")
    y = t.leaf(3.0, "y")
    g = t.backward(t.mul(x, y))
    assert g == {"x": 3.0, "y": 2.0}


def test_backward_square():
    t = Tape()
    x = t.leaf(3.0, "x")
    g = t.backward(t.mul(x, x))
    assert g["x"] == 6.0


def test_backward_exp_xy_matches_central_differences():
    def f(x, y):
        return math.exp(x * y)

    h = 1e-6
    numeric = (f(1.0 + h, 2.0) - f(1.0 - h, 2.0)) / (2 * h)
    t = Tape()
    x = t.leaf(1.0, "x")
    y = t.leaf(2.0, "y")
    g = t.backward(t.exp(t.mul(x, y)))
    assert abs(g["x"] - numeric) < 1e-6 * max(1.0, abs(numeric))
    # analytic value for reference: y * e^(xy) = 2 e^2
    assert abs(g["x"] - 14.7781121978613) < 1e-9


def test_backward_leaves_values_untouched_and_is_repeatable():
    t = Tape()
    x = t.leaf(1.5, "x")
    out = t.exp(t.mul(x, x))
    before = [t.value(i) for i in range(len(t))]
    g1 = t.backward(out)
    g2 = t.backward(out)
    assert g1 == g2
    assert [t.value(i) for i in range(len(t))] == before


def test_backward_covers_every_registered_leaf():
    t = Tape()
    x = t.leaf(1.0, "x")
    t.leaf(5.0, "unused")
    g = t.backward(t.mulc(x, 3.0))
    assert g == {"x": 3.0, "unused": 0.0}


def _build_composite(tape, vs):
    # mixes every smooth op plus min/max away from their breakpoints
    a, b, c = vs
    e1 = exp(a * 0.3) + sigmoid(b * c)
    e2 = log(a + 3.0) * (b ** 2.0)
    e3 = minimum(a * b, c + 5.0) - maximum(a, c)
    e4 = relu(a + b) / (c + 4.0)
    return e1 * e2 + e3 * 0.5 + e4


def test_composite_expression_matches_finite_differences():
    from hydrograd.gradcheck import grad_check

    report = grad_check(_build_composite, [1.2, -0.7, 2.3], 1e-6)
    assert report.flag_rate() == 0.0
    assert report.max_rel_error() < 1e-6


def test_linearity_of_backward():
    def grads(scale):
        t = Tape()
        x = t.leaf(1.3, "x")
        y = t.leaf(0.4, "y")
        f = t.add(t.exp(t.mul(x, y)), t.mul(x, x))
        return t.backward(t.mulc(f, scale))

    g1 = grads(1.0)
    g2 = grads(2.0)  # power of two: scaling is exact
    g3 = grads(3.7)
    for k in g1:
        assert g2[k] == 2.0 * g1[k]
        assert abs(g3[k] - 3.7 * g1[k]) <= 1e-12 * abs(g3[k])


def test_sum_rule():
    def build(tape):
        x = tape.leaf(0.8, "x")
        y = tape.leaf(-1.1, "y")
        f = tape.exp(tape.mul(x, y))
        g = tape.mul(tape.add(x, y), x)
        return x, y, f, g

    t = Tape()
    _, _, f, g = build(t)
    combined = t.backward(t.add(f, g))
    t2 = Tape()
    _, _, f2, _ = build(t2)
    gf = t2.backward(f2)
    t3 = Tape()
    _, _, _, g3 = build(t3)
    gg = t3.backward(g3)
    for k in combined:
        assert abs(combined[k] - (gf[k] + gg[k])) <= 1e-12 * max(1.0, abs(combined[k]))


def test_identical_builds_are_bitwise_identical():
    def build():
        t = Tape()
        x = t.leaf(0.9, "x")
        y = t.leaf(2.2, "y")
        out = t.mul(t.sigmoid(t.mul(x, y)), t.tanh(x))
        return t, out

    t1, o1 = build()
    t2, o2 = build()
    assert [t1.value(i) for i in range(len(t1))] == [t2.value(i) for i in range(len(t2))]
    assert t1.branch_bits == t2.branch_bits
    assert t1.backward(o1) == t2.backward(o2)


def test_topological_order_holds_for_every_node():
    t = Tape()
    x = t.leaf(0.5, "x")
    y = t.leaf(1.5, "y")
    out = t.add(t.mul(t.relu(x), y), t.minv(x, y))
    t.backward(out)
    for i in range(len(t)):
        node = t.node(i)
        assert all(p < i for p in node.predecessors)


def test_var_operator_sugar():
    t = Tape()
    x = Var(t, t.leaf(2.0, "x"))
    y = (3.0 - x) * 2.0 / (x + 2.0) + (-x) ** 2.0
    assert y.value == pytest.approx(4.5)


def test_float_backend_matches_tape_bitwise():
    ops = [
        lambda bk, a, b: bk.add(a, b),
        lambda bk, a, b: bk.sub(a, b),
        lambda bk, a, b: bk.mul(a, b),
        lambda bk, a, b: bk.div(a, b),
        lambda bk, a, b: bk.minv(a, b),
        lambda bk, a, b: bk.maxv(a, b),
        lambda bk, a, b: bk.sigmoid(bk.mul(a, b)),
        lambda bk, a, b: bk.exp(bk.tanh(a)),
        lambda bk, a, b: bk.relu(bk.subc(a, 1.0)),
        lambda bk, a, b: bk.powc(bk.addc(bk.relu(a), 2.0), 1.7),
        lambda bk, a, b: bk.clampc(a, -1.0, 1.0),
        lambda bk, a, b: bk.log(bk.maxc(b, 1e-8)),
    ]
    rng = np.random.default_rng(3)
    for _ in range(50):
        va, vb = rng.normal(size=2)
        for op in ops:
            t = Tape()
            a = t.leaf(va, "a")
            b = t.leaf(vb, "b")
            assert t.value(op(t, a, b)) == op(FLOATS, va, vb)


def test_independent_tapes_run_concurrently():
    results = {}

    def work(seed):
        t = Tape()
        x = t.leaf(1.0 + seed, "x")
        out = x
        for _ in range(200):
            out = t.sigmoid(t.mulc(out, 1.01))
        results[seed] = (t.value(out), t.backward(out)["x"])

    threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for s, (v, g) in results.items():
        t = Tape()
        x = t.leaf(1.0 + s, "x")
        out = x
        for _ in range(200):
            out = t.sigmoid(t.mulc(out, 1.01))
        assert (t.value(out), t.backward(out)["x"]) == (v, g)
