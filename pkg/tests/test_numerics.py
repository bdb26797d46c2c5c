import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spatial_fsod import numerics as nx
from spatial_fsod.numerics import ContractError, DimensionError, NumericError, Tape


def _grad_check(build, shapes, seed=0, positive=False, avoid_kink=False):
    """Analytic gradients of ``build(tape, *leaves)`` against central differences."""
    rng = np.random.default_rng(seed)
    values = {}
    for i, shape in enumerate(shapes):
        v = rng.standard_normal(shape)
        if avoid_kink:
            v = np.where(np.abs(v) < 0.05, 0.3, v)
        if positive:
            v = np.abs(v) + 0.5
        values[f"x{i}"] = v

    def loss(vals):
        tape = Tape()
        xs = [tape.leaf(vals[f"x{i}"], trainable=True, name=f"x{i}") for i in range(len(shapes))]
        return tape, xs, build(tape, *xs)

    tape, xs, out = loss(values)
    grads = tape.backward(out)
    analytic = {x.name: grads[x] for x in xs}
    numeric = nx.finite_difference(lambda v: float(loss(v)[2].value[0, 0]), values)
    return nx.compare_gradients(analytic, numeric)


def _weighted_sum(tape, y, seed=1):
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return nx.sum_all(nx.mul(y, tape.constant(w)))


PRIMITIVES = {
    "matmul": (lambda t, a, b: _weighted_sum(t, nx.matmul(a, b)), [(3, 4), (4, 2)], {}),
    "transpose": (lambda t, a: _weighted_sum(t, nx.transpose(a)), [(3, 2)], {}),
    "add": (lambda t, a, b: _weighted_sum(t, nx.add(a, b)), [(3, 4), (3, 4)], {}),
    "add_row": (lambda t, a, b: _weighted_sum(t, nx.add(a, b)), [(3, 4), (1, 4)], {}),
    "sub": (lambda t, a, b: _weighted_sum(t, nx.sub(a, b)), [(2, 3), (2, 3)], {}),
    "mul": (lambda t, a, b: _weighted_sum(t, nx.mul(a, b)), [(2, 3), (2, 3)], {}),
    "scale": (lambda t, a: _weighted_sum(t, nx.scale(a, -2.5)), [(2, 3)], {}),
    "relu": (lambda t, a: _weighted_sum(t, nx.relu(a)), [(4, 3)], {"avoid_kink": True}),
    "log": (lambda t, a: _weighted_sum(t, nx.log(a)), [(2, 3)], {"positive": True}),
    "row_softmax": (lambda t, a: _weighted_sum(t, nx.row_softmax(a)), [(3, 4)], {}),
    "row_log_softmax": (lambda t, a: _weighted_sum(t, nx.row_log_softmax(a)), [(3, 4)], {}),
    "concat": (lambda t, a, b: _weighted_sum(t, nx.concat(a, b)), [(3, 2), (3, 3)], {}),
    "pick": (lambda t, a: _weighted_sum(t, nx.pick(a, [0, 2, 1])), [(3, 3)], {}),
    "row_normalize": (lambda t, a: _weighted_sum(t, nx.row_normalize(a)), [(3, 4)], {"positive": True}),
    "row_sums": (lambda t, a: _weighted_sum(t, nx.row_sums(a)), [(3, 4)], {}),
    "row_l2_normalize": (lambda t, a: _weighted_sum(t, nx.row_l2_normalize(a)), [(3, 4)], {}),
    "smooth_l1": (lambda t, a: _weighted_sum(t, nx.smooth_l1(nx.scale(a, 2.0))), [(4, 4)], {"avoid_kink": True}),
    "mean_all": (lambda t, a: nx.mean_all(nx.mul(a, a)), [(2, 5)], {}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients_match_finite_differences(name, seed):
    build, shapes, kw = PRIMITIVES[name]
    check = _grad_check(build, shapes, seed=seed, **kw)
    assert check.passed(1e-5, 1e-8), check


def test_shape_rules():
    tape = Tape()
    a = tape.leaf(np.ones((2, 3)))
    b = tape.leaf(np.ones((3, 4)))
    assert nx.matmul(a, b).shape == (2, 4)
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nx.matmul(a, a)
    with pytest.raises(DimensionError):
        nx.add(a, b)
    with pytest.raises(DimensionError):
        nx.concat(a, b)


def test_relu_definition_and_kink():
    tape = Tape()
    x = tape.leaf([[-1.0, 0.0, 2.0]], trainable=True)
    y = nx.relu(x)
    np.testing.assert_array_equal(y.value, [[0.0, 0.0, 2.0]])
    g = tape.backward(nx.sum_all(y))[x]
    # subgradient at exactly zero is 0
    np.testing.assert_array_equal(g, [[0.0, 0.0, 1.0]])


def test_row_softmax_symmetric():
    tape = Tape()
    np.testing.assert_array_equal(nx.row_softmax(tape.leaf([[0.0, 0.0]])).value, [[0.5, 0.5]])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-30, 30)))
def test_row_softmax_rows_are_distributions(x):
    y = nx.row_softmax(Tape().leaf(x)).value
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(y >= 0) and np.all(y <= 1)


def test_row_softmax_open_interval_for_moderate_inputs():
    x = np.random.default_rng(3).uniform(-5, 5, size=(6, 7))
    y = nx.row_softmax(Tape().leaf(x)).value
    assert np.all((y > 0) & (y < 1))


def test_square_gradient():
    tape = Tape()
    x = tape.leaf([[3.0]], trainable=True)
    assert tape.backward(nx.mul(x, x))[x][0, 0] == 6.0


def test_relu_blocks_upstream_gradient():
    tape = Tape()
    x = tape.leaf([[-1.0]], trainable=True)
    y = nx.scale(nx.relu(x), 5.0)
    assert tape.backward(y)[x][0, 0] == 0.0


def test_backward_requires_scalar_and_skips_constants():
    tape = Tape()
    x = tape.leaf(np.ones((2, 2)), trainable=True)
    c = tape.constant(np.full((2, 2), 2.0))
    y = nx.mul(x, c)
    with pytest.raises(ContractError):
        tape.backward(y)
    grads = tape.backward(nx.sum_all(y))
    assert list(grads) == [x]
    np.testing.assert_array_equal(grads[x], c.value)


def test_unused_trainable_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf([[1.0, 2.0]], trainable=True)
    unused = tape.leaf([[5.0]], trainable=True)
    grads = tape.backward(nx.sum_all(x))
    np.testing.assert_array_equal(grads[unused], [[0.0]])


def test_shared_subexpression_accumulates():
    tape = Tape()
    x = tape.leaf([[2.0]], trainable=True)
    y = nx.add(nx.mul(x, x), x)  # x^2 + x
    assert tape.backward(y)[x][0, 0] == 5.0


def test_non_finite_is_an_error():
    tape = Tape()
    with pytest.raises(NumericError):
        nx.log(tape.leaf([[0.0]]))
    with pytest.raises(NumericError):
        tape.leaf([[np.nan]])


def test_replay_is_bit_exact_and_forward_deterministic():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))

    def run():
        tape = Tape()
        y = nx.row_softmax(nx.relu(nx.matmul(tape.leaf(a), tape.leaf(b))))
        return tape, nx.sum_all(nx.log(y))

    t1, y1 = run()
    t2, y2 = run()
    assert y1.value.tobytes() == y2.value.tobytes()
    for rec, again in zip(t1.ops, t1.replay()):
        assert rec.output.value.tobytes() == again.tobytes()


def test_row_normalize_zero_rows_stay_zero():
    x = np.array([[0.0, 0.0, 0.0], [1.0, 3.0, 0.0]])
    y = nx.row_normalize(Tape().leaf(x)).value
    np.testing.assert_array_equal(y[0], 0.0)
    np.testing.assert_allclose(y[1], [0.25, 0.75, 0.0])


def test_gradient_backward_visits_ops_in_reverse():
    tape = Tape()
    x = tape.leaf([[1.0, -2.0]], trainable=True)
    y = nx.sum_all(nx.relu(nx.scale(x, 3.0)))
    seen = []
    for rec in tape.ops:
        orig = rec.vjp

        def spy(*args, _orig=orig, _op=rec.op):
            seen.append(_op)
            return _orig(*args)

        rec.vjp = spy
    tape.backward(y)
    assert seen == ["sum", "relu", "scale"]


def test_row_l2_normalize_survives_huge_rows():
    x = np.array([[3e200, 4e200], [3.0, 4.0]])
    y = nx.row_l2_normalize(Tape().leaf(x)).value
    np.testing.assert_allclose(y, [[0.6, 0.8], [0.6, 0.8]], rtol=1e-15)


def test_non_finite_gradient_is_an_error():
    tape = Tape()
    x = tape.leaf([[1e-300]], trainable=True)
    y = nx.log(x)
    with pytest.raises(NumericError):
        tape.backward(nx.scale(y, 1e300))
