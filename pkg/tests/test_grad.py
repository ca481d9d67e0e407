"""
File: tests/test_grad.py
Description: Tests for the reverse-mode differentiation engine. Every op and
500 seeded random graphs are checked against central finite differences;
shape errors, stop-gradient, straight-through and no_grad are checked
directly.
"""

# Third-Party Imports
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

# Internal Imports
from app.core import grad as G
from app.core.errors import GraphError, ShapeError
from app.core.nn import MLP, GRUCell

EPS = 1e-4


def numeric_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central differences of the scalar fn(x) at every entry of x."""
    out = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[index] += EPS
        down[index] -= EPS
        out[index] = (fn(up) - fn(down)) / (2 * EPS)
    return out


def analytic_grad(build, x: np.ndarray) -> np.ndarray:
    leaf = G.parameter(x)
    G.backward(build(leaf))
    return leaf.grad


WEIGHTS = np.array([[0.3, -1.2, 0.7], [1.5, 0.2, -0.4]])

UNARY_CASES = {
    "square": lambda t: (t.square() * WEIGHTS).sum(),
    "exp": lambda t: (t.exp() * WEIGHTS).sum(),
    "log": lambda t: ((t.square() + 1.0).log() * WEIGHTS).sum(),
    "tanh": lambda t: (t.tanh() * WEIGHTS).sum(),
    "sigmoid": lambda t: (t.sigmoid() * WEIGHTS).sum(),
    "elu": lambda t: (t.elu() * WEIGHTS).sum(),
    "softplus": lambda t: (t.softplus() * WEIGHTS).sum(),
    "softmax": lambda t: (G.softmax(t, axis=-1) * WEIGHTS).sum(),
    "log_softmax": lambda t: (G.log_softmax(t, axis=0) * WEIGHTS).sum(),
    "divide": lambda t: (WEIGHTS / (t.square() + 2.0)).sum(),
    "mean_axis": lambda t: (t.mean(axis=1) * np.array([2.0, -1.0])).sum(),
    "reshape": lambda t: (t.reshape(3, 2) * WEIGHTS.T).sum(),
    "index": lambda t: (t[1] * np.array([1.0, 2.0, 3.0])).sum(),
    "matmul": lambda t: (t @ G.as_tensor(WEIGHTS.T)).square().sum(),
    "concat": lambda t: (G.concat([t, t * 2.0], axis=0).square()).sum(),
    "broadcast": lambda t: (t * G.as_tensor(np.array([1.0, -2.0, 0.5]))).sum(),
}


def _value(build, x: np.ndarray) -> float:
    return build(G.Tensor(x)).item()


class TestFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(UNARY_CASES))
    def test_analytic_gradient_matches_central_differences(self, name):
        # Arrange
        build = UNARY_CASES[name]
        x = np.array([[0.4, -0.8, 1.1], [-0.3, 0.9, 0.25]])

        # Act
        analytic = analytic_grad(build, x)
        numeric = numeric_grad(lambda v: _value(build, v), x)

        # Assert
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_both_operands_of_a_product_receive_gradients(self):
        a = G.parameter(np.array([1.0, 2.0]))
        b = G.parameter(np.array([3.0, -1.0]))

        G.backward((a * b).sum())

        np.testing.assert_array_equal(a.grad, [3.0, -1.0])
        np.testing.assert_array_equal(b.grad, [1.0, 2.0])

    def test_shared_subexpression_accumulates(self):
        x = G.parameter(np.array(2.0))
        y = x * x

        G.backward(y + y)

        assert x.grad == pytest.approx(8.0)

    @settings(max_examples=40, deadline=None)
    @given(
        values=arrays(
            np.float64,
            (3, 4),
            elements=st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False),
        )
    )
    def test_sum_of_tanh_property(self, values):
        analytic = analytic_grad(lambda t: t.tanh().sum(), values)

        np.testing.assert_allclose(analytic, 1.0 - np.tanh(values) ** 2, atol=1e-12)


class TestGraphControls:
    def test_stop_gradient_blocks_the_path(self):
        x = G.parameter(np.array([1.0, 2.0]))

        G.backward((G.stop_gradient(x) * x).sum())

        np.testing.assert_array_equal(x.grad, [1.0, 2.0])

    def test_straight_through_forwards_hard_and_backwards_soft(self):
        soft = G.parameter(np.array([0.2, 0.8]))

        out = G.straight_through(np.array([0.0, 1.0]), soft)
        G.backward((out * np.array([5.0, 7.0])).sum())

        np.testing.assert_array_equal(out.data, [0.0, 1.0])
        np.testing.assert_array_equal(soft.grad, [5.0, 7.0])

    def test_straight_through_rejects_shape_mismatch(self):
        with pytest.raises(ShapeError):
            G.straight_through(np.zeros(3), G.parameter(np.zeros(2)))

    def test_no_grad_builds_no_record(self):
        x = G.parameter(np.ones(3))

        with G.no_grad():
            y = (x * 2.0).sum()

        assert not y.requires_grad
        assert G.is_grad_enabled()

    def test_frozen_leaf_collects_nothing(self):
        x = G.parameter(np.ones(2))
        frozen = G.parameter(np.ones(2))
        frozen.requires_grad = False

        G.backward((x * frozen).sum())

        assert frozen.grad is None
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_backward_needs_a_scalar(self):
        with pytest.raises(GraphError):
            G.backward(G.parameter(np.ones(3)) * 2.0)

    def test_record_is_topologically_ordered(self):
        x = G.parameter(np.ones(2))
        loss = (x.exp() + x).sum()

        record = G.backward(loss)

        assert record.nodes[-1] is loss
        assert record.nodes.index(x) < len(record) - 1


class TestShapeErrors:
    @pytest.mark.parametrize(
        "build",
        [
            lambda: G.as_tensor(np.ones(3)) + np.ones(4),
            lambda: G.as_tensor(np.ones((2, 3))) @ np.ones((2, 3)),
            lambda: G.concat([np.ones((2, 3)), np.ones((3, 2))], axis=0),
            lambda: G.as_tensor(np.ones(6)).reshape(4, 2),
            lambda: G.affine(np.ones(2), np.ones((2, 3)), np.ones(2)),
        ],
        ids=["add", "matmul", "concat", "reshape", "affine-bias"],
    )
    def test_nonconforming_shapes_raise(self, build):
        with pytest.raises(ShapeError):
            build()

    def test_item_needs_one_value(self):
        with pytest.raises(ShapeError):
            G.as_tensor(np.ones(2)).item()


# Random composed graphs: a program of ops over two (2, 3) inputs, a (3, 3)
# weight and a bias, executed the same way for the analytic and numeric pass.
UNARY_OPS = {
    "tanh": lambda a: a.tanh(),
    "sigmoid": lambda a: a.sigmoid(),
    "elu": lambda a: a.elu(),
    "softplus": lambda a: a.softplus(),
    "exp": lambda a: a.tanh().exp(),
    "square": lambda a: 0.5 * a.square(),
    "log": lambda a: (a.square() + 1.0).log(),
    "softmax": lambda a: G.softmax(a, axis=-1),
    "log_softmax": lambda a: G.log_softmax(a, axis=-1),
}
BINARY_OPS = {
    "add": lambda a, b, W, c: a + b,
    "sub": lambda a, b, W, c: a - b,
    "mul": lambda a, b, W, c: a * b,
    "div": lambda a, b, W, c: a / (b.square() + 1.0),
    "matmul": lambda a, b, W, c: a @ W + b,
    "affine": lambda a, b, W, c: G.affine(a, W, c) * b.sigmoid(),
    "concat": lambda a, b, W, c: G.concat([a, b], axis=1).reshape(2, 3, 2).sum(axis=-1),
    "mean": lambda a, b, W, c: a * b.mean(),
}
GRAPH_EPS = 1e-4
GRAPHS = 500
BLOCKS = 10


def random_program(rng: np.random.Generator):
    """(leaf values, program); each step reads earlier nodes by index."""
    leaves = [
        rng.uniform(-2.0, 2.0, size=(2, 3)),
        rng.uniform(-2.0, 2.0, size=(2, 3)),
        rng.uniform(-2.0, 2.0, size=(3, 3)),
        rng.uniform(-2.0, 2.0, size=3),
    ]
    program = []
    for step in range(int(rng.integers(2, 7))):
        pool = step + 2
        if rng.random() < 0.5:
            name = str(rng.choice(sorted(UNARY_OPS)))
            program.append((name, int(rng.integers(pool)), None))
        else:
            name = str(rng.choice(sorted(BINARY_OPS)))
            program.append((name, int(rng.integers(pool)), int(rng.integers(pool))))
    readout = rng.normal(size=(2, 3))
    return leaves, program, readout


def run_program(tensors, program, readout) -> G.Tensor:
    x, y, W, c = tensors
    nodes = [x, y]
    for name, i, j in program:
        if j is None:
            nodes.append(UNARY_OPS[name](nodes[i]))
        else:
            nodes.append(BINARY_OPS[name](nodes[i], nodes[j], W, c))
    total = (nodes[-1] * readout).sum()
    for node in nodes[:-1]:
        total = total + 0.1 * node.mean()
    return total


def central_difference(evaluate, values: np.ndarray, eps: float = GRAPH_EPS) -> np.ndarray:
    out = np.zeros_like(values)
    for index in np.ndindex(values.shape):
        saved = values[index]
        values[index] = saved + eps
        up = evaluate()
        values[index] = saved - eps
        down = evaluate()
        values[index] = saved
        out[index] = (up - down) / (2 * eps)
    return out


def assert_gradient(analytic, numeric):
    """Relative error below 1e-4, or absolute below 1e-6 where the gradient vanishes."""
    analytic = np.zeros_like(numeric) if analytic is None else analytic
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


class TestRandomGraphs:
    @pytest.mark.parametrize("block", range(BLOCKS))
    def test_random_graphs_match_central_differences(self, block):
        per_block = GRAPHS // BLOCKS
        for seed in range(block * per_block, (block + 1) * per_block):
            # Arrange
            leaves, program, readout = random_program(np.random.default_rng(seed))
            params = [G.parameter(v.copy()) for v in leaves]

            # Act
            G.backward(run_program(params, program, readout))

            # Assert
            for k, param in enumerate(params):
                values = [p.data.copy() for p in params]

                def evaluate(values=values):
                    with G.no_grad():
                        tensors = [G.Tensor(v) for v in values]
                        return run_program(tensors, program, readout).item()

                assert_gradient(param.grad, central_difference(evaluate, values[k]))

    def test_tanh_mlp_matches_central_differences(self, rng):
        mlp = MLP([3, 4, 2], rng, activation="tanh")
        x = rng.uniform(-2.0, 2.0, size=(5, 3))
        weights = rng.normal(size=(5, 2))

        def loss():
            return (mlp(G.as_tensor(x)) * weights).sum()

        G.backward(loss())

        for param in mlp.parameters():
            with G.no_grad():
                numeric = central_difference(lambda: loss().item(), param.data)
            assert_gradient(param.grad, numeric)

    def test_unrolled_gru_matches_central_differences(self, rng):
        cell = GRUCell(2, 3, rng)
        inputs = rng.uniform(-2.0, 2.0, size=(3, 4, 2))
        weights = rng.normal(size=(4, 3))

        def loss():
            h = G.as_tensor(np.zeros((4, 3)))
            for x in inputs:
                h = cell(G.as_tensor(x), h)
            return (h * weights).sum()

        G.backward(loss())

        for param in cell.parameters():
            with G.no_grad():
                numeric = central_difference(lambda: loss().item(), param.data)
            assert_gradient(param.grad, numeric)
