"""Kernel tests: forward semantics, tape gradients vs finite differences,
layout round-trips, and dropout statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgct import numkit as nk
from mgct.gradcheck import finite_difference, relative_error

GRAD_TOL = 1e-5


def rand(rows, cols, seed=0, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, (rows, cols))


def check_unary(build, x, tol=GRAD_TOL):
    """Tape gradient of sum(weighted(op(x))) against central differences."""
    w = np.linspace(0.3, 1.7, x.size).reshape(x.shape)

    def f(p):
        return nk.sum_all(nk.mul(build(nk.Tensor(p["x"])), nk.Tensor(w))).item()

    tape = nk.Tape()
    leaf = tape.leaf(x)
    loss = nk.sum_all(nk.mul(build(leaf), nk.Tensor(w)))
    grads = nk.backward(loss, tape)
    err = relative_error(grads[leaf], finite_difference(f, {"x": x})["x"])
    assert err < tol, f"gradient mismatch: rel err {err}"


class TestMatmul:
    def test_identity(self):
        a = rand(3, 3, seed=1)
        out = nk.matmul(nk.Tensor(np.eye(3)), nk.Tensor(a))
        np.testing.assert_array_equal(out.data, a)
        out = nk.matmul(nk.Tensor(a), nk.Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, a)

    def test_hand_example(self):
        out = nk.matmul(nk.Tensor([[1, 2], [3, 4]]), nk.Tensor([[1], [1]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(nk.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nk.matmul(nk.Tensor(np.zeros((2, 3))), nk.Tensor(np.zeros((2, 3))))

    def test_gradient_both_operands(self):
        a, b = rand(5, 4, seed=2), rand(4, 3, seed=3)

        def f(p):
            return nk.sum_all(nk.matmul(nk.Tensor(p["a"]), nk.Tensor(p["b"]))).item()

        tape = nk.Tape()
        la, lb = tape.leaf(a), tape.leaf(b)
        grads = nk.backward(nk.sum_all(nk.matmul(la, lb)), tape)
        fd = finite_difference(f, {"a": a, "b": b})
        assert relative_error(grads[la], fd["a"]) < 1e-6
        assert relative_error(grads[lb], fd["b"]) < 1e-6


class TestSoftmaxRows:
    def test_uniform_row(self):
        out = nk.softmax_rows(nk.Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3] * 3], atol=1e-15)

    def test_large_values_do_not_overflow(self):
        out = nk.softmax_rows(nk.Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0, 0] > 1 - 1e-12 and out.data[0, 1] < 1e-12

    def test_rows_sum_to_one(self):
        x = rand(7, 9, seed=4, lo=-30, hi=30)
        out = nk.softmax_rows(nk.Tensor(x))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)

    def test_gradient(self):
        check_unary(nk.softmax_rows, rand(3, 4, seed=5))


class TestElementwise:
    def test_fixed_points(self):
        zero = nk.Tensor([[0.0]])
        assert nk.tanh(zero).item() == 0.0
        assert nk.sigmoid(zero).item() == 0.5
        assert nk.elu(zero).item() == 0.0
        assert nk.relu(zero).item() == 0.0

    def test_elu_negative_closed_form(self):
        out = nk.elu(nk.Tensor([[-1.0]]))
        assert out.item() == pytest.approx(np.exp(-1.0) - 1.0, abs=1e-15)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown elementwise kind"):
            nk.elementwise(nk.Tensor([[1.0]]), "gelu")

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu", "elu"])
    def test_gradients(self, kind):
        # offset away from 0 so relu's kink never sits on a sample point
        x = rand(3, 4, seed=6) + 0.11
        check_unary(lambda t: nk.elementwise(t, kind), x)


class TestConcatSplit:
    def test_shapes(self):
        a, b = nk.Tensor(rand(2, 3, seed=7)), nk.Tensor(rand(2, 3, seed=8))
        assert nk.concat(a, b, "cols").shape == (2, 6)
        assert nk.concat(a, b, "rows").shape == (4, 3)

    def test_row_stack_of_vectors(self):
        a, b = nk.Tensor(rand(1, 5, seed=9)), nk.Tensor(rand(1, 5, seed=10))
        assert nk.concat(a, b, "rows").shape == (2, 5)

    def test_roundtrip_bitwise(self):
        a, b = rand(4, 3, seed=11), rand(4, 5, seed=12)
        back = nk.split(nk.concat(nk.Tensor(a), nk.Tensor(b), "cols"), [3, 5], "cols")
        assert np.array_equal(back[0].data, a)
        assert np.array_equal(back[1].data, b)

    def test_axis_mismatch(self):
        with pytest.raises(nk.ShapeError, match="column counts differ"):
            nk.concat(nk.Tensor(np.zeros((2, 3))), nk.Tensor(np.zeros((2, 4))), "rows")
        with pytest.raises(nk.ShapeError, match="row counts differ"):
            nk.concat(nk.Tensor(np.zeros((2, 3))), nk.Tensor(np.zeros((3, 3))), "cols")

    def test_gradient_splits_correctly(self):
        a, b = rand(2, 3, seed=13), rand(2, 2, seed=14)
        w = rand(2, 5, seed=15)
        tape = nk.Tape()
        la, lb = tape.leaf(a), tape.leaf(b)
        loss = nk.sum_all(nk.mul(nk.concat(la, lb, "cols"), nk.Tensor(w)))
        grads = nk.backward(loss, tape)
        np.testing.assert_allclose(grads[la], w[:, :3], atol=1e-15)
        np.testing.assert_allclose(grads[lb], w[:, 3:], atol=1e-15)


class TestBackward:
    def test_sum_gives_ones(self):
        w = rand(3, 4, seed=16)
        tape = nk.Tape()
        leaf = tape.leaf(w)
        grads = nk.backward(nk.sum_all(leaf), tape)
        np.testing.assert_array_equal(grads[leaf], np.ones_like(w))

    def test_squared_norm_gives_2w(self):
        w = rand(3, 4, seed=17)
        tape = nk.Tape()
        leaf = tape.leaf(w)
        grads = nk.backward(nk.sum_all(nk.mul(leaf, leaf)), tape)
        np.testing.assert_allclose(grads[leaf], 2 * w, atol=1e-14)

    def test_reused_tensor_accumulates(self):
        w = rand(2, 2, seed=18)
        tape = nk.Tape()
        leaf = tape.leaf(w)
        grads = nk.backward(nk.sum_all(nk.add(leaf, leaf)), tape)
        np.testing.assert_array_equal(grads[leaf], 2 * np.ones_like(w))

    def test_non_scalar_loss_rejected(self):
        tape = nk.Tape()
        leaf = tape.leaf(rand(2, 2, seed=19))
        with pytest.raises(ValueError, match="1x1"):
            nk.backward(nk.add(leaf, leaf), tape)

    def test_unreached_leaf_gets_zeros(self):
        tape = nk.Tape()
        used = tape.leaf(rand(2, 2, seed=20))
        unused = tape.leaf(rand(3, 3, seed=21))
        grads = nk.backward(nk.sum_all(used), tape)
        np.testing.assert_array_equal(grads[unused], np.zeros((3, 3)))

    def test_mixed_tapes_rejected(self):
        t1, t2 = nk.Tape(), nk.Tape()
        with pytest.raises(ValueError, match="different tapes"):
            nk.add(t1.leaf(np.ones((2, 2))), t2.leaf(np.ones((2, 2))))


class TestBroadcastAdd:
    def test_column_bias(self):
        x, b = rand(3, 4, seed=22), rand(3, 1, seed=23)
        np.testing.assert_array_equal(nk.add(nk.Tensor(x), nk.Tensor(b)).data, x + b)

    def test_bias_gradient_sums_over_broadcast_axis(self):
        x, b = rand(3, 4, seed=24), rand(3, 1, seed=25)
        tape = nk.Tape()
        lb = tape.leaf(b)
        grads = nk.backward(nk.sum_all(nk.add(nk.Tensor(x), lb)), tape)
        np.testing.assert_array_equal(grads[lb], np.full((3, 1), 4.0))

    def test_misaligned_shapes_rejected(self):
        with pytest.raises(nk.ShapeError):
            nk.add(nk.Tensor(np.zeros((3, 4))), nk.Tensor(np.zeros((2, 4))))


class TestAlphaDropout:
    def test_p_zero_is_identity(self):
        x = nk.Tensor(rand(4, 4, seed=26))
        assert nk.alpha_dropout(x, 0.0, (1, 2, 3), training=True) is x

    def test_eval_mode_is_identity(self):
        x = nk.Tensor(rand(4, 4, seed=27))
        assert nk.alpha_dropout(x, 0.7, (1, 2, 3), training=False) is x

    def test_p_out_of_range(self):
        x = nk.Tensor(rand(2, 2, seed=28))
        with pytest.raises(ValueError):
            nk.alpha_dropout(x, 1.0, (0, 0, 0), training=True)
        with pytest.raises(ValueError):
            nk.alpha_dropout(x, -0.1, (0, 0, 0), training=True)

    def test_deterministic_per_key(self):
        x = nk.Tensor(rand(8, 8, seed=29))
        a = nk.alpha_dropout(x, 0.5, (3, 1, 7), training=True)
        b = nk.alpha_dropout(x, 0.5, (3, 1, 7), training=True)
        c = nk.alpha_dropout(x, 0.5, (3, 1, 8), training=True)
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_standard_normal_moments_preserved(self):
        # Monte Carlo oracle: self-normalization should hold at p = 0.5
        z = np.random.default_rng(30).standard_normal((1000, 1000))
        out = nk.alpha_dropout(nk.Tensor(z), 0.5, (42, 0, 0), training=True)
        assert abs(out.data.mean()) < 0.01
        assert abs(out.data.var() - 1.0) < 0.05

    def test_gradient_through_mask(self):
        x = rand(4, 5, seed=31)
        check_unary(lambda t: nk.alpha_dropout(t, 0.4, (9, 9, 9), training=True), x)


class TestScalarHelpers:
    def test_mean_all(self):
        x = rand(3, 4, seed=32)
        assert nk.mean_all(nk.Tensor(x)).item() == pytest.approx(x.mean(), abs=1e-15)

    def test_clamp_gradient_masks_outside(self):
        x = np.array([[-2.0, 0.5, 2.0]])
        tape = nk.Tape()
        leaf = tape.leaf(x)
        grads = nk.backward(nk.sum_all(nk.clamp(leaf, -1.0, 1.0)), tape)
        np.testing.assert_array_equal(grads[leaf], [[0.0, 1.0, 0.0]])

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="positive"):
            nk.log(nk.Tensor([[0.0]]))

    def test_transpose_roundtrip(self):
        x = rand(3, 5, seed=33)
        np.testing.assert_array_equal(nk.transpose(nk.transpose(nk.Tensor(x))).data, x)


# ---------------------------------------------------------------------------
# property tests

shapes = st.tuples(st.integers(1, 16), st.integers(1, 16))


@settings(max_examples=60, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**31 - 1))
def test_no_public_op_emits_nonfinite(shape, seed):
    rng = np.random.default_rng(seed)
    x = nk.Tensor(rng.uniform(-2, 2, shape))
    y = nk.Tensor(rng.uniform(-2, 2, shape))
    outs = [
        nk.add(x, y),
        nk.sub(x, y),
        nk.mul(x, y),
        nk.softmax_rows(x),
        nk.tanh(x),
        nk.sigmoid(x),
        nk.relu(x),
        nk.elu(x),
        nk.matmul(x, nk.transpose(y)),
        nk.alpha_dropout(x, 0.5, (seed, 0, 0), training=True),
        nk.concat(x, y, "rows"),
    ]
    for out in outs:
        assert np.all(np.isfinite(out.data))


@settings(max_examples=60, deadline=None)
@given(shape=shapes, seed=st.integers(0, 2**31 - 1))
def test_softmax_simplex_property(shape, seed):
    x = np.random.default_rng(seed).uniform(-50, 50, shape)
    out = nk.softmax_rows(nk.Tensor(x)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    m=st.integers(1, 6),
    k=st.integers(1, 6),
    n=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
)
def test_matmul_gradient_property(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-2, 2, (m, k)), rng.uniform(-2, 2, (k, n))

    def f(p):
        return nk.sum_all(nk.matmul(nk.Tensor(p["a"]), nk.Tensor(p["b"]))).item()

    tape = nk.Tape()
    la, lb = tape.leaf(a), tape.leaf(b)
    grads = nk.backward(nk.sum_all(nk.matmul(la, lb)), tape)
    fd = finite_difference(f, {"a": a, "b": b})
    assert relative_error(grads[la], fd["a"]) < 1e-4
    assert relative_error(grads[lb], fd["b"]) < 1e-4
