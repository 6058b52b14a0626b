import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgda import tensor as T
from dgda.errors import DomainError, NumericError, ShapeError
from dgda.optim import Optimizer, optimizer_step
from dgda.tensor import Tape, Tensor


def leaf(data, name=None):
    return Tensor(np.asarray(data, dtype=float), requires_grad=True, name=name)


def grads_of(fn, *leaves):
    with Tape() as tape:
        root = fn(*leaves)
    return tape.backward(root, list(leaves))


class TestTensorBasics:
    def test_scalar_and_vector_promote_to_2d(self):
        assert Tensor(3.0).shape == (1, 1)
        assert Tensor([1, 2, 3]).shape == (1, 3)

    def test_rejects_3d(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2)))

    def test_item_requires_1x1(self):
        assert Tensor(2.5).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor([1, 2]).item()


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.5, -2.0], [0.25, 4.0]])
        assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_hand_value(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
        assert np.array_equal(out.data, [[3], [7]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_associativity(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            a, b, c = (Tensor(rng.standard_normal((4, 4))) for _ in range(3))
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
            assert np.max(np.abs(left - right)) < 1e-10


class TestElementwise:
    def test_relu(self):
        assert np.array_equal(T.elementwise("relu", Tensor([[-1, 2]])).data, [[0, 2]])

    def test_sigmoid_symmetry_point(self):
        assert T.elementwise("sigmoid", Tensor([[0.0]])).item() == 0.5

    def test_log_exp_inverse(self):
        out = T.elementwise("log", T.elementwise("exp", Tensor([[1.5]])))
        assert abs(out.item() - 1.5) < 1e-12

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            T.log(Tensor([[1.0, 0.0]]))

    def test_binary_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.elementwise("add", Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))

    def test_scale_needs_constant(self):
        assert T.elementwise("scale", Tensor([[2.0]]), c=3.0).item() == 6.0
        with pytest.raises(ShapeError):
            T.elementwise("scale", Tensor([[2.0]]))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            T.elementwise("tanh", Tensor([[0.0]]))

    def test_log_sigmoid_is_stable(self):
        out = T.log_sigmoid(Tensor([[-800.0, 800.0]])).data
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(-800.0)
        assert out[0, 1] == pytest.approx(0.0)


class TestConcatAndMean:
    def test_concat_shape(self):
        n = 3
        out = T.concat_cols([Tensor(np.zeros((n, 2))), Tensor(np.zeros((n, 3))), Tensor(np.zeros((n, 1)))])
        assert out.shape == (n, 6)

    def test_single_part_identity(self):
        x = Tensor(np.ones((2, 2)))
        assert T.concat_cols([x]) is x

    def test_concat_gradient_routes(self):
        a, b = leaf(np.ones((2, 3))), leaf(np.ones((2, 1)))
        ga, gb = grads_of(lambda a, b: T.sum_all(T.concat_cols([a, b])), a, b)
        assert np.array_equal(ga, np.ones((2, 3)))
        assert np.array_equal(gb, np.ones((2, 1)))

    def test_concat_row_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_cols([Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1)))])

    def test_mean_rows_hand_value(self):
        assert np.array_equal(T.mean_rows(Tensor([[2, 4], [4, 8]])).data, [[3, 6]])

    def test_mean_rows_single_row_and_zero(self):
        assert np.array_equal(T.mean_rows(Tensor([[1.0, -2.0]])).data, [[1.0, -2.0]])
        assert np.array_equal(T.mean_rows(Tensor(np.zeros((4, 3)))).data, np.zeros((1, 3)))

    def test_mean_rows_gradient(self):
        (g,) = grads_of(lambda x: T.sum_all(T.mean_rows(x)), leaf(np.ones((4, 2))))
        assert np.allclose(g, 0.25)

    def test_segment_mean_matches_mean_rows(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((7, 3))
        out = T.segment_mean(Tensor(x), [3, 4]).data
        assert np.allclose(out[0], x[:3].mean(0))
        assert np.allclose(out[1], x[3:].mean(0))


class TestBackward:
    def test_sum_gives_ones(self):
        (g,) = grads_of(T.sum_all, leaf(np.arange(6.0).reshape(2, 3)))
        assert np.array_equal(g, np.ones((2, 3)))

    def test_relu_sign_case(self):
        (g,) = grads_of(lambda w: T.sum_all(T.relu(w)), leaf([[-1.0, 1.0]]))
        assert np.array_equal(g, [[0.0, 1.0]])

    def test_non_scalar_root(self):
        w = leaf(np.ones((2, 2)))
        with Tape() as tape:
            out = T.relu(w)
        with pytest.raises(ShapeError):
            tape.backward(out, [w])

    def test_non_finite_root(self):
        w = leaf([[np.inf]])
        with Tape() as tape:
            out = T.sum_all(w)
        with pytest.raises(NumericError):
            tape.backward(out, [w])

    def test_non_contributing_param_gets_zero(self):
        a, b = leaf(np.ones((2, 2))), leaf(np.ones((3, 1)))
        with Tape() as tape:
            root = T.sum_all(a)
        ga, gb = tape.backward(root, [a, b])
        assert np.array_equal(gb, np.zeros((3, 1)))

    def test_mapping_form(self):
        a = leaf(np.ones((1, 2)))
        with Tape() as tape:
            root = T.sum_all(T.scale(a, 3.0))
        out = tape.backward(root, {"a": a})
        assert np.array_equal(out["a"], [[3.0, 3.0]])

    def test_linearity_over_independent_subgraphs(self):
        rng = np.random.default_rng(2)
        w = leaf(rng.standard_normal((3, 3)))
        f1 = lambda w: T.sum_all(T.sigmoid(T.matmul(w, w)))  # noqa: E731
        f2 = lambda w: T.sum_all(T.exp(T.scale(w, 0.3)))  # noqa: E731
        (g1,) = grads_of(f1, w)
        (g2,) = grads_of(f2, w)
        (g12,) = grads_of(lambda w: T.add(f1(w), f2(w)), w)
        assert np.allclose(g12, g1 + g2, atol=1e-12)

    def test_no_grad_records_nothing(self):
        w = leaf(np.ones((2, 2)))
        with Tape() as tape:
            with T.no_grad():
                T.sum_all(w)
        assert len(tape) == 0

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 4))
        f = lambda w: T.sum_all(T.log_sigmoid(T.matmul(w, T.transpose(w))))  # noqa: E731
        (g1,) = grads_of(f, leaf(x))
        (g2,) = grads_of(f, leaf(x))
        assert np.array_equal(g1, g2)

    def test_random_three_layer_composition(self):
        rng = np.random.default_rng(4)
        params = {f"W{i}": leaf(rng.standard_normal(s)) for i, s in enumerate([(3, 5), (5, 4), (4, 1)])}
        x = Tensor(rng.standard_normal((6, 3)))

        def f(p):
            h = T.relu(T.matmul(x, p["W0"]))
            h = T.sigmoid(T.matmul(h, p["W1"]))
            return T.sum_all(T.matmul(h, p["W2"]))

        assert T.grad_check(f, params, 1e-5) < 1e-4


class TestFusedOps:
    def test_propagate_variants_agree(self):
        rng = np.random.default_rng(5)
        blocks = [rng.random((3, 3)) for _ in range(2)]
        x = rng.standard_normal((6, 2))
        dense = np.zeros((6, 6))
        dense[:3, :3], dense[3:, 3:] = blocks
        ref = dense @ x
        assert np.allclose(T.propagate(blocks, Tensor(x)).data, ref)
        assert np.allclose(T.propagate(np.stack(blocks), Tensor(x)).data, ref)
        assert np.allclose(T.propagate(dense, Tensor(x)).data, ref)

    @pytest.mark.parametrize("sizes", [[3, 3], [2, 4]])
    def test_propagate_gradient(self, sizes):
        rng = np.random.default_rng(6)
        blocks = [rng.random((s, s)) for s in sizes]
        p = {"x": leaf(rng.standard_normal((sum(sizes), 2)))}
        assert T.grad_check(lambda p: T.sum_all(T.sigmoid(T.propagate(blocks, p["x"]))), p) < 1e-6

    @pytest.mark.parametrize("sizes", [[3, 3], [2, 4]])
    def test_segment_gram_bce_matches_composed_ops(self, sizes):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((sum(sizes), 3))
        targets = [(rng.random((s, s)) < 0.5).astype(float) for s in sizes]
        weights = [rng.random((s, s)) for s in sizes]
        fused = T.segment_gram_bce(Tensor(x), sizes, targets, weights).item()
        composed, lo = 0.0, 0
        for s, t, w in zip(sizes, targets, weights):
            xs = Tensor(x[lo:lo + s])
            composed += T.bce_with_logits(T.matmul(xs, T.transpose(xs)), t, w).item()
            lo += s
        assert fused == pytest.approx(composed, rel=1e-12)
        p = {"x": leaf(x)}
        assert T.grad_check(lambda p: T.segment_gram_bce(p["x"], sizes, targets, weights), p) < 1e-6

    def test_bce_with_logits_closed_form(self):
        out = T.bce_with_logits(Tensor(np.zeros((2, 2))), np.eye(2))
        assert out.item() == pytest.approx(4 * math.log(2), abs=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        p = {"W": leaf(np.random.default_rng(8).standard_normal((3, 3)))}
        assert T.grad_check(lambda p: T.sum_all(T.mul(p["W"], p["W"])), p) < 1e-8

    def test_zero_step_rejected(self):
        with pytest.raises(ValueError):
            T.grad_check(lambda p: T.sum_all(p["W"]), {"W": leaf([[1.0]])}, step=0)

    def test_non_finite_probe(self):
        p = {"W": leaf([[1e-7]])}
        with pytest.raises((NumericError, DomainError)):
            T.grad_check(lambda p: T.sum_all(T.log(p["W"])), p, step=1e-5)

    def test_detects_wrong_rule(self):
        def bad_square(x):
            return T.make_op(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2

        p = {"W": leaf([[1.0, 2.0]])}
        assert T.grad_check(lambda p: T.sum_all(bad_square(p["W"])), p) > 0.1


_UNARY_SAFE = ["relu", "sigmoid", "exp", "log_sigmoid", "square"]


@st.composite
def expressions(draw):
    rows = draw(st.integers(1, 8))
    inner = draw(st.integers(1, 8))
    cols = draw(st.integers(1, 8))
    seed = draw(st.integers(0, 2**31 - 1))
    ops = draw(st.lists(st.sampled_from(_UNARY_SAFE), min_size=1, max_size=3))
    return rows, inner, cols, seed, ops


class TestGradientProperty:
    @settings(max_examples=40, deadline=None)
    @given(expressions())
    def test_composed_expression_matches_finite_differences(self, case):
        rows, inner, cols, seed, ops = case
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((rows, inner)))
        # keep ReLU inputs away from the kink so central differences are valid
        w0 = rng.standard_normal((inner, cols)) * 0.5
        p = {"W": leaf(w0), "b": leaf(rng.standard_normal((1, cols)) * 0.5)}

        def f(p):
            h = T.add_row(T.matmul(x, p["W"]), p["b"])
            for op in ops:
                if op == "square":
                    h = T.mul(h, h)
                elif op == "log_sigmoid":
                    h = T.log_sigmoid(h)
                else:
                    h = T.elementwise(op, T.clip(h, -5.0, 5.0) if op == "exp" else h)
            return T.sum_all(T.scale(h, 1.0 / (rows * cols)))

        with T.no_grad():
            pre = (x.data @ w0 + p["b"].data)
        if "relu" in ops and np.min(np.abs(pre)) < 1e-3:
            return
        assert T.grad_check(f, p, 1e-5) < 1e-4


class TestOptimizer:
    def test_sgd_rule(self):
        p = {"w": leaf([[1.0]])}
        optimizer_step(Optimizer("sgd", 0.1), p, {"w": np.array([[1.0]])})
        assert p["w"].data[0, 0] == pytest.approx(0.9, abs=1e-15)

    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_zero_lr_is_bitwise_identity(self, kind):
        rng = np.random.default_rng(9)
        before = rng.standard_normal((3, 2))
        p = {"w": leaf(before.copy())}
        opt = Optimizer(kind, 0.0, weight_decay=0.5)
        for _ in range(5):
            optimizer_step(opt, p, {"w": rng.standard_normal((3, 2))})
        assert np.array_equal(p["w"].data, before)

    def test_pure_decay(self):
        lr, wd = 0.01, 0.0005
        p = {"w": leaf([[2.0]])}
        optimizer_step(Optimizer("sgd", lr, wd), p, {"w": np.zeros((1, 1))})
        assert p["w"].data[0, 0] == pytest.approx(2.0 * (1 - lr * wd), abs=1e-15)

    def test_adam_first_step_is_sign_times_lr(self):
        p = {"w": leaf([[1.0, -1.0]])}
        optimizer_step(Optimizer("adam", 0.1), p, {"w": np.array([[3.0, -0.5]])})
        assert np.allclose(p["w"].data, [[0.9, -0.9]], atol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            optimizer_step(Optimizer(), {"w": leaf([[1.0]])}, {"w": np.zeros((2, 1))})

    def test_state_round_trip(self):
        rng = np.random.default_rng(10)
        a, b = {"w": leaf([[1.0, 2.0]])}, {"w": leaf([[1.0, 2.0]])}
        opt = Optimizer("adam", 0.05, 0.001)
        g = rng.standard_normal((1, 2))
        opt.step(a, {"w": g})
        clone = Optimizer.from_state(opt.state_dict())
        b["w"].data[:] = a["w"].data
        opt.step(a, {"w": g})
        clone.step(b, {"w": g})
        assert np.array_equal(a["w"].data, b["w"].data)
