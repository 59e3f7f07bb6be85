import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from core.tensor import (
    AttentionParams,
    LinearParams,
    Tensor,
    backward,
    binary_cross_entropy_with_logits,
    concat,
    gelu,
    grad_check,
    iter_parameters,
    layer_norm,
    linear,
    multi_head_attention,
    no_grad,
    scatter_rows,
    softmax_rows,
)
from core.utils.errors import ContractError, DimensionError, NonFiniteError, SingularityError


class TensorOpTests(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_add_broadcast_backward_sums_back(self):
        a = Tensor(self.rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(self.rng.normal(size=(4,)), requires_grad=True)
        backward((a + b).sum())
        assert_allclose(a.grad, np.ones((3, 4)))
        assert_allclose(b.grad, np.full(4, 3.0))

    def test_matmul_gradients(self):
        a = Tensor(self.rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(self.rng.normal(size=(3, 5)), requires_grad=True)
        backward((a @ b).sum())
        assert_allclose(a.grad, np.ones((2, 5)) @ b.data.T)
        assert_allclose(b.grad, a.data.T @ np.ones((2, 5)))

    def test_matmul_rejects_bad_shapes(self):
        with self.assertRaises(DimensionError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        with self.assertRaises(DimensionError):
            Tensor(np.ones(3)) @ Tensor(np.ones((3, 1)))

    def test_non_finite_input_and_results_raise(self):
        with self.assertRaises(NonFiniteError):
            Tensor([1.0, float("nan")])
        with self.assertRaises(NonFiniteError):
            Tensor([0.0]).log()

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with self.assertRaises(ContractError):
            backward(x * 2.0)

    def test_shared_subexpression_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x + x
        backward(y.sum())
        assert_allclose(x.grad, [5.0])

    def test_tape_is_freed_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        hidden = x.exp()
        loss = hidden.sum()
        backward(loss)
        self.assertEqual(hidden._prev, ())
        self.assertIsNone(hidden.grad)
        self.assertIsNotNone(x.grad)

    def test_untouched_params_get_zero_grad(self):
        x = Tensor([1.0], requires_grad=True)
        unused = Tensor([[1.0, 2.0]], requires_grad=True)
        backward((x * 3.0).sum(), [x, unused])
        assert_allclose(unused.grad, np.zeros((1, 2)))

    def test_listed_op_result_keeps_its_gradient(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        joined = concat([a, b])
        weights = Tensor([1.0, -2.0, 0.5])
        backward((joined * weights).sum(), [joined])
        assert_allclose(joined.grad, [1.0, -2.0, 0.5])
        self.assertEqual(joined._prev, ())
        self.assertTrue(joined.requires_grad)

    def test_grad_check_on_joined_inputs(self):
        a = Tensor(self.rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(self.rng.normal(size=(1, 3)), requires_grad=True)
        joined = concat([a, b])
        w = Tensor(self.rng.normal(size=(3, 3)))
        self.assertLess(grad_check(lambda: ((joined @ w).tanh()).sum(), [joined]), 1e-6)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        self.assertFalse(y.requires_grad)
        self.assertEqual(y._prev, ())

    def test_index_backward_scatters(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        backward(x[np.array([0, 0, 2])].sum())
        assert_allclose(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])

    def test_concat_splits_gradient(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 2)), requires_grad=True)
        out = concat([a, b], axis=0)
        self.assertEqual(out.shape, (3, 2))
        backward((out * Tensor(np.arange(6.0).reshape(3, 2))).sum())
        assert_allclose(b.grad, [[4.0, 5.0]])


class FunctionalTests(TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)

    def test_softmax_rows_sum_to_one(self):
        y = softmax_rows(Tensor(self.rng.normal(size=(4, 6)) * 50.0))
        assert_allclose(y.data.sum(axis=1), np.ones(4))

    def test_layer_norm_normalizes(self):
        x = Tensor(self.rng.normal(3.0, 2.0, size=(5, 8)))
        y = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), 1e-6)
        assert_allclose(y.data.mean(axis=1), np.zeros(5), atol=1e-12)
        assert_allclose(y.data.std(axis=1), np.ones(5), atol=1e-5)

    def test_layer_norm_single_channel_without_eps_is_singular(self):
        with self.assertRaises(SingularityError):
            layer_norm(Tensor(np.ones((3, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)), 0.0)

    def test_gelu_known_values(self):
        y = gelu(Tensor([0.0, 100.0, -100.0]))
        assert_allclose(y.data, [0.0, 100.0, 0.0], atol=1e-12)

    def test_linear_checks_width(self):
        p = LinearParams.create(3, 2, self.rng)
        with self.assertRaises(DimensionError):
            linear(Tensor(np.ones((4, 5))), p)

    def test_multi_head_attention_shapes(self):
        p = AttentionParams.create(8, self.rng)
        out, weights = multi_head_attention(
            Tensor(self.rng.normal(size=(3, 8))), Tensor(self.rng.normal(size=(5, 8))), p, 2
        )
        self.assertEqual(out.shape, (3, 8))
        self.assertEqual(weights.shape, (2, 3, 5))
        assert_allclose(weights.sum(axis=2), np.ones((2, 3)))

    def test_scatter_rows_zero_fills(self):
        out = scatter_rows(Tensor([[1.0], [2.0]]), [0, 2], 3)
        assert_allclose(out.data, [[1.0], [0.0], [2.0]])
        with self.assertRaises(ContractError):
            scatter_rows(Tensor([[1.0]]), [0, 1], 3)

    def test_bce_at_zero_logits_is_ln2(self):
        loss = binary_cross_entropy_with_logits(Tensor(np.zeros(10)), self.rng.uniform(size=10))
        self.assertAlmostEqual(loss.item(), math.log(2.0), places=12)

    def test_grad_check_on_attention(self):
        p = AttentionParams.create(4, self.rng)
        x = Tensor(self.rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(self.rng.normal(size=(3, 4)))

        def loss():
            return (multi_head_attention(x, x, p, 2)[0] * w).sum()

        params = [x] + [t for _, t in iter_parameters(p)]
        self.assertLessEqual(grad_check(loss, params), 1e-4)

    def test_iter_parameters_dedupes_tied_tensors(self):
        shared = LinearParams.create(2, 2, self.rng)
        names = [name for name, _ in iter_parameters({"a": shared, "b": shared})]
        self.assertEqual(names, ["a.weight", "a.bias"])
