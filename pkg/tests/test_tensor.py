import math
import unittest

import numpy as np

from selection_tools.errors import DimensionException, StateException, TargetIndexException
from selection_tools.tensor import (GradTape, Tensor, add, backward, binary_cross_entropy_with_logits,
                                    concat, conv, matmul, mul, relu, reshape, scale, sgd_step,
                                    softmax, softmax_cross_entropy, total)

EPS = 1e-6


def away_from_zero(rng, shape):
    return rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def gradient_gap(build, arrays, seed):
    '''(analytic, numeric) gradient pairs per operand for sum(build(...) * r), the
    numeric side by central finite differences.'''
    rng = np.random.default_rng(seed)
    tape = GradTape()
    tensors = [tape.watch(Tensor(a)) for a in arrays]
    out = build(*tensors, tape=tape)
    r = rng.normal(size=out.shape)
    backward(total(mul(out, Tensor(r), tape=tape), tape=tape))

    def value(values):
        return float(np.sum(build(*[Tensor(v) for v in values], tape=None).data * r))

    pairs = []
    for i, a in enumerate(arrays):
        numeric = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[i][idx] += EPS
            minus[i][idx] -= EPS
            numeric[idx] = (value(plus) - value(minus)) / (2 * EPS)
        pairs.append((tensors[i].grad, numeric))
    return pairs


class TestForward(unittest.TestCase):

    def test_matmul_examples(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a).data, a)
        np.testing.assert_array_equal(matmul(a, [[1.0], [1.0]]).data, [[3.0], [7.0]])

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(DimensionException):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_conv_examples(self):
        np.testing.assert_array_equal(conv([1.0, 2.0, 3.0], [1.0], 1).data, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(conv([1.0, 2.0, 3.0, 4.0], [1.0, -1.0], 1).data, [-1.0, -1.0, -1.0])

    def test_conv_kernel_too_large(self):
        with self.assertRaises(DimensionException):
            conv([1.0, 2.0], [1.0, 1.0, 1.0], 1)
        with self.assertRaises(DimensionException):
            conv(np.ones((2, 2)), np.ones((3, 3)), 2)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        p = softmax(rng.normal(scale=50.0, size=(20, 7))).data
        self.assertTrue(np.all(p >= 0))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_examples(self):
        self.assertAlmostEqual(softmax_cross_entropy(np.zeros(4), 0).item(), math.log(4), places=12)
        logits = Tensor(np.zeros(2), requires_grad=True)
        tape = GradTape()
        backward(softmax_cross_entropy(logits, 0, tape=tape))
        np.testing.assert_allclose(logits.grad, [-0.5, 0.5])

    def test_cross_entropy_target_out_of_range(self):
        with self.assertRaises(TargetIndexException):
            softmax_cross_entropy(np.zeros(3), 3)
        with self.assertRaises(IndexError):
            softmax_cross_entropy(np.zeros(3), -1)

    def test_forward_is_deterministic(self):
        rng = np.random.default_rng(3)
        x, k = rng.normal(size=(2, 6, 6, 1)), rng.normal(size=(3, 3, 1, 2))
        self.assertTrue(np.array_equal(conv(x, k, 2).data, conv(x, k, 2).data))


class TestBackward(unittest.TestCase):

    def test_square(self):
        x = Tensor(3.0)
        tape = GradTape()
        tape.watch(x)
        backward(mul(x, x, tape=tape))
        self.assertEqual(x.grad, 6.0)

    def test_identity(self):
        x = Tensor(2.0, requires_grad=True)
        backward(x)
        self.assertEqual(x.grad, 1.0)

    def test_tape_is_cleared(self):
        tape = GradTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        backward(total(scale(x, 2.0, tape=tape), tape=tape))
        self.assertEqual(len(tape), 0)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss(self):
        tape = GradTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        with self.assertRaises(DimensionException):
            backward(scale(x, 2.0, tape=tape))

    def test_untaped_loss(self):
        with self.assertRaises(StateException):
            backward(Tensor(1.0))

    def test_matmul_gradient_is_column_sums(self):
        rng = np.random.default_rng(1)
        tape = GradTape()
        a = tape.watch(Tensor(rng.normal(size=(3, 4))))
        b = Tensor(rng.normal(size=(4, 2)))
        backward(total(matmul(a, b, tape=tape), tape=tape))
        np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)))

    def test_finite_differences(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            cases = [
                (lambda a, b, tape: matmul(a, b, tape=tape), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
                (lambda a, b, tape: add(a, b, tape=tape), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
                (lambda a, b, tape: mul(a, b, tape=tape), [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
                (lambda a, tape: scale(a, -1.5, tape=tape), [rng.normal(size=(4,))]),
                (lambda a, tape: relu(a, tape=tape), [away_from_zero(rng, (3, 3))]),
                (lambda a, tape: reshape(a, (6,), tape=tape), [rng.normal(size=(2, 3))]),
                (lambda a, b, tape: concat((a, b), tape=tape), [rng.normal(size=(2, 3)), rng.normal(size=(2, 1))]),
                (lambda x, k, tape: conv(x, k, 1, tape=tape), [rng.normal(size=(2, 6, 2)), rng.normal(size=(3, 2, 3))]),
                (lambda x, k, tape: conv(x, k, 2, tape=tape), [rng.normal(size=(5, 5)), rng.normal(size=(3, 3))]),
                (lambda x, k, tape: conv(x, k, 2, tape=tape),
                 [rng.normal(size=(2, 5, 5, 2)), rng.normal(size=(3, 3, 2, 2))]),
                (lambda z, tape: softmax_cross_entropy(z, np.array([0, 2, 1]), tape=tape), [rng.normal(size=(3, 4))]),
                (lambda z, tape: softmax_cross_entropy(z, np.array([1, 0]), weights=[0.3, 2.0], reduction='sum',
                                                       tape=tape), [rng.normal(size=(2, 3))]),
                (lambda z, tape: binary_cross_entropy_with_logits(z, [1.0, 0.0, 1.0], [1.0, 3.0, 0.5], tape=tape),
                 [rng.normal(size=(3, 1))]),
            ]
            for build, arrays in cases:
                for analytic, numeric in gradient_gap(build, arrays, seed):
                    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_relu_matmul_chain(self):
        rng = np.random.default_rng(7)

        def chain(x, w, tape):
            return relu(matmul(x, w, tape=tape), tape=tape)

        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 5))
        for analytic, numeric in gradient_gap(chain, [x, w], 7):
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


class TestSgdStep(unittest.TestCase):

    def _param(self, value, grad):
        p = Tensor(value, requires_grad=True)
        p.grad = np.array(grad, dtype=np.float64)
        return p

    def test_zero_learning_rate(self):
        p = self._param([1.0, 2.0], [5.0, 5.0])
        sgd_step([p], 0.0)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        self.assertIsNone(p.grad)

    def test_plain_step(self):
        p = self._param([1.0, 2.0], [0.5, -1.0])
        sgd_step([p], 1.0, momentum=0.0)
        np.testing.assert_allclose(p.data, [0.5, 3.0])

    def test_momentum_two_steps(self):
        p = self._param([0.0], [2.0])
        sgd_step([p], 0.1, momentum=0.9)
        p.grad = np.array([2.0])
        sgd_step([p], 0.1, momentum=0.9)
        self.assertAlmostEqual(float(p.data[0]), -0.1 * 2.0 * (1 + 1.9), places=12)

    def test_missing_gradient(self):
        with self.assertRaises(StateException):
            sgd_step([Tensor([1.0], requires_grad=True)], 0.1)


if __name__ == '__main__':
    unittest.main()
