import math

import numpy as np
import pytest

from segcap import tensor as T
from segcap.errors import ContractError, DegenerateBatchError, ShapeError


def fd_check(build_loss, params, h=1e-5, rel_tol=1e-4, coords_per_tensor=6, seed=0):
    """Compare analytic gradients with central finite differences on a
    random sample of coordinates of every parameter. The denominator floor
    compares near-zero gradients absolutely (finite differences bottom out
    at the float64 noise floor there)."""
    loss = build_loss()
    T.backward(loss)
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    rng = np.random.default_rng(seed)
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grads.reshape(-1)
        n = min(coords_per_tensor, flat.size)
        for idx in rng.choice(flat.size, size=n, replace=False):
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(build_loss().data)
            flat[idx] = orig - h
            down = float(build_loss().data)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[idx]), 1e-3)
            assert abs(fd - gflat[idx]) / denom < rel_tol, (
                f"coord {idx}: analytic {gflat[idx]} vs fd {fd}")


class TestMatmul:
    def test_identity(self):
        a = T.constant(np.eye(2))
        b = T.constant([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(T.matmul(a, b).data, [[1, 2], [3, 4]])

    def test_hand_product(self):
        a = T.constant([[1.0, 2.0], [3.0, 4.0]])
        b = T.constant([[5.0, 6.0], [7.0, 8.0]])
        assert np.allclose(T.matmul(a, b).data, [[19, 22], [43, 50]])

    def test_zero_row_annihilates(self):
        a = T.constant(np.zeros((1, 3)))
        b = T.constant(np.arange(12.0).reshape(3, 4))
        assert np.array_equal(T.matmul(a, b).data, np.zeros((1, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))

    def test_gradient_rule(self):
        rng = np.random.default_rng(1)
        a = T.parameter(rng.normal(size=(3, 4)), dtype=np.float64)
        b = T.parameter(rng.normal(size=(4, 2)), dtype=np.float64)
        w = rng.normal(size=(3, 2))
        loss = T.sum_(T.mul(T.matmul(a, b), w))
        T.backward(loss)
        assert np.allclose(a.grad, w @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ w)


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(T.softmax(T.constant([0.0, 0.0])).data, [0.5, 0.5])

    def test_log_two(self):
        out = T.softmax(T.constant([math.log(2.0), 0.0])).data
        assert np.allclose(out, [2 / 3, 1 / 3])

    def test_large_values_stable(self):
        out = T.softmax(T.constant([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(0.0, abs=1e-300)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = T.constant(rng.normal(size=(5, 7)) * 10)
        out = T.softmax(x, axis=-1).data
        assert np.allclose(out.sum(-1), 1.0, atol=1e-6)
        assert np.all(out > 0) and np.all(out < 1)


class TestLayerNorm:
    def test_two_point(self):
        out = T.layer_norm(T.constant([1.0, 3.0]), T.constant(1.0), T.constant(0.0),
                           eps=1e-12)
        assert np.allclose(out.data, [-1.0, 1.0])

    def test_constant_slice(self):
        out = T.layer_norm(T.constant([5.0, 5.0, 5.0]), T.constant(1.0), T.constant(0.0))
        assert np.allclose(out.data, [0.0, 0.0, 0.0])

    def test_affine(self):
        out = T.layer_norm(T.constant([1.0, 3.0]), T.constant(2.0), T.constant(1.0),
                           eps=1e-12)
        assert np.allclose(out.data, [-1.0, 3.0])

    def test_standardizes_random_slices(self):
        rng = np.random.default_rng(3)
        x = T.constant(rng.normal(size=(4, 9)) * 3 + 2)
        g = T.constant(np.ones(9))
        b = T.constant(np.zeros(9))
        out = T.layer_norm(x, g, b, eps=1e-12).data
        assert np.all(np.abs(out.mean(-1)) < 1e-6)
        assert np.allclose(out.var(-1), 1.0, atol=1e-6)


class TestGelu:
    def test_zero(self):
        assert T.gelu(T.constant(0.0)).data == 0.0

    def test_one(self):
        assert float(T.gelu(T.constant(1.0)).data) == pytest.approx(0.8413, abs=5e-5)

    def test_asymptote(self):
        assert float(T.gelu(T.constant(10.0)).data) == pytest.approx(10.0, abs=1e-9)


class TestMaskedCrossEntropy:
    def test_uniform_logits(self):
        logits = T.constant(np.zeros((1, 4)))
        loss = T.masked_cross_entropy(logits, np.array([1]), np.array([True]))
        assert float(loss.data) == pytest.approx(math.log(4.0))

    def test_perfect_logits(self):
        logits = np.full((1, 4), -100.0)
        logits[0, 2] = 100.0
        loss = T.masked_cross_entropy(T.constant(logits), np.array([2]), np.array([True]))
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_unmasked_position_ignored(self):
        rng = np.random.default_rng(4)
        base = rng.normal(size=(2, 5))
        tgt = np.array([1, 3])
        msk = np.array([True, False])
        l0 = T.masked_cross_entropy(T.constant(base), tgt, msk)
        perturbed = base.copy()
        perturbed[1] += rng.normal(size=5) * 10
        l1 = T.masked_cross_entropy(T.constant(perturbed), tgt, msk)
        assert float(l0.data) == float(l1.data)

    def test_masked_grad_exactly_zero(self):
        rng = np.random.default_rng(5)
        logits = T.parameter(rng.normal(size=(3, 6)), dtype=np.float64)
        msk = np.array([True, False, True])
        loss = T.masked_cross_entropy(logits, np.array([0, 1, 2]), msk)
        T.backward(loss)
        assert np.all(logits.grad[1] == 0.0)
        assert np.any(logits.grad[0] != 0.0)

    def test_empty_mask_rejected(self):
        with pytest.raises(DegenerateBatchError):
            T.masked_cross_entropy(T.constant(np.zeros((2, 3))), np.array([0, 1]),
                                   np.array([False, False]))


class TestBackward:
    def test_sum_of_squares(self):
        w = T.parameter([1.0, 2.0], dtype=np.float64)
        loss = T.sum_(T.mul(w, w))
        T.backward(loss)
        assert np.allclose(w.grad, [2.0, 4.0])

    def test_unreachable_parameter_untouched(self):
        w = T.parameter([1.0, 2.0], dtype=np.float64)
        other = T.parameter([3.0], dtype=np.float64)
        T.backward(T.sum_(T.mul(w, w)))
        assert other.grad is None

    def test_non_scalar_rejected(self):
        w = T.parameter([1.0, 2.0], dtype=np.float64)
        with pytest.raises(ContractError):
            T.backward(T.mul(w, w))

    def test_three_layer_composite_fd(self):
        rng = np.random.default_rng(6)
        w1 = T.parameter(rng.normal(size=(4, 5)), dtype=np.float64)
        b1 = T.parameter(rng.normal(size=(5,)), dtype=np.float64)
        w2 = T.parameter(rng.normal(size=(5, 3)), dtype=np.float64)
        g = T.parameter(np.ones(3), dtype=np.float64)
        b = T.parameter(np.zeros(3), dtype=np.float64)
        x = T.constant(rng.normal(size=(2, 4)))

        def build():
            for p in (w1, b1, w2, g, b):
                p.grad = None
            h = T.gelu(T.matmul(x, w1) + b1)
            h = T.matmul(h, w2)
            h = T.layer_norm(h, g, b)
            return T.sum_(T.mul(T.softmax(h, axis=-1), T.constant([1.0, -2.0, 0.5])))

        fd_check(build, [w1, b1, w2, g, b])


class TestPrimitiveGradients:
    @pytest.mark.parametrize("op_name", ["add", "mul", "softmax", "gelu",
                                         "sigmoid", "layer_norm", "rows",
                                         "narrow", "transpose", "power"])
    def test_fd(self, op_name):
        rng = np.random.default_rng(hash(op_name) % 2**31)
        a = T.parameter(rng.normal(size=(3, 4)), dtype=np.float64)
        b = T.parameter(rng.normal(size=(3, 4)), dtype=np.float64)
        w = rng.normal(size=(3, 4))
        gain = T.parameter(np.ones(4), dtype=np.float64)
        bias = T.parameter(np.zeros(4), dtype=np.float64)

        def build():
            for p in (a, b, gain, bias):
                p.grad = None
            if op_name == "add":
                out = T.add(a, b)
            elif op_name == "mul":
                out = T.mul(a, b)
            elif op_name == "softmax":
                out = T.softmax(a, axis=-1)
            elif op_name == "gelu":
                out = T.gelu(a)
            elif op_name == "sigmoid":
                out = T.sigmoid(a)
            elif op_name == "layer_norm":
                out = T.layer_norm(a, gain, bias)
            elif op_name == "rows":
                out = T.rows(a, np.array([2, 0, 1, 2]))
                return T.sum_(T.mul(out, T.constant(np.ones((4, 4)))))
            elif op_name == "narrow":
                out = T.narrow(a, 1, 1, 3)
                return T.sum_(T.mul(out, T.constant(np.ones((3, 2)))))
            elif op_name == "transpose":
                out = T.transpose(a, (1, 0))
                return T.sum_(T.mul(out, T.constant(w.T)))
            elif op_name == "power":
                out = T.power(T.add(T.mul(a, a), 1.0), -0.5)
            return T.sum_(T.mul(out, T.constant(w)))

        fd_check(build, [a, b, gain, bias])


class TestDropout:
    def test_eval_identity(self):
        x = T.constant(np.ones((4, 4)))
        out = T.dropout(x, 0.5, None, train=False)
        assert np.array_equal(out.data, x.data)

    def test_train_scaling_preserves_mean(self):
        rng = np.random.default_rng(7)
        x = T.constant(np.ones((200, 200)))
        out = T.dropout(x, 0.25, rng, train=True).data
        assert out.mean() == pytest.approx(1.0, abs=0.02)
        kept = out[out != 0]
        assert np.allclose(kept, 1.0 / 0.75)

    def test_grad_matches_mask(self):
        rng = np.random.default_rng(8)
        x = T.parameter(np.ones((5, 5)), dtype=np.float64)
        out = T.dropout(x, 0.5, rng, train=True)
        T.backward(T.sum_(out))
        assert np.array_equal(x.grad != 0, out.data != 0)


class TestBinaryCrossEntropy:
    def test_zero_logit(self):
        loss = T.binary_cross_entropy_with_logits(T.constant([0.0]), np.array([1.0]))
        assert float(loss.data) == pytest.approx(math.log(2.0))

    def test_fd(self):
        rng = np.random.default_rng(9)
        z = T.parameter(rng.normal(size=(6,)), dtype=np.float64)
        y = (rng.random(6) > 0.5).astype(float)

        def build():
            z.grad = None
            return T.binary_cross_entropy_with_logits(z, y)

        fd_check(build, [z])
