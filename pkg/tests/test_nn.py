import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frikit.nn import Adam, AdamState, Tensor, adam_step, gradient_check, load_checkpoint, save_checkpoint
from frikit.nn import autodiff as ad
from frikit.nn import checkpoint

TOL = 1e-4


def rng(seed=0):
    return np.random.default_rng(seed)


def crandn(r, *shape):
    return r.standard_normal(shape) + 1j * r.standard_normal(shape)


class TestTensorBasics:
    def test_integer_data_promoted_to_float(self):
        assert Tensor([1, 2, 3]).dtype == np.float64

    def test_operators_build_graph(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([3.0, 4.0]), requires_grad=True)
        loss = ((a * b) + a - b).sum()
        loss.backward()
        assert np.allclose(a.grad, [4.0, 5.0])
        assert np.allclose(b.grad, [0.0, 1.0])

    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = x * x
        (y + y).backward()
        assert float(x.grad) == pytest.approx(12.0)

    def test_no_grad_inputs_untouched(self):
        x = Tensor(np.ones(3))
        w = Tensor(np.ones(3), requires_grad=True)
        (x * w).sum().backward()
        assert x.grad is None and np.allclose(w.grad, 1.0)

    def test_deep_chain_does_not_recurse(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(5000):
            y = ad.scale(y, 1.0)
        y.backward()
        assert float(x.grad) == 1.0


class TestPrimitiveRules:
    def test_relu_negative_side(self):
        x = Tensor(np.array([-2.0, -0.5, 1.5]), requires_grad=True)
        out = ad.relu(-x)
        assert np.allclose(out.data, [2.0, 0.5, 0.0])
        out.sum().backward()
        assert np.allclose(x.grad, [-1.0, -1.0, 0.0])

    def test_dense_identity(self):
        x = Tensor(rng().standard_normal((4, 5)), requires_grad=True)
        out = ad.dense(x, np.eye(5), np.zeros(5))
        assert np.array_equal(out.data, x.data)
        g = rng(1).standard_normal((4, 5))
        out.backward(g)
        assert np.allclose(x.grad, g)

    def test_conv1d_shift_kernel(self):
        x = np.arange(1.0, 6.0)[None, None, :]
        w = np.array([1.0, 0.0, 0.0])[None, None, :]
        out = ad.conv1d(Tensor(x), w)
        # same padding: output[n] = x[n-1]
        assert np.allclose(out.data[0, 0], [0, 1, 2, 3, 4])

    def test_conv1d_last_matches_channels_first(self):
        r = rng(2)
        x = r.standard_normal((3, 4, 7))
        w = r.standard_normal((5, 4, 3))
        b = r.standard_normal(5)
        first = ad.conv1d(Tensor(x), w, b).data
        last = ad.conv1d_last(Tensor(np.swapaxes(x, 1, 2)), w, b).data
        assert np.allclose(np.swapaxes(last, 1, 2), first)

    def test_sigmoid_values(self):
        out = ad.sigmoid(Tensor(np.array([0.0, 50.0, -50.0])))
        assert np.allclose(out.data, [0.5, 1.0, 0.0])

    def test_squared_error_and_norm(self):
        a, b = rng(3).standard_normal((2, 4, 3))
        assert float(ad.squared_error(a, b).data) == pytest.approx(np.sum((a - b) ** 2))
        z = crandn(rng(4), 3, 3)
        assert float(ad.frobenius_norm2(Tensor(z)).data) == pytest.approx(np.sum(np.abs(z) ** 2))

    def test_complex_matmul_matches_numpy(self):
        r = rng(5)
        a, b = crandn(r, 3, 4), crandn(r, 4, 2)
        assert np.allclose(ad.matmul(a, b).data, a @ b)


class TestGradients:
    """Central-difference checks of every differentiable primitive."""

    def check(self, fn, inputs, tol=TOL, indices=None):
        err = gradient_check(fn, inputs, indices=indices)
        assert err < tol, err

    def test_add_sub_mul_scale(self):
        r = rng(10)
        a, b = r.standard_normal((3, 4)), r.standard_normal((4,))
        self.check(lambda x, y: ad.tsum(ad.mul(ad.add(x, y), ad.sub(x, ad.scale(y, 2.5)))), [a, b])

    def test_exp(self):
        self.check(lambda x: ad.tsum(ad.exp(x)), [rng(11).standard_normal(6)])

    def test_relu_away_from_kink(self):
        x = rng(12).standard_normal(20)
        x[np.abs(x) < 0.1] += 0.3
        self.check(lambda v: ad.tsum(ad.mul(ad.relu(v), v)), [x])

    def test_sigmoid(self):
        self.check(lambda v: ad.tsum(ad.sigmoid(v)), [rng(13).standard_normal(7)])

    def test_dense(self):
        r = rng(14)
        self.check(lambda x, w, b: ad.frobenius_norm2(ad.dense(x, w, b)),
                   [r.standard_normal((3, 5)), r.standard_normal((4, 5)), r.standard_normal(4)])

    def test_conv1d(self):
        r = rng(15)
        self.check(lambda x, w, b: ad.frobenius_norm2(ad.conv1d(x, w, b)),
                   [r.standard_normal((2, 3, 6)), r.standard_normal((4, 3, 3)), r.standard_normal(4)])

    def test_conv1d_last(self):
        r = rng(16)
        self.check(lambda x, w, b: ad.frobenius_norm2(ad.conv1d_last(x, w, b)),
                   [r.standard_normal((2, 6, 3)), r.standard_normal((4, 3, 3)), r.standard_normal(4)])

    def test_complex_matmul(self):
        r = rng(17)
        self.check(lambda a, b: ad.frobenius_norm2(ad.matmul(a, b)), [crandn(r, 3, 4), crandn(r, 4, 2)])

    def test_complex_real_pair_consistency(self):
        """Gradient of a complex product equals the one from the equivalent real block computation."""
        r = rng(18)
        a, b = crandn(r, 3, 3), crandn(r, 3, 2)
        ta = Tensor(a, requires_grad=True)
        ad.frobenius_norm2(ad.matmul(ta, b)).backward()
        big = lambda z: np.block([[z.real, -z.imag], [z.imag, z.real]])
        ra = Tensor(big(a), requires_grad=True)
        out = ad.matmul(ra, np.vstack([b.real, b.imag]))
        ad.frobenius_norm2(out).backward()
        g = ra.grad
        # the block structure couples the two copies of Re and Im; sum them
        g_re = g[:3, :3] + g[3:, 3:]
        g_im = g[3:, :3] - g[:3, 3:]
        assert np.allclose(ta.grad, g_re + 1j * g_im)

    def test_linear_map(self):
        r = rng(19)
        mat = r.standard_normal((6, 4))
        self.check(lambda x: ad.frobenius_norm2(ad.linear_map(x, mat, (2, 3))), [crandn(r, 2, 2)])

    def test_squared_error(self):
        r = rng(20)
        self.check(lambda a, b: ad.squared_error(a, b), [r.standard_normal(5), r.standard_normal(5)])

    def test_wrap_and_getitem_and_concat(self):
        r = rng(21)
        x = r.uniform(0.1, 0.9, size=6)
        self.check(lambda v: ad.tsum(ad.mul(ad.concat([ad.getitem(ad.wrap(v, 1.0), slice(0, 3)), v], 0),
                                            ad.concat([v, ad.getitem(v, slice(3, 6))], 0))), [x])

    def test_transpose_reshape_mean(self):
        r = rng(22)
        self.check(lambda v: ad.mean(ad.mul(ad.transpose(ad.reshape(v, (3, 4)), (1, 0)),
                                            ad.transpose(ad.reshape(v, (3, 4)), (1, 0)))),
                   [r.standard_normal(12)])

    def test_conj(self):
        r = rng(23)
        w = crandn(r, 4)
        self.check(lambda v: ad.frobenius_norm2(ad.add(ad.conj(v), ad.mul(v, w))), [crandn(r, 4)])

    def test_svd_soft_threshold(self):
        r = rng(24)
        U, _ = np.linalg.qr(crandn(r, 5, 5))
        V, _ = np.linalg.qr(crandn(r, 4, 4))
        s = np.array([5.0, 3.5, 2.0, 1.0])
        X = U[:, :4] @ np.diag(s) @ V.conj().T
        W = crandn(r, 5, 4)
        self.check(lambda x, mu: ad.frobenius_norm2(ad.add(ad.svd_soft_threshold(x, 2, mu), W)),
                   [X, np.array(0.3)])

    def test_piecewise_relu(self):
        r = rng(25)
        delta = 0.25
        d = r.standard_normal(12)
        # keep points away from knots
        x = (r.integers(0, 11, size=9) + r.uniform(0.2, 0.8, size=9)) * delta
        self.check(lambda xx, dd: ad.frobenius_norm2(ad.piecewise_relu(xx, dd, delta)), [x, d])

    def test_quadratic_form_is_tight(self):
        r = rng(26)
        A = r.standard_normal((4, 4))
        err = gradient_check(lambda x: ad.tsum(ad.mul(x, ad.matmul(A, x))), [r.standard_normal((4, 1))])
        assert err < 1e-7

    def test_three_layer_relu_net(self):
        r = rng(27)
        ws = [r.standard_normal((6, 4)), r.standard_normal((6, 6)), r.standard_normal((2, 6))]

        def net(x, w0, w1, w2):
            h = ad.relu(ad.dense(x, w0))
            h = ad.relu(ad.dense(h, w1))
            return ad.frobenius_norm2(ad.dense(h, w2))

        self.check(net, [r.standard_normal((3, 4))] + ws)


class TestSoftThresholdValues:
    def test_diag_example(self):
        out = ad.svd_soft_threshold(Tensor(np.diag([3.0, 2.0, 1.0]).astype(complex)), 2, 1.0)
        assert np.allclose(out.data, np.diag([2.0, 1.0, 0.0]), atol=1e-12)

    def test_mu_zero_is_identity(self):
        X = crandn(rng(30), 4, 3)
        assert np.allclose(ad.svd_soft_threshold(Tensor(X), 1, 0.0).data, X)

    def test_low_rank_input_unchanged(self):
        r = rng(31)
        X = crandn(r, 5, 2) @ crandn(r, 2, 4)
        assert np.allclose(ad.svd_soft_threshold(Tensor(X), 2, 0.7).data, X, atol=1e-10)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([p], 0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_hand_evaluated(self):
        g = np.array([0.5, -3.0, 1e-3])
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState(lr=0.01)
        state.m, state.v = [np.zeros(3)], [np.zeros(3)]
        adam_step(state, [p], [g])
        assert np.allclose(p.data, -0.01 * g / (np.abs(g) + 1e-8))

    def test_constant_gradient_sign_descent(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([p], 0.05)
        before = p.data.copy()
        for _ in range(200):
            before = p.data.copy()
            p.grad = np.array([7.0])
            opt.step()
        assert before[0] - p.data[0] == pytest.approx(0.05, rel=1e-6)

    def test_complex_parameter_moves_both_parts(self):
        p = Tensor(np.array([1 + 1j]), requires_grad=True)
        opt = Adam([p], 0.1)
        p.grad = np.array([1 - 1j])
        opt.step()
        assert np.allclose(p.data, [0.9 + 1.1j])

    def test_replay_is_bitwise_deterministic(self):
        def run():
            r = rng(40)
            w = Tensor(r.standard_normal((3, 3)), requires_grad=True)
            opt = Adam([w], 1e-2)
            x = r.standard_normal((8, 3))
            for _ in range(20):
                opt.zero_grad()
                ad.frobenius_norm2(ad.relu(ad.dense(x, w))).backward()
                opt.step()
            return w.data

        assert np.array_equal(run(), run())


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        r = rng(50)
        tensors = {"w": r.standard_normal((3, 4)), "c": crandn(r, 2, 2), "s": np.array(1.5),
                   "f": r.standard_normal(5).astype(np.float32)}
        path = tmp_path / "m.frik"
        save_checkpoint(path, tensors)
        back = load_checkpoint(path)
        assert set(back) == set(tensors)
        for k, v in tensors.items():
            assert np.array_equal(back[k], v.astype(np.float64) if v.dtype == np.float32 else v)

    def test_bad_magic(self):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.decode(b"NOPE" + bytes(8))

    def test_truncated(self):
        blob = checkpoint.encode({"w": np.ones(4)})
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.decode(blob[:-3])

    def test_encoding_is_deterministic(self):
        t = {"a": np.arange(3.0), "b": np.eye(2)}
        assert checkpoint.encode(t) == checkpoint.encode(dict(t))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
    def test_property_roundtrip_values(self, values):
        arr = np.array(values)
        assert np.array_equal(checkpoint.decode(checkpoint.encode({"x": arr}))["x"], arr)
