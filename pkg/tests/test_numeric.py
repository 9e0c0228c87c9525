"""Tensor op semantics and reverse-mode gradients against independent oracles."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from sitrec import numeric as nm
from sitrec.numeric import NumericError, ParameterStore, Tensor, backward, finite_diff_check


def naive_matmul(a, b):
    """Triple-loop reference, no numpy dot."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestForwardOps:
    def test_matmul_matches_naive_oracle(self):
        rng = np.random.default_rng(42)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        got = nm.matmul(Tensor(a), Tensor(b)).data
        npt.assert_allclose(got, naive_matmul(a, b), atol=1e-12)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(NumericError):
            nm.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_softmax_uniform_on_equal_logits(self):
        out = nm.softmax(Tensor([0.0, 0.0, 0.0])).data
        npt.assert_allclose(out, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = Tensor(rng.normal(scale=5.0, size=(4, 7)))
            npt.assert_allclose(nm.softmax(x).data.sum(axis=1), 1.0, atol=1e-9)

    def test_log_softmax_equals_log_of_softmax(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(scale=3.0, size=(5, 6)))
        npt.assert_allclose(nm.log_softmax(x).data, np.log(nm.softmax(x).data), atol=1e-9)

    def test_cross_entropy_uniform_logits_is_log_k(self):
        for k in (2, 5, 11):
            loss = nm.weighted_cross_entropy(Tensor(np.zeros(k)), 0)
            npt.assert_allclose(float(loss.data), math.log(k), atol=1e-12)

    def test_weighted_equals_unweighted_with_unit_weights(self):
        rng = np.random.default_rng(2)
        logits = Tensor(rng.normal(size=(6, 5)))
        targets = rng.integers(0, 5, size=6)
        plain = nm.weighted_cross_entropy(logits, targets).data
        weighted = nm.weighted_cross_entropy(logits, targets, np.ones(5)).data
        npt.assert_array_equal(plain, weighted)

    def test_cross_entropy_applies_target_weight(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=5)
        w = rng.uniform(0.5, 2.0, size=5)
        base = nm.weighted_cross_entropy(Tensor(logits), 3).data
        scaled = nm.weighted_cross_entropy(Tensor(logits), 3, w).data
        npt.assert_allclose(float(scaled), w[3] * float(base), rtol=1e-12)

    def test_cross_entropy_rejects_nonpositive_weights(self):
        with pytest.raises(NumericError):
            nm.weighted_cross_entropy(Tensor(np.zeros(3)), 0, np.array([1.0, 0.0, 1.0]))

    def test_cross_entropy_masked_row_is_zero(self):
        logits = Tensor(np.random.default_rng(4).normal(size=(2, 4)))
        losses = nm.weighted_cross_entropy(logits, np.array([2, -1]))
        assert losses.data[1] == 0.0

    def test_non_finite_input_rejected(self):
        bad = Tensor(np.zeros(3))
        bad.data[1] = np.nan
        with pytest.raises(NumericError):
            nm.tanh(bad)

    def test_pools_and_maximum(self):
        x = Tensor(np.array([[1.0, 5.0], [3.0, 2.0]]))
        npt.assert_allclose(nm.mean_pool(x, axis=0).data, [2.0, 3.5])
        npt.assert_allclose(nm.max_pool(x, axis=0).data, [3.0, 5.0])
        y = Tensor(np.array([[2.0, 1.0], [0.0, 9.0]]))
        npt.assert_allclose(nm.maximum(x, y).data, [[2.0, 5.0], [3.0, 9.0]])

    def test_embedding_lookup_gathers_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = nm.embedding_lookup(table, [2, 0, 2])
        npt.assert_array_equal(out.data, table.data[[2, 0, 2]])
        with pytest.raises(NumericError):
            nm.embedding_lookup(table, [4])

    def test_segment_helpers_roundtrip(self):
        x = Tensor(np.arange(8.0).reshape(4, 2))
        rep = nm.repeat_rows(x, 3)
        assert rep.data.shape == (12, 2)
        back = nm.sum_segments(rep, 3)
        npt.assert_allclose(back.data, 3 * x.data)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        backward(nm.sum_all(x))
        npt.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_gradient_is_2x(self):
        x = Tensor(np.array([1.5, -2.0, 0.25]), requires_grad=True)
        loss = nm.sum_all(nm.elementwise_mul(x, x))
        backward(loss)
        npt.assert_allclose(x.grad, 2 * x.data, atol=1e-12)

    def test_backward_requires_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(NumericError):
            backward(nm.scale(x, 2.0))

    def test_disconnected_parameter_grad_is_zero(self):
        store = ParameterStore(seed=0)
        used = store.add("used", (2, 2))
        store.add("unused", (2, 2))
        backward(nm.sum_all(used))
        grads = store.grads()
        assert grads["unused"].sum() == 0.0
        assert grads["used"].sum() == 4.0

    def test_gradient_accumulates_over_shared_use(self):
        x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
        loss = nm.sum_all(nm.add(x, x))
        backward(loss)
        npt.assert_array_equal(x.grad, [[2.0, 2.0]])

    def test_two_layer_network_matches_finite_differences(self):
        """Random 2-layer net: max relative FD error < 1e-4 at eps 1e-5."""
        rng = np.random.default_rng(7)
        w2 = Tensor(rng.normal(size=(3, 1)))
        x = Tensor(rng.normal(size=(2, 4)))
        probe = Tensor(rng.normal(size=(2, 1)))

        def net(w1):
            h = nm.tanh(nm.matmul(x, w1))
            out = nm.sigmoid(nm.matmul(h, w2))
            return nm.sum_all(nm.elementwise_mul(out, probe))

        err = finite_diff_check(net, Tensor(rng.normal(size=(4, 3))), eps=1e-5)
        assert err < 1e-4


class TestFiniteDiffCheck:
    def test_quadratic_form_below_1e8(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=(4, 4))
        q = q + q.T

        def form(x):
            col = nm.reshape(x, (4, 1))
            return nm.sum_all(nm.elementwise_mul(col, nm.matmul(Tensor(q), col)))

        err = finite_diff_check(form, Tensor(rng.normal(size=(4,))), eps=1e-5)
        assert err < 1e-8

    def test_constant_function_error_zero(self):
        err = finite_diff_check(lambda x: nm.sum_all(nm.scale(x, 0.0)),
                                Tensor(np.ones(3)), eps=1e-5)
        assert err == 0.0

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(NumericError):
            finite_diff_check(lambda x: nm.sum_all(x), Tensor(np.ones(2)), eps=0.0)


class TestOpGradients:
    def test_every_op_passes_fd_on_random_seeds(self):
        """All differentiable ops stay below 1e-4 over randomized inputs."""
        from sitrec.gradchecks import check_numeric_ops

        for seed in range(3):
            report = check_numeric_ops(seed)
            worst = max(report.values())
            assert worst < 1e-4, f"seed {seed}: {report}"


class TestDtypeModes:
    def test_float32_mode_produces_float32(self):
        nm.set_default_dtype(np.float32)
        try:
            t = nm.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
            assert t.data.dtype == np.float32
        finally:
            nm.set_default_dtype(np.float64)

    def test_rejects_unknown_dtype(self):
        with pytest.raises(NumericError):
            nm.set_default_dtype(np.int32)


class TestParameterStore:
    def test_duplicate_name_rejected(self):
        store = ParameterStore()
        store.add("w", (2,))
        with pytest.raises(NumericError):
            store.add("w", (2,))

    def test_snapshot_and_load_roundtrip(self):
        store = ParameterStore(seed=3)
        store.add("w", (2, 3))
        snap = store.snapshot()
        store["w"].data += 1.0
        store.load_values(snap)
        npt.assert_array_equal(store["w"].data, snap["w"])

    def test_load_rejects_wrong_shape(self):
        store = ParameterStore()
        store.add("w", (2, 3))
        with pytest.raises(NumericError):
            store.load_values({"w": np.zeros((3, 2))})
