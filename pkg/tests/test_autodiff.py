import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorgnn import autodiff as ad
from tensorgnn.autodiff import ShapeError, Tape, Tensor, backward, grad_check


def test_relu_values():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]


def test_matmul_identity():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)


def test_sum_rows_single_row():
    assert ad.sum_rows(Tensor([[1.0, 2.0, 3.0]])).data.tolist() == [1, 2, 3]


def test_kron_rows_example():
    out = ad.kron_rows(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
    assert out.data.tolist() == [[3, 4, 6, 8]]


def test_kron_rows_basis_interleaves():
    h = np.array([[5.0, 6.0, 7.0]])
    out = ad.kron_rows(Tensor(h), Tensor([[1.0, 0.0]])).data
    assert out.tolist() == [[5, 0, 6, 0, 7, 0]]


def test_kron_rows_gradient_is_sum_of_p():
    tape = Tape()
    h = tape.variable(np.array([[1.0, -2.0], [0.5, 3.0]]))
    p = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    g = tape.backward(ad.sum_all(ad.kron_rows(h, Tensor(p))))[h]
    assert np.allclose(g, p.sum(axis=1, keepdims=True) * np.ones((1, 2)))
    err = grad_check(lambda x: ad.sum_all(ad.kron_rows(x, Tensor(p))), h.data)
    assert err < 1e-8


def test_mat_view_outer_product():
    m = ad.mat_view(Tensor([[3.0, 4.0, 6.0, 8.0]]), 2).data[0]
    assert np.array_equal(m, np.outer([1, 2], [3, 4]))


def test_mat_view_zero_and_round_trip():
    assert not ad.mat_view(Tensor(np.zeros((2, 9))), 3).data.any()
    x = np.random.default_rng(1).standard_normal((4, 16))
    assert np.array_equal(ad.vec_view(ad.mat_view(Tensor(x), 4)).data, x)


def test_mat_view_bad_width():
    with pytest.raises(ShapeError):
        ad.mat_view(Tensor(np.zeros((1, 5))), 2)


def test_backward_sum_is_ones():
    tape = Tape()
    x = tape.variable(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(backward(tape, ad.sum_all(x))[x], np.ones((2, 3)))


def test_backward_half_square_norm():
    tape = Tape()
    xv = np.array([[1.5, -2.0], [0.25, 4.0]])
    x = tape.variable(xv)
    loss = ad.scale(ad.sum_all(ad.mul(x, x)), 0.5)
    assert np.allclose(backward(tape, loss)[x], xv)


def test_backward_shared_subexpression_accumulates():
    tape = Tape()
    x = tape.variable(np.array([[2.0]]))
    y = x * x + x
    assert backward(tape, ad.sum_all(y))[x].tolist() == [[5.0]]


def test_unreachable_gradient_is_zero():
    tape = Tape()
    x = tape.variable(np.ones((2, 2)))
    y = tape.variable(np.ones(3))
    g = backward(tape, ad.sum_all(x))
    assert np.array_equal(g[y], np.zeros(3))


def test_backward_needs_scalar():
    tape = Tape()
    x = tape.variable(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tape.backward(x)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ad.kron_rows(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))


def test_grad_check_linear_is_exact():
    a = np.random.default_rng(2).standard_normal((3, 4))
    err = grad_check(lambda x: ad.sum_all(ad.mul(x, Tensor(a))), np.ones((3, 4)))
    assert err < 1e-9


def test_grad_check_sigmoid_sum():
    x = np.random.default_rng(3).standard_normal((2, 5))
    assert grad_check(lambda t: ad.sigmoid(ad.sum_all(t)), x) < 1e-6


def test_grad_check_relu_away_from_kink():
    rng = np.random.default_rng(4)
    x = rng.choice([-1.0, 1.0], size=(4, 4)) * rng.uniform(1e-4, 1.0, size=(4, 4))
    assert np.abs(x).min() > 10 * 1e-5
    assert grad_check(lambda t: ad.sum_all(ad.mul(ad.relu(t), ad.relu(t))), x) < 1e-6


def test_grad_check_skips_kinks():
    x = np.array([[0.0, 1e-7, -1e-7, 2.0]])
    # coordinates 0..2 sit on the kink; only coordinate 3 may be used
    assert grad_check(lambda t: ad.sum_all(ad.relu(t)), x, num_coords=4) < 1e-9


def _all_ops_objective(x, extra):
    s, p, w, q, y = extra
    h = ad.relu(x @ Tensor(w)) + ad.scale(x, 0.3)
    h = ad.spmm(s, h)
    flat = ad.reshape(h, (h.data.size,))
    k = ad.kron_rows(ad.sigmoid(ad.slice_flat(flat, 0, (h.shape[0], 2))), Tensor(p))
    m = ad.vec_view(ad.factor_project(ad.mat_view(k, 2), Tensor(q[0]), Tensor(q[1])))
    r = ad.rowwise_concat([m, ad.abs_(h)])
    pooled = ad.mean_rows(r) + ad.sum_rows(ad.transpose(ad.transpose(r)))
    seg = ad.segment_max(r, [0, 2, r.shape[0]])
    logits = ad.slice_flat(ad.reshape(seg, (seg.data.size,)), 0, (2, 1))
    return ad.mean_all(pooled) + ad.mean_all(ad.bce_logits(logits, y)) + ad.sum_all(-seg)


def test_grad_check_every_op():
    rng = np.random.default_rng(5)
    n = 4
    s = sp.csr_matrix(rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.6))
    extra = (
        s,
        rng.standard_normal((n, 2)),
        rng.standard_normal((3, 3)),
        (rng.standard_normal((2, 2, 2)), rng.standard_normal((2, 2, 2))),
        np.array([[1.0], [0.0]]),
    )
    x = rng.standard_normal((n, 3))
    assert grad_check(lambda t: _all_ops_objective(t, extra), x, num_coords=12) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_factor_project_gradients(d, K, n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, d, d))
    w = rng.standard_normal((K, d, d))
    q = rng.standard_normal((K, d, d))
    c = rng.standard_normal((n, d, d))

    def via(slot):
        def f(t):
            args = [Tensor(m), Tensor(w), Tensor(q)]
            args[slot] = t
            return ad.sum_all(ad.mul(ad.factor_project(*args), Tensor(c)))

        return f

    for slot, val in enumerate((m, w, q)):
        assert grad_check(via(slot), val) < 1e-7


def test_factor_project_matches_kron():
    rng = np.random.default_rng(6)
    d, K = 3, 2
    w, q = rng.standard_normal((K, d, d)), rng.standard_normal((K, d, d))
    h = rng.standard_normal((5, d * d))
    out = ad.vec_view(ad.factor_project(ad.mat_view(Tensor(h), d), Tensor(w), Tensor(q))).data
    dense = sum(np.kron(w[k], q[k]) for k in range(K))
    assert np.abs(out - h @ dense.T).max() < 1e-12


def test_bce_at_zero_logit():
    assert abs(ad.bce_logits(Tensor([[0.0]]), np.array([[1.0]])).item() - np.log(2)) < 1e-15


def test_bce_is_stable_for_large_logits():
    v = ad.bce_logits(Tensor([[800.0, -800.0]]), np.array([[1.0, 0.0]])).data
    assert v.tolist() == [[0.0, 0.0]]


def test_segment_max_empty_segment():
    out = ad.segment_max(Tensor(np.ones((2, 3))), [0, 2, 2]).data
    assert out.tolist() == [[1, 1, 1], [0, 0, 0]]
