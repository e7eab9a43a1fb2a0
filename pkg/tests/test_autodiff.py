import numpy as np
import pytest

import raliflow.ad as ad
from raliflow.ad import (Tensor, adam_step, concat, conv2d, gather_rows, grad_check,
                         gru_cell, l2_norm_rows, matmul, reduce_mean, reduce_sum,
                         relu, scatter_add_rows, segment_max, segment_softmax,
                         sigmoid, softmax, tanh, upsample2x_nearest, zero_grads)
from raliflow.ad.nn import Parameter
from raliflow.errors import IndexOutOfRange, NotScalar, ShapeMismatch


def rand(shape, seed, scale=1.0):
    return np.random.default_rng(seed).normal(size=shape) * scale


# ---- op semantics ----------------------------------------------------------


def test_matmul_identity():
    a = rand((2, 3), 0)
    assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_shape_errors():
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_relu_values():
    out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_gather_scatter_adjoint():
    # gather rows [1,1] then scatter back: row 1 doubled, others zero
    a = Tensor(rand((3, 2), 1), requires_grad=True)
    g = gather_rows(a, [1, 1])
    back = scatter_add_rows(g, [1, 1], 3)
    assert np.allclose(back.data[1], 2 * a.data[1])
    assert np.all(back.data[[0, 2]] == 0)
    loss = reduce_sum(back)
    loss.backward()
    assert np.allclose(a.grad[1], [2.0, 2.0])  # row 1 contributes twice
    assert np.all(a.grad[[0, 2]] == 0)


def test_gather_rows_out_of_range():
    with pytest.raises(IndexOutOfRange):
        gather_rows(Tensor(np.zeros((3, 2))), [3])


def test_softmax_basic():
    out = softmax(Tensor(np.zeros(3)), axis=-1)
    assert np.allclose(out.data, 1 / 3)
    big = softmax(Tensor(np.array([1000.0, 0.0])), axis=-1)
    assert np.isfinite(big.data).all() and big.data[0] == pytest.approx(1.0)
    ln2 = softmax(Tensor(np.array([np.log(2.0), 0.0])), axis=-1)
    assert np.allclose(ln2.data, [2 / 3, 1 / 3])


def test_softmax_rows_sum_to_one():
    x = Tensor(rand((6, 5), 2, 3.0))
    out = softmax(x, axis=1)
    assert np.all(np.abs(out.data.sum(axis=1) - 1.0) <= 1e-12)


def test_softmax_permutation_equivariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=7)
    perm = rng.permutation(7)
    a = softmax(Tensor(x), axis=0).data
    b = softmax(Tensor(x[perm]), axis=0).data
    assert np.allclose(a[perm], b, atol=1e-15)  # sum order may differ in ulps


def test_segment_softmax_closed_form():
    w = segment_softmax(Tensor(np.array([np.log(2.0), 0.0, 5.0])), [0, 0, 1], 2)
    assert np.allclose(w.data, [2 / 3, 1 / 3, 1.0])


def test_backward_linear_and_quadratic():
    w = Tensor(rand(5, 4), requires_grad=True)
    x = rand(5, 5)
    loss = reduce_sum(ad.mul(w, Tensor(x)))
    loss.backward()
    assert np.array_equal(w.grad, x)

    w2 = Tensor(rand(5, 6), requires_grad=True)
    half_sq = ad.mul(reduce_sum(ad.mul(w2, w2)), Tensor(0.5))
    half_sq.backward()
    assert np.allclose(w2.grad, w2.data)


def test_backward_requires_scalar():
    with pytest.raises(NotScalar):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_backward_deterministic():
    def run():
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        loss = reduce_sum(ad.mul(matmul(a, b), sigmoid(matmul(a, b))))
        loss.backward()
        return a.grad.copy(), b.grad.copy()

    g1, g2 = run()
    h1, h2 = run()
    assert np.array_equal(g1, h1) and np.array_equal(g2, h2)


def test_segment_max_empty_segment_zero():
    out = segment_max(Tensor(np.array([[1.0, -2.0]])), [2], 4)
    assert np.array_equal(out.data[[0, 1, 3]], np.zeros((3, 2)))
    assert np.array_equal(out.data[2], [1.0, -2.0])


def test_l2_norm_rows_zero_row_grad():
    a = Tensor(np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]), requires_grad=True)
    out = reduce_sum(l2_norm_rows(a))
    out.backward()
    assert np.all(a.grad[0] == 0.0)  # subgradient choice at the kink
    assert np.allclose(a.grad[1], [0.6, 0.8, 0.0])


def test_conv2d_identity_kernel():
    x = rand((6, 6, 3), 5)
    k = np.zeros((1, 1, 3, 3))
    k[0, 0] = np.eye(3)
    out = conv2d(Tensor(x), Tensor(k))
    assert np.allclose(out.data, x)


def test_conv2d_all_ones_kernel_border():
    x = np.full((5, 5, 1), 3.0)
    out = conv2d(Tensor(x), Tensor(np.ones((3, 3, 1, 1))))
    assert out.data[2, 2, 0] == pytest.approx(27.0)  # 9c interior
    assert out.data[0, 0, 0] == pytest.approx(12.0)  # 2x2 corner under zero pad


def test_conv_stride2_upsample_roundtrip_shape():
    x = Tensor(np.zeros((8, 8, 2)))
    down = conv2d(x, Tensor(np.zeros((2, 2, 2, 4))), stride=2)
    up = upsample2x_nearest(down)
    assert down.data.shape == (4, 4, 4)
    assert up.data.shape == (8, 8, 4)


def test_gru_zero_params_halves_hidden():
    params = {k: Tensor(np.zeros(s)) for k, s in
              [("W_z", (6, 2)), ("W_r", (6, 2)), ("W_h", (6, 2)),
               ("b_z", (2,)), ("b_r", (2,)), ("b_h", (2,))]}
    h = Tensor(np.array([[1.0, 2.0]]))
    out = gru_cell(h, Tensor(np.full((1, 4), 0.7)), params)
    assert np.allclose(out.data, [[0.5, 1.0]])


def test_gru_large_negative_update_gate_freezes_state():
    params = {k: Tensor(np.zeros(s)) for k, s in
              [("W_z", (6, 2)), ("W_r", (6, 2)), ("W_h", (6, 2)),
               ("b_z", (2,)), ("b_r", (2,)), ("b_h", (2,))]}
    params["b_z"] = Tensor(np.full(2, -50.0))  # z ~ 0 keeps the old state
    h = Tensor(np.array([[0.3, -0.7]]))
    out = gru_cell(h, Tensor(np.zeros((1, 4))), params)
    assert np.allclose(out.data, h.data, atol=1e-12)


# ---- gradient checks -------------------------------------------------------


def test_grad_check_sum_of_squares_tight():
    rep = grad_check(lambda t: reduce_sum(ad.mul(t, t)), [Tensor(rand(7, 11))])
    assert rep.max_rel_error <= 1e-8


def test_grad_check_detects_wrong_gradient():
    # a deliberately broken function: forward x^2 but gradient of 3x^2
    def bad(t):
        out = ad.mul(t, t)
        out2 = reduce_sum(out)

        def bw(g):
            t._accumulate(3.0 * g * 2.0 * t.data)

        out2._backward = bw
        out2._parents = (t,)
        out2.requires_grad = True
        return out2

    rep = grad_check(bad, [Tensor(rand(4, 12))])
    assert not rep.passed


def test_grad_check_skips_relu_kink():
    at = Tensor(np.array([0.0, 1.0, -1.0]))
    rep = grad_check(lambda t: reduce_sum(relu(t)), [at])
    assert rep.skipped >= 1  # the exact-kink coordinate is excluded
    assert rep.passed


@pytest.mark.parametrize("seed", range(10))
def test_grad_check_composite_graph(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(4, 6)))
    w = Tensor(rng.normal(size=(6, 3)) * 0.5)
    b = Tensor(rng.normal(size=(3,)) * 0.2)

    def f(a, w, b):
        h = tanh(matmul(a, w) + b)
        s = softmax(h, axis=1)
        return reduce_sum(ad.mul(s, sigmoid(h))) + reduce_mean(l2_norm_rows(h))

    rep = grad_check(f, [a, w, b], max_coords=20, seed=seed)
    assert rep.passed, rep.max_rel_error


def test_grad_check_concat_gather_segment_ops():
    rng = np.random.default_rng(42)
    a = Tensor(rng.normal(size=(5, 3)))
    b = Tensor(rng.normal(size=(4, 3)))

    def f(a, b):
        j = concat([a, b], axis=0)
        g = gather_rows(j, [0, 2, 2, 8, 5])
        sm = segment_max(g, [0, 0, 1, 1, 2], 3)
        w = segment_softmax(reduce_sum(ad.mul(g, g), axis=1), [0, 0, 1, 1, 2], 3)
        return reduce_sum(sm) + reduce_sum(ad.mul(w, w))

    rep = grad_check(f, [a, b], max_coords=27)
    assert rep.passed, rep.max_rel_error


# ---- adam ------------------------------------------------------------------


def test_adam_first_step_is_signed_lr():
    p = Parameter("w", np.array([1.0, -2.0, 3.0]))
    p.tensor.grad = np.array([0.5, -0.1, 0.0])
    before = p.data.copy()
    adam_step([p], lr=0.01)
    # bias-corrected first step: -lr * g/(|g| + eps) = -lr * sign(g)
    assert np.allclose(p.data[:2] - before[:2], [-0.01, 0.01], atol=1e-6)
    assert p.data[2] == before[2]


def test_adam_zero_grad_decays_moments_only():
    p = Parameter("w", np.array([1.0]))
    p.m[:] = 1.0
    p.v[:] = 1.0
    value = p.data.copy()
    p.tensor.grad = np.zeros(1)
    adam_step([p], lr=0.0)  # lr 0 isolates the moment update
    assert p.m[0] == pytest.approx(0.9)
    assert p.v[0] == pytest.approx(0.999)
    assert np.array_equal(p.data, value)


def test_adam_two_steps_match_hand_recurrence():
    g = np.array([0.3])
    p = Parameter("w", np.array([0.0]))
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    m = v = 0.0
    x = 0.0
    for t in (1, 2):
        p.tensor.grad = g.copy()
        adam_step([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        m = b1 * m + (1 - b1) * g[0]
        v = b2 * v + (1 - b2) * g[0] ** 2
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    assert p.data[0] == pytest.approx(x, rel=1e-12)


# ---- checkpoint ------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    from raliflow.ad import checkpoint as ck
    rng = np.random.default_rng(11)
    tensors = {"a.w": rng.normal(size=(3, 4)), "b": rng.normal(size=7),
               "scalar": np.float64(3.5)}
    path = tmp_path / "t.rlfw"
    ck.write_tensors(str(path), tensors)
    back = ck.read_tensors(str(path))
    assert set(back) == set(tensors)
    for k in tensors:
        assert np.array_equal(np.asarray(tensors[k]), back[k])
    with open(path, "rb") as f:
        assert f.read(4) == b"RLFW"


def test_checkpoint_params_with_adam_state(tmp_path):
    rng = np.random.default_rng(12)
    from raliflow.ad import checkpoint as ck
    p = Parameter("w", rng.normal(size=(2, 2)))
    p.tensor.grad = rng.normal(size=(2, 2))
    adam_step([p], lr=0.01)
    path = str(tmp_path / "p.rlfw")
    ck.save_params(path, [p], extra={"meta.epochs_done": np.float64(3)})
    q = Parameter("w", np.zeros((2, 2)))
    extra = ck.load_params(path, [q])
    assert np.array_equal(q.data, p.data)
    assert np.array_equal(q.m, p.m)
    assert q.step == 1
    assert extra["meta.epochs_done"] == 3.0
