import threading

import numpy as np
import pytest

from gridvgae import autodiff as ad
from gridvgae.autodiff import Propagation, ShapeError, Tape, Tensor, backward, grad_check

TOL = 1e-4


def weighted(op, weights):
    """Scalar probe ``sum(op(x) * weights)``; the weights make every output entry matter."""
    def f(x):
        out = op(x)
        return ad.tensor_sum(ad.mul(out, Tensor(weights(out.shape))))
    return f


def _weights(seed=0):
    cache = {}

    def get(shape):
        if shape not in cache:
            cache[shape] = np.random.default_rng([seed, *shape]).normal(size=shape)
        return cache[shape]
    return get


def check(op, x, tol=TOL):
    err = grad_check(weighted(op, _weights()), Tensor(x))
    assert err < tol, err
    return err


R = np.random.default_rng(2024)
A = R.normal(size=(4, 3))
B = R.normal(size=(3, 5))
C = R.normal(size=(4, 3))
ROW = R.normal(size=(1, 3))

UNARY = {
    "scale": lambda x: ad.scale(x, -2.5),
    "transpose": ad.transpose,
    "reshape": lambda x: ad.reshape(x, 2, 6),
    "sigmoid": ad.sigmoid,
    "exp": ad.exp,
    "relu": ad.relu,
    "clamp": lambda x: ad.clamp(x, -0.5, 0.5),
    "tensor_sum": ad.tensor_sum,
    "mean": ad.mean,
    "layer_norm": ad.layer_norm,
    "center_columns": ad.center_columns,
    "dropout": lambda x: ad.dropout(x, 0.3, np.random.default_rng(5), True),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    x = A.copy()
    if name in ("relu", "clamp"):
        # keep away from the kinks
        x = np.where(np.abs(x) < 0.05, 0.2, x)
        x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, 0.7 * np.sign(x), x)
    check(UNARY[name], x)


@pytest.mark.parametrize("side", ["left", "right"])
def test_matmul_gradient(side):
    if side == "left":
        check(lambda x: ad.matmul(x, Tensor(B)), A)
    else:
        check(lambda x: ad.matmul(Tensor(A), x), B)


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul])
@pytest.mark.parametrize("side", [0, 1])
def test_binary_elementwise_gradients(op, side):
    if side == 0:
        check(lambda x: op(x, Tensor(C)), A)
    else:
        check(lambda x: op(Tensor(A), x), C)


def test_row_broadcast_add_gradient():
    check(lambda x: ad.add(Tensor(A), x), ROW)
    check(lambda x: ad.add(x, Tensor(ROW)), A)


@pytest.mark.parametrize("which", [0, 1])
def test_concat_gradients(which):
    other = Tensor(C)
    check(lambda x: ad.concat_rows([x, other] if which == 0 else [other, x]), A)
    check(lambda x: ad.concat_cols([x, other] if which == 0 else [other, x]), A)


def test_layer_norm_gain_bias_gradients():
    g, b = R.normal(size=(1, 3)), R.normal(size=(1, 3))
    check(lambda x: ad.layer_norm(x, Tensor(g), Tensor(b)), A)
    check(lambda x: ad.layer_norm(Tensor(A), x, Tensor(b)), g)
    check(lambda x: ad.layer_norm(Tensor(A), Tensor(g), x), b)


def test_bce_gradient():
    t = (R.random(A.shape) < 0.4).astype(float)
    m = (R.random(A.shape) < 0.8).astype(float)
    err = grad_check(lambda x: ad.bce_with_logits(x, t, pos_weight=3.7, mask=m), Tensor(A))
    assert err < TOL


def test_propagate_gradient():
    prop = Propagation(4, np.array([[0, 1], [1, 2], [1, 3]]))
    check(lambda x: ad.propagate(x, prop), A)


@pytest.mark.parametrize("side", [0, 1])
def test_pair_sum_gradient(side):
    v = R.normal(size=(2, 3))
    if side == 0:
        check(lambda x: ad.pair_sum(x, Tensor(v)), A)
    else:
        check(lambda x: ad.pair_sum(Tensor(A), x), v)


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        grad_check(ad.tensor_sum, Tensor(A), eps=1e-9)
    with pytest.raises(ValueError):
        grad_check(ad.tensor_sum, Tensor(A), eps=1e-2)


# ---------------------------------------------------------------------------
# forward values against direct formulas


def test_matmul_matches_numpy():
    assert np.allclose(ad.matmul(Tensor(A), Tensor(B)).data, A @ B, rtol=1e-14, atol=1e-14)


def test_propagation_matches_dense_formula():
    edges = np.array([[0, 1], [1, 2], [1, 3], [3, 4]])
    n = 6  # node 5 is isolated
    a = np.zeros((n, n))
    a[edges[:, 0], edges[:, 1]] = a[edges[:, 1], edges[:, 0]] = 1
    a_hat = a + np.eye(n)
    d = a_hat.sum(axis=1)
    oracle = a_hat / np.sqrt(np.outer(d, d))
    prop = Propagation(n, edges)
    assert np.allclose(prop.dense(), oracle, atol=1e-15)
    h = R.normal(size=(n, 3))
    assert np.allclose(prop.apply(h), oracle @ h, atol=1e-14)
    # isolated node just keeps its own features
    assert np.array_equal(prop.apply(h)[5], h[5])


def test_propagation_is_label_independent_bitwise():
    rng = np.random.default_rng(3)
    n = 30
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < 0.2
    edges = np.column_stack([iu[keep], ju[keep]])
    h = rng.normal(size=(n, 8))
    perm = rng.permutation(n)
    out = Propagation(n, edges).apply(h)
    out_p = Propagation(n, perm[edges]).apply(h[np.argsort(perm)])
    assert np.array_equal(out_p[perm], out)


def test_layer_norm_matches_formula():
    x = R.normal(size=(5, 7))
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    assert np.allclose(ad.layer_norm(Tensor(x)).data, (x - mu) / np.sqrt(var + 1e-5), atol=1e-14)
    assert np.array_equal(ad.layer_norm(Tensor(np.ones((2, 4)))).data, np.zeros((2, 4)))


def test_center_columns():
    x = R.normal(size=(6, 3))
    out = ad.center_columns(Tensor(x)).data
    assert np.allclose(out, x - x.mean(axis=0), atol=1e-15)
    perm = R.permutation(6)
    assert np.array_equal(ad.center_columns(Tensor(x[perm])).data, out[perm])


def test_sigmoid_is_stable_at_extremes():
    x = np.array([[-1000.0, -40.0, 0.0, 40.0, 1000.0]])
    s = ad.sigmoid(Tensor(x)).data
    assert np.all(np.isfinite(s))
    assert s[0, 2] == 0.5
    assert s[0, 0] == 0.0 and s[0, 4] == 1.0
    assert s[0, 1] == pytest.approx(np.exp(-40.0), rel=1e-12)


def test_bce_matches_direct_formula():
    x = R.normal(size=(3, 3))
    t = np.array([[1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    p = 1 / (1 + np.exp(-x))
    w = 2.0
    direct = -(w * t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
    assert ad.bce_with_logits(Tensor(x), t, pos_weight=w).item() == pytest.approx(direct, rel=1e-12)
    mask = np.ones((3, 3)) - np.eye(3)
    masked = -((w * t * np.log(p) + (1 - t) * np.log(1 - p)) * mask).sum() / 6
    assert ad.bce_with_logits(Tensor(x), t, w, mask).item() == pytest.approx(masked, rel=1e-12)


def test_bce_is_stable_for_huge_logits():
    x = np.array([[800.0, -800.0, 800.0, -800.0]])
    t = np.array([[1.0, 0.0, 0.0, 1.0]])
    loss = ad.bce_with_logits(Tensor(x), t).item()
    # two confident right answers cost 0, two confident wrong ones cost |x| each
    assert loss == pytest.approx(1600.0 / 4, rel=1e-12)
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        out = ad.bce_with_logits(xt, t)
    backward(tape, out)
    assert np.allclose(xt.grad, [[0.0, 0.0, 0.25, -0.25]])


def test_bce_validation():
    with pytest.raises(ValueError, match="0/1"):
        ad.bce_with_logits(Tensor(A), np.full(A.shape, 0.5))
    with pytest.raises(ValueError):
        ad.bce_with_logits(Tensor(A), np.zeros(A.shape), mask=np.zeros(A.shape))
    with pytest.raises(ShapeError):
        ad.bce_with_logits(Tensor(A), np.zeros((2, 2)))


def test_dropout_expectation_and_eval_identity():
    x = Tensor(np.ones((400, 250)))
    out = ad.dropout(x, 0.2, np.random.default_rng(1), True).data
    assert set(np.unique(out)) <= {0.0, 1.25}
    # mean of 1e5 inverted-dropout draws: standard error 0.5 / sqrt(1e5)
    assert abs(out.mean() - 1.0) < 5 * 0.5 / np.sqrt(out.size)
    assert abs((out == 0).mean() - 0.2) < 0.01
    assert ad.dropout(x, 0.2, None, False) is x
    with pytest.raises(ValueError):
        ad.dropout(x, 1.0, np.random.default_rng(0), True)


# ---------------------------------------------------------------------------
# tape semantics


def test_gradient_accumulates_over_reuse():
    x = Tensor(A, requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
        loss = ad.tensor_sum(ad.add(y, x))
    backward(tape, loss)
    assert np.allclose(x.grad, 2 * A + 1)
    assert np.allclose(y.grad, np.ones_like(A))


def test_backward_requires_scalar_recorded_loss():
    x = Tensor(A, requires_grad=True)
    with Tape() as tape:
        y = ad.scale(x, 2.0)
    with pytest.raises(ShapeError):
        backward(tape, y)
    with pytest.raises(ValueError, match="not recorded"):
        backward(tape, ad.tensor_sum(y))


def test_no_recording_without_tape_or_grad():
    x = Tensor(A, requires_grad=True)
    ad.sigmoid(x)
    with Tape() as tape:
        ad.sigmoid(Tensor(A))
    assert len(tape) == 0


def test_tapes_are_thread_local():
    x = Tensor(A, requires_grad=True)
    seen = []

    def worker():
        with Tape() as t:
            ad.exp(x)
        seen.append(len(t))

    with Tape() as main:
        th = threading.Thread(target=worker)
        th.start()
        th.join()
        ad.exp(x)
    assert seen == [1]
    assert len(main) == 1


def test_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(A), Tensor(A))
    with pytest.raises(ShapeError):
        ad.add(Tensor(A), Tensor(B))
    with pytest.raises(ShapeError):
        ad.reshape(Tensor(A), 5, 5)
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 2, 2)))
