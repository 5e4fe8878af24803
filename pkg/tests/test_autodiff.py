import numpy as np
import pytest

from estm import autodiff as ad
from tests.conftest import fd_grad, rel_err

TOL = 1e-4  # per-op gradient tolerance at f64


def check_op(build_loss, arrays):
    """build_loss() recomputes the scalar loss from the (mutable) arrays."""

    def loss_value():
        return float(build_loss().data)

    tensors = None

    def run_backward():
        nonlocal tensors
        loss, tensors = build_loss(return_tensors=True)
        ad.backward(loss)
        return [t.grad for t in tensors]

    ga = run_backward()
    gf = fd_grad(loss_value, arrays)
    for a_grad, f_grad in zip(ga, gf):
        assert a_grad is not None
        assert rel_err(a_grad, f_grad) < TOL


def weighted(out, w):
    return ad.sum_(ad.mul(out, ad.as_tensor(w)))


def test_softplus_values():
    x = ad.as_tensor(np.array([0.0, 30.0, -30.0]))
    y = ad.softplus(x).data
    assert abs(y[0] - np.log(2.0)) < 1e-12
    assert abs(y[1] - 30.0) < 1e-9
    assert y[2] > 0 and abs(y[2] - np.exp(-30.0)) < 1e-15


@pytest.mark.parametrize(
    "name",
    ["sigmoid", "silu", "softplus", "exp", "log", "sqrt", "square", "leaky_relu", "clip"],
)
def test_elementwise_grads(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.normal(size=(3, 4))
    if name in ("log", "sqrt"):
        x = np.abs(x) + 0.5
    w = rng.normal(size=(3, 4))

    fn = {
        "sigmoid": ad.sigmoid,
        "silu": ad.silu,
        "softplus": ad.softplus,
        "exp": ad.exp,
        "log": ad.log,
        "sqrt": ad.sqrt,
        "square": ad.square,
        "leaky_relu": lambda t: ad.leaky_relu(t, 0.01),
        "clip": lambda t: ad.clip(t, -0.5, 0.8),
    }[name]

    def build(return_tensors=False):
        t = ad.Tensor(x, requires_grad=True)
        loss = weighted(fn(t), w)
        return (loss, [t]) if return_tensors else loss

    check_op(build, [x])


def test_binary_op_grads():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3,)) + 2.0  # broadcast + away from zero for div
    w = rng.normal(size=(2, 3))

    for op in (ad.add, ad.sub, ad.mul, ad.div):
        def build(return_tensors=False, op=op):
            ta = ad.Tensor(a, requires_grad=True)
            tb = ad.Tensor(b, requires_grad=True)
            loss = weighted(op(ta, tb), w)
            return (loss, [ta, tb]) if return_tensors else loss

        check_op(build, [a, b])


def test_matmul_grad():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 5, 3))
    w_mat = rng.normal(size=(3, 4))
    w = rng.normal(size=(2, 5, 4))

    def build(return_tensors=False):
        tx = ad.Tensor(x, requires_grad=True)
        tw = ad.Tensor(w_mat, requires_grad=True)
        loss = weighted(ad.matmul(tx, tw), w)
        return (loss, [tx, tw]) if return_tensors else loss

    check_op(build, [x, w_mat])


def test_shape_op_grads():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(4, 12))

    def build(return_tensors=False):
        t = ad.Tensor(x, requires_grad=True)
        y = ad.transpose(t, (1, 0, 2))
        y = ad.reshape(y, (3, 8))
        y = ad.concat([y, y], axis=1)
        y = ad.pad_axis(y, 0, 1)
        y = y[:, 2:14]
        loss = weighted(y, w)
        return (loss, [t]) if return_tensors else loss

    check_op(build, [x])


def test_reduction_grads():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(3, 4, 2))

    def build(return_tensors=False):
        t = ad.Tensor(x, requires_grad=True)
        loss = ad.add(
            ad.sum_(ad.mean_(t, axis=(1, 2))),
            ad.mean_(ad.square(t)),
        )
        return (loss, [t]) if return_tensors else loss

    check_op(build, [x])


def test_layer_norm_grad():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(2, 5, 6))
    gain = rng.normal(size=(6,)) + 1.0
    bias = rng.normal(size=(6,))
    w = rng.normal(size=(2, 5, 6))

    def build(return_tensors=False):
        t = ad.Tensor(x, requires_grad=True)
        g = ad.Tensor(gain, requires_grad=True)
        b = ad.Tensor(bias, requires_grad=True)
        loss = weighted(ad.layer_norm(t, g, b), w)
        return (loss, [t, g, b]) if return_tensors else loss

    check_op(build, [x, gain, bias])


def test_unfold_grad():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(2, 20))
    w = rng.normal(size=(2, 4, 6))

    def build(return_tensors=False):
        t = ad.Tensor(x, requires_grad=True)
        loss = weighted(ad.unfold(t, 6, 4), w)
        return (loss, [t]) if return_tensors else loss

    check_op(build, [x])


def test_dwconv_grad(backend):
    rng = np.random.default_rng(17)
    x = rng.normal(size=(2, 7, 3))
    wk = rng.normal(size=(3, 4))
    bias = rng.normal(size=(3,))
    w = rng.normal(size=(2, 7, 3))

    def build(return_tensors=False):
        tx = ad.Tensor(x, requires_grad=True)
        tw = ad.Tensor(wk, requires_grad=True)
        tb = ad.Tensor(bias, requires_grad=True)
        loss = weighted(ad.dwconv(tx, tw, tb), w)
        return (loss, [tx, tw, tb]) if return_tensors else loss

    check_op(build, [x, wk, bias])


@pytest.mark.parametrize("chunk", [0, 4])
def test_scan_grad(backend, chunk):
    rng = np.random.default_rng(18)
    a = rng.uniform(0.05, 0.95, size=(2, 6, 2, 3))
    b = rng.normal(size=(2, 6, 2, 3))
    c = rng.normal(size=(2, 6, 3))
    w = rng.normal(size=(2, 6, 2))

    def build(return_tensors=False):
        ta = ad.Tensor(a, requires_grad=True)
        tb = ad.Tensor(b, requires_grad=True)
        tc = ad.Tensor(c, requires_grad=True)
        loss = weighted(ad.ssm_scan(ta, tb, tc, chunk=chunk), w)
        return (loss, [ta, tb, tc]) if return_tensors else loss

    check_op(build, [a, b, c])


def test_cross_entropy_grad():
    rng = np.random.default_rng(19)
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)

    def build(return_tensors=False):
        t = ad.Tensor(logits, requires_grad=True)
        loss = ad.cross_entropy_logits(t, labels)
        return (loss, [t]) if return_tensors else loss

    check_op(build, [logits])


def test_quadratic_grad_exact():
    # loss = sum(w^2) -> grad = 2w, exactly
    rng = np.random.default_rng(20)
    w = rng.normal(size=(7,))
    t = ad.Tensor(w, requires_grad=True)
    loss = ad.sum_(ad.square(t))
    ad.backward(loss)
    np.testing.assert_array_equal(t.grad, 2.0 * w)


def test_unused_parameter_gets_no_grad():
    t_used = ad.Tensor(np.ones(3), requires_grad=True)
    t_unused = ad.Tensor(np.ones(3), requires_grad=True)
    loss = ad.sum_(ad.square(t_used))
    ad.backward(loss)
    assert t_unused.grad is None  # caller maps None -> zeros


def test_reused_parameter_accumulates():
    x = np.array([1.5])
    t = ad.Tensor(x, requires_grad=True)
    loss = ad.sum_(ad.add(ad.square(t), ad.mul(t, 3.0)))
    ad.backward(loss)
    np.testing.assert_allclose(t.grad, 2.0 * x + 3.0)
