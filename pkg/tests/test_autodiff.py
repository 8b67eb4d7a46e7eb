import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepifsac import autodiff as ad
from deepifsac.autodiff import Adam, Parameter, ShapeError, Tensor
from deepifsac.verify import relative_errors


def finite_diff_check(f, x0, tol=1e-4):
    x = Parameter(np.array(x0, dtype=float))
    ad.backward(f(x))
    numeric = ad.numerical_grad(lambda: f(Tensor(x.data)).item(), x.data)
    assert relative_errors(x.grad, numeric).max() < tol


# ------------------------------------------------------------------ examples

def test_softmax_of_equal_logits_is_uniform():
    assert np.array_equal(ad.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_reshape_preserves_row_major_order():
    x = np.arange(24.0).reshape(2, 3, 4)
    y = ad.reshape(Tensor(x), (1, 2, 12)).data
    assert y[0, 1, 11] == x[1, 2, 3]


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(Tensor(a), Tensor(np.eye(2))).data, a)


def test_sum_of_squares_gradient():
    w = Parameter([1.0, 2.0, 3.0])
    ad.backward(ad.sum(ad.square(w)))
    assert np.array_equal(w.grad, [2.0, 4.0, 6.0])


def test_linear_fit_gradient_matches_finite_differences():
    xs = np.array([[1.0], [2.0], [3.0]])
    ys = np.array([[2.0], [3.5], [7.0]])
    w = Parameter([[0.3]])

    def loss(w_):
        return ad.mean(ad.square(xs @ w_ - ys))

    ad.backward(loss(w))
    numeric = ad.numerical_grad(lambda: loss(Tensor(w.data)).item(), w.data)
    assert relative_errors(w.grad, numeric).max() < 1e-4


def test_softmax_cross_entropy_gradient_is_p_minus_t():
    logits = Parameter([[0.0, 0.0], [0.0, 0.0]])
    targets = np.array([[1.0, 0.0], [0.0, 1.0]])
    ad.backward(-ad.sum(ad.log(ad.softmax(logits)) * targets))
    # brute-force Jacobian of softmax at equal logits: p = 1/2 everywhere
    p = np.full((2, 2), 0.5)
    jac = np.array([[p[0, 0] * (1 - p[0, 0]), -p[0, 0] * p[0, 1]], [-p[0, 1] * p[0, 0], p[0, 1] * (1 - p[0, 1])]])
    expected = np.stack([jac.T @ (-targets[i] / p[0]) for i in range(2)])
    assert np.allclose(logits.grad, expected)
    assert np.allclose(logits.grad, p - targets)
    assert np.allclose(logits.grad.sum(axis=1), 0.0)


def test_backward_requires_scalar():
    x = Parameter(np.ones((2, 2)))
    with pytest.raises(ShapeError, match="scalar"):
        ad.backward(x * 2.0)


def test_unreachable_parameters_hold_zero():
    class Net(ad.Module):
        def __init__(self):
            self.used = Parameter([1.0])
            self.unused = Parameter([5.0])

    net = Net()
    net.zero_grad()
    ad.backward(ad.sum(net.used * 3.0))
    assert net.used.grad[0] == 3.0 and net.unused.grad[0] == 0.0


def test_parameters_registered_once_with_unique_names():
    class Net(ad.Module):
        def __init__(self):
            self.a = Parameter([1.0])
            self.blocks = [Parameter([2.0]), Parameter([3.0])]

    assert [name for name, _ in Net().named_parameters()] == ["a", "blocks.0", "blocks.1"]

    class Shared(ad.Module):
        def __init__(self):
            self.a = Parameter([1.0])
            self.b = self.a

    with pytest.raises(ValueError, match="twice"):
        Shared().named_parameters()


@pytest.mark.parametrize("op,args", [
    ("matmul", (np.ones((2, 3)), np.ones((2, 3)))),
    ("add", (np.ones((2, 3)), np.ones((4,)))),
    ("mul", (np.ones((2, 3)), np.ones((3, 2)))),
])
def test_shape_errors_name_op_and_shapes(op, args):
    with pytest.raises(ShapeError) as err:
        getattr(ad, op)(Tensor(args[0]), Tensor(args[1]))
    msg = str(err.value)
    assert op in msg and str(args[0].shape) in msg and str(args[1].shape) in msg


# ---------------------------------------------------------------------- adam

def test_adam_first_step_moves_by_lr():
    p = Parameter([0.0])
    p.grad = np.array([1.0])
    Adam([p], lr=1e-4, weight_decay=0.0).step()
    assert p.data[0] == pytest.approx(-1e-4, rel=1e-6)
    assert p.grad[0] == 0.0


def test_adam_zero_gradient_no_decay_is_noop():
    p = Parameter([0.7])
    p.grad = np.zeros(1)
    Adam([p], lr=1e-4).step()
    assert p.data[0] == 0.7


def test_adam_decoupled_weight_decay():
    p = Parameter([1.0])
    p.grad = np.zeros(1)
    Adam([p], lr=1e-4, weight_decay=0.01).step()
    assert p.data[0] == pytest.approx(1.0 - 1e-4 * 0.01 * 1.0, abs=1e-15)


def test_adam_missing_gradient_raises():
    with pytest.raises(ValueError, match="gradient"):
        Adam([Parameter([1.0], name="w")]).step()


def test_adam_step_counter_and_moment_shapes():
    p = Parameter(np.ones((3, 2)))
    opt = Adam([p])
    for expected in (1, 2, 3):
        p.grad = np.ones((3, 2))
        opt.step()
        assert opt.step_count == expected
    assert opt.m[0].shape == p.shape and opt.v[0].shape == p.shape


# ---------------------------------------------------------------- properties

small = st.tuples(st.integers(1, 4), st.integers(1, 4))


def arrays(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


UNARY = {
    "square": lambda x, w: ad.sum(ad.square(x) * w),
    "sqrt": lambda x, w: ad.sum(ad.sqrt(ad.square(x) + 0.5) * w),
    "exp": lambda x, w: ad.sum(ad.exp(x) * w),
    "log": lambda x, w: ad.sum(ad.log(ad.square(x) + 0.5) * w),
    "relu": lambda x, w: ad.sum(ad.relu(x) * w),
    "softmax": lambda x, w: ad.sum(ad.softmax(x) * w),
    "log_softmax": lambda x, w: ad.sum(ad.log_softmax(x) * w),
    "layer_norm": lambda x, w: ad.sum(ad.layer_norm(x) * w),
    "l2_normalize": lambda x, w: ad.sum(ad.l2_normalize(x) * w),
    "mean": lambda x, w: ad.mean(x * w),
    "mean_axis": lambda x, w: ad.sum(ad.square(ad.mean(x * w, axis=0))),
    "sum_axis": lambda x, w: ad.sum(ad.square(ad.sum(x, axis=1, keepdims=True))),
    "transpose": lambda x, w: ad.sum(ad.transpose(x) * w.T),
    "reshape": lambda x, w: ad.sum(ad.reshape(x, (-1,)) * w.reshape(-1)),
    "concat": lambda x, w: ad.sum(ad.concat([x, ad.square(x)], axis=0) * np.vstack([w, w])),
    "div": lambda x, w: ad.sum(w / (ad.square(x) + 1.0)),
    "sub/scalar": lambda x, w: ad.sum(ad.square(3.0 - x * 2.0) * w),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(shape=small, seed=st.integers(0, 10_000))
def test_op_gradients_match_finite_differences(name, shape, seed):
    x0 = arrays(shape, seed)
    if name == "relu":
        x0 = np.where(np.abs(x0) < 1e-3, 0.5, x0)  # keep away from the kink
    if name == "layer_norm" and shape[1] == 1:
        return  # constant output, gradient identically zero
    w = arrays(shape, seed + 1)
    finite_diff_check(lambda x: UNARY[name](x, w), x0)


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 4), k=st.integers(1, 4), p=st.integers(1, 4), batch=st.integers(1, 3),
       seed=st.integers(0, 10_000), shared=st.booleans())
def test_matmul_gradients_both_operands(m, k, p, batch, seed, shared):
    a0 = arrays((batch, m, k), seed)
    b0 = arrays((k, p) if shared else (batch, k, p), seed + 1)
    w = arrays((batch, m, p), seed + 2)
    finite_diff_check(lambda a: ad.sum((a @ Tensor(b0)) * w), a0)
    finite_diff_check(lambda b: ad.sum((Tensor(a0) @ b) * w), b0)


@settings(max_examples=20, deadline=None)
@given(shape=small, seed=st.integers(0, 10_000))
def test_broadcast_add_gradient_sums_back(shape, seed):
    bias0 = arrays((shape[1],), seed)
    x = arrays(shape, seed + 1)
    w = arrays(shape, seed + 2)
    finite_diff_check(lambda b: ad.sum(ad.square(Tensor(x) + b) * w), bias0)


@settings(max_examples=30, deadline=None)
@given(shape=small, seed=st.integers(0, 10_000), scale=st.floats(0.1, 50))
def test_softmax_rows_are_distributions(shape, seed, scale):
    y = ad.softmax(Tensor(arrays(shape, seed) * scale)).data
    assert (y >= 0).all()
    assert np.abs(y.sum(axis=-1) - 1.0).max() <= 1e-12


@given(shape=small, seed=st.integers(0, 100))
def test_dropout_identity_when_disabled(shape, seed):
    x = Tensor(arrays(shape, seed))
    rng = np.random.default_rng(seed)
    assert ad.dropout(x, 0.0, True, rng) is x
    assert ad.dropout(x, 0.5, False, rng) is x


def test_dropout_inverted_scaling():
    x = Tensor(np.ones((200, 50)))
    y = ad.dropout(x, 0.2, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert y.mean() == pytest.approx(1.0, abs=0.02)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rearrangement_backward_is_a_permutation(seed):
    x = Parameter(np.zeros((2, 3, 4)))
    upstream = arrays((4, 6), seed)
    y = ad.reshape(ad.permute(x, (2, 0, 1)), (4, 6))
    ad.backward(ad.sum(y * upstream))
    assert np.array_equal(np.sort(x.grad.reshape(-1)), np.sort(upstream.reshape(-1)))

    a, b = Parameter(np.zeros((2, 2))), Parameter(np.zeros((1, 2)))
    up = arrays((3, 2), seed + 1)
    ad.backward(ad.sum(ad.concat([a, b], axis=0) * up))
    assert np.array_equal(np.vstack([a.grad, b.grad]), up)


def test_layer_norm_normalises_last_axis():
    y = ad.layer_norm(Tensor(arrays((5, 7), 3) * 4 + 2), eps=0.0).data
    assert np.allclose(y.mean(axis=-1), 0.0) and np.allclose(y.std(axis=-1), 1.0)


def test_l2_normalize_unit_rows():
    y = ad.l2_normalize(Tensor(arrays((6, 5), 1))).data
    assert np.allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-12)


def test_forward_backward_step_bit_reproducible():
    def run():
        rng = np.random.default_rng(42)
        w = Parameter(rng.standard_normal((4, 3)))
        x = rng.standard_normal((5, 4))
        opt = Adam([w], lr=1e-2, weight_decay=0.01)
        for step in range(5):
            drop = np.random.default_rng(step)
            loss = ad.sum(ad.square(ad.dropout(ad.relu(Tensor(x) @ w), 0.3, True, drop)))
            ad.backward(loss)
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())
