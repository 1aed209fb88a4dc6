import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xaicyclegan import autograd as ag
from xaicyclegan.autograd import GradHook, ShapeError, Tensor, finite_difference_grad, no_grad

from conftest import rel_linf

TRIALS = 100
TOL = 1e-6


def test_add_example():
    assert ag.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5))
    w = np.ones((1, 1, 1, 1))
    np.testing.assert_array_equal(ag.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_ones():
    out = ag.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.data.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_square_grad():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0


def test_mean_grad():
    x = Tensor(np.arange(4.0), requires_grad=True)
    ag.mean(x).backward()
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_intermediate_grads_populated():
    x = Tensor([1.0, -2.0], requires_grad=True)
    z = x * 3.0
    ag.sum_(z * z).backward()
    np.testing.assert_allclose(z.grad, 2 * z.data)
    np.testing.assert_allclose(x.grad, 18 * x.data)


def test_backward_needs_scalar():
    with pytest.raises(ShapeError, match="backward"):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_broadcast_mismatch_names_op():
    with pytest.raises(ShapeError, match="add"):
        ag.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_conv_channel_mismatch():
    with pytest.raises(ShapeError, match="conv2d"):
        ag.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_functional_grad_leaves_grad_empty():
    x = Tensor([1.0, 2.0], requires_grad=True)
    w = Tensor([3.0, 4.0], requires_grad=True)
    (gx,) = ag.grad(ag.sum_(x * w), [x])
    np.testing.assert_array_equal(gx, [3.0, 4.0])
    assert x.grad is None and w.grad is None


def test_grad_unreachable_is_zero():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    gx, gy = ag.grad(ag.sum_(x * x), [x, y])
    assert gx.tolist() == [2.0] and gy.tolist() == [0.0]


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


# --- hooks -----------------------------------------------------------------

def _chain(x):
    z = ag.tanh(x * 1.5)
    return z, ag.sum_(z * z)


def test_hook_annihilation():
    x = Tensor(np.linspace(-1, 1, 5), requires_grad=True)
    z, y = _chain(x)
    ag.register_grad_hook(z, lambda g: np.zeros_like(g))
    y.backward()
    np.testing.assert_array_equal(x.grad, np.zeros(5))


def test_identity_hook_bit_exact(rng):
    data = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))

    def run(hook):
        x = Tensor(data, requires_grad=True)
        z = ag.conv2d(x, Tensor(w), padding=1)
        if hook:
            ag.register_grad_hook(z, lambda g: g)
        ag.mean(ag.leaky_relu(z) * z).backward()
        return x.grad

    np.testing.assert_array_equal(run(False), run(True))


def test_doubling_hook():
    x = Tensor(np.ones(4), requires_grad=True)
    ag.register_grad_hook(x, lambda g: 2 * g)
    ag.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.full(4, 2.0))


def test_masking_hook_on_sum():
    x = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    M = np.ones((3, 3))
    ag.register_grad_hook(x, lambda g: g + 0.1 * (g * M))
    ag.sum_(x).backward()
    np.testing.assert_allclose(x.grad, np.full((1, 1, 3, 3), 1.1), rtol=0, atol=1e-15)


def test_hook_sees_accumulated_grad():
    x = Tensor([2.0], requires_grad=True)
    z = x * 1.0
    seen = []
    ag.register_grad_hook(z, lambda g: seen.append(g.copy()) or g)
    ag.sum_(z * 3.0 + z * 4.0).backward()
    assert len(seen) == 1 and seen[0].tolist() == [7.0]


def test_grad_hook_dataclass_and_remove():
    x = Tensor([1.0], requires_grad=True)
    handle = ag.register_grad_hook(x, GradHook(x, lambda g: 5 * g))
    handle.remove()
    ag.sum_(x).backward()
    assert x.grad.tolist() == [1.0]


def test_hook_shape_change_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    ag.register_grad_hook(x, lambda g: g[:2])
    with pytest.raises(ShapeError):
        ag.sum_(x).backward()


# --- finite differences ------------------------------------------------------

def test_fd_examples():
    x = Tensor([1.0, 2.0])
    np.testing.assert_allclose(finite_difference_grad(lambda t: ag.sum_(t * t), x, eps=1e-5), [2.0, 4.0], atol=1e-8)
    y = Tensor(np.zeros((2, 3)))
    np.testing.assert_allclose(finite_difference_grad(ag.mean, y), np.full((2, 3), 1 / 6), atol=1e-9)


def _projected(fn, weights):
    """Scalar test function: random linear projection of fn's output."""
    def f(*xs):
        out = fn(*xs)
        return ag.sum_(out * Tensor(weights)) if out.ndim else out
    return f


def _away_from(rng, shape, kinks=(0.0,), margin=1e-3):
    x = rng.standard_normal(shape)
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] += np.where(x[close] >= k, margin, -margin) * 2
    return x


def _cases(rng):
    """(name, fn, inputs) for one randomized trial of every primitive."""
    n, c, h = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(4, 7))
    o = int(rng.integers(1, 3))
    k = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, k))
    r = lambda *sh: rng.standard_normal(sh)  # noqa: E731
    op = int(rng.integers(0, s)) if s > 1 else 0
    m, kk, q = (int(v) for v in rng.integers(1, 5, size=3))
    target = r(2, 3)
    return [
        ("add", ag.add, [r(2, 3), r(3)]),
        ("sub", ag.sub, [r(2, 1, 3), r(2, 4, 1)]),
        ("mul", ag.mul, [r(2, 3), r(2, 3)]),
        ("matmul", ag.matmul, [r(m, kk), r(kk, q)]),
        ("conv2d", lambda x, w, b: ag.conv2d(x, w, b, stride=s, padding=p), [r(n, c, h, h), r(o, c, k, k), r(o)]),
        ("conv_transpose2d",
         lambda x, w, b: ag.conv_transpose2d(x, w, b, stride=s, padding=min(p, k - 1), output_padding=op),
         [r(n, c, h, h), r(c, o, k, k), r(o)]),
        ("concat", lambda a, b: ag.concat([a, b], axis=1), [r(2, 2, 3), r(2, 1, 3)]),
        ("slice", lambda x: ag.slice_(x, (slice(None), slice(1, 3))), [r(2, 4)]),
        ("pad", lambda x: ag.pad(x, ((0, 0), (1, 2))), [r(2, 3)]),
        ("leaky_relu", ag.leaky_relu, [_away_from(rng, (3, 4))]),
        ("relu", ag.relu, [_away_from(rng, (3, 4))]),
        ("tanh", ag.tanh, [r(3, 4)]),
        ("sigmoid", ag.sigmoid, [r(3, 4)]),
        ("abs", ag.absolute, [_away_from(rng, (3, 4))]),
        ("pow", lambda x: ag.power(x, 3.0), [r(3, 4)]),
        ("sum", lambda x: ag.sum_(x, axis=1), [r(3, 4)]),
        ("mean", lambda x: ag.mean(x, axis=0, keepdims=True), [r(3, 4)]),
        ("mse", lambda x: ag.mse(x, Tensor(target)), [r(2, 3)]),
        ("l1", lambda x: ag.l1(x, Tensor(target)), [target + _away_from(rng, (2, 3))]),
        ("instance_norm", ag.instance_norm, [r(n, c, h, h) * 2 + 1]),
    ]


def test_every_primitive_is_covered():
    names = {name for name, *_ in _cases(np.random.default_rng(0))}
    assert names == set(ag.PRIMITIVES)


def _fd_trial(fn, arrays, rng):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with no_grad():
        probe = fn(*[Tensor(a) for a in arrays])
    weights = rng.standard_normal(probe.shape)
    f = _projected(fn, weights)
    analytic = ag.grad(f(*ts), ts)
    worst = 0.0
    for i, a in enumerate(arrays):
        def fi(x, i=i):
            args = [Tensor(b) for b in arrays]
            args[i] = x
            return f(*args)
        numeric = finite_difference_grad(fi, Tensor(a))
        worst = max(worst, rel_linf(analytic[i], numeric))
    return worst


def fd_sweep(trials: int = TRIALS, seed: int = 2024) -> dict[str, float]:
    """Worst relative L-inf error per primitive over ``trials`` random draws."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(trials):
        for name, fn, arrays in _cases(rng):
            worst[name] = max(worst.get(name, 0.0), _fd_trial(fn, arrays, rng))
    return worst


@pytest.mark.parametrize("name", ag.PRIMITIVES)
def test_primitive_finite_difference_few(name):
    rng = np.random.default_rng(7)
    for _ in range(5):
        fn, arrays = next((f, a) for n, f, a in _cases(rng) if n == name)
        assert _fd_trial(fn, arrays, rng) <= TOL


def test_apply_primitive_dispatch():
    x = Tensor(np.ones((1, 1, 3, 3)))
    out = ag.apply_primitive("conv2d", [x, Tensor(np.ones((1, 1, 3, 3)))])
    assert out.data.item() == 9.0
    with pytest.raises(ValueError):
        ag.apply_primitive("softmax", [x])


def test_conv_transpose_is_adjoint(rng):
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    y = ag.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    u = rng.standard_normal(y.shape)
    xt = ag.conv_transpose2d(Tensor(u), Tensor(w), stride=2, padding=1).data
    assert np.isclose((y * u).sum(), (x * xt).sum(), rtol=1e-12)


def test_conv_transpose_output_size():
    out = ag.conv_transpose2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((2, 3, 3, 3))),
                              stride=2, padding=1, output_padding=1)
    assert out.shape == (1, 3, 16, 16)


def test_instance_norm_stats(rng):
    y = ag.instance_norm(Tensor(rng.standard_normal((2, 3, 6, 6)) * 4 + 2)).data
    np.testing.assert_allclose(y.mean(axis=(2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(2, 3)), 1, atol=1e-5)


def test_backward_deterministic(rng):
    data = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)

    def run():
        x = Tensor(data, requires_grad=True)
        h = ag.conv2d(x, Tensor(w), padding=1)
        ag.mean(ag.instance_norm(h) * h + ag.tanh(h)).backward()
        return x.grad

    np.testing.assert_array_equal(run(), run())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(-3, 3))
def test_linear_grad_property(values, scale):
    x = Tensor(np.array(values), requires_grad=True)
    ag.sum_(x * scale + 1.0).backward()
    np.testing.assert_array_equal(x.grad, np.full(len(values), scale))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.integers(1, 2))
def test_conv_output_shape_property(c, o, h, s):
    out = ag.conv2d(Tensor(np.zeros((1, c, h, h))), Tensor(np.zeros((o, c, 3, 3))), stride=s, padding=1)
    assert out.shape == (1, o, (h + 2 - 3) // s + 1, (h + 2 - 3) // s + 1)
