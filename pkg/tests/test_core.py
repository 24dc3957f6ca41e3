import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superot import core
from superot.core import Tensor, grad
from superot.errors import ContractError, DomainError, ShapeError

from oracles import central_diff, rel_err, triple_loop_matmul


def test_matmul_identity_and_zero():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(core.matmul(Tensor(np.eye(2)), a).data, a.data)
    z = core.matmul(Tensor(np.zeros((2, 2))), Tensor(np.random.default_rng(0).normal(size=(2, 5))))
    assert np.array_equal(z.data, np.zeros((2, 5)))


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    out = core.matmul(Tensor(a), Tensor(b)).data
    assert np.abs(out - triple_loop_matmul(a, b)).max() <= 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        core.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_relu_sigmoid_values():
    assert np.array_equal(core.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert core.sigmoid(Tensor(0.0)).item() == 0.5


def test_log_sigmoid_gradient_at_zero():
    x = Tensor(0.0, requires_grad=True)
    g = grad(core.log(core.sigmoid(x)), x)
    fd = central_diff(lambda v: np.log(1 / (1 + np.exp(-v))), np.array(0.0))
    assert abs(g.item() - 0.5) < 1e-12
    assert abs(g.item() - fd) < 1e-9


def test_log_domain_error():
    with pytest.raises(DomainError):
        core.log(Tensor([1.0, 0.0]))


def test_unknown_elementwise_kind():
    with pytest.raises(ContractError):
        core.elementwise("tanh", Tensor(1.0))


def test_elementwise_dispatch():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
    assert np.array_equal(core.elementwise("mul", a, b).data, [3.0, 10.0])
    assert np.array_equal(core.elementwise("square", b).data, [9.0, 25.0])


def test_row_broadcast_gradient():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    bias = Tensor(rng.normal(size=3), requires_grad=True)
    loss = core.tsum(core.square(core.add(Tensor(x), bias)))
    g = grad(loss, bias)
    fd = central_diff(lambda b: float(((x + b) ** 2).sum()), bias.data)
    assert rel_err(g.data, fd) <= 1e-8


def test_sum_gives_ones():
    x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 4)), requires_grad=True)
    g = grad(core.tsum(x), x)
    assert np.array_equal(g.data, np.ones((2, 3, 4)))


def test_norm_squared_gradient_matches_fd():
    rng = np.random.default_rng(4)
    w0, x = rng.normal(size=(3, 4)), rng.normal(size=(4, 1))
    W = Tensor(w0, requires_grad=True)
    loss = core.tsum(core.square(core.matmul(W, Tensor(x))))
    g = grad(loss, W)
    fd = central_diff(lambda w: float(((w @ x) ** 2).sum()), w0)
    assert rel_err(g.data, fd) <= 1e-5


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        grad(core.mul(x, 2.0), x)


def test_backward_populates_leaf_grads():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([3.0, 4.0], requires_grad=True)
    core.tsum(core.mul(a, b)).backward()
    assert np.array_equal(a.grad, [3.0, 4.0])
    assert np.array_equal(b.grad, [1.0, 2.0])


def test_row_norm_zero_row_is_zero_with_zero_gradient():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    n = core.row_norm(x)
    assert np.array_equal(n.data, [0.0, 0.0])
    assert np.array_equal(grad(core.tsum(n), x).data, np.zeros((2, 3)))


def test_batchnorm_constant_column_is_zero():
    x = Tensor(np.full((4, 2), 3.0))
    out = core.batchnorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.array_equal(out.data, np.zeros((4, 2)))


def test_batchnorm_zero_gamma_gives_beta():
    x = Tensor(np.random.default_rng(5).normal(size=(6, 3)))
    beta = np.array([0.5, -1.0, 2.0])
    out = core.batchnorm(x, Tensor(np.zeros(3)), Tensor(beta))
    assert np.array_equal(out.data, np.tile(beta, (6, 1)))


def test_batchnorm_moments():
    x = np.random.default_rng(6).normal(2.0, 3.0, size=(8, 3))
    out = core.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.abs(out.mean(axis=0)).max() <= 1e-10
    assert np.abs(out.var(axis=0) - 1.0).max() <= 1e-6


def test_batchnorm_needs_two_rows():
    with pytest.raises(ContractError):
        core.batchnorm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_batchnorm_running_stats_and_inference():
    rng = np.random.default_rng(7)
    rm, rv = np.zeros(2), np.ones(2)
    x = rng.normal(size=(10, 2))
    core.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                   running_mean=rm, running_var=rv, momentum=0.1)
    assert np.allclose(rm, 0.1 * x.mean(axis=0))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    out = core.batchnorm(Tensor(x[:1]), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         training=False, running_mean=rm, running_var=rv)
    assert np.allclose(out.data, (x[:1] - rm) / np.sqrt(rv))


def test_batchnorm_gradient_matches_fd():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(6, 3))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    w = rng.normal(size=(6, 3))

    def f(x):
        xc = x - x.mean(axis=0)
        return float((w * (xc / np.sqrt((xc ** 2).mean(axis=0)) * gamma + beta)).sum())

    x = Tensor(x0, requires_grad=True)
    out = core.batchnorm(x, Tensor(gamma), Tensor(beta))
    g = grad(core.tsum(core.mul(out, w)), x)
    assert rel_err(g.data, central_diff(f, x0)) <= 1e-6


def _two_layer_disc(params, x):
    w1, b1, w2, b2 = params
    h = core.relu(core.add(core.matmul(x, w1), b1))
    return core.sigmoid(core.add(core.matmul(h, w2), b2))


def _penalty(params, x):
    xt = Tensor(x, requires_grad=True)
    out = _two_layer_disc(params, xt)
    g = grad(core.tsum(out), xt, create_graph=True)
    return core.mean(core.square(core.sub(core.row_norm(g), 1.0)))


def test_second_order_penalty_gradient_matches_fd():
    rng = np.random.default_rng(9)
    shapes = [(3, 5), (5,), (5, 1), (1,)]
    raw = [rng.normal(size=s) for s in shapes]
    x = rng.normal(size=(4, 3))
    params = [Tensor(r, requires_grad=True) for r in raw]
    analytic = grad(_penalty(params, x), params)
    for i, r in enumerate(raw):
        def f(v, i=i):
            ps = [Tensor(v if j == i else raw[j]) for j in range(len(raw))]
            return _penalty(ps, x).item()
        assert rel_err(analytic[i].data, central_diff(f, r)) <= 1e-4


def test_tape_replay_is_deterministic():
    rng = np.random.default_rng(10)
    raw = [rng.normal(size=s) for s in [(3, 5), (5,), (5, 1), (1,)]]
    x = rng.normal(size=(4, 3))

    def run():
        ps = [Tensor(r, requires_grad=True) for r in raw]
        loss = _penalty(ps, x)
        return loss.data.tobytes(), [g.data.tobytes() for g in grad(loss, ps)]

    assert run() == run()


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    state = core.AdamState(lr=1e-2)
    out = p
    for _ in range(5):
        out = core.adam_step(out, [np.zeros(2), np.zeros((2, 2))], state)
    assert all(np.array_equal(a, b) for a, b in zip(out, p))


def test_adam_first_step_formula():
    g, lr, eps = 0.3, 1e-3, 1e-8
    state = core.AdamState(lr=lr, eps=eps)
    (w,) = core.adam_step([np.array([2.0])], [np.array([g])], state)
    # first step: m_hat = g, v_hat = g^2
    expected = 2.0 - lr * g / (abs(g) + eps)
    assert abs(w[0] - expected) < 1e-15
    assert state.t == 1


def test_adam_decreases_quadratic():
    state = core.AdamState(lr=1e-2)
    w = [np.array([1.0])]
    values = [1.0]
    for _ in range(2):
        w = core.adam_step(w, [2 * w[0]], state)
        values.append(float(w[0][0] ** 2))
    assert values[0] > values[1] > values[2]


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        core.adam_step([np.ones(2)], [np.ones(3)], core.AdamState())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_adam_second_moment_nonnegative(seed):
    rng = np.random.default_rng(seed)
    state = core.AdamState(lr=1e-3)
    p = [rng.normal(size=3)]
    for _ in range(3):
        p = core.adam_step(p, [rng.normal(size=3)], state)
    assert (state.v[0] >= 0).all()
