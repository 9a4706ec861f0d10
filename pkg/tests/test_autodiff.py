import numpy as np
import pytest

from sgnode import autodiff as ad
from sgnode import mlp
from sgnode.ode import erk_step, tableau_rk4


def quadratic(tape, pvars):
    (theta,) = pvars
    return ad.sum_all(ad.square(theta))


def test_quadratic_loss_value_and_tape():
    loss, tape = ad.record(quadratic, [np.array([1.0, 2.0])])
    assert loss == 5.0
    assert len(tape) <= 5  # one leaf, square, sum in our encoding


def test_replay_reproduces_recorded_loss_exactly():
    rng = np.random.default_rng(0)
    theta = rng.normal(size=6)

    def build(tape, pvars):
        (th,) = pvars
        x = tape.const(rng.normal(size=6))
        return ad.sum_all(ad.square(th * x + ad.relu(th)))

    loss, tape = ad.record(build, [theta])
    assert tape.replay() == loss


def test_quadratic_gradient_analytic():
    loss, tape = ad.record(quadratic, [np.array([1.0, 2.0])])
    g = ad.backward(tape)
    assert np.array_equal(g.grads[0], [2.0, 4.0])
    assert g.loss == 5.0


def test_dead_relu_kills_gradient():
    def build(tape, pvars):
        (w,) = pvars
        return ad.sum_all(ad.relu(tape.const(np.array([-3.0]))) * w)

    loss, tape = ad.record(build, [np.array([4.0])])
    assert loss == 0.0
    g = ad.backward(tape)
    assert np.array_equal(g.grads[0], [0.0])


def test_relu_subgradient_zero_at_origin():
    def build(tape, pvars):
        (w,) = pvars
        return ad.sum_all(ad.relu(w))

    loss, tape = ad.record(build, [np.array([-1.0, 0.0, 2.0])])
    g = ad.backward(tape).grads[0]
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_gradient_of_parameter_independent_loss_is_zero():
    def build(tape, pvars):
        return ad.sum_all(ad.square(tape.const(np.arange(3.0))))

    loss, tape = ad.record(build, [np.ones(4)])
    g = ad.backward(tape).grads[0]
    assert np.array_equal(g, np.zeros(4))


def test_gradient_linearity_in_loss():
    rng = np.random.default_rng(2)
    theta = rng.normal(size=5)
    x1 = rng.normal(size=5)
    x2 = rng.normal(size=5)
    a, b = 1.7, -0.4

    def l1(tape, pvars):
        return ad.sum_all(ad.square(pvars[0] - tape.const(x1)))

    def l2(tape, pvars):
        return ad.sum_all(ad.square(pvars[0] * tape.const(x2)))

    def combo(tape, pvars):
        return l1(tape, pvars) * a + l2(tape, pvars) * b

    g1 = ad.backward(ad.record(l1, [theta])[1]).grads[0]
    g2 = ad.backward(ad.record(l2, [theta])[1]).grads[0]
    gc = ad.backward(ad.record(combo, [theta])[1]).grads[0]
    assert np.max(np.abs(gc - (a * g1 + b * g2))) < 1e-12


def test_grad_check_quadratic():
    assert ad.grad_check(quadratic, [np.array([1.0, 2.0])], h=1e-6) < 1e-9


def test_grad_check_zero_params():
    def build(tape, pvars):
        return ad.sum_all(tape.const(np.ones(2)))

    assert ad.grad_check(build, [], h=1e-6) == 0.0


def test_grad_check_requires_positive_h():
    with pytest.raises(ValueError):
        ad.grad_check(quadratic, [np.ones(2)], h=0.0)


def test_mlp_rollout_gradient_matches_finite_differences():
    # 2-state toy rhs, 3-step unrolled RK4 MSE, full finite-difference sweep
    params = mlp.init_params(2, 2, seed=4, hidden=8)
    mat = np.array([[-0.5, 0.2], [0.1, -0.3]])
    u0 = np.array([[0.3, -0.2]])
    targets = [np.array([[0.4, -0.1]]), np.array([[0.5, 0.0]]), np.array([[0.6, 0.1]])]

    def build(tape, pvars):
        ws, bs = pvars[0::2], pvars[1::2]

        def rhs(t, u):
            return u @ mat.T + mlp.forward(ws, bs, u)

        u = tape.const(u0)
        loss = None
        t = 0.0
        for tgt in targets:
            u = erk_step(tableau_rk4(), rhs, t, u, 0.1)
            t += 0.1
            s = ad.sum_all(ad.square(u - tape.const(tgt)))
            loss = s if loss is None else loss + s
        return loss * (1.0 / 3.0)

    err = ad.grad_check(build, mlp.param_list(params), h=1e-6)
    assert err < 1e-5


def test_single_step_gradient_matches_hand_chain_rule():
    # scalar linear rhs u' = theta*u: one RK4 step is u0*P(h*theta) with
    # P(z) = 1 + z + z^2/2 + z^3/6 + z^4/24, so for loss (u1 - y)^2
    # dL/dtheta = 2 (u1 - y) u0 h P'(h theta), P'(z) = 1 + z + z^2/2 + z^3/6.
    theta = 0.37
    u0, y, h = 1.4, 1.9, 0.1

    def build(tape, pvars):
        (th,) = pvars

        def rhs(t, u):
            return th * u

        u = erk_step(tableau_rk4(), rhs, 0.0, tape.const(np.array([[u0]])), h)
        return ad.sum_all(ad.square(u - tape.const(np.array([[y]]))))

    loss, tape = ad.record(build, [np.array([[theta]])])
    g = ad.backward(tape).grads[0][0, 0]
    z = h * theta
    poly = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    dpoly = 1 + z + z**2 / 2 + z**3 / 6
    u1 = u0 * poly
    expected = 2 * (u1 - y) * u0 * h * dpoly
    assert g == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize(
    "name,build,shapes",
    [
        ("roll", lambda t, p: ad.sum_all(ad.roll(p[0], 2, -1) * t.const(np.arange(12.0).reshape(3, 4))), [(3, 4)]),
        ("narrow", lambda t, p: ad.sum_all(ad.narrow(p[0], -1, 1, 2) * t.const(np.ones((3, 2)))), [(3, 4)]),
        ("concat", lambda t, p: ad.sum_all(ad.concatenate([p[0], p[1]], -1) * t.const(np.arange(21.0).reshape(3, 7))), [(3, 4), (3, 3)]),
        ("repeat", lambda t, p: ad.sum_all(ad.repeat_elems(p[0], 3, -1) * t.const(np.arange(36.0).reshape(3, 12))), [(3, 4)]),
        ("maximum", lambda t, p: ad.sum_all(ad.maximum(p[0], t.const(np.zeros((3, 4)))) * t.const(np.arange(12.0).reshape(3, 4))), [(3, 4)]),
        ("abs", lambda t, p: ad.sum_all(ad.absolute(p[0]) * t.const(np.arange(12.0).reshape(3, 4))), [(3, 4)]),
        ("matmul_nd", lambda t, p: ad.sum_all(p[0] @ t.const(np.arange(25.0).reshape(5, 5) / 10.0)), [(2, 3, 5)]),
        ("transpose", lambda t, p: ad.sum_all(ad.transpose(p[0]) * t.const(np.arange(12.0).reshape(4, 3))), [(3, 4)]),
        ("bias_broadcast", lambda t, p: ad.sum_all(ad.square(t.const(np.arange(20.0).reshape(5, 4) / 7.0) + ad.reshape(p[0], (1, -1)))), [(4,)]),
    ],
)
def test_primitive_vjps_match_finite_differences(name, build, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    params = [rng.normal(size=s) for s in shapes]
    assert ad.grad_check(build, params, h=1e-6) < 1e-7, name


def test_mixing_tapes_is_rejected():
    _, tape1 = ad.record(quadratic, [np.ones(2)])
    t1 = ad.Tape()
    v1 = t1.param(np.ones(2))
    t2 = ad.Tape()
    v2 = t2.param(np.ones(2))
    with pytest.raises(ad.TapeError):
        v1 + v2


def test_nonscalar_loss_rejected():
    def build(tape, pvars):
        return pvars[0] * 2.0

    with pytest.raises(ad.TapeError):
        ad.record(build, [np.ones(3)])


def test_unsupported_division_by_var():
    def build(tape, pvars):
        return pvars[0] / pvars[0]

    with pytest.raises(ad.TapeError):
        ad.record(build, [np.ones(2)])


def test_batched_gradient_accumulation_is_sample_order_invariant():
    rng = np.random.default_rng(9)
    params = mlp.init_params(3, 3, seed=1, hidden=8)
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=(6, 3))
    perm = rng.permutation(6)

    def build_for(xb, yb):
        def build(tape, pvars):
            ws, bs = pvars[0::2], pvars[1::2]
            r = mlp.forward(ws, bs, tape.const(xb)) - tape.const(yb)
            return ad.sum_all(ad.square(r)) * (1.0 / xb.shape[0])

        return build

    g1 = ad.backward(ad.record(build_for(x, y), mlp.param_list(params))[1]).grads
    g2 = ad.backward(ad.record(build_for(x[perm], y[perm]), mlp.param_list(params))[1]).grads
    for a, b in zip(g1, g2):
        assert np.max(np.abs(a - b)) < 1e-14
