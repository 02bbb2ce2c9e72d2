import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdnn_mcmc.fracnet import (
    ActivationSpec,
    FracNetConfig,
    Theta,
    adjoint,
    closed_form_oracle,
    forward,
    gradient,
    l1_coefficients,
    loss,
    nu_decay_check,
    predict,
    representation_coefficients,
    resnet_forward,
    smooth_relu,
    smooth_relu_deriv,
)

EPS = ActivationSpec(0.1)


def random_theta(cfg, rng, bias_scale=0.3):
    theta = Theta.initialize(cfg, int(rng.integers(1 << 30)))
    for b in theta.b:
        b += bias_scale * rng.standard_normal(b.shape)
    return theta


def fd_gradient(theta, X, Y, cfg, step=1e-6):
    x = theta.flatten()
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (loss(Theta.from_flat(x + e, cfg), X, Y, cfg)
                  - loss(Theta.from_flat(x - e, cfg), X, Y, cfg)) / (2 * step)
    return out


def min_kink_distance(theta, X, cfg):
    z = np.concatenate([zj.ravel() for zj in forward(theta, X, cfg).z])
    eps = cfg.activation.epsilon
    return float(np.min(np.minimum(np.abs(z - eps), np.abs(z + eps))))


# activation

@pytest.mark.parametrize("x, expected", [(1.0, 1.0), (-1.0, 0.0), (0.0, 0.025)])
def test_smooth_relu_branches(x, expected):
    assert smooth_relu(x, EPS) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("x, expected", [(0.0, 0.5), (0.1, 1.0), (-0.05, 0.25)])
def test_smooth_relu_deriv_branches(x, expected):
    assert smooth_relu_deriv(x, EPS) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("eps", [1e-1, 1e-3, 1e-6])
def test_activation_continuity_at_kinks(eps):
    spec = ActivationSpec(eps)
    for knot in (-eps, eps):
        left, right = np.nextafter(knot, -np.inf), np.nextafter(knot, np.inf)
        assert abs(smooth_relu(left, spec) - smooth_relu(right, spec)) < 1e-12
        assert abs(smooth_relu_deriv(left, spec) - smooth_relu_deriv(right, spec)) < 1e-9


def test_smooth_relu_tends_to_relu():
    x = np.linspace(-2, 2, 401)
    errs = [np.max(np.abs(smooth_relu(x, ActivationSpec(e)) - np.maximum(x, 0))) for e in (1e-1, 1e-3, 1e-6)]
    # worst case sits at x = 0 with value ε/4
    assert errs == pytest.approx([0.025, 0.00025, 2.5e-7], rel=1e-9)


def test_activation_rejects_nonpositive_width():
    with pytest.raises(ValueError):
        ActivationSpec(0.0)


# L1 weights

def test_l1_coefficients_examples():
    assert l1_coefficients(0.5, 1) == pytest.approx([1.0])
    assert l1_coefficients(0.5, 2) == pytest.approx([1.0, 0.41421356237309515], rel=1e-15)


@pytest.mark.parametrize("gamma", [0.1, 0.5, 0.9])
def test_l1_coefficients_positive_decreasing(gamma):
    a = l1_coefficients(gamma, 50)
    assert a[0] == 1.0
    assert np.all(a > 0)
    assert np.all(np.diff(a) < 0)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.2, 1.5])
def test_l1_coefficients_reject_gamma(gamma):
    with pytest.raises(ValueError):
        l1_coefficients(gamma, 3)


def test_tau_matches_gamma_function():
    cfg = FracNetConfig(gamma=0.5, h=1 / 3)
    # Γ(1.5) = √π / 2
    assert cfg.tau == pytest.approx((1 / 3) ** 0.5 * math.sqrt(math.pi) / 2, rel=1e-14)


@pytest.mark.parametrize("kwargs", [dict(L=1), dict(gamma=1.0), dict(h=0.0), dict(lam=-1.0), dict(hidden_width=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FracNetConfig(**kwargs)


# forward pass

def literal_forward(theta, xi, cfg):
    """Scalar-by-scalar transcription of the fractional recursion."""
    n, L = cfg.hidden_width, cfg.L
    eps, gamma, h = cfg.activation.epsilon, cfg.gamma, cfg.h
    tau = h**gamma * math.gamma(2 - gamma)

    def sig(x):
        if x > eps:
            return x
        if x < -eps:
            return 0.0
        return x * x / (4 * eps) + x / 2 + eps / 4

    def a(m):
        return (m + 1) ** (1 - gamma) - m ** (1 - gamma)

    phi0 = [float(xi[i]) if i < len(xi) else 0.0 for i in range(n)]
    phi = [phi0]
    W, b = theta.W, theta.b
    phi.append([sig(sum(W[0][r][c] * phi0[c] for c in range(n)) + b[0][r]) for r in range(n)])
    for j in range(2, L):
        new = []
        for r in range(n):
            pre = sum(W[j - 1][r][c] * phi[j - 1][c] for c in range(n)) + b[j - 1][r]
            hist = sum(a(j - 1 - k) * (phi[k + 1][r] - phi[k][r]) for k in range(j - 1))
            new.append(phi[j - 1][r] - hist + tau * sig(pre))
        phi.append(new)
    out = [sum(W[L - 1][r][c] * phi[L - 1][c] for c in range(n)) for r in range(cfg.output_dim)]
    return np.array(out), [np.array(p) for p in phi]


def test_forward_zero_parameters_matches_literal_recursion():
    cfg = FracNetConfig(L=5, input_dim=2, hidden_width=3, output_dim=2)
    theta = Theta.zeros(cfg)
    xi = np.array([0.7, -1.3])
    trace = forward(theta, xi, cfg)
    ref_out, ref_phi = literal_forward(theta, xi, cfg)
    assert np.all(trace.output == 0.0)
    np.testing.assert_array_equal(ref_out, 0.0)
    for j in range(1, cfg.L):
        np.testing.assert_allclose(trace.phi[j][0], ref_phi[j], rtol=1e-14, atol=1e-15)
    # φ_1 = σ(0) = ε/4 everywhere
    np.testing.assert_allclose(trace.phi[1][0], 0.025)


def test_forward_random_matches_literal_recursion():
    rng = np.random.default_rng(3)
    cfg = FracNetConfig(L=5, input_dim=2, hidden_width=4, output_dim=3, gamma=0.3, h=0.4)
    theta = random_theta(cfg, rng)
    xi = rng.uniform(-1, 1, 2)
    ref_out, _ = literal_forward(theta, xi, cfg)
    np.testing.assert_allclose(predict(theta, xi, cfg), ref_out, rtol=1e-12, atol=1e-14)


def test_forward_trace_shapes():
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=5, output_dim=7)
    theta = Theta.initialize(cfg, 0)
    trace = forward(theta, np.ones((3, 2)), cfg)
    assert len(trace.phi) == cfg.L + 1
    assert [p.shape for p in trace.phi] == [(3, 5)] * 4 + [(3, 7)]
    assert len(trace.z) == cfg.L - 1


def test_forward_dimension_mismatch():
    cfg = FracNetConfig(L=3, input_dim=2, hidden_width=4, output_dim=2)
    theta = Theta.initialize(cfg, 0)
    with pytest.raises(ValueError):
        forward(theta, np.ones(3), cfg)
    bad = Theta.initialize(FracNetConfig(L=3, input_dim=2, hidden_width=5, output_dim=2), 0)
    with pytest.raises(ValueError):
        forward(bad, np.ones(2), cfg)


def test_forward_non_finite_is_an_error():
    cfg = FracNetConfig(L=3, input_dim=2, hidden_width=3, output_dim=2)
    theta = Theta.initialize(cfg, 0)
    theta.W[0][0, 0] = np.inf
    with pytest.raises(FloatingPointError):
        forward(theta, np.ones(2), cfg)


def test_two_layer_network_is_plain_dnn():
    rng = np.random.default_rng(5)
    cfg = FracNetConfig(L=2, input_dim=2, hidden_width=6, output_dim=3)
    theta = random_theta(cfg, rng)
    xi = rng.uniform(0, 1, 2)
    expected = theta.W[1] @ smooth_relu(theta.W[0][:, :2] @ xi + theta.b[0], cfg.activation)
    np.testing.assert_allclose(predict(theta, xi, cfg), expected, rtol=1e-14)
    np.testing.assert_array_equal(predict(theta, xi, cfg), resnet_forward(theta, xi, cfg).output)


def test_resnet_zero_theta_and_gamma_independence():
    rng = np.random.default_rng(6)
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=4, output_dim=2, gamma=0.2)
    assert np.all(resnet_forward(Theta.zeros(cfg), [1.0, 2.0], cfg).output == 0.0)
    theta = random_theta(cfg, rng)
    other = FracNetConfig(L=4, input_dim=2, hidden_width=4, output_dim=2, gamma=0.8)
    np.testing.assert_array_equal(resnet_forward(theta, [0.3, 0.4], cfg).output,
                                  resnet_forward(theta, [0.3, 0.4], other).output)


def test_output_linear_in_last_weight():
    rng = np.random.default_rng(8)
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=4, output_dim=3)
    theta = random_theta(cfg, rng)
    xi = rng.uniform(size=(5, 2))
    A, B = rng.standard_normal((2, 3, 4))
    outs = []
    for W in (A, B, 2.0 * A - 3.0 * B):
        theta.W[-1] = W
        outs.append(predict(theta, xi, cfg))
    np.testing.assert_allclose(outs[2], 2.0 * outs[0] - 3.0 * outs[1], rtol=1e-12, atol=1e-13)


# closed forms

def test_closed_form_l3_coefficients_and_agreement():
    rng = np.random.default_rng(11)
    cfg = FracNetConfig(L=3, input_dim=2, hidden_width=5, output_dim=4, gamma=0.5, h=1 / 3)
    a1 = math.sqrt(2) - 1
    np.testing.assert_allclose(representation_coefficients(3, 0.5, 1 / 3), [1 - a1, cfg.tau, a1], rtol=1e-14)
    for _ in range(10):
        theta = random_theta(cfg, rng)
        xi = rng.uniform(-2, 2, 2)
        np.testing.assert_allclose(closed_form_oracle(theta, xi, cfg), predict(theta, xi, cfg),
                                   rtol=1e-12, atol=1e-12)


def test_closed_form_l4_coefficients():
    a = l1_coefficients(0.5, 3)
    tau = FracNetConfig(gamma=0.5, h=1 / 3).tau
    alpha = representation_coefficients(4, 0.5, 1 / 3)
    np.testing.assert_allclose(alpha[:3], [1 - a[1] + a[1] ** 2 - a[2], (1 - a[1]) * tau, tau], rtol=1e-14)
    # φ_0 weight obtained by expanding the recursion by hand
    assert alpha[3] == pytest.approx(a[1] - a[1] ** 2 + a[2], rel=1e-14)


@pytest.mark.parametrize("L", [3, 4, 5, 6])
def test_representation_weights_on_sigma_and_input_sum_to_one_without_tau(L):
    # the σ_0 and φ_0 weights always add up to one: the history sum telescopes
    alpha = representation_coefficients(L, 0.37, 0.25)
    assert alpha[0] + alpha[-1] == pytest.approx(1.0, abs=1e-14)


def test_closed_form_rejects_deep_networks():
    cfg = FracNetConfig(L=5, input_dim=2, hidden_width=3, output_dim=2)
    with pytest.raises(ValueError):
        closed_form_oracle(Theta.initialize(cfg, 0), [0.0, 0.0], cfg)


# loss / adjoint / gradient

def test_loss_examples():
    cfg = FracNetConfig(L=3, input_dim=2, hidden_width=3, output_dim=2, lam=0.0)
    theta = Theta.initialize(cfg, 1)
    X = np.array([[0.5, 0.2]])
    out = predict(theta, X, cfg)
    assert loss(theta, X, out, cfg) == 0.0
    assert loss(theta, X, out - np.array([[1.0, 0.0]]), cfg) == pytest.approx(0.5, rel=1e-14)


def test_loss_regularizer_only():
    cfg = FracNetConfig(L=2, input_dim=1, hidden_width=1, output_dim=1, lam=0.3)
    theta = Theta([np.array([[1.0]]), np.zeros((1, 1))], [np.array([1.0])])
    assert theta.sq_norm() == 2.0
    value, _ = gradient(theta, np.zeros((1, 1)), np.zeros((1, 1)), cfg, data_free=True)
    assert value == pytest.approx(0.3)


def test_loss_rejects_empty_batch():
    cfg = FracNetConfig(L=2, input_dim=2, hidden_width=2, output_dim=2)
    with pytest.raises(ValueError):
        loss(Theta.initialize(cfg, 0), np.zeros((0, 2)), np.zeros((0, 2)), cfg)


def test_adjoint_zero_terminal():
    cfg = FracNetConfig(L=5, input_dim=2, hidden_width=3, output_dim=2)
    theta = Theta.initialize(cfg, 0)
    trace = forward(theta, np.ones((2, 2)), cfg)
    psi = adjoint(trace, theta, np.zeros((2, 2)), cfg)
    assert all(np.all(p == 0) for p in psi[1:])


def test_adjoint_two_layers():
    rng = np.random.default_rng(2)
    cfg = FracNetConfig(L=2, input_dim=2, hidden_width=4, output_dim=3)
    theta = random_theta(cfg, rng)
    trace = forward(theta, rng.standard_normal(2), cfg)
    terminal = rng.standard_normal((1, 3))
    psi = adjoint(trace, theta, terminal, cfg)
    np.testing.assert_allclose(psi[1], -(theta.W[1].T @ terminal[0])[None, :])


def test_adjoint_rejects_mismatched_trace():
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=3, output_dim=2)
    other = FracNetConfig(L=3, input_dim=2, hidden_width=3, output_dim=2)
    theta = Theta.initialize(cfg, 0)
    trace = forward(Theta.initialize(other, 0), np.ones(2), other)
    with pytest.raises(ValueError):
        adjoint(trace, theta, np.zeros((1, 2)), cfg)


def test_gradient_zero_at_exact_fit():
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=3, output_dim=2, lam=0.0)
    theta = Theta.initialize(cfg, 4)
    X = np.random.default_rng(0).uniform(size=(4, 2))
    _, grad = gradient(theta, X, predict(theta, X, cfg), cfg)
    assert np.all(grad.flatten() == 0.0)


def test_gradient_of_pure_regularizer_is_theta():
    cfg = FracNetConfig(L=3, input_dim=2, hidden_width=3, output_dim=2, lam=1.0)
    theta = Theta.initialize(cfg, 4)
    _, grad = gradient(theta, np.ones((1, 2)), np.ones((1, 2)), cfg, data_free=True)
    np.testing.assert_array_equal(grad.flatten(), theta.flatten())


@pytest.mark.parametrize("L", [3, 4])
def test_gradient_matches_finite_differences_single_sample(L):
    rng = np.random.default_rng(20 + L)
    cfg = FracNetConfig(L=L, input_dim=2, hidden_width=3, output_dim=2, lam=1e-3)
    X, Y = rng.uniform(size=(1, 2)), rng.standard_normal((1, 2))
    while True:
        theta = random_theta(cfg, rng)
        if min_kink_distance(theta, X, cfg) > 1e-3:
            break
    _, grad = gradient(theta, X, Y, cfg)
    fd = fd_gradient(theta, X, Y, cfg)
    assert np.max(np.abs(grad.flatten() - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_gradient_matches_finite_differences_batch_deep():
    rng = np.random.default_rng(99)
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=3, output_dim=3, gamma=0.7, h=0.5, lam=1e-2)
    X, Y = rng.uniform(-1, 1, size=(6, 2)), rng.standard_normal((6, 3))
    while True:
        theta = random_theta(cfg, rng)
        if min_kink_distance(theta, X, cfg) > 1e-3:
            break
    value, grad = gradient(theta, X, Y, cfg)
    assert value == pytest.approx(loss(theta, X, Y, cfg), rel=1e-14)
    fd = fd_gradient(theta, X, Y, cfg)
    assert np.max(np.abs(grad.flatten() - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_gradient_is_deterministic():
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=5, output_dim=3)
    theta = Theta.initialize(cfg, 7)
    X = np.random.default_rng(1).uniform(size=(20, 2))
    Y = np.random.default_rng(2).uniform(size=(20, 3))
    g1 = gradient(theta, X, Y, cfg)[1].flatten()
    g2 = gradient(theta, X, Y, cfg)[1].flatten()
    assert g1.tobytes() == g2.tobytes()


# parameter plumbing

def test_initialization_bounds_and_zero_bias():
    cfg = FracNetConfig(L=4, input_dim=2, hidden_width=15, output_dim=40)
    theta = Theta.initialize(cfg, 0)
    for W in theta.W:
        fan_out, fan_in = W.shape
        assert np.max(np.abs(W)) <= math.sqrt(6 / (fan_in + fan_out))
    assert all(np.all(b == 0) for b in theta.b)
    assert Theta.initialize(cfg, 0).flatten().tobytes() == theta.flatten().tobytes()


@settings(max_examples=30, deadline=None)
@given(L=st.integers(2, 5), n=st.integers(1, 6), k=st.integers(1, 5), seed=st.integers(0, 1000))
def test_flatten_round_trip(L, n, k, seed):
    cfg = FracNetConfig(L=L, input_dim=2, hidden_width=n, output_dim=k)
    theta = Theta.initialize(cfg, seed)
    flat = theta.flatten()
    assert flat.size == cfg.n_params
    np.testing.assert_array_equal(Theta.from_flat(flat, cfg).flatten(), flat)


# ν decay

def test_nu_decay_examples():
    ok, worst = nu_decay_check(EPS, [10.0])
    assert ok and worst <= -20 * 11 ** -1.5 + 1e-15  # ν(10) = 0 for all three orders
    ok0, _ = nu_decay_check(EPS, [0.0])
    assert ok0


def test_nu_decay_sweep_has_no_violations():
    ok, worst = nu_decay_check(EPS, np.arange(-10.0, 10.0 + 5e-4, 1e-3))
    assert ok, worst


def test_nu_decay_detects_violation_with_tighter_constant():
    # |ν''(0)| = 1/ε = 10 exceeds a bound with C = 5
    ok, worst = nu_decay_check(EPS, [0.0], C=5.0)
    assert not ok and worst == pytest.approx(5.0)
