"""Tests for the adaptive augmentation loop and the radius certificate.

Oracles used here:
  * direct multiplication for theta_ad (theta_ad @ B = I);
  * scalar evaluation of the adaptation gain;
  * composite-Simpson quadrature of the filter convolution integral;
  * linear one-step analysis of the predictor;
  * the algebraic equilibrium of the sampled loop under a constant matched
    disturbance: lambda_hat -> exp(-lambda_s t_s) h and
    lambda_s x_tilde = B (lambda_hat - h), both exact for the discrete map.
"""

import numpy as np
import pytest
from scipy.integrate import simpson

from covsteer.dynamics import SystemModel, UncertaintyFunctions
from covsteer.errors import NumericalError
from covsteer.l1drac import (
    ConditionCheck,
    ControlParams,
    L1DracState,
    LyapunovCert,
    RhoCertificateInputs,
    adaptation_gain,
    adaptation_update,
    build_theta_ad,
    compute_rho,
    default_condition_scalars,
    default_delta_a_sigma,
    filter_step,
    filter_update,
    lyapunov_certificate,
    predictor_drift,
    predictor_step,
    run_l1drac_loop,
    verify_parameter_conditions,
)


def _model(a_mu, a_sigma, b):
    return SystemModel(a_mu=np.asarray(a_mu, float),
                       a_sigma=np.asarray(a_sigma, float),
                       b=np.asarray(b, float))


PARAMS = ControlParams(omega=10.0, t_s=0.01, lambda_s=1.0)


# ---------------------------------------------------------------- theta_ad

def test_theta_ad_single_column():
    model = _model(np.zeros((2, 2)), np.zeros((2, 1)), [[0.0], [1.0]])
    theta = build_theta_ad(model)
    assert theta.shape == (1, 2)
    assert theta @ model.b == pytest.approx(np.eye(1))


def test_theta_ad_square_identity():
    model = _model(np.zeros((3, 3)), np.zeros((3, 1)), np.eye(3))
    assert build_theta_ad(model) == pytest.approx(np.eye(3))


def test_theta_ad_left_inverse_random():
    rng = np.random.default_rng(7)
    b = rng.normal(size=(4, 2))
    model = _model(np.zeros((4, 4)), np.zeros((4, 1)), b)
    theta = build_theta_ad(model)
    assert np.abs(theta @ b - np.eye(2)).max() <= 1e-10


def test_rank_deficient_b_rejected_at_model():
    b = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(ValueError):
        _model(np.zeros((2, 2)), np.zeros((2, 1)), b)


def test_theta_ad_rejects_inputless_model():
    model = _model(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 0)))
    with pytest.raises(ValueError):
        build_theta_ad(model)


# -------------------------------------------------------------- adaptation

def test_adaptation_zero_error_gives_zero():
    theta = np.array([[0.0, 1.0]])
    out = adaptation_update(np.zeros(2), PARAMS, theta)
    assert out == pytest.approx(np.zeros(1))


def test_adaptation_gain_scalar_value():
    # lambda_s = 1, t_s = 0.01: 1 / (1 - e^{0.01}) ~= -99.50, computed
    # independently through expm1 to avoid the cancellation in 1 - e^x.
    params = ControlParams(omega=10.0, t_s=0.01, lambda_s=1.0)
    import math
    assert adaptation_gain(params) == pytest.approx(-1.0 / math.expm1(0.01),
                                                    abs=1e-10)
    assert adaptation_gain(params) == pytest.approx(-99.50, abs=1e-2)
    theta = np.eye(2)
    x_tilde = np.array([1.0, 0.0])
    out = adaptation_update(x_tilde, params, theta)
    assert out == pytest.approx(adaptation_gain(params) * x_tilde)


def test_adaptation_update_batched():
    params = ControlParams(omega=10.0, t_s=0.05, lambda_s=2.0)
    theta = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 0.0]])
    batch = np.arange(12.0).reshape(4, 3)
    out = adaptation_update(batch, params, theta)
    assert out.shape == (4, 2)
    for i in range(4):
        assert out[i] == pytest.approx(adaptation_update(batch[i], params, theta))


# ------------------------------------------------------------------ filter

def test_filter_stays_zero_without_estimate():
    state = L1DracState(u_l1=np.zeros(2), lambda_hat=np.zeros(2),
                        x_hat=np.zeros(3), theta_ad=np.zeros((2, 3)))
    u = state.u_l1
    for _ in range(50):
        state.u_l1 = filter_step(state, PARAMS, 0.001)
    assert state.u_l1 == pytest.approx(np.zeros(2))
    assert u == pytest.approx(np.zeros(2))


def test_filter_converges_to_minus_estimate():
    v = np.array([0.7, -1.3])
    u = np.zeros(2)
    for _ in range(2000):
        u = filter_update(u, v, omega=10.0, dt=0.01)
    assert u == pytest.approx(-v, abs=1e-12)


def test_filter_dc_decay_rate_closed_form():
    # u(t) = (u0 + v) e^{-omega t} - v under constant lambda_hat = v
    omega, dt, v, u0 = 3.0, 0.02, 0.4, 1.1
    u = u0
    for k in range(1, 200):
        u = filter_update(u, v, omega=omega, dt=dt)
        expected = (u0 + v) * np.exp(-omega * k * dt) - v
        assert u == pytest.approx(expected, abs=1e-13)


def test_filter_matches_simpson_quadrature():
    # Iterated exact zero-order-hold updates vs composite-Simpson evaluation
    # of u(t_{k+1}) = e^{-w dt} u(t_k) - w int_0^dt e^{-w (dt - s)} ds lam_k.
    omega, dt = 10.0, 0.001
    rng = np.random.default_rng(42)
    lam_seq = rng.normal(size=50)
    s_grid = np.linspace(0.0, dt, 65)
    kernel = omega * np.exp(-omega * (dt - s_grid))
    step_integral = simpson(kernel, x=s_grid)
    u_filter, u_quad = 0.0, 0.0
    worst = 0.0
    for lam in lam_seq:
        u_filter = filter_update(np.array(u_filter), np.array(lam), omega, dt)
        u_quad = np.exp(-omega * dt) * u_quad - step_integral * lam
        worst = max(worst, abs(float(u_filter) - u_quad))
    assert worst <= 1e-8


def test_filter_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        filter_update(np.zeros(1), np.zeros(1), omega=10.0, dt=0.0)


# --------------------------------------------------------------- predictor

def test_predictor_tracks_exactly_without_uncertainty():
    rng = np.random.default_rng(3)
    a_mu = rng.normal(size=(3, 3)) * 0.3
    b = rng.normal(size=(3, 2))
    model = _model(a_mu, np.zeros((3, 1)), b)
    params = ControlParams(omega=10.0, t_s=0.01, lambda_s=4.0)
    dt = 0.001
    x = rng.normal(size=3)
    state = L1DracState.initial(model, x_hat0=x)
    for k in range(100):
        u_star = np.array([np.sin(0.1 * k), np.cos(0.1 * k)])
        x_next = x + dt * (x @ a_mu.T + u_star @ b.T)
        state.x_hat = predictor_step(state, model, u_star, x, params, dt)
        x = x_next
        assert np.abs(state.x_hat - x).max() <= 1e-12


def test_predictor_one_step_contraction():
    model = _model(np.zeros((2, 2)), np.zeros((2, 1)), [[1.0, 0.0], [0.0, 1.0]])
    lambda_s, dt = 50.0, 0.001
    params = ControlParams(omega=10.0, t_s=0.01, lambda_s=lambda_s)
    x_tilde0 = np.array([0.3, -0.8])
    state = L1DracState(u_l1=np.zeros(2), lambda_hat=np.zeros(2),
                        x_hat=x_tilde0.copy(), theta_ad=build_theta_ad(model))
    new = predictor_step(state, model, np.zeros(2), np.zeros(2), params, dt)
    assert new == pytest.approx((1.0 - lambda_s * dt) * x_tilde0, abs=1e-14)


def test_predictor_rejects_nonpositive_dt():
    model = _model(np.zeros((2, 2)), np.zeros((2, 1)), [[1.0], [0.0]])
    state = L1DracState.initial(model, x_hat0=np.zeros(2))
    with pytest.raises(ValueError):
        predictor_step(state, model, np.zeros(1), np.zeros(2), PARAMS, -0.1)


def test_predictor_fixed_point_algebra():
    # At x_tilde* = B (lam - h) / lambda_s the predictor and the disturbed
    # plant share one drift, so the tracking error is stationary.
    rng = np.random.default_rng(11)
    a_mu = rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 2))
    model = _model(a_mu, np.zeros((3, 1)), b)
    lambda_s = 2.5
    h = np.array([0.4, -0.1])
    lam = np.array([-0.2, 0.3])
    u_star = np.array([0.9, 0.5])
    u_l1 = np.array([-0.3, 0.1])
    x = rng.normal(size=3)
    x_tilde = b @ (lam - h) / lambda_s
    pred = predictor_drift(x + x_tilde, x, u_star + u_l1 + lam, model, lambda_s)
    plant = x @ a_mu.T + (u_star + u_l1 + h) @ b.T
    assert np.abs(pred - plant).max() <= 1e-12


# ---------------------------------------------------- Lyapunov certificate

def test_lyapunov_scalar_case():
    cert = lyapunov_certificate(np.array([[-1.0]]), np.array([[2.0]]))
    assert cert.p_mat == pytest.approx(np.array([[1.0]]))
    assert cert.alpha1 == pytest.approx(1.0)
    assert cert.alpha2 == pytest.approx(1.0)


def test_lyapunov_certificate_bounds_hold_on_probes():
    a_cl = np.array([[0.0, 0.0, 1.0, 0.0],
                     [0.0, 0.0, 0.0, 1.0],
                     [-1.0, 0.0, -2.0, 0.0],
                     [0.0, -1.0, 0.0, -2.0]])
    cert = lyapunov_certificate(a_cl)
    res = a_cl.T @ cert.p_mat + cert.p_mat @ a_cl + cert.q_mat
    assert np.abs(res).max() <= 1e-8
    rng = np.random.default_rng(5)
    for _ in range(64):
        x = rng.normal(size=4)
        quad = x @ cert.p_mat @ x
        assert cert.alpha1 * (x @ x) <= quad + 1e-12
        assert quad <= cert.alpha2 * (x @ x) + 1e-12


def test_lyapunov_rejects_unstable_a():
    with pytest.raises(NumericalError):
        lyapunov_certificate(np.eye(2))


def test_lyapunov_rejects_bad_q():
    with pytest.raises(ValueError):
        lyapunov_certificate(-np.eye(2), np.diag([1.0, -1.0]))


# --------------------------------------------------------- rho certificate

def _inputs(**kw):
    base = dict(rho_a=0.2, epsilon=0.1, delta_a_sigma=0.3, init_gap=0.0,
                beta1=1.0, beta2=1.0)
    base.update(kw)
    return RhoCertificateInputs(**base)


def _flat_cert(alpha=1.0):
    return LyapunovCert(p_mat=alpha * np.eye(2), q_mat=np.eye(2),
                        alpha1=alpha, alpha2=alpha)


def test_rho_direct_substitution():
    # rho_r = 0 + 0.3 + 0.1 = 0.4; rho = 0.4 + 0.2 + 0.3 = 0.9
    rho = compute_rho(_inputs(), _flat_cert())
    assert rho.rho == pytest.approx(0.9)


def test_rho_degenerate_limit():
    rho = compute_rho(_inputs(rho_a=1e-12, epsilon=1e-12, delta_a_sigma=0.0),
                      _flat_cert())
    assert rho.rho <= 1e-8


def test_rho_gap_term_scaling():
    # alpha2/alpha1 = 4, init_gap = 0.5 contributes sqrt(4) * 0.5 = 1.0
    cert = LyapunovCert(p_mat=np.diag([1.0, 4.0]), q_mat=np.eye(2),
                        alpha1=1.0, alpha2=4.0)
    small = dict(rho_a=1e-12, epsilon=1e-12, delta_a_sigma=0.0)
    with_gap = compute_rho(_inputs(init_gap=0.5, **small), cert)
    without = compute_rho(_inputs(init_gap=0.0, **small), cert)
    assert with_gap.rho - without.rho == pytest.approx(1.0, abs=1e-9)


def test_rho_inflation_added_last():
    base = compute_rho(_inputs(), _flat_cert())
    inflated = compute_rho(_inputs(), _flat_cert(), strong_error_inflation=0.05)
    assert inflated.rho - base.rho == pytest.approx(0.05)


def test_rho_enforces_parameter_conditions():
    params = ControlParams(omega=0.01, t_s=0.01, lambda_s=1.0)
    with pytest.raises(ValueError):
        compute_rho(_inputs(beta1=0.5), _flat_cert(), params=params)


# ------------------------------------------------------ condition checking

def test_conditions_pass_case():
    params = ControlParams(omega=4.0, t_s=0.01, lambda_s=1.0)
    check = verify_parameter_conditions(params, _inputs(beta1=1.0, beta2=1.0))
    assert check.ok
    assert check.omega_slack == pytest.approx(1.0 - 0.5)


def test_conditions_fail_case():
    params = ControlParams(omega=4.0, t_s=0.04, lambda_s=1.0)
    check = verify_parameter_conditions(params, _inputs(beta2=0.1))
    assert not check.ok
    assert check.t_s_slack == pytest.approx(0.1 - 0.2)


def test_condition_slack_monotone_in_omega():
    inputs = _inputs()
    slacks = [verify_parameter_conditions(
        ControlParams(omega=w, t_s=0.01, lambda_s=1.0), inputs).omega_slack
        for w in (1.0, 4.0, 16.0, 64.0)]
    assert all(b > a for a, b in zip(slacks, slacks[1:]))


def test_default_scalars_and_delta():
    from covsteer.dynamics import UncertaintyBounds
    bounds = UncertaintyBounds(l_mu=1.0, delta_mu=0.5, l_sigma=0.0,
                               delta_sigma=0.25)
    beta1, beta2 = default_condition_scalars(bounds)
    assert beta1 == pytest.approx(1.0 / 2.5)
    assert beta2 == pytest.approx(1.0 / 1.25)
    a_sigma = np.diag([0.1, 0.2])
    val = default_delta_a_sigma(a_sigma, delta_t=0.1, k_prime=10)
    assert val == pytest.approx(np.linalg.norm(a_sigma, "fro"))


def test_certificate_input_validation():
    with pytest.raises(ValueError):
        RhoCertificateInputs(rho_a=0.0, epsilon=0.1, delta_a_sigma=0.1)
    with pytest.raises(ValueError):
        RhoCertificateInputs(rho_a=0.1, epsilon=0.1, delta_a_sigma=-0.1)
    with pytest.raises(ValueError):
        RhoCertificateInputs(rho_a=0.1, epsilon=0.1, delta_a_sigma=0.1,
                             p_order=0)
    with pytest.raises(ValueError):
        ControlParams(omega=0.0, t_s=0.01, lambda_s=1.0)


# ------------------------------------------------------------ closed loop

def test_loop_idle_without_uncertainty():
    model = _model(-np.eye(2), np.zeros((2, 1)), np.eye(2))
    params = ControlParams(omega=20.0, t_s=0.01, lambda_s=5.0)
    rec = run_l1drac_loop(model, UncertaintyFunctions.zero(2, 1),
                          lambda t: np.array([0.3, -0.1]), params,
                          x0=np.array([1.0, -1.0]), t_final=0.2, dt=1e-3,
                          seed=0)
    assert np.abs(rec.u_l1).max() <= 1e-6
    assert np.abs(rec.lambda_hat).max() <= 1e-6


def test_loop_constant_disturbance_equilibrium():
    # Under a constant matched disturbance h the sampled loop is deadbeat:
    # lambda_hat settles at exp(-lambda_s t_s) h and the tracking error at
    # the algebraic fixed point lambda_s x_tilde = B (lambda_hat - h); the
    # filter output settles at -lambda_hat.
    model = _model(-np.eye(2), np.zeros((2, 1)), np.eye(2))
    h0 = np.array([0.5, -0.2])
    unc = UncertaintyFunctions(
        h_mu=lambda x: np.broadcast_to(h0, x.shape[:-1] + (2,)).copy(),
        h_sigma=lambda x: np.zeros(x.shape[:-1] + (2, 1)))
    params = ControlParams(omega=40.0, t_s=0.01, lambda_s=5.0)
    rec = run_l1drac_loop(model, unc, lambda t: np.zeros(2), params,
                          x0=np.zeros(2), t_final=0.3, dt=1e-4, seed=0)
    target = np.exp(-params.lambda_s * params.t_s) * h0
    assert np.abs(rec.lambda_hat[-1] - target).max() <= 1e-9
    per_sample = round(params.t_s / 1e-4)
    assert np.abs(rec.lambda_hat[2 * per_sample] - target).max() <= 1e-6
    x_tilde = rec.x_hat[-1] - rec.x[-1]
    residual = params.lambda_s * x_tilde - model.b @ (rec.lambda_hat[-1] - h0)
    assert np.abs(residual).max() <= 1e-9
    assert np.abs(rec.u_l1[-1] + rec.lambda_hat[-1]).max() <= 1e-4


def test_loop_estimate_piecewise_constant():
    model = _model(-np.eye(2), 0.05 * np.eye(2), np.eye(2))
    unc = UncertaintyFunctions(
        h_mu=lambda x: 0.2 * np.sin(x[..., :2]),
        h_sigma=lambda x: np.zeros(x.shape[:-1] + (2, 2)))
    params = ControlParams(omega=20.0, t_s=0.01, lambda_s=5.0)
    dt = 2e-3
    rec = run_l1drac_loop(model, unc, lambda t: np.zeros(2), params,
                          x0=np.zeros(2), t_final=0.1, dt=dt, seed=9)
    per_sample = round(params.t_s / dt)
    n_blocks = rec.lambda_hat.shape[0] // per_sample
    blocks = rec.lambda_hat.reshape(n_blocks, per_sample, 2)
    assert np.abs(blocks - blocks[:, :1, :]).max() == 0.0
    assert np.abs(blocks[0]).max() == 0.0
    assert np.abs(blocks[1:]).max() > 0.0


def test_loop_deterministic_given_seed():
    model = _model(-np.eye(2), 0.1 * np.eye(2), np.eye(2))
    unc = UncertaintyFunctions(
        h_mu=lambda x: 0.3 * np.tanh(x[..., :2]),
        h_sigma=lambda x: 0.05 * np.ones(x.shape[:-1] + (2, 2)))
    params = ControlParams(omega=20.0, t_s=0.02, lambda_s=5.0)
    kw = dict(x0=np.array([0.5, -0.5]), t_final=0.2, dt=1e-3, seed=1234)
    rec1 = run_l1drac_loop(model, unc, lambda t: np.array([t, -t]), params, **kw)
    rec2 = run_l1drac_loop(model, unc, lambda t: np.array([t, -t]), params, **kw)
    for name in ("t", "x", "x_hat", "lambda_hat", "u_l1", "u"):
        assert np.array_equal(getattr(rec1, name), getattr(rec2, name))


def test_loop_rejects_step_sampling_mismatch():
    model = _model(-np.eye(2), np.zeros((2, 1)), np.eye(2))
    params = ControlParams(omega=20.0, t_s=0.01, lambda_s=5.0)
    with pytest.raises(ValueError):
        run_l1drac_loop(model, UncertaintyFunctions.zero(2, 1),
                        lambda t: np.zeros(2), params, x0=np.zeros(2),
                        t_final=0.3, dt=0.003, seed=0)


def test_loop_disabled_reduces_to_baseline():
    model = _model(-np.eye(2), np.zeros((2, 1)), np.eye(2))
    h0 = np.array([0.5, -0.2])
    unc = UncertaintyFunctions(
        h_mu=lambda x: np.broadcast_to(h0, x.shape[:-1] + (2,)).copy(),
        h_sigma=lambda x: np.zeros(x.shape[:-1] + (2, 1)))
    params = ControlParams(omega=40.0, t_s=0.01, lambda_s=5.0)
    rec = run_l1drac_loop(model, unc, lambda t: np.array([0.1, 0.2]), params,
                          x0=np.zeros(2), t_final=0.1, dt=1e-3, seed=3,
                          enable_l1=False)
    assert np.abs(rec.u - np.array([0.1, 0.2])).max() == 0.0
    assert np.abs(rec.u_l1).max() == 0.0
