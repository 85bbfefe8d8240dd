import math

import numpy as np
import pytest

from nsgalpha.benchmarks import (
    EthierSteinman,
    Womersley,
    complex_j0,
    complex_j0_prime,
    complex_j0_second,
    stress_traction,
)

ES = EthierSteinman()
WO = Womersley()


def test_j0_reference_values():
    # J0(1) and I0(1) = J0(i) from standard tables
    assert abs(complex_j0(1.0) - 0.7651976865579666) < 1e-15
    assert abs(complex_j0(1j) - 1.2660658777520082) < 1e-15
    assert abs(complex_j0(2.404825557695773)) < 1e-14  # first zero


def test_j0_bessel_ode_residual():
    rng = np.random.default_rng(0)
    z = rng.uniform(-5, 5, 20) + 1j * rng.uniform(-5, 5, 20)
    J, dJ, d2J = complex_j0(z), complex_j0_prime(z), complex_j0_second(z)
    res = z**2 * d2J + z * dJ + z**2 * J
    scale = np.abs(z**2 * d2J) + np.abs(z * dJ) + np.abs(z**2 * J)
    assert np.max(np.abs(res) / scale) < 1e-10


def test_j0_rejects_large_arguments():
    with pytest.raises(ValueError):
        complex_j0(40.0)


def test_es_reference_point_values():
    f = ES.eval(np.zeros((1, 3)), 0.0)
    np.testing.assert_allclose(f["v"][0], -math.pi / 4, atol=1e-15)
    # sine terms vanish at the origin: p = -3 a^2 / 2
    assert abs(f["p"][0] + 1.5 * (math.pi / 4) ** 2) < 1e-14


def _fd_grad(fun, X, h=1e-5):
    return np.stack([(fun(X + h * e) - fun(X - h * e)) / (2 * h) for e in np.eye(3)], axis=-1)


def test_es_gradients_and_divergence():
    X = np.random.default_rng(4).uniform(-1, 1, (8, 3))
    f = ES.eval(X, 0.4)
    gv = _fd_grad(lambda Y: ES.eval(Y, 0.4)["v"], X)
    gp = _fd_grad(lambda Y: ES.eval(Y, 0.4)["p"], X)
    assert np.abs(gv - f["grad_v"]).max() < 1e-8
    assert np.abs(gp - f["grad_p"]).max() < 1e-8
    assert np.abs(np.trace(f["grad_v"], axis1=1, axis2=2)).max() < 1e-14


def test_es_strong_momentum_residual():
    X = np.random.default_rng(5).uniform(-1, 1, (8, 3))
    t, h = 0.7, 1e-4
    f = ES.eval(X, t)
    lap = sum((ES.eval(X + h * e, t)["v"] - 2 * f["v"] + ES.eval(X - h * e, t)["v"]) / h**2 for e in np.eye(3))
    res = f["vdot"] + np.einsum("nm,nim->ni", f["v"], f["grad_v"]) + f["grad_p"] / ES.rho - ES.nu * lap
    scale = np.abs(f["grad_p"]).max()
    assert np.abs(res).max() < 1e-5 * scale


@pytest.mark.parametrize("bench", [ES, WO])
def test_time_derivatives_match_finite_differences(bench):
    rng = np.random.default_rng(6)
    if bench is ES:
        X = rng.uniform(-1, 1, (6, 3))
    else:
        X = np.column_stack([rng.uniform(-0.2, 0.2, (6, 2)), rng.uniform(0, 1, 6)])
    t, h = 0.35, 1e-5
    f = bench.eval(X, t)
    for key, dkey in (("v", "vdot"), ("p", "pdot"), ("grad_v", "grad_vdot"), ("grad_p", "grad_pdot")):
        fd = (bench.eval(X, t + h)[key] - bench.eval(X, t - h)[key]) / (2 * h)
        scale = max(np.abs(f[dkey]).max(), 1e-300)
        assert np.abs(fd - f[dkey]).max() < 1e-6 * scale + 1e-12


def test_womersley_constants():
    assert abs(WO.omega - 5.711986642890533) < 1e-12
    assert abs(WO.womersley_number() - 3.585) < 1e-3
    # dp/dz at t = 0 equals k0 + Re(k1)
    f = WO.eval(np.array([[0.0, 0.0, 0.5]]), 0.0)
    assert abs(f["grad_p"][0, 2] - (-54.0571)) < 1e-12


def test_womersley_no_slip_and_gradients():
    th = np.linspace(0, 2 * np.pi, 13)
    wall = np.column_stack([0.3 * np.cos(th), 0.3 * np.sin(th), np.full(13, 0.4)])
    for t in (0.0, 0.3, 0.8):
        assert np.abs(WO.eval(wall, t)["v"]).max() < 1e-12
    X = np.array([[0.05, -0.1, 0.2], [0.0, 0.0, 0.5], [0.2, 0.1, 0.9]])
    gv = _fd_grad(lambda Y: WO.eval(Y, 0.3)["v"], X, h=1e-6)
    assert np.abs(gv - WO.eval(X, 0.3)["grad_v"]).max() < 1e-7


def test_womersley_axial_momentum_residual():
    rng = np.random.default_rng(8)
    r = rng.uniform(0.02, 0.28, 6)
    X = np.column_stack([r, np.zeros(6), rng.uniform(0, 1, 6)])
    t, h = 0.55, 1e-4
    f = WO.eval(X, t)
    lap = sum(
        (WO.eval(X + h * e, t)["v"][:, 2] - 2 * f["v"][:, 2] + WO.eval(X - h * e, t)["v"][:, 2]) / h**2
        for e in np.eye(3)[:2]
    )
    res = WO.rho * f["vdot"][:, 2] + f["grad_p"][:, 2] - WO.mu * lap
    assert np.abs(res).max() < 1e-5 * np.abs(f["grad_p"][:, 2]).max()


def test_womersley_rejects_points_outside_pipe_and_lateral_traction():
    with pytest.raises(ValueError):
        WO.eval(np.array([[0.31, 0.0, 0.0]]), 0.0)
    with pytest.raises(ValueError):
        WO.traction(np.array([[0.3, 0.0, 0.5]]), 0.0, np.array([[1.0, 0.0, 0.0]]))


def test_stress_traction_hand_value():
    g = np.zeros((3, 3))
    g[0, 1] = 2.0
    t = stress_traction(g, np.array(3.0), 0.5, np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(t, [1.0, -3.0, 0.0])
