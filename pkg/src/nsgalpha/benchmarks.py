"""Closed-form Ethier-Steinman and Womersley solutions.

All evaluators are vectorized over point arrays of shape (..., 3) and return
a dict with ``v`` (..., 3), ``grad_v`` (..., 3, 3) with
``grad_v[..., i, m] = d v_i / d x_m``, ``vdot``, ``p``, ``pdot`` and
``grad_p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

J0_MAX_ABS = 30.0


def _j0_terms(z):
    """Power-series terms of J0 in ``u = -z^2/4`` up to convergence."""
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) > J0_MAX_ABS):
        raise ValueError("complex_j0: |z| > %g not supported" % J0_MAX_ABS)
    u = -(z**2) / 4.0
    term = np.ones_like(u)
    total = term.copy()
    k = 0
    while True:
        k += 1
        term = term * u / (k * k)
        total = total + term
        if np.all(np.abs(term) <= 1e-16 * np.abs(total)) or k > 400:
            return total


def complex_j0(z):
    """Bessel function J0 of complex argument by its power series."""
    out = _j0_terms(z)
    return complex(out) if np.ndim(out) == 0 else out


def complex_j0_prime(z):
    """dJ0/dz from the term-by-term differentiated series (equals -J1)."""
    z = np.asarray(z, dtype=complex)
    # J0 = sum c_k z^(2k), c_k = (-1/4)^k/(k!)^2 ; J0' = sum c_k 2k z^(2k-1)
    total = np.zeros_like(z)
    c = 1.0
    zpow = z.copy()
    for k in range(1, 400):
        c = c * (-0.25) / (k * k)
        contrib = c * 2 * k * zpow
        total = total + contrib
        zpow = zpow * z * z
        if np.all(np.abs(contrib) <= 1e-17 * np.abs(total) + 1e-300) and k > 2:
            break
    return complex(total) if np.ndim(total) == 0 else total


def complex_j0_second(z):
    """d^2 J0/dz^2 from the twice-differentiated series."""
    z = np.asarray(z, dtype=complex)
    u = -(z**2) / 4.0
    # J0 = sum c_k z^(2k), c_k = (-1/4)^k/(k!)^2 ; J0'' = sum c_k 2k(2k-1) z^(2k-2)
    total = np.zeros_like(z)
    c = 1.0
    zpow = np.ones_like(z)  # z^(2k-2)
    for k in range(1, 400):
        c = c * (-0.25) / (k * k)
        contrib = c * 2 * k * (2 * k - 1) * zpow
        total = total + contrib
        zpow = zpow * z * z
        if np.all(np.abs(contrib) <= 1e-17 * np.abs(total) + 1e-300) and k > 2:
            break
    return complex(total) if np.ndim(total) == 0 else total


def _j0_radial_quotient(lam, r2):
    """``(1/r) d/dr J0(lam r)`` as a series in ``r^2`` (regular at r = 0)."""
    u = -(lam**2) / 4.0
    r2 = np.asarray(r2, dtype=float)
    total = np.zeros(r2.shape, dtype=complex)
    # term_k = 2k u^k r2^(k-1) / (k!)^2
    coef = 1.0 + 0j
    rp = np.ones_like(r2)
    for k in range(1, 400):
        coef = coef * u / (k * k)
        contrib = 2 * k * coef * rp
        total = total + contrib
        rp = rp * r2
        if np.all(np.abs(contrib) <= 1e-17 * np.abs(total) + 1e-300) and k > 2:
            break
    return total


def stress_traction(grad_v, p, mu, n):
    """``(2 mu sym(grad v) - p I) n`` on arrays."""
    sig = mu * (grad_v + np.swapaxes(grad_v, -1, -2))
    t = np.einsum("...ij,...j->...i", sig, n)
    return t - p[..., None] * n


@dataclass(frozen=True)
class EthierSteinman:
    """Three-dimensional Ethier-Steinman solution with exponential decay."""

    a: float = math.pi / 4
    d: float = math.pi / 2
    rho: float = 1.0
    mu: float = 0.1

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    def _base(self, X):
        """Undamped velocity, its gradient, and undamped pressure with gradient."""
        a, d = self.a, self.d
        x = [X[..., 0], X[..., 1], X[..., 2]]
        v = np.empty(X.shape)
        gv = np.empty(X.shape + (3,))
        p = np.zeros(X.shape[:-1])
        gp = np.zeros(X.shape)
        for s in range(3):
            i, j, k = s, (s + 1) % 3, (s + 2) % 3
            X1, X2, X3 = x[i], x[j], x[k]
            e1, e3 = np.exp(a * X1), np.exp(a * X3)
            s23 = np.sin(a * X2 + d * X3)
            c23 = np.cos(a * X2 + d * X3)
            s12 = np.sin(a * X1 + d * X2)
            c12 = np.cos(a * X1 + d * X2)
            # component s is f(X1, X2, X3) with (X1, X2, X3) the cyclic shift
            v[..., s] = -a * (e1 * s23 + e3 * c12)
            gv[..., s, i] = -a * (a * e1 * s23 - a * e3 * s12)
            gv[..., s, j] = -a * (a * e1 * c23 - d * e3 * s12)
            gv[..., s, k] = -a * (d * e1 * c23 + a * e3 * c12)
            # pressure part g(X1, X2, X3) = e^{2a X1} + 2 sin(a X1 + d X2) cos(a X3 + d X1) e^{a (X2 + X3)}
            c31 = np.cos(a * X3 + d * X1)
            s31 = np.sin(a * X3 + d * X1)
            E = np.exp(a * (X2 + X3))
            p += np.exp(2 * a * X1) + 2 * s12 * c31 * E
            gp[..., i] += 2 * a * np.exp(2 * a * X1) + 2 * E * (a * c12 * c31 - d * s12 * s31)
            gp[..., j] += 2 * E * (d * c12 * c31 + a * s12 * c31)
            gp[..., k] += 2 * E * (-a * s12 * s31 + a * s12 * c31)
        scale = -(a**2) / 2
        return v, gv, scale * p, scale * gp

    def eval(self, X, t):
        X = np.asarray(X, dtype=float)
        lam = self.nu * self.d**2
        fv = np.exp(-lam * t)
        fp = np.exp(-2 * lam * t)
        v, gv, p, gp = self._base(X)
        return {
            "v": v * fv,
            "grad_v": gv * fv,
            "vdot": -lam * v * fv,
            "grad_vdot": -lam * gv * fv,
            "p": p * fp,
            "grad_p": gp * fp,
            "pdot": -2 * lam * p * fp,
            "grad_pdot": -2 * lam * gp * fp,
        }

    def velocity(self, X, t):
        return self.eval(X, t)["v"]

    def pressure(self, X, t):
        return self.eval(X, t)["p"]

    def traction(self, X, t, n):
        """``sigma . n`` from the exact fields."""
        f = self.eval(X, t)
        return stress_traction(f["grad_v"], f["p"], self.mu, np.asarray(n, dtype=float))


def es_eval(params: EthierSteinman, x, t):
    return params.eval(x, t)


def es_traction(params: EthierSteinman, mu, x, t, n):
    f = params.eval(x, t)
    return stress_traction(f["grad_v"], f["p"], mu, np.asarray(n, dtype=float))


# constants of the single-mode physiological pressure wave
WOMERSLEY_K0 = -21.0469
WOMERSLEY_K1 = -33.0102 + 42.9332j


@dataclass(frozen=True)
class Womersley:
    """Pulsatile flow in a rigid straight pipe along z (real parts of the complex solution)."""

    R: float = 0.3
    L: float = 1.0
    rho: float = 1.0
    mu: float = 0.04
    T_p: float = 1.1
    p_ref: float = 0.0
    k0: float = WOMERSLEY_K0
    k: tuple = (WOMERSLEY_K1,)

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    @property
    def omega(self) -> float:
        return 2 * math.pi / self.T_p

    def womersley_number(self, n: int = 1) -> float:
        return self.R * math.sqrt(n * self.omega / self.nu)

    def _lam(self, n):
        # principal branch of i^(3/2)
        return np.exp(0.75j * np.pi) * self.womersley_number(n) / self.R

    def eval(self, X, t, check=True):
        X = np.asarray(X, dtype=float)
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        r2 = x * x + y * y
        if check and np.any(r2 > self.R**2 * (1 + 1e-12)):
            raise ValueError("point outside the pipe (r > R)")
        w = self.omega
        vz = self.k0 / (4 * self.mu) * (r2 - self.R**2)
        dvz_q = np.full(r2.shape, self.k0 / (2 * self.mu))  # (1/r) d v_z / dr
        vzdot = np.zeros(r2.shape)
        dvzdot_q = np.zeros(r2.shape)
        grad = complex(self.k0)
        gdot = 0j
        for n, kn in enumerate(self.k, start=1):
            lam = self._lam(n)
            ph = np.exp(1j * n * w * t)
            amp = 1j * kn / (self.rho * n * w)
            J0R = complex_j0(lam * self.R)
            shape = 1 - _j0_terms(lam * np.sqrt(r2)) / J0R
            dq = -_j0_radial_quotient(lam, r2) / J0R
            vz = vz + np.real(amp * shape * ph)
            dvz_q = dvz_q + np.real(amp * dq * ph)
            vzdot = vzdot + np.real(amp * shape * ph * 1j * n * w)
            dvzdot_q = dvzdot_q + np.real(amp * dq * ph * 1j * n * w)
            grad = grad + kn * ph
            gdot = gdot + kn * ph * 1j * n * w
        G = float(np.real(grad))
        Gdot = float(np.real(gdot))
        zeros = np.zeros(X.shape)
        v = zeros.copy()
        v[..., 2] = vz
        vd = zeros.copy()
        vd[..., 2] = vzdot
        gv = np.zeros(X.shape + (3,))
        gv[..., 2, 0] = dvz_q * x
        gv[..., 2, 1] = dvz_q * y
        gvd = np.zeros(X.shape + (3,))
        gvd[..., 2, 0] = dvzdot_q * x
        gvd[..., 2, 1] = dvzdot_q * y
        gp = zeros.copy()
        gp[..., 2] = G
        gpd = zeros.copy()
        gpd[..., 2] = Gdot
        return {
            "v": v,
            "grad_v": gv,
            "vdot": vd,
            "grad_vdot": gvd,
            "p": self.p_ref + G * z,
            "grad_p": gp,
            "pdot": Gdot * z,
            "grad_pdot": gpd,
        }

    def velocity(self, X, t):
        return self.eval(X, t)["v"]

    def pressure(self, X, t):
        return self.eval(X, t)["p"]

    def traction(self, X, t, n):
        """``sigma . n`` on the pipe ends; only axial normals are accepted."""
        n = np.asarray(n, dtype=float)
        if np.any(np.abs(np.abs(n[..., 2]) - 1.0) > 1e-10):
            raise ValueError("Womersley traction is defined on the end faces only (n = +-e_z)")
        f = self.eval(X, t)
        return stress_traction(f["grad_v"], f["p"], self.mu, n)


def womersley_eval(params: Womersley, x, t):
    return params.eval(x, t)


def womersley_traction(params: Womersley, x, t, n):
    return params.traction(x, t, n)
