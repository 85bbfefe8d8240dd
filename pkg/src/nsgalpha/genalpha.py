"""Generalized-alpha time stepping for the mixed Navier-Stokes system.

Two variants differ only in where the pressure enters the momentum
residual: ``SCHEME1`` collocates it at ``t_{n+1}``, ``SCHEME2`` evaluates it
at ``t_{n+alpha_f}`` like the velocity. The Newton unknowns are
``(vdot_{n+1}, p_{n+1})``; ``v_{n+1}`` follows from the Newmark-type update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import linsolve
from .assembly import TangentFactors, assemble_residual, assemble_residual_full, assemble_tangent
from .spaces import MaterialParams, MixedSpace, apply_dirichlet, l2_project

log = logging.getLogger(__name__)

SCHEME1 = "scheme1"
SCHEME2 = "scheme2"


class NewtonError(RuntimeError):
    """Newton iteration failed to reach the tolerance."""

    def __init__(self, msg, history):
        super().__init__("%s; residual history: %s" % (msg, ", ".join("%.3e" % r for r in history)))
        self.history = list(history)


@dataclass(frozen=True)
class SchemeParams:
    rho_inf: float
    alpha_m: float
    alpha_f: float
    gamma: float
    variant: str = SCHEME2

    def __post_init__(self):
        if self.variant not in (SCHEME1, SCHEME2):
            raise ValueError("unknown scheme variant %r" % self.variant)
        if not np.isclose(self.gamma, 0.5 + self.alpha_m - self.alpha_f, rtol=0, atol=1e-14):
            raise ValueError("gamma must equal 1/2 + alpha_m - alpha_f")


def params_from_rho_inf(rho_inf: float, variant: str = SCHEME2) -> SchemeParams:
    """Second-order, unconditionally stable parameters for a given high-frequency spectral radius."""
    if not 0.0 <= rho_inf <= 1.0:
        raise ValueError("rho_inf must lie in [0, 1]")
    am = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    af = 1.0 / (1.0 + rho_inf)
    return SchemeParams(rho_inf, am, af, 0.5 + am - af, variant)


@dataclass(frozen=True)
class StepConfig:
    """Time step and Newton controls.

    ``reuse_tangent`` keeps the last factorized tangent across iterations
    and steps while the residual contracts by at least ``reuse_contraction``
    per iteration; the converged state still satisfies the same residual
    tolerance.
    """

    dt: float
    newton_rel_tol: float = 1e-6
    newton_abs_tol: float = 1e-10
    max_newton_iters: int = 10
    reuse_tangent: bool = False
    reuse_contraction: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive and finite")
        if self.newton_rel_tol <= 0 or self.newton_abs_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class State:
    """Coefficient vectors at one discrete time level."""

    v: np.ndarray
    vdot: np.ndarray
    p: np.ndarray
    pdot: np.ndarray
    t: float

    def copy(self) -> "State":
        return State(self.v.copy(), self.vdot.copy(), self.p.copy(), self.pdot.copy(), self.t)

    def check(self, ms: MixedSpace):
        if self.v.shape != (ms.n_v,) or self.vdot.shape != (ms.n_v,):
            raise ValueError("velocity arrays do not match the space")
        if self.p.shape != (ms.n_p,) or self.pdot.shape != (ms.n_p,):
            raise ValueError("pressure arrays do not match the space")
        for a in (self.v, self.vdot, self.p, self.pdot):
            if not np.all(np.isfinite(a)):
                raise FloatingPointError("non-finite state")


@dataclass
class Problem:
    """Everything the stepper needs besides the state.

    Attributes:
        ms: mixed space.
        mat: material parameters.
        traction: ``h(x, t, n)`` on Neumann faces, or None.
        dirichlet: ``g(x, t)`` on Dirichlet faces (None: no-slip).
        dirichlet_rate: ``dg/dt(x, t)`` (None: zero).
    """

    ms: MixedSpace
    mat: MaterialParams
    traction: object = None
    dirichlet: object = None
    dirichlet_rate: object = None


@dataclass
class StepInfo:
    iterations: int
    residuals: list
    factorizations: int


def predict(state: State, sp: SchemeParams, cfg: StepConfig):
    """Same-velocity predictor: ``v_{n+1} = v_n``, ``p_{n+1} = p_n``."""
    g = sp.gamma
    vdot = (g - 1.0) / g * state.vdot
    return vdot, state.v.copy(), state.p.copy()


def tangent_factors(sp: SchemeParams, dt: float) -> TangentFactors:
    cp = 1.0 if sp.variant == SCHEME1 else sp.alpha_f
    return TangentFactors(sp.alpha_m, sp.alpha_f * sp.gamma * dt, cp)


class Integrator:
    """Stateful stepper holding an optional reusable tangent factorization."""

    def __init__(self, problem: Problem, sp: SchemeParams):
        self.problem = problem
        self.sp = sp
        self._fact = None
        self._fact_key = None
        self.total_factorizations = 0

    def _factor(self, vdot_s, v_s, p_s, t_s, factors):
        pb = self.problem
        K = assemble_tangent(pb.ms, pb.mat, vdot_s, v_s, p_s, t_s, factors)
        if self._fact is not None:
            self._fact.refactor(K)
        else:
            self._fact = linsolve.factorize(K)
        self._fact_key = factors
        self.total_factorizations += 1

    def step(self, state: State, cfg: StepConfig) -> tuple:
        """Advance one step; returns ``(new_state, StepInfo)``."""
        pb, sp = self.problem, self.sp
        ms = pb.ms
        am, af, g = sp.alpha_m, sp.alpha_f, sp.gamma
        dt = cfg.dt
        t1 = state.t + dt
        t_s = state.t + af * dt
        factors = tangent_factors(sp, dt)
        free = ms.free
        nvf = ms.n_v_free

        vdot1, _, p1 = predict(state, sp, cfg)
        if ms.dirichlet.any():
            bc_rate = apply_dirichlet(ms, pb.dirichlet_rate, t1)
            vdot1[ms.dirichlet] = bc_rate[ms.dirichlet]

        def stage(vdot1, p1):
            v1 = state.v + dt * state.vdot + g * dt * (vdot1 - state.vdot)
            vdot_s = state.vdot + am * (vdot1 - state.vdot)
            v_s = state.v + af * (v1 - state.v)
            p_s = p1 if sp.variant == SCHEME1 else state.p + af * (p1 - state.p)
            return v1, vdot_s, v_s, p_s

        history = []
        nfact = 0
        refresh = (not cfg.reuse_tangent) or self._fact is None or self._fact_key != factors
        r0 = None
        for it in range(cfg.max_newton_iters + 1):
            v1, vdot_s, v_s, p_s = stage(vdot1, p1)
            Rm, Rc = assemble_residual(ms, pb.mat, vdot_s, v_s, p_s, t_s, pb.traction)
            R = np.concatenate([Rm, Rc])
            rn = float(np.linalg.norm(R))
            history.append(rn)
            if r0 is None:
                r0 = rn
            if rn <= max(cfg.newton_abs_tol, cfg.newton_rel_tol * r0):
                break
            if it == cfg.max_newton_iters:
                raise NewtonError("Newton did not converge in %d iterations at t=%.6g" % (it, t1), history)
            if not np.isfinite(rn):
                raise NewtonError("non-finite residual at t=%.6g" % t1, history)
            if it > 0 and cfg.reuse_tangent and rn > cfg.reuse_contraction * history[-2]:
                refresh = True
            if refresh or not cfg.reuse_tangent:
                self._factor(vdot_s, v_s, p_s, t_s, factors)
                nfact += 1
                refresh = False
            d = self._fact.solve(-R)
            vdot1 = vdot1.copy()
            vdot1[free] += d[:nvf]
            p1 = p1 + d[nvf:]
        if not cfg.reuse_tangent and self._fact is not None:
            self._fact.free()
            self._fact = None
        v1, _, _, _ = stage(vdot1, p1)
        if sp.variant == SCHEME1:
            pdot1 = (p1 - state.p) / dt
        else:
            pdot1 = (p1 - state.p) / (g * dt) + (1.0 - 1.0 / g) * state.pdot
        new = State(v1, vdot1, p1, pdot1, t1)
        log.debug("t=%.5f its=%d res=%s", t1, len(history) - 1, history)
        return new, StepInfo(len(history) - 1, history, nfact)


def step(state: State, sp: SchemeParams, cfg: StepConfig, problem: Problem) -> State:
    """One generalized-alpha step with a fresh consistent tangent each Newton iteration."""
    return Integrator(problem, sp).step(state, replace(cfg, reuse_tangent=False))[0]


def initial_state(problem: Problem, exact, t0: float = 0.0, consistent_vdot: bool = False) -> State:
    """L2 projections of the exact fields and their time derivatives at ``t0``.

    ``exact.eval(x, t)`` must return the benchmark dictionary. With
    ``consistent_vdot`` the velocity rate is instead obtained from the
    momentum residual at ``t0`` together with the differentiated continuity
    constraint.
    """
    ms = problem.ms
    fields = {}

    def proj(key, which, fixed=None):
        return l2_project(ms, lambda X, t: exact.eval(X, t)[key], which, t0, fixed=fixed)

    fixed_v = fixed_a = None
    if ms.dirichlet.any():
        fixed_v = (ms.dirichlet, apply_dirichlet(ms, problem.dirichlet, t0))
        fixed_a = (ms.dirichlet, apply_dirichlet(ms, problem.dirichlet_rate, t0))
    v0 = proj("v", "v", fixed_v)
    a0 = proj("vdot", "v", fixed_a)
    p0 = proj("p", "p")
    pd0 = proj("pdot", "p")
    if consistent_vdot:
        a0 = _consistent_rate(problem, v0, a0, p0, t0)
    return State(v0, a0, p0, pd0, t0)


def _consistent_rate(problem: Problem, v0, a_guess, p0, t0):
    ms = problem.ms
    a = np.where(ms.dirichlet, a_guess, 0.0)
    Rm, _ = assemble_residual(ms, problem.mat, a, v0, np.zeros(ms.n_p), t0, problem.traction)
    K = assemble_tangent(ms, problem.mat, a, v0, p0, t0, TangentFactors(1.0, 0.0, 1.0, c_div=1.0))
    # continuity rows: d/dt int q div v = int q div vdot = 0
    _, Rc = assemble_residual(ms, problem.mat, np.zeros(ms.n_v), a, np.zeros(ms.n_p), t0)
    rhs = -np.concatenate([Rm, Rc])
    x = linsolve.factor_solve(K, rhs)
    a[ms.free] = x[: ms.n_v_free]
    return a
