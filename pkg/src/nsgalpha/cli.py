"""Command-line runner for temporal convergence families.

A family is one benchmark, one scheme and one mesh integrated with several
uniform step counts. Each member starts from L2 projections of the exact
initial data, and the relative errors at ``t_eval`` go into one table.

Example::

    nsgalpha --preset es-desk --scheme scheme1 --out es_s1.csv
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .benchmarks import EthierSteinman, Womersley
from .genalpha import (
    SCHEME1,
    SCHEME2,
    Integrator,
    NewtonError,
    Problem,
    StepConfig,
    initial_state,
    params_from_rho_inf,
)
from .geometry import DIRICHLET, FACES, NEUMANN, invert_map, make_cube_patch, make_pipe_patch
from .spaces import MaterialParams, build_mixed_space, eval_at_points
from .verify import emit_report, error_report

log = logging.getLogger(__name__)

ETHIER_STEINMAN = "ethier_steinman"
WOMERSLEY = "womersley"
BENCHMARKS = (ETHIER_STEINMAN, WOMERSLEY)

# grid tolerance for "t_eval lands on the time grid"
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration of one convergence family.

    Attributes:
        benchmark: ``ethier_steinman`` or ``womersley``.
        scheme: ``scheme1`` or ``scheme2``.
        rho_inf: high-frequency spectral radius.
        p: pressure degree (velocity uses ``p + 1``).
        continuity: interior regularity of both spaces.
        nel: elements per parametric direction.
        nts_list: uniform step counts over ``[0, t_final]``.
        t_final: end of the integration window.
        t_eval: time at which errors are measured (defaults to ``t_final``).
        out: output table path (None: stdout).
        format: ``csv`` or ``json``.
        profile_export: CSV path for axial velocity profiles (Womersley only).
        profile_times: sample times of the profiles; must lie on the grid.
        profile_points: number of samples along the x-axis.
        reuse_tangent: keep the factorized tangent while Newton contracts.
        consistent_vdot: solve the t=0 residual for the velocity rate
            instead of projecting the exact rate.
    """

    benchmark: str = ETHIER_STEINMAN
    scheme: str = SCHEME2
    rho_inf: float = 0.5
    p: int = 3
    continuity: int = 2
    nel: tuple = (6, 6, 6)
    nts_list: tuple = (5, 10, 20, 40)
    t_final: float = 1.0
    t_eval: float = None
    out: str = None
    format: str = "csv"
    profile_export: str = None
    profile_times: tuple = (0.2, 0.4, 0.6, 0.8)
    profile_points: int = 31
    reuse_tangent: bool = True
    consistent_vdot: bool = False
    newton_rel_tol: float = 1e-6
    newton_abs_tol: float = 1e-10
    max_newton_iters: int = 10
    physics: dict = field(default_factory=dict)

    def resolved(self) -> "RunConfig":
        """Copy with defaults filled in and sequences normalized; validates."""
        nel = self.nel
        if np.isscalar(nel):
            nel = (int(nel),) * 3
        cfg = replace(
            self,
            nel=tuple(int(n) for n in nel),
            nts_list=tuple(sorted({int(n) for n in self.nts_list})),
            t_eval=self.t_final if self.t_eval is None else float(self.t_eval),
            t_final=float(self.t_final),
            rho_inf=float(self.rho_inf),
            profile_times=tuple(float(t) for t in self.profile_times),
            physics=dict(sorted({**default_physics(self.benchmark), **dict(self.physics)}.items())),
        )
        cfg.validate()
        return cfg

    def validate(self):
        if self.benchmark not in BENCHMARKS:
            raise ValueError("benchmark must be one of %s" % (BENCHMARKS,))
        if self.scheme not in (SCHEME1, SCHEME2):
            raise ValueError("scheme must be scheme1 or scheme2")
        if not 0.0 <= self.rho_inf <= 1.0:
            raise ValueError("rho_inf must lie in [0, 1]")
        if self.p < 1 or not 0 <= self.continuity <= self.p - 1:
            raise ValueError("need p >= 1 and 0 <= continuity <= p - 1")
        if len(self.nel) != 3 or min(self.nel) < 1:
            raise ValueError("nel needs three positive entries")
        if not self.nts_list or min(self.nts_list) < 1:
            raise ValueError("nts_list needs positive step counts")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")
        if not 0 < self.t_eval <= self.t_final * (1 + _GRID_TOL):
            raise ValueError("t_eval must lie in (0, t_final]")
        for n in self.nts_list:
            grid_index(self.t_eval, self.t_final, n)
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.profile_export and self.benchmark != WOMERSLEY:
            raise ValueError("profile export is defined for the womersley benchmark only")
        if self.profile_export:
            for t in self.profile_times:
                grid_index(t, self.t_final, max(self.nts_list))


def grid_index(t, t_final, nts) -> int:
    """Step index of ``t`` on the uniform grid, or ValueError if it is off-grid."""
    k = t * nts / t_final
    if abs(k - round(k)) > _GRID_TOL * max(1.0, k) or round(k) < 0 or round(k) > nts:
        raise ValueError("time %g is not on the grid of %d steps over [0, %g]" % (t, nts, t_final))
    return int(round(k))


def default_physics(benchmark) -> dict:
    if benchmark == WOMERSLEY:
        w = Womersley()
        return {"rho": w.rho, "mu": w.mu, "R": w.R, "L": w.L, "T_p": w.T_p, "p_ref": w.p_ref}
    e = EthierSteinman()
    return {"rho": e.rho, "mu": e.mu, "a": e.a, "d": e.d}


PRESETS = {
    "es-desk": dict(benchmark=ETHIER_STEINMAN, p=3, continuity=2, nel=(6, 6, 6), nts_list=(5, 10, 20, 40), t_final=1.0),
    "es-full": dict(
        benchmark=ETHIER_STEINMAN, p=4, continuity=3, nel=(25, 25, 25), nts_list=(10, 20, 40, 50, 80, 100), t_final=1.0
    ),
    "womersley-desk": dict(benchmark=WOMERSLEY, p=3, continuity=2, nel=(6, 6, 8), nts_list=(11, 22, 44), t_final=0.8),
    "womersley-full": dict(
        benchmark=WOMERSLEY, p=4, continuity=3, nel=(10, 10, 16), nts_list=(11, 22, 44, 88), t_final=0.8
    ),
}
# full-scale presets need tens of GB and hours; never used by the test suite
EXPENSIVE_PRESETS = ("es-full", "womersley-full")


@dataclass
class Setup:
    """Mesh, problem and exact solution of a resolved configuration."""

    ms: object
    problem: Problem
    exact: object


def build_setup(cfg: RunConfig) -> Setup:
    ph = cfg.physics
    if cfg.benchmark == ETHIER_STEINMAN:
        exact = EthierSteinman(a=ph["a"], d=ph["d"], rho=ph["rho"], mu=ph["mu"])
        patch = make_cube_patch([-1.0] * 3, [1.0] * 3)
        face_spec = {f: NEUMANN for f in FACES}
    else:
        exact = Womersley(R=ph["R"], L=ph["L"], rho=ph["rho"], mu=ph["mu"], T_p=ph["T_p"], p_ref=ph["p_ref"])
        patch = make_pipe_patch(exact.R, exact.L)
        # in-plane faces form the wall; the axial faces are the pipe ends
        face_spec = {f: (NEUMANN if f[0] == 2 else DIRICHLET) for f in FACES}
    ms = build_mixed_space(patch, cfg.nel, cfg.p, cfg.continuity, face_spec)
    problem = Problem(ms, MaterialParams(exact.rho, exact.mu), traction=exact.traction)
    return Setup(ms, problem, exact)


@dataclass
class MemberResult:
    nts: int
    report: object
    state: object  # state at t_eval
    newton_iterations: int
    factorizations: int


@dataclass
class RunResult:
    config: RunConfig
    members: list
    table: str
    profile: list = None
    status: int = 0
    error: str = None

    @property
    def reports(self):
        return [m.report for m in self.members]


def run_member(setup: Setup, cfg: RunConfig, nts: int, on_step=None) -> MemberResult:
    """Integrate one step count to ``t_eval``; ``on_step(k, state)`` sees every step."""
    dt = cfg.t_final / nts
    k_eval = grid_index(cfg.t_eval, cfg.t_final, nts)
    sp = params_from_rho_inf(cfg.rho_inf, cfg.scheme)
    step_cfg = StepConfig(
        dt,
        newton_rel_tol=cfg.newton_rel_tol,
        newton_abs_tol=cfg.newton_abs_tol,
        max_newton_iters=cfg.max_newton_iters,
        reuse_tangent=cfg.reuse_tangent,
    )
    state = initial_state(setup.problem, setup.exact, 0.0, consistent_vdot=cfg.consistent_vdot)
    integ = Integrator(setup.problem, sp)
    its = 0
    if on_step:
        on_step(0, state)
    for k in range(1, k_eval + 1):
        state, info = integ.step(state, step_cfg)
        state.t = k * dt  # no accumulated round-off in the clock
        its += info.iterations
        if on_step:
            on_step(k, state)
    meta = {
        "scheme": cfg.scheme,
        "nts": nts,
        "dt": dt,
        "nel": list(cfg.nel),
        "p": cfg.p,
        "continuity": cfg.continuity,
        "rho_inf": cfg.rho_inf,
    }
    report = error_report(setup.ms, state, setup.exact, meta=meta)
    return MemberResult(nts, report, state, its, integ.total_factorizations)


def profile_rows(setup: Setup, state, xs, z):
    """``(t, x, v_z)`` samples of the discrete axial velocity on the line ``y = 0, z = z``."""
    key = ("profile_xi", tuple(xs), z)
    cache = setup.ms._cache
    if key not in cache:
        cache[key] = np.array([invert_map(setup.ms.patch, (x, 0.0, z)) for x in xs])
    vals = eval_at_points(setup.ms, state.v, "v", cache[key])
    return [(state.t, float(x), float(v[2])) for x, v in zip(xs, vals)]


def write_profile(rows, path, config_echo):
    vmax = max(abs(r[2]) for r in rows) if rows else float("nan")
    lines = ["# " + l for l in json.dumps(config_echo, indent=1, sort_keys=True).splitlines()]
    lines.append("# max |v_z| over the sampled set: %.6e (values below are not normalized)" % vmax)
    lines.append("time,x,v_z")
    lines += ["%.6e,%.6e,%.6e" % r for r in rows]
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def config_echo(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["nel"] = list(cfg.nel)
    d["nts_list"] = list(cfg.nts_list)
    d["profile_times"] = list(cfg.profile_times)
    d["version"] = __version__
    return d


def run(cfg: RunConfig, setup: Setup = None) -> RunResult:
    """Run a convergence family and write its artifacts.

    A Newton failure stops the family; the table then holds the members
    completed so far and ``status`` is 2.
    """
    cfg = cfg.resolved()
    setup = setup or build_setup(cfg)
    echo = config_echo(cfg)
    members, profile = [], []
    status, err = 0, None
    finest = max(cfg.nts_list)
    for nts in cfg.nts_list:
        hook = None
        if cfg.profile_export and nts == finest:
            dt = cfg.t_final / nts
            marks = {grid_index(t, cfg.t_final, nts) for t in cfg.profile_times}
            xs = np.linspace(-setup.exact.R, setup.exact.R, cfg.profile_points)
            z = 0.5 * setup.exact.L

            def hook(k, state, marks=marks, xs=xs, z=z):
                if k in marks:
                    profile.extend(profile_rows(setup, state, xs, z))

        try:
            members.append(run_member(setup, cfg, nts, on_step=hook))
        except NewtonError as exc:
            status, err = 2, str(exc)
            log.error("family aborted at nts=%d: %s", nts, exc)
            break
    table = emit_report([m.report for m in members], cfg.out, cfg.format, echo) if members else ""
    if cfg.profile_export and profile:
        write_profile(profile, cfg.profile_export, echo)
    return RunResult(cfg, members, table, profile or None, status, err)


def _parse_nel(text):
    parts = [int(s) for s in text.replace("x", ",").split(",") if s]
    if len(parts) == 1:
        return tuple(parts * 3)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("nel takes one or three integers")
    return tuple(parts)


def build_parser():
    ap = argparse.ArgumentParser(prog="nsgalpha", description="Temporal convergence runs for generalized-alpha schemes.")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--config", help="JSON file with RunConfig keys")
    ap.add_argument("--benchmark", choices=BENCHMARKS)
    ap.add_argument("--scheme", choices=(SCHEME1, SCHEME2))
    ap.add_argument("--rho-inf", type=float)
    ap.add_argument("--p", type=int)
    ap.add_argument("--continuity", type=int)
    ap.add_argument("--nel", type=_parse_nel, help="N or N1,N2,N3")
    ap.add_argument("--nts", type=int, action="append", help="step count (repeatable)")
    ap.add_argument("--t-final", type=float)
    ap.add_argument("--t-eval", type=float)
    ap.add_argument("--out")
    ap.add_argument("--format", choices=("csv", "json"))
    ap.add_argument("--profile-export", metavar="PATH")
    ap.add_argument("--dry-run", action="store_true", help="validate and print space sizes only")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> RunConfig:
    values = {}
    if args.preset:
        values.update(PRESETS[args.preset])
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        values.update(loaded)
    overrides = {
        "benchmark": args.benchmark,
        "scheme": args.scheme,
        "rho_inf": args.rho_inf,
        "p": args.p,
        "continuity": args.continuity,
        "nel": args.nel,
        "nts_list": tuple(args.nts) if args.nts else None,
        "t_final": args.t_final,
        "t_eval": args.t_eval,
        "out": args.out,
        "format": args.format,
        "profile_export": args.profile_export,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "benchmark" in values and values["benchmark"] == WOMERSLEY and "t_final" not in values:
        values["t_final"] = 0.8
    for key in ("nel", "nts_list", "profile_times"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    return RunConfig(**values).resolved()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 1
    if args.preset in EXPENSIVE_PRESETS:
        log.warning("preset %s is full scale and very expensive", args.preset)
    if args.dry_run:
        setup = build_setup(cfg)
        print(json.dumps({"config": config_echo(cfg), "space": setup.ms.describe()}, indent=1, sort_keys=True))
        return 0
    result = run(cfg)
    if cfg.out is None and result.table:
        sys.stdout.write(result.table)
    if result.status:
        print("run aborted: %s" % result.error, file=sys.stderr)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
