"""Relative error norms, observed convergence orders and report files."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .spaces import MixedSpace, eval_field

L2 = "L2"
H1 = "H1"

QUANTITIES = ("v", "p", "vdot", "pdot")
COLUMNS = ["scheme", "nts", "dt"]
for _q in QUANTITIES:
    for _n in ("l2", "h1"):
        COLUMNS += ["err_%s_%s" % (_q, _n), "ord_%s_%s" % (_q, _n)]


def relative_error(ms: MixedSpace, coeffs, exact_value, exact_grad, norm=H1, which=None) -> float:
    """Relative L2 or full-H1 error of a discrete field against exact data on the quadrature grid.

    Args:
        ms: mixed space (supplies quadrature, which is of degree ``p + 3``).
        coeffs: velocity (3 n_vs,) or pressure (n_p,) coefficients.
        exact_value: exact values on ``ms.x``, (Q1,Q2,Q3[,3]).
        exact_grad: exact physical gradients, one more trailing axis of 3.
        norm: :data:`L2` or :data:`H1`.
        which: ``'v'`` or ``'p'``; inferred from the coefficient count if omitted.
    """
    if which is None:
        which = "v" if np.size(coeffs) == ms.n_v else "p"
    uh, guh = eval_field(ms, coeffs, which)
    w = ms.wdet
    ev = np.asarray(exact_value, dtype=float)
    eg = np.asarray(exact_grad, dtype=float)

    def integ(a, lead):
        a = a.reshape(w.shape + (-1,)) if a.ndim > lead else a[..., None]
        return float(np.sum(w * np.sum(a * a, axis=-1)))

    err = integ(uh - ev, 3)
    ref = integ(ev, 3)
    if norm == H1:
        err += integ(guh - eg, 3)
        ref += integ(eg, 3)
    elif norm != L2:
        raise ValueError("unknown norm %r" % norm)
    if not ref > 0:
        raise ZeroDivisionError("exact field has zero norm")
    return math.sqrt(err / ref)


def convergence_order(errors, dts):
    """Observed orders ``log(e_j/e_{j+1}) / log(dt_j/dt_{j+1})`` for adjacent pairs."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(dts, dtype=float)
    if e.size < 2 or e.shape != h.shape:
        raise ValueError("need at least two matching errors and step sizes")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and step sizes must be positive")
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


@dataclass
class ErrorReport:
    """Relative errors of one run at ``t_eval``."""

    errors: dict  # e.g. errors["p"]["L2"]
    t_eval: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for q, d in self.errors.items():
            for n, e in d.items():
                if not (np.isfinite(e) and e >= 0):
                    raise ValueError("invalid error value %s/%s = %r" % (q, n, e))

    def get(self, quantity, norm):
        return self.errors[quantity][norm]


def error_report(ms: MixedSpace, state, exact, pdot=None, meta=None) -> ErrorReport:
    """Errors of ``v, p, vdot, pdot`` of ``state`` against ``exact.eval`` at ``state.t``."""
    f = exact.eval(ms.x, state.t)
    coeffs = {"v": state.v, "p": state.p, "vdot": state.vdot, "pdot": state.pdot if pdot is None else pdot}
    grads = {"v": "grad_v", "p": "grad_p", "vdot": "grad_vdot", "pdot": "grad_pdot"}
    errors = {}
    for q in QUANTITIES:
        which = "v" if q in ("v", "vdot") else "p"
        errors[q] = {n: relative_error(ms, coeffs[q], f[q], f[grads[q]], n, which) for n in (L2, H1)}
    return ErrorReport(errors, state.t, dict(meta or {}))


def report_rows(reports):
    """Table rows (dicts keyed by :data:`COLUMNS`), orders blank for the first row."""
    reports = sorted(reports, key=lambda r: r.meta["nts"])
    dts = [r.meta["dt"] for r in reports]
    rows = [
        {"scheme": r.meta.get("scheme", ""), "nts": r.meta["nts"], "dt": r.meta["dt"]} for r in reports
    ]
    for q in QUANTITIES:
        for n in (L2, H1):
            errs = [r.get(q, n) for r in reports]
            ords = [None] + (list(convergence_order(errs, dts)) if len(reports) > 1 and min(errs) > 0 else [None] * (len(errs) - 1))
            for row, e, o in zip(rows, errs, ords):
                row["err_%s_%s" % (q, n.lower())] = e
                row["ord_%s_%s" % (q, n.lower())] = o
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) or isinstance(value, str):
        return str(value)
    return "%.6e" % value


def emit_report(reports, path=None, fmt="csv", config=None) -> str:
    """Write a convergence table as CSV or JSON; returns the text written.

    CSV files start with ``#`` comment lines echoing ``config`` as JSON,
    followed by a mandatory header row.
    """
    rows = report_rows(reports)
    if fmt == "csv":
        buf = io.StringIO()
        if config is not None:
            for line in json.dumps(config, indent=1, sort_keys=True).splitlines():
                buf.write("# " + line + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        payload = {
            "config": config,
            "rows": [{c: (None if row[c] is None else row[c]) for c in COLUMNS} for row in rows],
        }
        text = json.dumps(payload, indent=1, sort_keys=True, default=float) + "\n"
    else:
        raise ValueError("format must be 'csv' or 'json'")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_report_csv(text):
    """Parse rows written by :func:`emit_report` (comment lines skipped)."""
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        parsed = {}
        for k, v in row.items():
            if k == "scheme":
                parsed[k] = v
            elif k == "nts":
                parsed[k] = int(v)
            else:
                parsed[k] = float(v) if v != "" else None
        out.append(parsed)
    return out
