"""Sparse direct solves with a mandatory post-solve residual check.

MKL PARDISO (through ``pypardiso``) is used when the MKL runtime can be
found; otherwise SciPy's SuperLU. Every solve recomputes
``||A x - b|| / ||b||``, applies iterative refinement while it still makes
progress (pivot perturbation in the zero pressure block can leave a raw
PARDISO solve at ~1e-7) and raises :class:`SolveError` if the check still fails. The check is never
downgraded to a warning.
"""

from __future__ import annotations

import glob
import logging
import os
import site
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
MAX_REFINE = 10
# below this size SuperLU is as fast as PARDISO and has no setup cost
PARDISO_MIN_SIZE = 2000


class SolveError(RuntimeError):
    """Singular factorization or failed residual check."""


def _load_pardiso():
    if os.environ.get("NSGALPHA_NO_PARDISO"):
        return None
    if "PYPARDISO_MKL_RT" not in os.environ:
        roots = [sys.prefix, "/usr/local", "/usr", getattr(site, "USER_BASE", "") or ""]
        hits = []
        for root in roots:
            hits += glob.glob(os.path.join(root, "lib*", "libmkl_rt.so*"))
            hits += glob.glob(os.path.join(root, "lib*", "python3*", "*-packages", "**", "libmkl_rt.so*"), recursive=True)
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = sorted(hits, key=len)[0]
    try:
        from pypardiso import PyPardisoSolver
    except (ImportError, OSError):
        log.info("pypardiso unavailable; falling back to SuperLU")
        return None
    return PyPardisoSolver


_PARDISO = _load_pardiso()


def backend_name() -> str:
    return "pardiso" if _PARDISO is not None else "superlu"


class Factorization:
    """LU factorization of a square sparse matrix, reusable for many right-hand sides.

    Immutable after construction; a single instance must not be shared
    between concurrent solves.
    """

    def __init__(self, A, tol=RESIDUAL_TOL, backend=None):
        A = sp.csr_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        A.sort_indices()
        self.A = A
        self.tol = tol
        if backend is None:
            backend = "pardiso" if (_PARDISO is not None and A.shape[0] >= PARDISO_MIN_SIZE) else "superlu"
        self.backend = backend
        if backend == "pardiso":
            if _PARDISO is None:
                raise SolveError("PARDISO backend requested but not available")
            if not np.diff(A.indptr).all():
                raise SolveError("singular matrix (empty row)")
            self._solver = _PARDISO(mtype=11)
            self._pardiso_factor(A, phase=12)
        else:
            try:
                self._lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolveError("factorization failed: %s" % exc) from None
            piv = np.abs(self._lu.U.diagonal())
            self.min_pivot = float(piv.min()) if piv.size else 0.0
            self.perturbed_pivots = 0
            if not np.all(np.isfinite(piv)) or self.min_pivot == 0.0:
                raise SolveError("singular matrix (smallest pivot magnitude %.3e)" % self.min_pivot)

    def _pardiso_factor(self, A, phase):
        solver = self._solver
        try:
            solver._check_A(A)
            solver.factorized_A = A.copy()
            solver.set_phase(phase)
            solver._call_pardiso(A, np.zeros((A.shape[0], 1)))
        except Exception as exc:  # PyPardisoError carries the MKL code only
            raise SolveError("PARDISO factorization failed: %s" % exc) from None
        # iparm(14): number of perturbed pivots
        self.perturbed_pivots = int(solver.get_iparm(14))
        self.min_pivot = float("nan")

    def refactor(self, A):
        """Factorize a new matrix in place, reusing the ordering if the pattern is unchanged.

        Args:
            A: square sparse matrix of the same shape.

        Returns:
            ``self``.
        """
        A = sp.csr_matrix(A, dtype=float)
        A.sort_indices()
        same = (
            self.backend == "pardiso"
            and A.shape == self.A.shape
            and np.array_equal(A.indptr, self.A.indptr)
            and np.array_equal(A.indices, self.A.indices)
        )
        if not same:
            self.free()
            self.__init__(A, self.tol, self.backend if self.backend == "superlu" else None)
            return self
        self.A = A
        self._pardiso_factor(A, phase=22)
        return self

    @property
    def shape(self):
        return self.A.shape

    def _raw_solve(self, b):
        if self.backend == "pardiso":
            return self._solver.solve(self.A, b)
        return self._lu.solve(b)

    def solve(self, b, check=True):
        b = np.asarray(b, dtype=float)
        x = self._raw_solve(b)
        if not check:
            return x
        nb = np.linalg.norm(b)
        scale = nb if nb > 0 else 1.0
        r = self.A @ x - b
        rel = np.linalg.norm(r) / scale
        for _ in range(MAX_REFINE):
            if rel < self.tol:
                break
            x_new = x - self._raw_solve(r)
            r_new = self.A @ x_new - b
            rel_new = np.linalg.norm(r_new) / scale
            if not rel_new < 0.9 * rel:
                break  # stagnated at the rounding floor
            x, r, rel = x_new, r_new, rel_new
        if not (rel < self.tol):
            raise SolveError(
                "residual check failed: ||Ax-b||/||b|| = %.3e (%s, smallest pivot %.3e, perturbed pivots %d)"
                % (rel, self.backend, self.min_pivot, self.perturbed_pivots)
            )
        return x

    def free(self):
        if self.backend == "pardiso":
            self._solver.free_memory(everything=True)

    def __del__(self):
        try:
            self.free()
        except Exception:
            pass


def factorize(A, tol=RESIDUAL_TOL, backend=None) -> Factorization:
    return Factorization(A, tol, backend)


def factor_solve(A, b, tol=RESIDUAL_TOL, backend=None) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU with pivoting and verify the residual."""
    f = Factorization(A, tol, backend)
    try:
        return f.solve(b)
    finally:
        f.free()
