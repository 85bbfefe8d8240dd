"""Univariate and tensor-product B-spline / NURBS bases.

Only open knot vectors with uniform interior regularity are supported. Local
evaluation returns the ``degree + 1`` nonvanishing functions of an interval
together with the global index of the first one; dense collocation matrices
are provided for sum-factorized evaluation on tensor quadrature grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector on [0, 1] with its spline degree.

    Attributes:
        degree: polynomial degree ``p >= 1``.
        knots: full knot sequence including multiplicities.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self):
        kv = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", kv)
        kv.flags.writeable = False
        p = self.degree
        if p < 1:
            raise ValueError("degree must be >= 1")
        if kv.ndim != 1 or kv.size < 2 * (p + 1):
            raise ValueError("knot vector too short for degree %d" % p)
        if np.any(np.diff(kv) < 0):
            raise ValueError("knots must be nondecreasing")
        if kv[0] != 0.0 or kv[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        _, mult = self.unique_knots()
        if mult[0] != p + 1 or mult[-1] != p + 1:
            raise ValueError("knot vector is not open")
        if np.any(mult[1:-1] > p):
            raise ValueError("interior knot multiplicity exceeds degree")

    @property
    def dim(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    def unique_knots(self):
        """Return ``(breakpoints, multiplicities)``."""
        return np.unique(self.knots, return_counts=True)

    @property
    def nel(self) -> int:
        return self.unique_knots()[0].size - 1

    def regularity(self) -> np.ndarray:
        """Continuity ``p - r_i`` at each breakpoint (-1 at the ends)."""
        _, mult = self.unique_knots()
        reg = self.degree - mult
        reg[0] = reg[-1] = -1
        return reg

    @cached_property
    def element_spans(self) -> np.ndarray:
        """Knot-span index of every nonempty interval, in order."""
        kv = self.knots
        return np.nonzero(kv[1:] > kv[:-1])[0]

    def __repr__(self):
        return "KnotVector(degree=%d, dim=%d, nel=%d)" % (self.degree, self.dim, self.nel)


def make_open_knots(nel: int, degree: int, continuity: int) -> KnotVector:
    """Uniform open knot vector with ``nel`` elements and C^continuity joints."""
    if nel < 1:
        raise ValueError("nel must be >= 1")
    if not 0 <= continuity <= degree - 1:
        raise ValueError("continuity must lie in [0, degree-1]")
    mult = degree - continuity
    interior = np.repeat(np.arange(1, nel) / nel, mult)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(degree, knots)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index ``i`` with ``knots[i] <= xi < knots[i+1]``; ``xi = 1`` maps to the last interval."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi=%r outside [0, 1]" % xi)
    return int(find_spans(kv, np.array([xi]))[0])


def find_spans(kv: KnotVector, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if np.any((xi < 0.0) | (xi > 1.0)):
        raise ValueError("parameter outside [0, 1]")
    p, n = kv.degree, kv.dim
    span = np.searchsorted(kv.knots, xi, side="right") - 1
    return np.clip(span, p, n - 1)


def basis_funs(kv: KnotVector, xi, spans=None):
    """Nonvanishing B-splines and first derivatives at many points.

    Args:
        kv: knot vector.
        xi: parameters, shape (m,).
        spans: optional precomputed span indices.

    Returns:
        ``(spans, values, derivs)`` with ``values``/``derivs`` of shape
        (m, p+1); column ``a`` belongs to global function ``spans - p + a``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if spans is None:
        spans = find_spans(kv, xi)
    p, U = kv.degree, kv.knots
    m = xi.size
    # ndu[j] holds degree-j functions (columns 0..j); standard triangular table
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.empty((m, p + 1))
    right = np.empty((m, p + 1))
    lower = None
    for j in range(1, p + 1):
        left[:, j] = xi - U[spans + 1 - j]
        right[:, j] = U[spans + j] - xi
        if j == p:
            lower = N[:, :p].copy()
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            tmp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * tmp
            saved = left[:, j - r] * tmp
        N[:, j] = saved
    # derivative of degree-p functions from degree-(p-1) functions
    D = np.zeros((m, p + 1))
    for a in range(p + 1):
        i = spans - p + a
        if a >= 1:
            den = U[i + p] - U[i]
            D[:, a] += p * lower[:, a - 1] / den
        if a <= p - 1:
            den = U[i + p + 1] - U[i + 1]
            D[:, a] -= p * lower[:, a] / den
    return spans, N, D


def eval_bspline(kv: KnotVector, xi: float, nderiv: int = 1):
    """Values (and first derivatives if ``nderiv == 1``) of the p+1 active B-splines."""
    if nderiv not in (0, 1):
        raise ValueError("only first derivatives are supported")
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi=%r outside [0, 1]" % xi)
    _, N, D = basis_funs(kv, [xi])
    if nderiv == 0:
        return N[0]
    return N[0], D[0]


def collocation_matrix(kv: KnotVector, xi, deriv: int = 0) -> np.ndarray:
    """Dense matrix ``B[k, i] = N_i^(deriv)(xi_k)``."""
    spans, N, D = basis_funs(kv, xi)
    vals = N if deriv == 0 else D
    out = np.zeros((len(spans), kv.dim))
    cols = spans[:, None] - kv.degree + np.arange(kv.degree + 1)
    np.put_along_axis(out, cols, vals, axis=1)
    return out


@dataclass(frozen=True)
class SplineSpace1D:
    """Univariate NURBS space: knot vector plus positive weights."""

    knot_vector: KnotVector
    weights: np.ndarray = None

    def __post_init__(self):
        w = self.weights
        w = np.ones(self.knot_vector.dim) if w is None else np.asarray(w, dtype=float)
        if w.shape != (self.knot_vector.dim,):
            raise ValueError("need one weight per basis function")
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.knot_vector.dim

    @property
    def degree(self) -> int:
        return self.knot_vector.degree


def eval_nurbs(space: SplineSpace1D, xi: float):
    """Rational basis values and derivatives (quotient rule) at ``xi``."""
    kv = space.knot_vector
    span = find_span(kv, xi)
    N, dN = eval_bspline(kv, xi)
    w = space.weights[span - kv.degree: span + 1]
    W = np.dot(w, N)
    dW = np.dot(w, dN)
    assert W > 0, "nonpositive weight function"
    R = w * N / W
    dR = w * (dN * W - N * dW) / W**2
    return R, dR


@dataclass(frozen=True)
class TensorBasis:
    """Tensor product of univariate spaces with lexicographic (last index fastest) numbering."""

    spaces: tuple

    def __post_init__(self):
        object.__setattr__(self, "spaces", tuple(self.spaces))

    @classmethod
    def from_knots(cls, kvs):
        return cls(tuple(SplineSpace1D(kv) for kv in kvs))

    @property
    def shape(self) -> tuple:
        return tuple(s.dim for s in self.spaces)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def knot_vectors(self) -> tuple:
        return tuple(s.knot_vector for s in self.spaces)

    def flat_index(self, multi):
        return np.ravel_multi_index(tuple(multi), self.shape)

    def multi_index(self, flat):
        return np.unravel_index(flat, self.shape)


def eval_tensor(basis: TensorBasis, xi):
    """All nonvanishing multivariate functions at one parametric point.

    Returns:
        ``(values, gradients, indices)``: values (k,), parametric gradients
        (k, d) and global flat indices (k,), with ``k = prod(p_l + 1)``.
    """
    xi = np.asarray(xi, dtype=float)
    d = len(basis.spaces)
    vals, ders, idx = [], [], []
    for l, space in enumerate(basis.spaces):
        R, dR = eval_nurbs(space, float(xi[l]))
        span = find_span(space.knot_vector, float(xi[l]))
        vals.append(R)
        ders.append(dR)
        idx.append(span - space.degree + np.arange(space.degree + 1))
    grids = np.meshgrid(*idx, indexing="ij")
    flat = np.ravel_multi_index(tuple(grids), basis.shape).ravel()
    values = _outer(vals).ravel()
    grads = np.empty((values.size, d))
    for k in range(d):
        factors = [ders[l] if l == k else vals[l] for l in range(d)]
        grads[:, k] = _outer(factors).ravel()
    return values, grads, flat


def _outer(factors):
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out
