"""NURBS geometry maps, Gauss quadrature and boundary-face data.

Two single-patch domains are provided: an affine box and a circular pipe
whose cross-section is an exact quadratic NURBS disk with four degenerate
parametric corners. Geometry evaluation on tensor grids of parameters is
sum-factorized over homogeneous coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import KnotVector, collocation_matrix, make_open_knots


class GeometryError(RuntimeError):
    """Raised for a non-positive Jacobian determinant."""


@dataclass(frozen=True)
class NurbsPatch:
    """Trivariate NURBS map ``psi: [0,1]^3 -> R^3``.

    Attributes:
        knot_vectors: one :class:`KnotVector` per parametric direction.
        control_points: shape (n1, n2, n3, 3).
        weights: shape (n1, n2, n3), strictly positive.
    """

    knot_vectors: tuple
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        shape = tuple(kv.dim for kv in self.knot_vectors)
        if self.control_points.shape != shape + (3,):
            raise ValueError("control net shape mismatch")
        if self.weights.shape != shape:
            raise ValueError("weights shape mismatch")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")


def _contract(mats, C):
    """``sum_ijk A[a,i] B[b,j] C[c,k] T[i,j,k,...]``."""
    out = np.tensordot(mats[0], C, axes=(1, 0))
    out = np.moveaxis(np.tensordot(mats[1], out, axes=(1, 1)), 0, 1)
    out = np.moveaxis(np.tensordot(mats[2], out, axes=(1, 2)), 0, 2)
    return out


def map_grid(patch: NurbsPatch, xis):
    """Evaluate the geometry on the tensor grid ``xis[0] x xis[1] x xis[2]``.

    Returns:
        ``x`` (m1, m2, m3, 3) and ``J`` (m1, m2, m3, 3, 3) with
        ``J[..., a, k] = d x_a / d xi_k``.
    """
    B = [collocation_matrix(kv, x, 0) for kv, x in zip(patch.knot_vectors, xis)]
    D = [collocation_matrix(kv, x, 1) for kv, x in zip(patch.knot_vectors, xis)]
    w = patch.weights
    hom = np.concatenate([patch.control_points * w[..., None], w[..., None]], axis=-1)
    val = _contract(B, hom)
    grads = [
        _contract([D[0], B[1], B[2]], hom),
        _contract([B[0], D[1], B[2]], hom),
        _contract([B[0], B[1], D[2]], hom),
    ]
    W = val[..., 3:]
    x = val[..., :3] / W
    J = np.empty(x.shape + (3,))
    for k, g in enumerate(grads):
        J[..., k] = (g[..., :3] - x * g[..., 3:]) / W
    return x, J


def geometry_at(patch: NurbsPatch, xi):
    """Physical point, Jacobian and its determinant at one parametric point."""
    xi = np.asarray(xi, dtype=float)
    x, J = map_grid(patch, [xi[0:1], xi[1:2], xi[2:3]])
    x, J = x[0, 0, 0], J[0, 0, 0]
    return x, J, float(np.linalg.det(J))


def invert_map(patch: NurbsPatch, X, xi0=(0.5, 0.5, 0.5), tol=1e-13, max_iter=50):
    """Parametric coordinates of a physical point by damped Newton iteration.

    Raises:
        GeometryError: if the iteration leaves the unit cube or stalls.
    """
    X = np.asarray(X, dtype=float)
    xi = np.array(xi0, dtype=float)
    scale = max(1.0, float(np.abs(patch.control_points).max()))
    for _ in range(max_iter):
        x, J, _ = geometry_at(patch, xi)
        r = x - X
        if np.linalg.norm(r) <= tol * scale:
            return xi
        step = np.linalg.solve(J, r)
        lam = 1.0
        while np.any((xi - lam * step < -1e-12) | (xi - lam * step > 1 + 1e-12)) and lam > 1e-6:
            lam *= 0.5
        xi = np.clip(xi - lam * step, 0.0, 1.0)
    raise GeometryError("point %s not located in the patch" % (X,))


def make_cube_patch(lo, hi, nel_per_dim: int = 1) -> NurbsPatch:
    """Trilinear box ``[lo, hi]`` with ``nel_per_dim`` C0 elements per direction."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise ValueError("degenerate box")
    kv = make_open_knots(nel_per_dim, 1, 0)
    t = np.linspace(0.0, 1.0, nel_per_dim + 1)
    coords = [lo[k] + (hi[k] - lo[k]) * t for k in range(3)]
    P = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
    return NurbsPatch((kv, kv, kv), P, np.ones(P.shape[:3]))


def disk_control_net(R: float):
    """Quadratic 3x3 control net and weights of the single-patch disk of radius ``R``.

    Each parametric edge is a 90-degree arc: corners lie on the circle at
    45 degrees, edge midpoints sit at the tangent intersection ``sqrt(2) R``.
    """
    s = R / np.sqrt(2.0)
    c = np.sqrt(2.0) * R
    P = np.array(
        [
            [[-s, -s], [-c, 0.0], [-s, s]],
            [[0.0, -c], [0.0, 0.0], [0.0, c]],
            [[s, -s], [c, 0.0], [s, s]],
        ]
    )
    h = np.sqrt(2.0) / 2.0
    w = np.array([[1.0, h, 1.0], [h, 1.0, h], [1.0, h, 1.0]])
    return P, w


def make_pipe_patch(R: float, L: float) -> NurbsPatch:
    """Straight circular pipe of radius ``R`` along z in ``[0, L]``."""
    if R <= 0 or L <= 0:
        raise ValueError("pipe radius and length must be positive")
    P2, w2 = disk_control_net(R)
    kv2 = make_open_knots(1, 2, 0)
    kv1 = make_open_knots(1, 1, 0)
    P = np.empty((3, 3, 2, 3))
    P[:, :, :, :2] = P2[:, :, None, :]
    P[:, :, 0, 2] = 0.0
    P[:, :, 1, 2] = L
    w = np.repeat(w2[:, :, None], 2, axis=2)
    return NurbsPatch((kv2, kv2, kv1), P, w)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval [0, 1]."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def npts(self) -> int:
        return self.points.size


def gauss_rule(q: int) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(q)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w)


def quadrature_for(degree: int) -> QuadratureRule:
    """``degree + 2`` Gauss points per knot span."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    return gauss_rule(degree + 2)


def span_quadrature(kv: KnotVector, rule: QuadratureRule):
    """Map ``rule`` onto every nonempty span of ``kv``.

    Returns:
        ``(points, weights)`` of shape (nel * q,), element-major.
    """
    brk, _ = kv.unique_knots()
    a, b = brk[:-1, None], brk[1:, None]
    pts = a + (b - a) * rule.points[None, :]
    wts = (b - a) * rule.weights[None, :]
    return pts.ravel(), wts.ravel()


# faces are (axis, side); side 0 is xi_axis = 0
FACES = tuple((axis, side) for axis in range(3) for side in (0, 1))
DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass
class BoundaryFace:
    """Surface quadrature on one parametric face.

    Attributes:
        axis, side: the face ``xi_axis = side``.
        kind: :data:`DIRICHLET` or :data:`NEUMANN`.
        tangential: the two in-face parametric axes, ascending.
        params: in-face quadrature parameters along each tangential axis.
        x: physical points (m1, m2, 3).
        normal: outward unit normals (m1, m2, 3).
        dgamma: surface weights ``|dx/du x dx/dv| w_u w_v`` (m1, m2).
    """

    axis: int
    side: int
    kind: str
    tangential: tuple
    params: tuple
    x: np.ndarray
    normal: np.ndarray
    dgamma: np.ndarray


def boundary_faces(patch: NurbsPatch, dirichlet_spec, rules) -> list:
    """Build surface quadrature data for all six faces.

    Args:
        patch: geometry.
        dirichlet_spec: mapping ``(axis, side) -> 'dirichlet' | 'neumann'``;
            every face must appear exactly once.
        rules: per-direction ``(points, weights)`` as from
            :func:`span_quadrature`.
    """
    spec = dict(dirichlet_spec)
    if set(spec) != set(FACES):
        raise ValueError("dirichlet_spec must classify all six faces")
    for face, kind in spec.items():
        if kind not in (DIRICHLET, NEUMANN):
            raise ValueError("face %r: unknown kind %r" % (face, kind))
    faces = []
    for axis, side in FACES:
        tang = tuple(k for k in range(3) if k != axis)
        xis = [None, None, None]
        xis[axis] = np.array([float(side)])
        for k in tang:
            xis[k] = rules[k][0]
        x, J = map_grid(patch, xis)
        x = np.squeeze(x, axis=axis)
        J = np.squeeze(J, axis=axis)
        # cyclic (axis, a, b) so that J_a x J_b = cof(J) e_axis
        a, b = (axis + 1) % 3, (axis + 2) % 3
        cof = np.cross(J[..., :, a], J[..., :, b])
        area = np.linalg.norm(cof, axis=-1)
        sign = 1.0 if side == 1 else -1.0
        normal = sign * cof / area[..., None]
        w = np.multiply.outer(rules[tang[0]][1], rules[tang[1]][1])
        faces.append(
            BoundaryFace(
                axis=axis,
                side=side,
                kind=spec[(axis, side)],
                tangential=tang,
                params=(rules[tang[0]][0], rules[tang[1]][0]),
                x=x,
                normal=normal,
                dgamma=area * w,
            )
        )
    return faces
