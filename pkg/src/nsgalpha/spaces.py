"""Mixed velocity/pressure spline spaces on a NURBS patch.

Velocity components share one scalar B-spline space of degree ``p + 1``;
pressure uses degree ``p`` on the same knot spans (smooth Taylor-Hood pair).
Both are plain B-splines in the parametric domain, pushed forward through
the patch map. Velocity DOFs are numbered component-major:
``index = component * n_vs + scalar_index``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .geometry import (
    DIRICHLET,
    FACES,
    NEUMANN,
    GeometryError,
    NurbsPatch,
    boundary_faces,
    map_grid,
    quadrature_for,
    span_quadrature,
)
from .splines import KnotVector, TensorBasis, collocation_matrix, eval_tensor, make_open_knots


def contract(mats, C):
    """Sum-factorized ``sum_ijk A[a,i] B[b,j] C[c,k] T[i,j,k,...]``."""
    out = np.tensordot(mats[0], C, axes=(1, 0))
    out = np.moveaxis(np.tensordot(mats[1], out, axes=(1, 1)), 0, 1)
    out = np.moveaxis(np.tensordot(mats[2], out, axes=(1, 2)), 0, 2)
    return out


@dataclass(frozen=True)
class MaterialParams:
    """Constant density and dynamic viscosity plus an optional body force ``f(x, t)``."""

    rho: float
    mu: float
    body_force: object = None

    def __post_init__(self):
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("rho and mu must be positive")

    @property
    def nu(self) -> float:
        return self.mu / self.rho


@dataclass
class ScalarSpace:
    """One tensor-product B-spline space sampled on the quadrature grid."""

    basis: TensorBasis
    B: list  # per direction, (Q_d, n_d) values
    dB: list  # per direction, (Q_d, n_d) first derivatives
    local: list  # per direction, (nel_d, nq, p+1) values on each element
    dlocal: list
    offsets: list  # per direction, (nel_d,) first active function per element

    @property
    def shape(self):
        return self.basis.shape

    @property
    def dim(self):
        return self.basis.dim


def _scalar_space(kvs, quad):
    B, dB, loc, dloc, offs = [], [], [], [], []
    for kv, (pts, _) in zip(kvs, quad):
        Bd = collocation_matrix(kv, pts, 0)
        Dd = collocation_matrix(kv, pts, 1)
        nel = kv.nel
        nq = pts.size // nel
        off = kv.element_spans - kv.degree
        cols = off[:, None, None] + np.arange(kv.degree + 1)[None, None, :]
        cols = np.broadcast_to(cols, (nel, nq, kv.degree + 1))
        Bl = np.take_along_axis(Bd.reshape(nel, nq, -1), cols, axis=2)
        Dl = np.take_along_axis(Dd.reshape(nel, nq, -1), cols, axis=2)
        B.append(Bd)
        dB.append(Dd)
        loc.append(Bl)
        dloc.append(Dl)
        offs.append(off)
    return ScalarSpace(TensorBasis.from_knots(kvs), B, dB, loc, dloc, offs)


@dataclass
class MixedSpace:
    """Velocity/pressure spaces, quadrature-grid geometry and boundary data."""

    patch: NurbsPatch
    nel: tuple
    p: int
    continuity: int
    vel: ScalarSpace
    pres: ScalarSpace
    quad: list  # per direction (points, weights)
    nq: int
    x: np.ndarray  # (Q1, Q2, Q3, 3)
    jinv: np.ndarray  # (Q1, Q2, Q3, 3, 3), jinv[..., k, m] = d xi_k / d x_m
    wdet: np.ndarray  # (Q1, Q2, Q3) quadrature weight times det J
    faces: list
    dirichlet: np.ndarray  # (n_v,) bool
    free: np.ndarray = field(init=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.free = np.nonzero(~self.dirichlet)[0]

    @property
    def n_vs(self) -> int:
        return self.vel.dim

    @property
    def n_v(self) -> int:
        return 3 * self.vel.dim

    @property
    def n_p(self) -> int:
        return self.pres.dim

    @property
    def n_v_free(self) -> int:
        return self.free.size

    @property
    def n_unknowns(self) -> int:
        return self.n_v_free + self.n_p

    @property
    def nel_total(self) -> int:
        return int(np.prod(self.nel))

    def space(self, which):
        return self.vel if which == "v" else self.pres

    def to_elements(self, arr):
        """Reshape a grid array (Q1, Q2, Q3, ...) to element-major (E, nq^3, ...)."""
        n1, n2, n3 = self.nel
        q = self.nq
        tail = arr.shape[3:]
        a = arr.reshape((n1, q, n2, q, n3, q) + tail)
        order = (0, 2, 4, 1, 3, 5) + tuple(range(6, 6 + len(tail)))
        return a.transpose(order).reshape((n1 * n2 * n3, q**3) + tail)

    def describe(self) -> dict:
        return {
            "nel": list(self.nel),
            "p": self.p,
            "continuity": self.continuity,
            "velocity_scalar_shape": list(self.vel.shape),
            "pressure_shape": list(self.pres.shape),
            "n_v": self.n_v,
            "n_v_free": self.n_v_free,
            "n_p": self.n_p,
            "n_unknowns": self.n_unknowns,
        }


def build_mixed_space(patch, nel_per_dim, p: int, continuity: int, face_spec=None) -> MixedSpace:
    """Construct the smooth Taylor-Hood pair on ``patch``.

    Args:
        patch: geometry map.
        nel_per_dim: int or 3 ints, elements per parametric direction.
        p: pressure degree; velocity uses ``p + 1``.
        continuity: interior regularity of both spaces, ``0 <= continuity <= p - 1``.
        face_spec: mapping ``(axis, side) -> 'dirichlet'|'neumann'``
            (default: all Neumann).
    """
    nel = (nel_per_dim,) * 3 if np.isscalar(nel_per_dim) else tuple(int(n) for n in nel_per_dim)
    if p < 1 or not 0 <= continuity <= p - 1:
        raise ValueError("need p >= 1 and 0 <= continuity <= p - 1 (got p=%d, continuity=%d)" % (p, continuity))
    if face_spec is None:
        face_spec = {f: NEUMANN for f in FACES}
    if all(face_spec.get(f) == DIRICHLET for f in FACES):
        raise ValueError("all-Dirichlet velocity boundary leaves the pressure level undetermined")
    kv_v = [make_open_knots(n, p + 1, continuity) for n in nel]
    kv_p = [make_open_knots(n, p, continuity) for n in nel]
    rule = quadrature_for(p + 1)
    quad = [span_quadrature(kv, rule) for kv in kv_v]
    vel = _scalar_space(kv_v, quad)
    pres = _scalar_space(kv_p, quad)
    x, J = map_grid(patch, [q[0] for q in quad])
    det = np.linalg.det(J)
    if np.any(det <= 0):
        raise GeometryError("non-positive Jacobian determinant at %d quadrature points" % np.sum(det <= 0))
    w = quad[0][1][:, None, None] * quad[1][1][None, :, None] * quad[2][1][None, None, :]
    faces = boundary_faces(patch, face_spec, quad)
    mask = np.zeros(vel.shape, dtype=bool)
    for f in faces:
        if f.kind == DIRICHLET:
            idx = [slice(None)] * 3
            idx[f.axis] = 0 if f.side == 0 else vel.shape[f.axis] - 1
            mask[tuple(idx)] = True
    dirichlet = np.tile(mask.ravel(), 3)
    return MixedSpace(
        patch=patch,
        nel=nel,
        p=p,
        continuity=continuity,
        vel=vel,
        pres=pres,
        quad=quad,
        nq=rule.npts,
        x=x,
        jinv=np.linalg.inv(J),
        wdet=det * w,
        faces=faces,
        dirichlet=dirichlet,
    )


# ---------------------------------------------------------------------------
# evaluation and integration on the quadrature grid


def eval_field(ms: MixedSpace, coeffs, which="v", grad=True):
    """Values and physical gradients of a discrete field on the quadrature grid.

    ``coeffs`` is (n,) for a scalar field or (3 * n_vs,) for velocity; the
    returned values are (Q1, Q2, Q3[, 3]) and gradients carry one more
    trailing axis of length 3 (``grad[..., i, m] = d u_i / d x_m``).
    """
    S = ms.space(which)
    C = np.asarray(coeffs, dtype=float)
    vector = C.size == 3 * S.dim
    C = C.reshape((3,) + S.shape) if vector else C.reshape(S.shape)
    C = np.moveaxis(C, 0, -1) if vector else C
    val = contract(S.B, C)
    if not grad:
        return val
    gpar = [
        contract([S.dB[0], S.B[1], S.B[2]], C),
        contract([S.B[0], S.dB[1], S.B[2]], C),
        contract([S.B[0], S.B[1], S.dB[2]], C),
    ]
    gpar = np.stack(gpar, axis=-1)  # (..., [3,] k)
    if vector:
        g = np.einsum("...ik,...km->...im", gpar, ms.jinv)
    else:
        g = np.einsum("...k,...km->...m", gpar, ms.jinv)
    return val, g


def integrate_test(ms: MixedSpace, which, source=None, flux=None):
    """``int N_A source dOmega + int grad N_A . flux dOmega`` for every basis function.

    ``source`` is (Q1,Q2,Q3) and ``flux`` (Q1,Q2,Q3,3); both already
    multiplied by the volume weights ``wdet``. Returns the coefficient
    tensor flattened to (dim,).
    """
    S = ms.space(which)
    out = np.zeros(S.shape)
    BT = [b.T for b in S.B]
    if source is not None:
        out += contract(BT, source)
    if flux is not None:
        # parametric flux G_k = sum_m jinv[k, m] F_m
        G = np.einsum("...km,...m->...k", ms.jinv, flux)
        dBT = [d.T for d in S.dB]
        out += contract([dBT[0], BT[1], BT[2]], G[..., 0])
        out += contract([BT[0], dBT[1], BT[2]], G[..., 1])
        out += contract([BT[0], BT[1], dBT[2]], G[..., 2])
    return out.ravel()


def face_integrate_test(ms: MixedSpace, face, values, which="v"):
    """``int_face N_A values dGamma`` scattered into a (dim,) or (dim, k) array."""
    S = ms.space(which)
    t0, t1 = face.tangential
    kv0 = S.basis.knot_vectors[t0]
    kv1 = S.basis.knot_vectors[t1]
    B0 = collocation_matrix(kv0, face.params[0])
    B1 = collocation_matrix(kv1, face.params[1])
    weighted = values * (face.dgamma[..., None] if values.ndim == 3 else face.dgamma)
    face_vals = np.tensordot(B0.T, weighted, axes=(1, 0))
    face_vals = np.moveaxis(np.tensordot(B1.T, face_vals, axes=(1, 1)), 0, 1)
    out = np.zeros(S.shape + values.shape[2:])
    idx = [slice(None)] * 3
    idx[face.axis] = 0 if face.side == 0 else S.shape[face.axis] - 1
    out[tuple(idx)] = face_vals
    return out.reshape((S.dim,) + values.shape[2:])


# ---------------------------------------------------------------------------
# element-level tables and sparse patterns


def element_indices(ms: MixedSpace, which):
    """Global scalar indices of the local functions of every element, (E, A)."""
    key = ("eidx", which)
    if key not in ms._cache:
        S = ms.space(which)
        n1, n2, n3 = ms.nel
        e1, e2, e3 = np.meshgrid(np.arange(n1), np.arange(n2), np.arange(n3), indexing="ij")
        p1, p2, p3 = (kv.degree + 1 for kv in S.basis.knot_vectors)
        a1, a2, a3 = np.meshgrid(np.arange(p1), np.arange(p2), np.arange(p3), indexing="ij")
        i1 = S.offsets[0][e1.ravel()][:, None] + a1.ravel()[None, :]
        i2 = S.offsets[1][e2.ravel()][:, None] + a2.ravel()[None, :]
        i3 = S.offsets[2][e3.ravel()][:, None] + a3.ravel()[None, :]
        ms._cache[key] = np.ravel_multi_index((i1, i2, i3), S.shape)
    return ms._cache[key]


def element_ids(ms: MixedSpace):
    n1, n2, n3 = ms.nel
    e = np.arange(n1 * n2 * n3)
    return np.unravel_index(e, (n1, n2, n3))


def element_basis(ms: MixedSpace, which, elems):
    """Basis values (Ec, Q, A) and parametric gradients (Ec, 3, Q, A) for ``elems``."""
    S = ms.space(which)
    e1, e2, e3 = (np.asarray(a)[elems] for a in element_ids(ms))
    b = [S.local[0][e1], S.local[1][e2], S.local[2][e3]]
    d = [S.dlocal[0][e1], S.dlocal[1][e2], S.dlocal[2][e3]]
    Ec = len(e1)
    nq = ms.nq

    def prod(f0, f1, f2):
        t = np.einsum("eia,ejb,ekc->eijkabc", f0, f1, f2, optimize=True)
        return t.reshape(Ec, nq**3, -1)

    N = prod(*b)
    dN = np.stack([prod(d[0], b[1], b[2]), prod(b[0], d[1], b[2]), prod(b[0], b[1], d[2])], axis=1)
    return N, dN


def physical_gradients(dN, jinv_e):
    """Map parametric gradients (Ec, 3, Q, A) with jinv (Ec, Q, 3, 3) to physical ones."""
    return np.einsum("ekqa,eqkm->emqa", dN, jinv_e, optimize=True)


class Pattern:
    """CSR sparsity pattern of a scalar element-coupling block with a scatter map."""

    def __init__(self, rows_e, cols_e, nrows, ncols):
        E, A = rows_e.shape
        B = cols_e.shape[1]
        r = np.broadcast_to(rows_e[:, :, None], (E, A, B)).ravel()
        c = np.broadcast_to(cols_e[:, None, :], (E, A, B)).ravel()
        keys = r.astype(np.int64) * ncols + c
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.scatter = inv.reshape(E, A * B)
        self.indices = (ukeys % ncols).astype(np.int32)
        row_of = ukeys // ncols
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(row_of, minlength=nrows))]).astype(np.int64)
        self.shape = (nrows, ncols)
        self.nnz = ukeys.size

    def assemble(self, elem_vals, elems=None, out=None):
        """Add element matrices (Ec, A, B) into a data array of length nnz."""
        if out is None:
            out = np.zeros(self.nnz)
        idx = self.scatter if elems is None else self.scatter[elems]
        out += np.bincount(idx.ravel(), weights=elem_vals.ravel(), minlength=self.nnz)
        return out

    def matrix(self, data):
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def pattern(ms: MixedSpace, rows, cols) -> Pattern:
    key = ("pattern", rows, cols)
    if key not in ms._cache:
        S_r, S_c = ms.space(rows), ms.space(cols)
        ms._cache[key] = Pattern(element_indices(ms, rows), element_indices(ms, cols), S_r.dim, S_c.dim)
    return ms._cache[key]


def element_chunks(ms: MixedSpace, target_bytes=64e6):
    """Split the element range into batches bounded by a working-set estimate."""
    A = max(ms.vel.basis.knot_vectors[0].degree + 1, 1) ** 3
    per_elem = ms.nq**3 * A * 8 * 12
    size = max(1, int(target_bytes // per_elem))
    E = ms.nel_total
    return [np.arange(s, min(s + size, E)) for s in range(0, E, size)]


def mass_matrix(ms: MixedSpace, which="v"):
    """Scalar mass matrix ``int N_A N_B dOmega`` (CSR)."""
    key = ("mass", which)
    if key not in ms._cache:
        pat = pattern(ms, which, which)
        wdet_e = ms.to_elements(ms.wdet)
        data = np.zeros(pat.nnz)
        for elems in element_chunks(ms):
            N, _ = element_basis(ms, which, elems)
            Nw = N * wdet_e[elems][:, :, None]
            pat.assemble(np.matmul(Nw.transpose(0, 2, 1), N), elems, data)
        ms._cache[key] = pat.matrix(data)
    return ms._cache[key]


# ---------------------------------------------------------------------------
# projections and Dirichlet data


def l2_project(ms: MixedSpace, f, which="v", t=0.0, fixed=None):
    """L2 projection of ``f(x, t)`` onto a scalar space, componentwise for vectors.

    Args:
        ms: mixed space.
        f: callable on point arrays (..., 3) returning (...) or (..., 3).
        which: ``'v'`` (velocity scalar space, vector ``f``) or ``'p'``.
        fixed: optional ``(mask, values)`` over the returned coefficient
            vector; masked coefficients are held at ``values`` and the rest
            minimize the L2 error.

    Returns:
        Coefficients shaped like the target field: (3 * n_vs,) for vector
        ``f`` and (n,) for scalar ``f``.
    """
    vals = np.asarray(f(ms.x, t), dtype=float)
    vector = vals.ndim == 4
    M = mass_matrix(ms, which)
    n = M.shape[0]
    comps = [vals[..., i] for i in range(3)] if vector else [vals]
    rhs = np.stack([integrate_test(ms, which, source=c * ms.wdet) for c in comps])
    if fixed is None:
        solver = linsolve.factorize(M)
        out = np.stack([solver.solve(r) for r in rhs])
        return out.ravel() if vector else out[0]
    mask, values = fixed
    mask = np.asarray(mask).reshape(len(comps), n)
    values = np.asarray(values, dtype=float).reshape(len(comps), n)
    out = np.empty((len(comps), n))
    for i, r in enumerate(rhs):
        fr = np.nonzero(~mask[i])[0]
        fx = np.nonzero(mask[i])[0]
        out[i, fx] = values[i, fx]
        if fr.size:
            b = r[fr] - M[fr][:, fx] @ values[i, fx]
            out[i, fr] = linsolve.factor_solve(M[fr][:, fr].tocsc(), b)
    return out.ravel() if vector else out[0]


def apply_dirichlet(ms: MixedSpace, g, t: float) -> np.ndarray:
    """Velocity coefficients on Dirichlet DOFs from a face-restricted L2 projection of ``g``.

    Returns a full (n_v,) vector that is zero off the Dirichlet set. A
    ``g`` of ``None`` means homogeneous no-slip.
    """
    out = np.zeros(ms.n_v)
    if g is None or not ms.dirichlet.any():
        return out
    n_vs = ms.n_vs
    bnd = np.nonzero(ms.dirichlet[:n_vs])[0]
    pos = -np.ones(n_vs, dtype=np.int64)
    pos[bnd] = np.arange(bnd.size)
    rows, cols, data = [], [], []
    rhs = np.zeros((bnd.size, 3))
    S = ms.vel
    for face in ms.faces:
        if face.kind != DIRICHLET:
            continue
        t0, t1 = face.tangential
        B0 = collocation_matrix(S.basis.knot_vectors[t0], face.params[0])
        B1 = collocation_matrix(S.basis.knot_vectors[t1], face.params[1])
        # face trace functions: tensor product over the two tangential axes
        Mf = np.einsum("ai,bj,ab,ak,bl->ijkl", B0, B1, face.dgamma, B0, B1, optimize=True)
        gv = np.asarray(g(face.x, t), dtype=float)
        rf = face_integrate_test(ms, face, gv)
        idx = [slice(None)] * 3
        idx[face.axis] = 0 if face.side == 0 else S.shape[face.axis] - 1
        grid = np.arange(n_vs).reshape(S.shape)[tuple(idx)]
        gl = pos[grid.ravel()]
        n0, n1 = grid.shape
        Mf = Mf.reshape(n0 * n1, n0 * n1)
        rr, cc = np.meshgrid(gl, gl, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        data.append(Mf.ravel())
        rhs += rf[bnd]
    Mb = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(bnd.size,) * 2)
    solver = linsolve.factorize(Mb)
    for i in range(3):
        out[i * n_vs + bnd] = solver.solve(rhs[:, i])
    return out


def eval_at_points(ms: MixedSpace, coeffs, which, xis) -> np.ndarray:
    """Discrete field values at parametric points ``xis`` (m, 3).

    Returns (m, 3) for velocity coefficients and (m,) for pressure.
    """
    space = ms.space(which)
    coeffs = np.asarray(coeffs, dtype=float)
    C = coeffs.reshape(3, space.dim) if which == "v" else coeffs.reshape(1, space.dim)
    out = np.empty((len(xis), C.shape[0]))
    for k, xi in enumerate(np.asarray(xis, dtype=float)):
        vals, _, idx = eval_tensor(space.basis, xi)
        out[k] = C[:, idx] @ vals
    return out if which == "v" else out[:, 0]
