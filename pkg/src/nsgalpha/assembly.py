"""Galerkin residuals and consistent tangent of the mixed Navier-Stokes form.

Momentum residual for test function ``N_A e_i``::

    int N_A rho (vdot_i + v . grad v_i - f_i) + 2 mu eps(N_A e_i) : eps(v)
        - d_i N_A p  dOmega  -  int_{Gamma_h} N_A h_i dGamma

Continuity residual for pressure test function ``M_B``: ``int M_B div v``.
Residuals are evaluated by sum factorization on the tensor quadrature grid;
the tangent is assembled element by element into CSR blocks sharing one
scalar sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import NEUMANN
from .spaces import (
    MixedSpace,
    element_basis,
    element_chunks,
    eval_field,
    face_integrate_test,
    integrate_test,
    pattern,
    physical_gradients,
)


@dataclass(frozen=True)
class TangentFactors:
    """Chain-rule factors from the Newton unknowns to the stage values.

    ``c_vdot = d(stage vdot)/d vdot_{n+1}``, ``c_v = d(stage v)/d vdot_{n+1}``
    and ``c_p = d(stage p)/d p_{n+1}``. ``c_div`` scales the continuity
    rows and defaults to ``c_v``.
    """

    c_vdot: float
    c_v: float
    c_p: float
    c_div: float = None

    def __post_init__(self):
        if self.c_vdot <= 0 or self.c_p <= 0 or self.c_v < 0:
            raise ValueError("tangent factors must be positive")
        if self.c_div is None:
            object.__setattr__(self, "c_div", self.c_v)
        if self.c_div <= 0:
            raise ValueError("continuity factor must be positive")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite stage values")


def assemble_residual_full(ms: MixedSpace, mat, vdot, v, p, t, traction=None):
    """Momentum residual over all velocity DOFs (n_v,) and continuity residual (n_p,)."""
    _check_finite(vdot, v, p)
    n_vs = ms.n_vs
    a = eval_field(ms, vdot, "v", grad=False)
    u, gu = eval_field(ms, v, "v")
    ph = eval_field(ms, p, "p", grad=False)
    w = ms.wdet
    conv = np.einsum("...m,...im->...i", u, gu)
    src = a + conv
    if mat.body_force is not None:
        src = src - np.asarray(mat.body_force(ms.x, t))
    src = mat.rho * src * w[..., None]
    stress = mat.mu * (gu + np.swapaxes(gu, -1, -2))
    idx = np.arange(3)
    stress[..., idx, idx] -= ph[..., None]
    stress *= w[..., None, None]
    Rm = np.empty(ms.n_v)
    for i in range(3):
        Rm[i * n_vs:(i + 1) * n_vs] = integrate_test(ms, "v", source=src[..., i], flux=stress[..., i, :])
    if traction is not None:
        for face in ms.faces:
            if face.kind != NEUMANN:
                continue
            h = np.asarray(traction(face.x, t, face.normal), dtype=float)
            Rm -= face_integrate_test(ms, face, h).T.ravel()
    div = np.trace(gu, axis1=-2, axis2=-1)
    Rc = integrate_test(ms, "p", source=div * w)
    return Rm, Rc


def assemble_residual(ms: MixedSpace, mat, vdot, v, p, t, traction=None):
    """``(Rm, Rc)`` with Dirichlet rows removed from ``Rm``."""
    Rm, Rc = assemble_residual_full(ms, mat, vdot, v, p, t, traction)
    return Rm[ms.free], Rc


def _block_gather(pat):
    """Index arrays interleaving three same-pattern blocks into one block row."""
    lens = np.diff(pat.indptr)
    nrows = lens.size
    jj = np.concatenate([np.repeat(np.arange(3), l) for l in lens]) if nrows else np.zeros(0, int)
    starts = np.repeat(pat.indptr[:-1], 3 * lens)
    within = np.concatenate([np.tile(np.arange(l), 3) for l in lens]) if nrows else np.zeros(0, int)
    return jj, starts + within


def _vv_structure(ms: MixedSpace):
    key = "vv_structure"
    if key not in ms._cache:
        pat = pattern(ms, "v", "v")
        n = ms.n_vs
        lens = np.diff(pat.indptr)
        jj, pp = _block_gather(pat)
        cols = pat.indices[pp] + jj * n
        indptr_row = np.concatenate([[0], np.cumsum(3 * lens)])
        nnz_row = indptr_row[-1]
        indices = np.concatenate([cols, cols, cols])
        indptr = np.concatenate([indptr_row[:-1] + k * nnz_row for k in range(3)] + [[3 * nnz_row]])
        ms._cache[key] = (jj, pp, indices.astype(np.int32), indptr.astype(np.int64))
    return ms._cache[key]


def _tangent_constants(ms: MixedSpace):
    """State-independent tangent pieces, cached on ``ms``.

    Returns mass ``M``, Laplacian ``L`` and ``H[i][j][A, B] = int d_j N_A d_i N_B``
    (the cross-viscous block of row i, column j) on the scalar velocity
    pattern, and the CSR matrix ``B[A, B] = int d_i N_A M_B`` stacked over ``i``.
    """
    key = "tangent_constants"
    if key not in ms._cache:
        pat_vv = pattern(ms, "v", "v")
        pat_vp = pattern(ms, "v", "p")
        w_e = ms.to_elements(ms.wdet)
        jinv_e = ms.to_elements(ms.jinv)
        nnz = pat_vv.nnz
        M = np.zeros(nnz)
        L = np.zeros(nnz)
        H = [[np.zeros(nnz) for _ in range(3)] for _ in range(3)]
        grad_p = [np.zeros(pat_vp.nnz) for _ in range(3)]
        for elems in element_chunks(ms):
            N, dN = element_basis(ms, "v", elems)
            dN = physical_gradients(dN, jinv_e[elems])
            we = w_e[elems]
            Nw = N * we[:, :, None]
            pat_vv.assemble(np.matmul(Nw.transpose(0, 2, 1), N), elems, M)
            dNw = dN * we[:, None, :, None]
            for i in range(3):
                for j in range(3):
                    Hij = np.matmul(dNw[:, j].transpose(0, 2, 1), dN[:, i])
                    pat_vv.assemble(Hij, elems, H[i][j])
                    if i == j:
                        pat_vv.assemble(Hij, elems, L)
            Mp, _ = element_basis(ms, "p", elems)
            for i in range(3):
                pat_vp.assemble(np.matmul(dNw[:, i].transpose(0, 2, 1), Mp), elems, grad_p[i])
        Bvp = sp.vstack([pat_vp.matrix(g) for g in grad_p]).tocsr()
        ms._cache[key] = (M, L, H, Bvp)
    return ms._cache[key]


def _tangent_layout(ms: MixedSpace, Bvp, full):
    """Index map from ``[Kvv data; G data; D data]`` to the final CSR tangent.

    The blocks are assembled once with 1-based position codes as values; the
    codes surviving ``bmat`` and the Dirichlet slicing give the gather map.
    """
    key = ("tangent_layout", bool(full))
    if key not in ms._cache:
        _, _, indices, indptr = _vv_structure(ms)
        n_v = ms.n_v
        n_kvv = indices.size
        Kc = sp.csr_matrix((np.arange(1, n_kvv + 1, dtype=float), indices, indptr), shape=(n_v, n_v))
        Bc = sp.csr_matrix((np.arange(1, Bvp.nnz + 1, dtype=float), Bvp.indices, Bvp.indptr), shape=Bvp.shape)
        Gc = Bc.copy()
        Gc.data += n_kvv
        Dc = Bc.T.tocsr()
        Dc.data += n_kvv + Bvp.nnz
        K = sp.bmat([[Kc, Gc], [Dc, None]], format="csr")
        if not (full or ms.n_v_free == n_v):
            keep = np.concatenate([ms.free, n_v + np.arange(ms.n_p)])
            K = K[keep][:, keep]
        K.sort_indices()
        src = K.data.astype(np.int64) - 1
        ms._cache[key] = (src, K.indices.copy(), K.indptr.copy(), K.shape)
    return ms._cache[key]


def assemble_tangent(ms: MixedSpace, mat, vdot, v, p, t, factors: TangentFactors, full=False):
    """Consistent tangent of ``(Rm, Rc)`` w.r.t. ``(vdot_{n+1}, p_{n+1})``.

    Stage arguments ``vdot, v, p`` are the values at which the residual is
    evaluated. Returns a CSR matrix over the unknowns ``[free velocity;
    pressure]``; with ``full=True`` the Dirichlet rows/columns are kept.
    Only the convective terms are integrated per call; the rest is cached.
    """
    _check_finite(vdot, v, p)
    rho, mu = mat.rho, mat.mu
    cm, cv, cp = factors.c_vdot, factors.c_v, factors.c_p
    M, L, H, Bvp = _tangent_constants(ms)
    pat_vv = pattern(ms, "v", "v")
    u, gu = eval_field(ms, v, "v")
    u_e = ms.to_elements(u)
    gu_e = ms.to_elements(gu)
    w_e = ms.to_elements(ms.wdet)
    jinv_e = ms.to_elements(ms.jinv)
    nnz = pat_vv.nnz
    # diag: cm*rho*M + cv*(rho*C + mu*L) ; cross[i][j]: cv*(mu*H_ji + rho*P_ij)
    C = np.zeros(nnz)
    P = [[np.zeros(nnz) for _ in range(3)] for _ in range(3)]
    for elems in element_chunks(ms):
        N, dN = element_basis(ms, "v", elems)
        dN = physical_gradients(dN, jinv_e[elems])
        Nw = N * w_e[elems][:, :, None]
        NwT = Nw.transpose(0, 2, 1)
        adv = np.einsum("eqm,emqa->eqa", u_e[elems], dN, optimize=True)
        pat_vv.assemble(np.matmul(NwT, adv), elems, C)
        gue = gu_e[elems]
        for i in range(3):
            for j in range(3):
                # P_ij[A, B] = int N_A N_B d_j v_i
                Pij = np.matmul((Nw * gue[:, :, i, j][:, :, None]).transpose(0, 2, 1), N)
                pat_vv.assemble(Pij, elems, P[i][j])
    diag = cm * rho * M + cv * (rho * C + mu * L)
    jj, pp, _, _ = _vv_structure(ms)
    rows = []
    for i in range(3):
        blocks = np.stack([cv * (mu * H[i][j] + rho * P[i][j]) + (diag if i == j else 0.0) for j in range(3)])
        rows.append(blocks[jj, pp])
    vals = np.concatenate(rows + [-cp * Bvp.data, factors.c_div * Bvp.data])
    src, indices, indptr, shape = _tangent_layout(ms, Bvp, full)
    return sp.csr_matrix((vals[src], indices, indptr), shape=shape)
