import numpy as np
import pytest

from nsgalpha.geometry import (
    DIRICHLET,
    FACES,
    NEUMANN,
    boundary_faces,
    gauss_rule,
    geometry_at,
    invert_map,
    make_cube_patch,
    make_pipe_patch,
    map_grid,
    quadrature_for,
    span_quadrature,
)
from nsgalpha.splines import make_open_knots


def test_gauss_rule_is_exact_to_degree_2q_minus_1():
    rule = gauss_rule(4)
    for k in range(8):
        exact = 1.0 / (k + 1)  # on [0, 1]
        assert abs(np.sum(rule.weights * rule.points**k) - exact) < 1e-15
    assert quadrature_for(4).npts == 6


def test_span_quadrature_covers_unit_interval():
    kv = make_open_knots(5, 3, 2)
    pts, w = span_quadrature(kv, gauss_rule(3))
    assert pts.size == 15
    assert abs(w.sum() - 1.0) < 1e-14
    assert np.all(np.diff(pts) > 0)


def test_cube_map_is_affine():
    patch = make_cube_patch([-1, -2, 0], [1, 2, 3])
    x, J, det = geometry_at(patch, np.array([0.25, 0.5, 1.0]))
    np.testing.assert_allclose(x, [-0.5, 0.0, 3.0], atol=1e-15)
    np.testing.assert_allclose(J, np.diag([2.0, 4.0, 3.0]), atol=1e-14)
    assert abs(det - 24.0) < 1e-12


def test_pipe_wall_lies_on_circle():
    R = 0.3
    patch = make_pipe_patch(R, 1.0)
    u = np.linspace(0, 1, 41)
    for axis in (0, 1):
        for side in (0.0, 1.0):
            xis = [u, u, np.array([0.2, 0.9])]
            xis[axis] = np.array([side])
            x, _ = map_grid(patch, xis)
            r2 = x[..., 0] ** 2 + x[..., 1] ** 2
            assert np.abs(r2 - R**2).max() < 1e-12 * R**2


def test_pipe_cross_section_area_and_length():
    R, L = 0.3, 1.7
    patch = make_pipe_patch(R, L)
    # the integrand is rational; a high-order rule converges spectrally
    kv = make_open_knots(4, 2, 1)
    pts, w = span_quadrature(kv, gauss_rule(20))
    x, J = map_grid(patch, [pts, pts, np.array([0.5])])
    det = np.linalg.det(J)[:, :, 0]
    area = np.einsum("i,j,ij->", w, w, det) / L
    assert abs(area / (np.pi * R**2) - 1.0) < 1e-10
    assert np.all(det > 0)


def test_invert_map_round_trip():
    patch = make_pipe_patch(0.3, 1.0)
    rng = np.random.default_rng(3)
    for xi in rng.uniform(0.05, 0.95, (6, 3)):
        x, _, _ = geometry_at(patch, xi)
        np.testing.assert_allclose(invert_map(patch, x), xi, atol=1e-10)


def test_face_normals_are_outward_unit():
    patch = make_pipe_patch(0.3, 1.0)
    kv = make_open_knots(2, 2, 1)
    rule = span_quadrature(kv, gauss_rule(3))
    spec = {f: (NEUMANN if f[0] == 2 else DIRICHLET) for f in FACES}
    faces = boundary_faces(patch, spec, [rule, rule, rule])
    assert len(faces) == 6
    for f in faces:
        np.testing.assert_allclose(np.linalg.norm(f.normal, axis=-1), 1.0, atol=1e-13)
        if f.axis == 2:
            np.testing.assert_allclose(f.normal[..., 2], 1.0 if f.side else -1.0, atol=1e-13)
        else:
            radial = f.x[..., :2] / np.linalg.norm(f.x[..., :2], axis=-1, keepdims=True)
            np.testing.assert_allclose(np.sum(f.normal[..., :2] * radial, axis=-1), 1.0, atol=1e-12)
    # end-cap areas
    caps = [f.dgamma.sum() for f in faces if f.axis == 2]
    np.testing.assert_allclose(caps, np.pi * 0.09, rtol=1e-6)


def test_boundary_spec_must_be_complete():
    patch = make_cube_patch([0, 0, 0], [1, 1, 1])
    rule = span_quadrature(make_open_knots(1, 1, 0), gauss_rule(2))
    with pytest.raises(ValueError):
        boundary_faces(patch, {(0, 0): NEUMANN}, [rule] * 3)
