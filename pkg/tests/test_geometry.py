import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geodp.errors import CutLocus, SingularProjection
from geodp.geometry import (
    Circle,
    FlatTorus2,
    Sphere2,
    ambient_derivative,
    flow_step,
    get_field,
    get_manifold,
    linear_field,
)

MANIFOLDS = [Circle(), Sphere2(), FlatTorus2()]


def _rng(seed=0):
    return np.random.default_rng(seed)


def _random_tangent(m, x, rng, scale=1.0):
    w = m.tangent_project(x, rng.standard_normal(size=x.shape))
    n = np.linalg.norm(w, axis=-1, keepdims=True)
    n = np.where(n < 1e-12, 1.0, n)
    return w / n * scale


@pytest.mark.parametrize("m", MANIFOLDS, ids=lambda m: m.name)
def test_projection_idempotent_and_on_manifold(m):
    rng = _rng(1)
    p = rng.standard_normal(size=(200, m.ambient_dim)) * 2.0 + 0.5
    q = m.project(p)
    assert np.max(m.constraint_violation(q)) < 1e-12
    np.testing.assert_allclose(m.project(q), q, atol=1e-14)


@pytest.mark.parametrize("m", MANIFOLDS, ids=lambda m: m.name)
def test_tangent_projection_kills_normal_component(m):
    rng = _rng(2)
    x = m.random_points(100, rng)
    w = rng.standard_normal(size=x.shape)
    tw = m.tangent_project(x, w)
    assert np.max(m.tangency_defect(x, tw)) < 1e-12
    # idempotent
    np.testing.assert_allclose(m.tangent_project(x, tw), tw, atol=1e-13)


@pytest.mark.parametrize("m", MANIFOLDS, ids=lambda m: m.name)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.floats(1e-3, 3.0))
def test_exp_log_roundtrip(m, seed, r):
    rng = _rng(seed)
    r = min(r, m.injectivity_radius * 0.95)
    x = m.random_points(1, rng)[0]
    v = _random_tangent(m, x, rng, scale=r)
    y = m.exp(x, v)
    assert m.constraint_violation(y) < 1e-12
    back = m.log(x, y)
    np.testing.assert_allclose(back, v, atol=1e-9)
    assert abs(m.distance(x, y) - np.linalg.norm(v)) < 1e-9


@pytest.mark.parametrize("m", MANIFOLDS, ids=lambda m: m.name)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_transport_isometry_and_inverse(m, seed):
    rng = _rng(seed)
    x, y = m.random_points(2, rng)
    if m.distance(x, y) >= m.injectivity_radius - 1e-6:
        return
    v = _random_tangent(m, x, rng, scale=rng.uniform(0.1, 2.0))
    moved = m.transport(x, y, v)
    assert m.tangency_defect(y, moved) < 1e-10
    assert abs(np.linalg.norm(moved) - np.linalg.norm(v)) < 1e-10
    np.testing.assert_allclose(m.transport(y, x, moved), v, atol=1e-9)


@pytest.mark.parametrize("m", MANIFOLDS, ids=lambda m: m.name)
def test_triangle_inequality(m):
    rng = _rng(5)
    x = m.random_points(200, rng)
    y = m.random_points(200, rng)
    z = m.random_points(200, rng)
    # arccos near 1 carries ~sqrt(eps) roundoff, hence the 1e-7 slack
    assert np.all(m.distance(x, z) <= m.distance(x, y) + m.distance(y, z) + 1e-7)
    assert np.all(m.distance(x, y) >= 0.0)
    assert np.max(m.distance(x, x)) < 1e-7


def test_cut_locus_guard_circle():
    m = Circle()
    x = np.array([1.0, 0.0])
    y = -x  # antipodal
    with pytest.raises(CutLocus):
        m.log(x, y)
    with pytest.raises(CutLocus):
        m.transport(x, y, np.array([0.0, 1.0]))


def test_singular_projection():
    with pytest.raises(SingularProjection):
        Circle().project(np.zeros(2))
    with pytest.raises(SingularProjection):
        Sphere2().project(np.array([1e-12, 0.0, 0.0]))


def test_sphere_transport_around_equator():
    """Transport along a quarter of the equator rotates the frame consistently:
    the tangent 'east' direction maps to 'east' at the target, 'north' stays
    'north' (closed-form holonomy of the round sphere along a geodesic)."""
    m = Sphere2()
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    east = np.array([0.0, 1.0, 0.0])  # tangent at x along the equator
    north = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(m.transport(x, y, east), np.array([-1.0, 0.0, 0.0]), atol=1e-12)
    np.testing.assert_allclose(m.transport(x, y, north), north, atol=1e-12)


def test_torus_distance_is_product_metric():
    m = FlatTorus2()
    a, b = 0.7, 1.1
    x = np.array([1.0, 0.0, 1.0, 0.0])
    y = np.array([np.cos(a), np.sin(a), np.cos(b), np.sin(b)])
    assert abs(m.distance(x, y) - np.hypot(a, b)) < 1e-12


def test_ambient_derivative_jacobian_vs_fd():
    m = Circle()
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    V = linear_field("rot", A, tangent=True)
    V_fd = type(V)(id="rot_fd", eval=V.eval, jacobian=None, tangency_certified=True)
    rng = _rng(3)
    x = m.random_points(50, rng)
    exact = ambient_derivative(m, V, V, 0.0, x)
    approx = ambient_derivative(m, V_fd, V_fd, 0.0, x)
    np.testing.assert_allclose(approx, exact, atol=1e-8)
    # rot(rot(x)) = -x: the covariant correction points inward
    np.testing.assert_allclose(exact, -x, atol=1e-12)


def test_flow_step_circle_rotation():
    m = Circle()
    V = get_field(m, "rot")
    x = np.array([1.0, 0.0])
    h = 0.05
    y = flow_step(m, V, 0.0, x, h)
    np.testing.assert_allclose(y, [np.cos(h), np.sin(h)], atol=1e-10)
    # large parameters are split into substeps, staying accurate
    y2 = flow_step(m, V, 0.0, x, 1.0)
    np.testing.assert_allclose(y2, [np.cos(1.0), np.sin(1.0)], atol=1e-6)
    # zero step is the identity
    np.testing.assert_allclose(flow_step(m, V, 0.0, x, 0.0), x)


def test_field_catalog():
    m = Circle()
    rot = get_field(m, "rot")
    x = np.array([[0.0, 1.0]])
    np.testing.assert_allclose(rot(0.0, x), [[-1.0, 0.0]])
    half = get_field(m, "scale:0.5:rot")
    np.testing.assert_allclose(half(0.0, x), [[-0.5, 0.0]])
    z = get_field(m, "zero")
    np.testing.assert_allclose(z(0.0, x), [[0.0, 0.0]])
    with pytest.raises(KeyError):
        get_field(m, "rot_z")  # sphere-only id
    s = get_manifold("sphere2")
    rz = get_field(s, "rot_z")
    np.testing.assert_allclose(rz(0.0, np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0])
    t = get_manifold("torus2")
    r1 = get_field(t, "rot1")
    np.testing.assert_allclose(
        r1(0.0, np.array([1.0, 0.0, 1.0, 0.0])), [0.0, 1.0, 0.0, 0.0]
    )


def test_get_manifold_unknown():
    with pytest.raises(KeyError):
        get_manifold("klein_bottle")
