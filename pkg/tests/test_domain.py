import numpy as np
import pytest
from hypothesis import given, strategies as st

from monostencil.domain import Ball, Box, LShape, make_domain
from monostencil.errors import ContractViolation

DOMAINS = ["disk2", "lshape2", "sphere3", "lshape3"]


def march(domain, origin, direction, step=1e-5):
    """First parameter t at which origin + t u leaves the open domain."""
    t = np.arange(step, 4.0, step)
    pts = origin + t[:, None] * direction
    out = ~domain.contains(pts)
    return t[np.argmax(out)]


def test_contains_examples():
    disk = Ball(2)
    assert disk.contains([0.0, 0.0])
    assert not disk.contains([1.0, 0.0])
    assert not LShape(2).contains([0.5, 0.5])
    assert LShape(2).contains([-0.5, 0.5])
    assert not LShape(3).contains([0.5, 0.0, 0.5])


def test_dist_boundary_examples():
    disk = Ball(2)
    assert disk.dist_boundary([0.0, 0.0]) == pytest.approx(1.0)
    assert disk.dist_boundary([0.5, 0.0]) == pytest.approx(0.5)
    assert LShape(2).dist_boundary([-0.5, -0.5]) == pytest.approx(0.5)
    # near the reentrant corner the corner itself is closest
    assert LShape(2).dist_boundary([0.1, -0.1]) == pytest.approx(0.1)
    assert LShape(2).dist_boundary([-0.2, -0.1]) == pytest.approx(np.hypot(0.2, 0.1))


def test_ray_hits_examples():
    assert np.allclose(Ball(2).ray_first_hit([0.0, 0.0], [1.0, 0.0]), [1.0, 0.0])
    assert np.allclose(Ball(3).ray_first_hit([0.0, 0.0, 0.5], [0.0, 0.0, 1.0]), [0.0, 0.0, 1.0])
    u = np.array([1.0, 1.0]) / np.sqrt(2.0)
    hit = LShape(2).ray_first_hit([-0.5, -0.5], u)
    assert np.allclose(hit, [0.0, 0.0], atol=1e-12)
    assert np.linalg.norm(hit - np.array([-0.5, -0.5])) == pytest.approx(march(LShape(2), np.array([-0.5, -0.5]), u), abs=2e-5)


def test_ray_contract():
    with pytest.raises(ContractViolation):
        Ball(2).ray_first_hit([2.0, 0.0], [1.0, 0.0])
    with pytest.raises(ContractViolation):
        Ball(2).ray_first_hit([0.0, 0.0], [2.0, 0.0])


def test_projection_examples():
    disk = Ball(2)
    assert np.allclose(disk.project_to_boundary([0.0, 0.0], [2.0, 0.0]), [1.0, 0.0])
    assert np.array_equal(disk.project_to_boundary([0.0, 0.0], [0.3, 0.2]), [0.3, 0.2])
    xi = np.array([-0.5, -0.6])
    xj = np.array([0.5, 0.4])
    got = LShape(2).project_to_boundary(xi, xj)
    u = (xj - xi) / np.linalg.norm(xj - xi)
    assert np.linalg.norm(got - xi) == pytest.approx(march(LShape(2), xi, u), abs=2e-5)
    # the ray passes x = 0 at y = -0.1 (still inside) and enters the notch through y = 0
    assert np.allclose(got, [0.1, 0.0], atol=1e-12)


def test_bounding_boxes():
    b = Ball(2).bounding_box(0.4)
    assert np.allclose(b.lo, -1.4) and np.allclose(b.hi, 1.4)
    box = Box([-1.0, -2.0], [1.0, 0.5])
    assert np.array_equal(box.bounding_box(0.0).lo, [-1.0, -2.0])
    assert np.array_equal(box.bounding_box(0.0).hi, [1.0, 0.5])
    b3 = LShape(3).bounding_box(0.2)
    assert np.allclose(b3.lo, -1.2) and np.allclose(b3.hi, 1.2)


def test_unknown_domain():
    with pytest.raises(ContractViolation):
        make_domain("torus")


def _interior_sample(domain, rng, n):
    pts = rng.uniform(-1, 1, size=(4 * n, domain.dim))
    return pts[domain.contains(pts)][:n]


@pytest.mark.parametrize("name", DOMAINS)
def test_ray_hits_on_boundary_with_open_segment(name):
    dom = make_domain(name)
    rng = np.random.default_rng(3)
    origins = _interior_sample(dom, rng, 100)
    dirs = rng.normal(size=origins.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    hits = dom.ray_first_hit(origins, dirs)
    assert np.max(np.abs(dom.signed_distance(hits))) <= 1e-12
    for frac in (0.25, 0.5, 0.9, 0.999):
        assert np.all(dom.contains(origins + frac * (hits - origins)))


@pytest.mark.parametrize("name", ["lshape2", "lshape3"])
def test_ray_hits_match_marching(name):
    dom = make_domain(name)
    rng = np.random.default_rng(11)
    origins = _interior_sample(dom, rng, 25)
    dirs = rng.normal(size=origins.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    hits = dom.ray_first_hit(origins, dirs)
    for o, u, h in zip(origins, dirs, hits):
        assert np.linalg.norm(h - o) == pytest.approx(march(dom, o, u), abs=2e-5)


@pytest.mark.parametrize("name", DOMAINS)
def test_inside_implies_positive_distance(name):
    dom = make_domain(name)
    pts = np.random.default_rng(5).uniform(-1.3, 1.3, size=(5000, dom.dim))
    inside = dom.contains(pts)
    assert np.all(dom.dist_boundary(pts[inside]) > 0)


@given(st.integers(0, 10**6), st.sampled_from(DOMAINS))
def test_projection_idempotent(seed, name):
    dom = make_domain(name)
    rng = np.random.default_rng(seed)
    xi = _interior_sample(dom, rng, 1)
    if len(xi) == 0:
        return
    xi = xi[0]
    xj = xi + rng.normal(size=dom.dim) * 0.8
    once = dom.project_to_boundary(xi, xj)
    assert np.array_equal(dom.project_to_boundary(xi, once), once)
    assert dom.contains_closure(once)


@pytest.mark.parametrize("name", DOMAINS + ["box"])
def test_nearest_boundary_point_realises_distance(name):
    dom = make_domain(name)
    pts = np.random.default_rng(8).uniform(-1.8, 1.8, size=(4000, dom.dim))
    foot = dom.nearest_boundary_point(pts)
    assert np.allclose(np.linalg.norm(foot - pts, axis=1), np.abs(dom.signed_distance(pts)), atol=1e-12)
    assert np.max(np.abs(dom.signed_distance(foot))) <= 1e-12
