import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial import cKDTree

from monostencil.domain import Ball, Box, make_domain
from monostencil.errors import ContractViolation
from monostencil.geometry import HyperRect
from monostencil.pointcloud import (PointCloud, ProperConstants, adjust_proper, compute_separation,
                                    estimate_fill_distance, generate_cloud, halton_init, region_volume,
                                    validate_proper)
from monostencil.stencil.calibration import default_table, searching_delta

from helpers import brute_fill_distance


def _radical_inverse(i, base):
    # digit reversal done with fractions by hand
    out, f = 0.0, 1.0 / base
    while i:
        i, digit = divmod(i, base)
        out += digit * f
        f /= base
    return out


def test_proper_constant_defaults():
    c = ProperConstants()
    assert (c.c_h, c.c_zeta, c.c_kappa) == (1.0, 0.175, 0.25)


def test_halton_examples():
    pts = halton_init(3, HyperRect([0, 0], [1, 1]), skip=0)
    assert np.allclose(pts, [[1 / 2, 1 / 3], [1 / 4, 2 / 3], [3 / 4, 1 / 9]], atol=1e-15)
    one = halton_init(1, HyperRect([-1, -1], [1, 1]), skip=0)
    assert np.allclose(one, [[0.0, -1 / 3]], atol=1e-15)


def test_halton_bad_count():
    with pytest.raises(ContractViolation):
        halton_init(0, HyperRect([0, 0], [1, 1]))


@given(st.integers(1, 300), st.integers(0, 5000), st.sampled_from([2, 3]))
def test_halton_matches_digit_reversal_and_stays_in_box(count, skip, d):
    box = HyperRect([-2.0] * d, [0.5] * d)
    pts = halton_init(count, box, skip)
    assert pts.shape == (count, d)
    assert np.all(pts >= box.lo) and np.all(pts <= box.hi)
    k = count - 1
    want = [_radical_inverse(skip + k + 1, b) for b in (2, 3, 5)[:d]]
    assert np.allclose((pts[k] - box.lo) / (box.hi - box.lo), want, atol=1e-14)


def test_fill_distance_square_corners():
    sq = Box([0.0, 0.0], [1.0, 1.0])
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert estimate_fill_distance(corners, sq, 0.0, 0.05) == pytest.approx(np.sqrt(2) / 2, abs=1e-12)


def test_fill_distance_single_centre_point():
    disk = Ball(2)
    # lattice anchored at -1 with spacing 0.25 contains the boundary probes (+-1, 0)
    assert estimate_fill_distance(np.zeros((1, 2)), disk, 0.0, 0.25) == pytest.approx(1.0, abs=1e-12)


def test_fill_distance_empty_cloud():
    with pytest.raises(ContractViolation):
        estimate_fill_distance(np.empty((0, 2)), Ball(2), 0.1, 0.1)


@pytest.mark.parametrize("d", [2, 3])
def test_fill_distance_against_fine_grid(d, rng):
    dom = Ball(d)
    delta0 = 0.1
    n = 400 if d == 2 else 600
    box = dom.bounding_box(delta0)
    pts = rng.uniform(box.lo, box.hi, size=(n, d))
    spacing = 0.05
    est = estimate_fill_distance(pts, dom, delta0, spacing)
    fine = 0.0125 if d == 2 else 0.025
    axes = [np.arange(box.lo[k], box.hi[k] + 1e-12, fine) for k in range(d)]
    probes = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    probes = probes[dom.signed_distance(probes) <= delta0]
    oracle = max(brute_fill_distance(pts, chunk) for chunk in np.array_split(probes, 50))
    assert abs(est - oracle) <= spacing * np.sqrt(d)


def test_separation_examples():
    assert compute_separation(np.array([[0.0, 0.0], [0.2, 0.0]])) == pytest.approx(0.1)
    s = 0.3
    g = np.stack(np.meshgrid(np.arange(5) * s, np.arange(4) * s), -1).reshape(-1, 2)
    assert compute_separation(g) == pytest.approx(s / 2)
    with pytest.raises(ContractViolation):
        compute_separation(np.zeros((1, 2)))


@given(st.integers(0, 10**6), st.integers(2, 300), st.sampled_from([2, 3]))
def test_separation_against_pair_scan(seed, n, d):
    pts = np.random.default_rng(seed).uniform(-1, 1, size=(n, d))
    diff = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    diff[np.diag_indices(n)] = np.inf
    assert compute_separation(pts) == pytest.approx(0.5 * diff.min(), rel=1e-12)


def test_region_volume_disk_collar():
    # area of the disk of radius 1.2
    assert region_volume(Ball(2), 0.2) == pytest.approx(np.pi * 1.44, rel=5e-3)


@pytest.mark.parametrize("name,h", [("disk2", 0.05), ("lshape2", 0.05), ("sphere3", 0.15), ("lshape3", 0.15)])
def test_generated_cloud_is_proper(cloud_factory, name, h):
    dom, cloud = cloud_factory(name, h)
    delta0 = searching_delta(h, 1.0, default_table(dom.dim))
    rep = validate_proper(cloud, dom, delta0)
    assert rep.ok, rep
    assert cloud.fill_distance <= h
    # a finer lattice may see more, but never beyond half a coarse cell diagonal
    finer = estimate_fill_distance(cloud, dom, delta0, cloud.probe_spacing / 2)
    assert finer <= h + 0.5 * cloud.probe_spacing * np.sqrt(dom.dim)
    assert np.all(dom.contains(cloud.interior))
    assert not np.any(dom.contains(cloud.collar))
    assert np.all(dom.signed_distance(cloud.collar) < delta0)
    assert len(np.unique(cloud.points, axis=0)) == cloud.n_total


def test_disk_cloud_of_about_two_thousand_points(cloud_factory):
    dom, cloud = cloud_factory("disk2", 0.03)
    assert 1500 <= cloud.n_interior <= 5000
    delta0 = searching_delta(0.03, 1.0, default_table(2))
    assert validate_proper(cloud, dom, delta0).ok


def test_validate_flags_duplicate_point(cloud_factory):
    dom, cloud = cloud_factory("disk2", 0.05)
    delta0 = searching_delta(0.05, 1.0, default_table(2))
    pts = np.concatenate([cloud.points, cloud.points[:1]])
    rep = validate_proper(pts, dom, delta0, h=cloud.fill_distance)
    assert "ii" in rep.violated and not rep.ok


def test_validate_flags_point_near_boundary(cloud_factory):
    dom, cloud = cloud_factory("disk2", 0.05)
    h = cloud.fill_distance
    delta0 = searching_delta(0.05, 1.0, default_table(2))
    # replace the interior point nearest (1, 0) by one at distance 0.1 h from the circle
    pts = cloud.points.copy()
    k = int(np.argmin(np.linalg.norm(cloud.interior - [1.0, 0.0], axis=1)))
    pts[k] = [1.0 - 0.1 * h, 0.0]
    rep = validate_proper(pts, dom, delta0, h=h)
    assert "iii" in rep.violated


def test_adjust_keeps_proper_cloud_fixed(cloud_factory):
    dom, cloud = cloud_factory("disk2", 0.05)
    delta0 = searching_delta(0.05, 1.0, default_table(2))
    again = adjust_proper(cloud.points, dom, delta0, 0.05)
    assert np.array_equal(again.points, cloud.points)
    assert again.n_interior == cloud.n_interior


def test_adjust_merges_coincident_points(cloud_factory):
    dom, cloud = cloud_factory("disk2", 0.05)
    delta0 = searching_delta(0.05, 1.0, default_table(2))
    pts = np.concatenate([cloud.points, cloud.points[:1]])
    fixed = adjust_proper(pts, dom, delta0, 0.05)
    assert fixed.n_total <= len(pts) - 1
    assert fixed.separation >= 0.175 * fixed.fill_distance
    assert len(np.unique(fixed.points, axis=0)) == fixed.n_total


def test_generation_is_deterministic():
    dom = make_domain("lshape2")
    delta0 = searching_delta(0.08, 1.0, default_table(2))
    a = generate_cloud(dom, 0.08, delta0, skip=7)
    b = generate_cloud(dom, 0.08, delta0, skip=7)
    assert np.array_equal(a.points, b.points) and a.n_interior == b.n_interior
    c = generate_cloud(dom, 0.08, delta0, skip=8)
    assert a.n_total != c.n_total or not np.array_equal(a.points, c.points)


def test_nearest_neighbour_coverage(cloud_factory):
    # every interior point has another cloud point within 2 h
    dom, cloud = cloud_factory("sphere3", 0.15)
    dist, _ = cKDTree(cloud.points).query(cloud.interior, k=2)
    assert dist[:, 1].max() <= 2 * cloud.fill_distance


def test_save_load_roundtrip(tmp_path, cloud_factory):
    _, cloud = cloud_factory("lshape2", 0.05)
    path = tmp_path / "cloud.txt"
    cloud.save(path)
    head = path.read_text().splitlines()[0]
    assert head.startswith(f"# d=2 N={cloud.n_interior} M={cloud.n_total} h=")
    back = PointCloud.load(path)
    assert np.array_equal(back.points, cloud.points)
    assert back.n_interior == cloud.n_interior
    assert back.fill_distance == cloud.fill_distance


def test_load_rejects_bad_header(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("0 0\n1 1\n")
    with pytest.raises(ContractViolation):
        PointCloud.load(p)


def test_permute_interior():
    cloud = PointCloud(np.arange(10.0).reshape(5, 2), 3)
    moved = cloud.permute_interior([2, 0, 1])
    assert np.array_equal(moved.points[:3], cloud.points[[2, 0, 1]])
    assert np.array_equal(moved.collar, cloud.collar)
    with pytest.raises(ContractViolation):
        cloud.permute_interior([0, 0, 1])
