import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stmesh.trajectory import (
    INFINITE_DIAMETER,
    CameraPath,
    CameraSample,
    PathError,
    contracted_diameter,
    dumps_path,
    generate_path,
    load_path,
    loads_path,
    look_at,
    pixel_threshold_to_ratio,
    projected_diameter,
    save_path,
)

HEADER = "t,px,py,pz,qw,qx,qy,qz,fov_y_deg,width,height\n"


def cam(pos=(0.0, 0.0, 0.0), target=(0.0, 0.0, -1.0), t=0.0, fov=60.0, w=64, h=48):
    return CameraSample(t, tuple(map(float, pos)), look_at(pos, target), fov, w, h)


# -- file I/O -----------------------------------------------------------------


def test_single_row():
    p = loads_path(HEADER + "0,1,2,3,1,0,0,0,60,64,48\n")
    assert len(p) == 1
    assert p[0].position == (1.0, 2.0, 3.0)


def test_equal_timestamps_rejected():
    with pytest.raises(PathError, match="increasing"):
        loads_path(HEADER + "0,0,0,0,1,0,0,0,60,64,48\n0,1,0,0,1,0,0,0,60,64,48\n")


@pytest.mark.parametrize(
    "row,msg",
    [
        ("0,0,0,0,1,0,0,0,60,64\n", "line 2"),
        ("0,0,0,zz,1,0,0,0,60,64,48\n", "line 2"),
        ("0,0,0,0,2,0,0,0,60,64,48\n", "quaternion"),
        ("0,0,0,0,1,0,0,0,180,64,48\n", "fov_y"),
        ("0,0,0,0,1,0,0,0,60,0,48\n", "image size"),
    ],
)
def test_malformed_rows(row, msg):
    with pytest.raises(PathError, match=msg):
        loads_path(HEADER + row)


def test_bad_header():
    with pytest.raises(PathError, match="line 1"):
        loads_path("a,b,c\n")


def test_generated_flythrough_round_trip(tmp_path):
    path = generate_path("flythrough", 20, 24, seed=3)
    assert len(path) == 480
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_path(path, f1)
    again = load_path(f1)
    save_path(again, f2)
    assert f1.read_bytes() == f2.read_bytes()
    assert np.array_equal(again.positions, path.positions)
    assert [s.orientation for s in again.samples] == [s.orientation for s in path.samples]


@pytest.mark.parametrize("kind", ["static", "orbit", "flythrough"])
def test_generated_paths_valid(kind):
    p = generate_path(kind, 2, 12, seed=1)
    assert len(p) == 24
    assert np.all(np.diff(p.times) > 0)
    assert p.frame_interval() == pytest.approx(1 / 12)
    loads_path(dumps_path(p))


def test_static_path_is_constant():
    p = generate_path("static", 2, 24)
    assert np.all(p.positions == p.positions[0])
    assert len({s.orientation for s in p.samples}) == 1


# -- diameters ------------------------------------------------------------------


def test_eq1_examples():
    c = cam(pos=(4, 0, 0))
    assert projected_diameter(2.0, (0, 0, 0), c) == 0.5
    assert projected_diameter(1.0, (0, 0, 0), cam(pos=(0, 0, 1), target=(0, 0, 0))) == 1.0


def test_camera_at_center_is_infinite():
    assert projected_diameter(1.0, (0, 0, 0), cam()) == INFINITE_DIAMETER


@given(
    st.floats(0.01, 10),
    st.tuples(*[st.floats(-10, 10)] * 3),
    st.tuples(*[st.floats(-10, 10)] * 3),
)
def test_eq1_recomputation(size, center, pos):
    dist = math.sqrt(sum((a - b) ** 2 for a, b in zip(center, pos)))
    if dist < 1e-6:
        return
    c = CameraSample(0.0, pos, (1.0, 0.0, 0.0, 0.0), 60.0, 10, 10)
    assert abs(projected_diameter(size, center, c) - size / dist) <= 1e-12 * max(1.0, size / dist)
    path = CameraPath([c])
    assert abs(path.diameters(size, center)[0] - size / dist) <= 1e-12 * max(1.0, size / dist)


def three_cam_path():
    # diameters 0.1, 0.5, 0.2 for a unit node at the origin
    samples = [
        CameraSample(float(i), (float(d), 0.0, 0.0), (1.0, 0.0, 0.0, 0.0), 60.0, 10, 10)
        for i, d in enumerate((10.0, 2.0, 5.0))
    ]
    return CameraPath(samples)


def test_max_diameter_window():
    p = three_cam_path()
    assert p.max_diameter(1.0, (0, 0, 0), (0.0, 0.0)) == pytest.approx(0.1)
    assert p.max_diameter(1.0, (0, 0, 0), (0.0, 2.0)) == pytest.approx(0.5)
    assert p.max_diameter(1.0, (0, 0, 0), (1.5, 2.0)) == pytest.approx(0.2)
    assert p.max_diameter(1.0, (0, 0, 0), (2.5, 3.0)) == 0.0


@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 1), st.floats(0, 1))
def test_max_diameter_monotone_in_window(a, b, grow_lo, grow_hi):
    p = generate_path("orbit", 3, 8, seed=2)
    lo, hi = min(a, b), max(a, b)
    inner = p.max_diameter(0.5, (0.3, 0.1, 0), (lo, hi), contraction=0.25)
    outer = p.max_diameter(0.5, (0.3, 0.1, 0), (lo - grow_lo, hi + grow_hi), contraction=0.25)
    assert outer >= inner


def test_contraction_cases():
    c = cam()
    ahead = (0.0, 0.0, -5.0)
    behind = (0.0, 0.0, 5.0)
    assert contracted_diameter(0.5, ahead, c, 0.25) == projected_diameter(0.5, ahead, c)
    assert contracted_diameter(0.5, behind, c, 0.25) == 0.25 * projected_diameter(0.5, behind, c)
    for p in (ahead, behind, (3.0, 2.0, 1.0)):
        assert contracted_diameter(0.5, p, c, 1.0) == projected_diameter(0.5, p, c)
    with pytest.raises(ValueError):
        contracted_diameter(0.5, ahead, c, 0.0)


def test_vectorised_contraction_matches_scalar():
    p = generate_path("flythrough", 2, 12, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        center = rng.uniform(-12, 12, 3)
        size = float(rng.uniform(0.1, 3))
        vec = p.diameters(size, center, contraction=0.25)
        ref = [contracted_diameter(size, center, s, 0.25) for s in p.samples]
        assert np.allclose(vec, ref, rtol=1e-12, atol=0)


def test_spatial_children_follow_eq1():
    p = generate_path("orbit", 1, 6, seed=5)
    size, center = 2.0, np.array([0.5, -0.5, 0.25])
    for o in range(8):
        off = np.array([(o & 1) - 0.5, ((o >> 1) & 1) - 0.5, ((o >> 2) & 1) - 0.5]) * 0.5 * size
        child = center + off
        got = p.diameters(0.5 * size, child)
        want = [0.5 * size / math.dist(child, s.position) for s in p.samples]
        assert np.allclose(got, want, rtol=1e-12, atol=0)


def _sample_visible(c, center, size):
    """Brute force: any of 26 boundary points projects into the image."""
    pts = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx or dy or dz:
                    pts.append(center + 0.5 * size * np.array([dx, dy, dz]))
    uv, depth = c.project(np.array(pts))
    ok = (depth > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= c.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= c.height)
    return bool(ok.any())


def test_frustum_sphere_test_is_conservative():
    c = cam(pos=(0, 0, 0), target=(1, 0.3, -0.2), w=80, h=45)
    p = CameraPath([c])
    rng = np.random.default_rng(7)
    inclusive = 0
    for _ in range(1000):
        center = rng.uniform(-10, 10, 3)
        size = float(rng.uniform(0.05, 2.0))
        sphere_vis = bool(p.in_frustum(center, 0.5 * math.sqrt(3) * size)[0])
        sampled = _sample_visible(c, center, size)
        assert sphere_vis or not sampled
        inclusive += sphere_vis and not sampled
    assert inclusive < 1000


def test_pixel_threshold_conversion():
    c = cam(fov=90.0, h=100)
    assert pixel_threshold_to_ratio(3.0, c) == pytest.approx(3.0 * (math.pi / 2) / 100)
    assert pixel_threshold_to_ratio(3.0, c) * c.pixels_per_ratio == pytest.approx(3.0)
