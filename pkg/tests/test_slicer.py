from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import canonical_polygon_set, reference_dual_contour_3d
from stmesh.binoctree import ExtractionConfig
from stmesh.contour4d import Mesh4D, Polyhedron, polyhedron_faces
from stmesh.pipeline import extract
from stmesh.slicer import (
    Mesh3,
    SliceError,
    SliceInputError,
    SliceTable,
    _face_chords,
    canonical_triangles,
    extrude_time_faces,
    frame_name,
    interpolate,
    load_obj,
    obj_text,
    slice_mesh,
    slice_polyhedron,
    write_frames,
)
from stmesh.trajectory import generate_path

from conftest import TOY_ROOT

FIXTURES = Path(__file__).parent / "fixtures"

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)


def prism_mesh(t0=0.0, t1=1.0, window=(0.0, 1.0), top_offset=(0.0, 0.0, 2.0)):
    P = SQUARE
    Q = SQUARE + np.array(top_offset)
    verts = np.zeros((8, 4))
    verts[:4, :3], verts[:4, 3] = P, t0
    verts[4:, :3], verts[4:, 3] = Q, t1
    faces = tuple(polyhedron_faces([0, 1, 2, 3], [4, 5, 6, 7], 1))
    poly = Polyhedron(tuple(range(8)), faces, 0)
    return Mesh4D(0, window, [""], verts, np.zeros(8, dtype=np.int64), [poly])


def polygon_area(pts):
    pts = np.asarray(pts)
    c = np.zeros(3)
    for i in range(len(pts)):
        c += np.cross(pts[i], pts[(i + 1) % len(pts)])
    return 0.5 * np.linalg.norm(c)


# -- single polyhedron -------------------------------------------------------------


def test_prism_midpoint():
    m = prism_mesh()
    polys = slice_polyhedron(m.polyhedra[0], m.vertices, 0.5)
    assert len(polys) == 1 and len(polys[0]) == 4
    got = {p for _, p in polys[0]}
    want = {tuple(v) for v in (0.5 * (SQUARE + SQUARE + [0, 0, 2])).tolist()}
    assert got == want


def test_prism_half_open_lower_end():
    m = prism_mesh()
    polys = slice_polyhedron(m.polyhedra[0], m.vertices, 0.0)
    assert {p for _, p in polys[0]} == {tuple(v) for v in SQUARE.tolist()}


def test_polyhedron_before_slice_is_empty():
    m = prism_mesh(0.0, 1.0, window=(0.0, 2.0))
    assert slice_polyhedron(m.polyhedra[0], m.vertices, 1.5) == []
    assert slice_polyhedron(m.polyhedra[0], m.vertices, 1.0) == []


def test_last_instant_uses_closed_upper_end():
    m = prism_mesh()
    s = slice_mesh(m, 1.0)
    assert {tuple(v) for v in s.vertices.tolist()} == {tuple(v) for v in (SQUARE + [0, 0, 2]).tolist()}


def test_outward_winding_on_sphere(toy_extraction, fly_path):
    for m in toy_extraction.frames(fly_path.times[::6]):
        for p in m.polygons:
            pts = m.vertices[list(p)]
            n = np.zeros(3)
            for i in range(len(pts)):
                n += np.cross(pts[i], pts[(i + 1) % len(pts)])
            assert n @ pts.mean(axis=0) > 0


def test_four_crossing_face_pairs_by_cycle_order():
    times = np.array([0.0, 1.0, 0.0, 1.0])
    chords = _face_chords((0, 1, 2, 3), times, 0.5)
    assert chords == [((0, 1), (1, 2)), ((2, 3), (0, 3))]


def test_open_chain_is_an_error():
    m = prism_mesh()
    side = polyhedron_faces([0, 1, 2, 3], [4, 5, 6, 7], 1)[2]
    broken = Polyhedron(tuple(range(8)), (side,), 0)
    with pytest.raises(SliceError):
        slice_polyhedron(broken, m.vertices, 0.5)


def test_slice_outside_window():
    with pytest.raises(SliceInputError):
        slice_mesh(prism_mesh(), 1.5)
    with pytest.raises(SliceInputError):
        slice_mesh(prism_mesh(), -0.1)


@given(st.floats(0.0, 1.0, exclude_max=True))
def test_prism_slice_is_linear(t):
    m = prism_mesh()
    s = slice_mesh(m, t)
    assert len(s.polygons) == 1
    assert np.allclose(s.vertices[:, 2], 2.0 * t, atol=1e-15)


# -- whole mesh ---------------------------------------------------------------------


def test_no_temporal_splits_equals_3d_dual_contouring(blobs, fly_path):
    cfg = ExtractionConfig(max_depth=5, d_hat_1=40, d_hat_2=8, temporal_splits=False, **TOY_ROOT)
    ex = extract(blobs, fly_path, cfg.resolved(fly_path))
    ref = canonical_polygon_set(reference_dual_contour_3d(ex.tree, cfg.bisection_iters))
    assert ref
    for m in ex.frames(fly_path.times[[0, 7, 23]]):
        got = canonical_polygon_set([[m.vertices[i] for i in p] for p in m.polygons])
        assert got == ref


def test_static_invariance_byte_identical(blobs, fly_path):
    cfg = ExtractionConfig(max_depth=4, d_hat_1=40, d_hat_2=8, temporal_splits=False, **TOY_ROOT)
    ex = extract(blobs, fly_path, cfg.resolved(fly_path))
    texts = {obj_text(m) for m in ex.frames([0.0, 0.3, 1.7, 3.9])}
    assert len(texts) == 1


def test_toy_slices_closed(toy_extraction, fly_path):
    for m in toy_extraction.frames(fly_path.times):
        assert m.polygons
        assert m.boundary_edges() == 0


def test_no_polygon_emitted_twice(toy_extraction, fly_path):
    table = SliceTable(toy_extraction.mesh)
    for t in fly_path.times[::3]:
        m = table.slice(float(t))
        cycles = [frozenset(m.keys[i] for i in p) for p in m.polygons]
        assert len(cycles) == len(set(cycles))
        spans = {}
        for r in table.select(float(t)).tolist():
            spans.setdefault(int(table.pid[r]), 0)
            spans[int(table.pid[r])] += 1
        assert all(c == 1 for c in spans.values())


def test_slices_collinear_within_interval(toy_extraction):
    mesh = toy_extraction.mesh
    table = SliceTable(mesh)
    rows = np.flatnonzero(table.tb - table.ta > 0)[:400]
    for r in rows.tolist():
        a, b = table.ta[r], table.tb[r]
        ts = [a + (b - a) * f for f in (0.1, 0.4, 0.9)]
        cyc = table.cycles[r]
        keys = [k for c in cyc for k in c]
        p = [interpolate(mesh.vertices, keys, t) for t in ts]
        d1, d2 = p[1] - p[0], p[2] - p[0]
        assert np.all(np.linalg.norm(np.cross(d1, d2), axis=1) <= 1e-9)


def test_table_matches_direct_slicing(toy_extraction, fly_path):
    mesh = toy_extraction.mesh
    table = SliceTable(mesh)
    t = float(fly_path.times[10])
    m = table.slice(t)
    direct = set()
    for p in mesh.polyhedra:
        for poly in slice_polyhedron(p, mesh.vertices, t):
            direct.add(frozenset(k for k, _ in poly))
    assert {frozenset(m.keys[i] for i in p) for p in m.polygons} == direct


# -- extrusion ----------------------------------------------------------------------


def test_extrusion_identity_without_open_faces(toy_extraction):
    assert extrude_time_faces(toy_extraction.mesh) is toy_extraction.mesh
    assert extrude_time_faces(prism_mesh()) is not None


def test_extrusion_caps_grow_from_centroid():
    # prism alive on [1, 2] inside the root window [0, 3]: both ends pop
    m = prism_mesh(1.0, 2.0, window=(0.0, 3.0), top_offset=(0, 0, 0))
    assert slice_mesh(m, 0.9).polygons == []
    ext = extrude_time_faces(m)
    caps = [p for p in ext.polyhedra if p.kind == "cap"]
    assert len(caps) == 2
    assert all(len(p.faces) == 5 for p in caps)
    areas = []
    for t in (0.55, 0.75, 0.95):
        s = slice_mesh(ext, t)
        assert len(s.polygons) == 1
        pts = s.vertices[list(s.polygons[0])]
        assert np.allclose(pts.mean(axis=0)[:2], [0.5, 0.5])
        areas.append(polygon_area(pts))
    assert areas[0] < areas[1] < areas[2] < 1.0
    # shrinks back to the centroid after the prism ends
    late = []
    for t in (2.1, 2.4):
        s = slice_mesh(ext, t)
        late.append(polygon_area(s.vertices[list(s.polygons[0])]))
    assert late[0] > late[1]


def test_extrusion_skips_root_boundary_faces():
    assert extrude_time_faces(prism_mesh(0.0, 1.0, window=(0.0, 1.0))).polyhedra[0].kind is None
    assert len(extrude_time_faces(prism_mesh(0.0, 1.0, window=(0.0, 1.0))).polyhedra) == 1


# -- export -------------------------------------------------------------------------


def test_obj_single_triangle():
    m = Mesh3(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), [(0, 1, 2)], [0])
    lines = obj_text(m).splitlines()
    assert sum(l.startswith("v ") for l in lines) == 3
    assert sum(l.startswith("f ") for l in lines) == 1


def test_obj_quad_fan():
    m = Mesh3(SQUARE.copy(), [(0, 1, 2, 3)], [0])
    assert sum(l.startswith("f ") for l in obj_text(m).splitlines()) == 2
    assert sum(l.startswith("f ") for l in obj_text(m, triangulate=False).splitlines()) == 1


def test_zero_area_triangles_skipped():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
    m = Mesh3(V, [(0, 1, 2), (0, 1, 3)], [0, 1])
    _, tris = canonical_triangles(m)
    assert len(tris) == 1


def test_obj_deterministic_under_reordering():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    a = Mesh3(V, [(0, 1, 2, 3)], [0])
    perm = [2, 0, 3, 1]
    inv = np.argsort(perm)
    b = Mesh3(V[perm], [tuple(int(inv[i]) for i in (1, 2, 3, 0))], [0])
    assert obj_text(a) == obj_text(b)


def test_golden_toy_sphere_frame(sphere):
    path = generate_path("static", 1, 4, radius=3.0, altitude=1.0, width=64, height=48)
    cfg = ExtractionConfig(max_depth=3, d_hat_1=40, d_hat_2=8, **TOY_ROOT).resolved(path)
    m = extract(sphere, path, cfg).frames([0.0])[0]
    assert obj_text(m) == (FIXTURES / "toy_sphere_frame0.obj").read_text()


def test_write_frames_and_load(tmp_path, toy_extraction, fly_path):
    frames = toy_extraction.frames(fly_path.times[:3])
    names = write_frames(frames, fly_path.times[:3], tmp_path)
    assert names == [frame_name(i) for i in range(3)] and names[0] == "frame_000000.obj"
    manifest = (tmp_path / "manifest.txt").read_text().splitlines()
    assert manifest[1].split()[:2] == ["1", "frame_000001.obj"]
    back = load_obj(tmp_path / names[0])
    V, tris = canonical_triangles(frames[0])
    assert np.array_equal(back.vertices, V)
    assert [tuple(t) for t in tris.tolist()] == back.polygons


def test_load_obj_rejects_bad_index(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nf 1 2 3\n")
    with pytest.raises(SliceInputError):
        load_obj(p)
