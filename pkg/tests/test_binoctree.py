import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import reference_alternating_tree
from stmesh.binoctree import (
    CORNER_OFFSETS,
    SPATIAL,
    TEMPORAL,
    BinaryOctree,
    Cell,
    ExtractionConfig,
    build_coarse,
    build_tree,
    flag_virtual_grid,
    flood_fill_surface,
    parse_dump,
    parse_extraction_config,
    refine_surface_nodes,
    run_alternating_splits,
    seed_cells,
    temporal_split_test,
    virtual_grid_size,
    visibility_filter,
)
from stmesh.field import ConfigError, ConstantField, OccupancyFieldSpec, UnionField, make_field
from stmesh.trajectory import CameraPath, CameraSample, generate_path, look_at

from conftest import TOY_ROOT


def coarse_tree(field, path, **kw):
    cfg = ExtractionConfig(**{**dict(max_depth=5, time_levels=3, d_hat_1=40, d_hat_2=8, **TOY_ROOT), **kw})
    tree = BinaryOctree(field, path, cfg.resolved(path))
    build_coarse(tree)
    return tree


# -- configuration ----------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(delta_t=0.0),
        dict(d_hat_1=3.0, d_hat_2=3.0),
        dict(d_hat_2=-1.0),
        dict(size_cap=0),
        dict(contraction=0.0),
        dict(contraction=1.5),
        dict(root_size=-1.0),
        dict(flood_seed_strategy="nope"),
    ],
)
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        ExtractionConfig(**kw).validate()


def test_root_window_must_cover_path(fly_path):
    with pytest.raises(ConfigError, match="cover"):
        ExtractionConfig(root_window=(0.5, 10.0)).resolved(fly_path)


def test_default_root_covers_cameras(fly_path):
    cfg = ExtractionConfig().resolved(fly_path)
    lo = np.array(cfg.root_origin)
    assert np.all(fly_path.positions > lo) and np.all(fly_path.positions < lo + cfg.root_size)
    assert cfg.root_window == (0.0, fly_path.times[-1] + fly_path.frame_interval())


def test_parse_extraction_config():
    cfg = parse_extraction_config("delta_t = 2  # seconds\nd_hat_2 = 4\nroot_origin = -1 -1 -1\n")
    assert cfg.delta_t == 2.0 and cfg.d_hat_2 == 4.0 and cfg.root_origin == (-1.0, -1.0, -1.0)
    for bad in ("bogus = 1\n", "delta_t = 1\ndelta_t = 2\n", "delta_t\n"):
        with pytest.raises(ConfigError):
            parse_extraction_config(bad)


# -- temporal split test ------------------------------------------------------


def test_temporal_split_examples():
    t = np.arange(40) / 10.0
    d = np.where(t < 2.0, 0.1, 1.0)
    assert temporal_split_test(d, t, 4.0, 1.0)
    assert not temporal_split_test(np.ones(40), t, 4.0, 1.0)
    # children would be 0.5 s long
    t1 = np.arange(10) / 10.0
    assert not temporal_split_test(np.where(t1 < 0.5, 0.1, 1.0), t1, 1.0, 1.0)
    assert not temporal_split_test([], [], 4.0, 1.0)


def _runs_oracle(d, t, length, dt):
    if not len(d) or length / 2 < dt:
        return False
    m = max(d)
    best = 0.0
    start = None
    for i, v in enumerate(d):
        if v < m / 2:
            start = t[i] if start is None else start
            best = max(best, t[i] - start)
        else:
            start = None
    return best >= dt


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=40), st.floats(0.2, 3.0))
def test_temporal_split_matches_run_oracle(d, dt):
    t = np.arange(len(d)) * 0.25
    length = len(d) * 0.25
    assert temporal_split_test(d, t, length, dt) == _runs_oracle(d, t, length, dt)


# -- Alg. 1 -------------------------------------------------------------------


def test_distant_camera_single_leaf(sphere):
    far = CameraPath([CameraSample(0.0, (1e4, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0), 60.0, 64, 48)])
    tree = coarse_tree(sphere, far)
    assert tree.root.is_leaf and tree.stats["nodes"] == 1


def test_static_camera_splits_spatially_first(sphere):
    path = generate_path("static", 2, 6, radius=3.0, altitude=0.0, width=64, height=48)
    tree = coarse_tree(sphere, path)
    assert tree.root.split == SPATIAL
    assert tree.stats["temporal_splits"] == 0


def test_alternating_splits_match_reference(sphere, fly_path, toy_config):
    tree = BinaryOctree(sphere, fly_path, toy_config)
    run_alternating_splits(tree, tree.root, toy_config.d_hat_1)
    got = {n.key: n.split for n in tree.iter_nodes()}
    c = toy_config
    ref = reference_alternating_tree(
        fly_path, c.root_origin, c.root_size, c.max_depth, c.time_levels, *c.root_window, c.d_hat_1, c.delta_t
    )
    assert tree.stats["temporal_splits"] > 0
    assert got == ref


def test_split_structure(toy_extraction):
    tree = toy_extraction.tree
    for n in tree.iter_nodes():
        if n.split == TEMPORAL:
            a, b = tree.window_ticks(n)
            kids = [tree.window_ticks(c) for c in n.children]
            assert kids == [(a, (a + b) // 2), ((a + b) // 2, b)]
            assert all(tree.cube(c) == tree.cube(n) for c in n.children)
        elif n.split == SPATIAL:
            x0, y0, z0, s = tree.cube(n)
            cubes = {tree.cube(c) for c in n.children}
            want = {(x0 + (s // 2) * (o & 1), y0 + (s // 2) * ((o >> 1) & 1), z0 + (s // 2) * (o >> 2), s // 2)
                    for o in range(8)}
            assert cubes == want
            assert all(tree.window_ticks(c) == tree.window_ticks(n) for c in n.children)


def test_dyadic_alignment(toy_extraction):
    tree = toy_extraction.tree
    dur = tree.T1 - tree.T0
    for n in tree.iter_nodes():
        a, b = tree.window(n)
        assert b - a == pytest.approx(dur / 2 ** n.tk, rel=1e-12)
        assert tree.world_size(n.depth) == tree.config.root_size / 2 ** n.depth


def test_temporal_guard(toy_extraction):
    tree = toy_extraction.tree
    for n in tree.iter_nodes():
        if n.split == TEMPORAL:
            for c in n.children:
                a, b = tree.window(c)
                assert b - a >= tree.config.delta_t * (1 - 1e-12)


def test_partition_random_points(toy_extraction):
    tree = toy_extraction.tree
    rng = np.random.default_rng(3)
    full = 1 << tree.D
    ticks = 1 << tree.K
    boxes = np.array([(*tree.cube(n), *tree.window_ticks(n)) for n in tree.leaves()])
    for _ in range(10_000):
        x, y, z = rng.integers(0, full, 3)
        t = rng.integers(0, ticks)
        inside = (
            (boxes[:, 0] <= x) & (x < boxes[:, 0] + boxes[:, 3])
            & (boxes[:, 1] <= y) & (y < boxes[:, 1] + boxes[:, 3])
            & (boxes[:, 2] <= z) & (z < boxes[:, 2] + boxes[:, 3])
            & (boxes[:, 4] <= t) & (t < boxes[:, 5])
        )
        assert inside.sum() == 1
        n = tree.locate(int(x), int(y), int(z), int(t))
        assert (*tree.cube(n), *tree.window_ticks(n)) == tuple(boxes[np.flatnonzero(inside)[0]])


def test_dump_round_trip(toy_extraction):
    tree = toy_extraction.tree
    rows = parse_dump(tree.dump())
    nodes = list(tree.iter_nodes())
    assert len(rows) == len(nodes)
    for r, n in zip(rows, nodes):
        assert r[:4] == (n.depth, n.ix, n.iy, n.iz)
        assert (r[4], r[5]) == tree.window(n)
        assert r[6] == n.split
        assert ("S" in r[7]) == n.surface


# -- virtual grids --------------------------------------------------------------


def test_virtual_grid_sizes():
    assert virtual_grid_size(2.5 * 30, 30) == 4
    assert virtual_grid_size(4.0 * 30, 30) == 8
    assert virtual_grid_size(0.9 * 30, 30) == 1


def test_cap_hit_flags_virtual_grids(sphere, fly_path):
    tree = coarse_tree(sphere, fly_path, size_cap=60, d_hat_2=4)
    assert tree.stats["cap_hit_coarse"] == 1
    d1 = tree.config.d_hat_1
    flagged = 0
    for n in tree.leaves():
        assert n.children is None
        if n.diam > d1:
            want = min(virtual_grid_size(n.diam, d1), 1 << (tree.D - n.depth))
            assert n.virtual == (want if want > 1 else 0)
            flagged += n.virtual > 0
        else:
            assert n.virtual == 0
    assert flagged == tree.stats["virtual_flags"] > 0


def test_flag_skips_small_nodes(sphere, fly_path):
    tree = coarse_tree(sphere, fly_path)
    leaf = tree.leaves()[0]
    leaf.diam = 0.9 * 30
    assert flag_virtual_grid(tree, [leaf], 30) == 0 and leaf.virtual == 0


# -- flood fill -------------------------------------------------------------------


def brute_force_cells(tree, field):
    out = set()
    for n in tree.leaves():
        subs = [None]
        if n.virtual:
            v = n.virtual
            subs = [(a, b, c) for a in range(v) for b in range(v) for c in range(v)]
        for sub in subs:
            cell = Cell(n, sub)
            x0, y0, z0, s = tree.cell_box(cell)
            pts = tree.lattice.to_world(np.array([x0, y0, z0]) + CORNER_OFFSETS * s)
            bits = field.eval_batch(pts)
            if bits.min() != bits.max():
                out.add(cell.key())
    return out


@pytest.mark.parametrize("cap", [10_000_000, 200])
def test_flood_fill_equals_brute_force(sphere, fly_path, cap):
    tree = coarse_tree(sphere, fly_path, size_cap=cap)
    found = {c.key() for c in flood_fill_surface(tree, seed_cells(tree))}
    assert found == brute_force_cells(tree, sphere)
    assert found


def test_flood_fill_all_strategy(sphere, fly_path):
    tree = coarse_tree(sphere, fly_path, flood_seed_strategy="all")
    found = {c.key() for c in flood_fill_surface(tree, seed_cells(tree))}
    assert found == brute_force_cells(tree, sphere)


def test_flood_fill_constant_field(fly_path):
    tree = coarse_tree(ConstantField(0), fly_path)
    assert flood_fill_surface(tree, seed_cells(tree)) == []


def test_flood_fill_disjoint_spheres(fly_path):
    a = make_field(OccupancyFieldSpec("sphere", 0, {"center": (-1.0, -0.9, 0), "radius": 0.3}))
    b = make_field(OccupancyFieldSpec("sphere", 0, {"center": (0.9, 1.0, 0.3), "radius": 0.3}))
    both = UnionField(a, b)
    tree = coarse_tree(both, fly_path)
    everything = brute_force_cells(tree, both)
    cells_a, cells_b = brute_force_cells(tree, a), brute_force_cells(tree, b)
    assert not cells_a & cells_b
    only_a = cells_a & everything
    seed = next(c for c in seed_cells(replace_strategy(tree)) if c.key() in only_a)
    found = {c.key() for c in flood_fill_surface(tree, [seed])}
    assert found == only_a
    assert everything - only_a


def replace_strategy(tree):
    tree.config = replace(tree.config, flood_seed_strategy="all")
    return tree


def test_static_field_hypercube_equivalence(toy_extraction):
    tree = toy_extraction.tree
    for n in tree.leaves()[:500]:
        b16 = tree.hypercube_corner_bits(n)
        assert (b16.min() != b16.max()) == tree.straddles(n)


# -- refinement -------------------------------------------------------------------


def test_refine_with_same_threshold_is_noop(sphere, fly_path):
    tree = coarse_tree(sphere, fly_path)
    cells = flood_fill_surface(tree, seed_cells(tree))
    assert refine_surface_nodes(tree, cells, d_hat=tree.config.d_hat_1) == 0


def test_surface_leaves_meet_fine_threshold(toy_extraction):
    tree = toy_extraction.tree
    assert tree.stats["cap_hit_refine"] == 0
    assert tree.stats["virtual_flags_refine"] == 0
    checked = 0
    for n in tree.leaves():
        if n.surface and n.depth < tree.D:
            assert tree.max_diameter(n) <= tree.config.d_hat_2
            checked += 1
    assert checked


def test_refine_leaves_non_surface_alone(sphere, fly_path):
    tree = coarse_tree(sphere, fly_path)
    cells = flood_fill_surface(tree, seed_cells(tree))
    surface = {c.node.key for c in cells}
    before = {n.key for n in tree.leaves() if n.key not in surface}
    refine_surface_nodes(tree, cells)
    after = {n.key for n in tree.leaves()}
    assert before <= after


def test_refine_surface_flags_are_exact(toy_extraction, sphere):
    tree = toy_extraction.tree
    for n in tree.leaves():
        pts = tree.lattice.to_world(np.array(tree.cube(n)[:3]) + CORNER_OFFSETS * tree.cube(n)[3])
        bits = sphere.eval_batch(pts)
        assert n.surface == (bits.min() != bits.max())


def test_refine_cap_is_global(sphere, fly_path):
    cfg = ExtractionConfig(max_depth=5, d_hat_1=40, d_hat_2=2, size_cap=300, **TOY_ROOT).resolved(fly_path)
    tree = build_tree(sphere, fly_path, cfg)
    assert tree.stats["cap_hit_refine"] == 1
    assert tree.stats["virtual_flags_refine"] > 0


# -- visibility -----------------------------------------------------------------


def wall_camera():
    return CameraSample(0.0, (0.0, 0.0, 0.0), look_at((0, 0, 0), (0, 0, -1)), 60.0, 32, 24)


def split_tree(field, levels):
    path = CameraPath([wall_camera()])
    cfg = ExtractionConfig(max_depth=5, root_origin=(-2.0, -2.0, -8.0), root_size=4.0).resolved(path)
    tree = BinaryOctree(field, path, cfg)
    for _ in range(levels):
        for n in tree.leaves():
            tree.split_spatial(n)
    return tree


def test_visibility_empty_scene_keeps(sphere):
    tree = split_tree(sphere, 2)
    cells = [Cell(n) for n in tree.leaves()]
    buffers = [np.full((24, 32), np.inf)]
    assert len(visibility_filter(tree, cells, buffers)) == len(cells)


def test_visibility_occluder_drops_hidden(sphere):
    tree = split_tree(sphere, 3)
    cells = [Cell(n) for n in tree.leaves()]
    wall = 1.0
    buffers = [np.full((24, 32), wall)]
    kept = {c.key() for c in visibility_filter(tree, cells, buffers)}
    for c in cells:
        x0, y0, z0, s = tree.cell_box(c)
        lo = tree.lattice.to_world(np.array([x0, y0, z0]))
        size = s * tree.lattice.cell
        r = 0.5 * math.sqrt(3) * size
        center = lo + 0.5 * size
        # ray-cast oracle: node lies wholly beyond the wall plus its diagonal
        nearest = -center[2] - r
        if nearest - 2 * r > wall:
            assert c.key() not in kept
    assert len(kept) < len(cells)


def test_visibility_disabled_is_identity(sphere, fly_path, toy_config):
    a = build_tree(sphere, fly_path, toy_config)
    b = build_tree(sphere, fly_path, toy_config, depth_buffers=[np.zeros((48, 64))] * len(fly_path))
    assert a.dump() == b.dump()
