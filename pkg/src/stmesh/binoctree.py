"""Binary-octree over 4D spacetime.

Nodes split either temporally (two children halving the time window) or
spatially (eight octants sharing the window).  Spatial extents live on an
integer lattice of ``2**max_depth`` finest cells per root edge and time
windows on a lattice of ``2**time_levels`` ticks per root window, so every
containment and adjacency question is answered with exact integer
arithmetic.  All boxes are half-open: ``[lo, hi)`` on every axis.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field as dc_field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .field import ConfigError, CornerCache, Lattice, OccupancyField
from .trajectory import CameraPath

SEED_STRATEGIES = ("camera", "all")

LEAF, TEMPORAL, SPATIAL = "leaf", "temporal", "spatial"

# corner offsets (bit 0 = x, bit 1 = y, bit 2 = z)
CORNER_OFFSETS = np.array([[(o >> 0) & 1, (o >> 1) & 1, (o >> 2) & 1] for o in range(8)], dtype=np.int64)

# the 12 cube edges as (axis, corner index of the lower endpoint)
CUBE_EDGES = tuple(
    (axis, o) for axis in range(3) for o in range(8) if not (o >> axis) & 1
)


@dataclass
class ExtractionConfig:
    delta_t: float = 1.0
    d_hat_1: float = 30.0
    d_hat_2: float = 3.0
    size_cap: int = 10_000_000
    contraction: float = 0.25
    max_depth: int = 10
    root_origin: tuple[float, float, float] | None = None
    root_size: float | None = None
    root_window: tuple[float, float] | None = None
    visibility_filter: bool = False
    flood_seed_strategy: str = "camera"
    time_levels: int = 30
    bisection_iters: int = 12
    temporal_splits: bool = True
    n_random_rays: int = 64
    seed_cameras: int = 24
    seed: int = 0
    view_distance: float | None = None

    def validate(self) -> "ExtractionConfig":
        if not self.delta_t > 0:
            raise ConfigError(f"delta_t must be > 0, got {self.delta_t}")
        if not 0 < self.d_hat_2 < self.d_hat_1:
            raise ConfigError(f"need 0 < d_hat_2 < d_hat_1, got {self.d_hat_2}, {self.d_hat_1}")
        if self.size_cap < 1:
            raise ConfigError("size_cap must be >= 1")
        if not 0 < self.contraction <= 1:
            raise ConfigError(f"contraction must be in (0, 1], got {self.contraction}")
        if self.root_size is not None and not self.root_size > 0:
            raise ConfigError("root_size must be > 0")
        if not 0 <= self.max_depth <= 20:
            raise ConfigError("max_depth must be in [0, 20]")
        if self.flood_seed_strategy not in SEED_STRATEGIES:
            raise ConfigError(f"flood_seed_strategy must be one of {SEED_STRATEGIES}")
        if self.bisection_iters < 0:
            raise ConfigError("bisection_iters must be >= 0")
        return self

    def resolved(self, path: CameraPath, base_height: float = 0.0) -> "ExtractionConfig":
        """Fill in root cube and window from the camera path."""
        cfg = replace(self)
        if cfg.root_origin is None or cfg.root_size is None:
            pos = path.positions
            vd = cfg.view_distance
            if vd is None:
                vd = 2.0 * max(float((pos[:, 2] - base_height).max()), 1.0)
            lo, hi = pos.min(axis=0) - vd, pos.max(axis=0) + vd
            lo[2] = min(lo[2], base_height - vd)
            size = float((hi - lo).max())
            mid = 0.5 * (lo + hi)
            cfg.root_size = cfg.root_size or size
            cfg.root_origin = cfg.root_origin or tuple(float(v) for v in mid - 0.5 * cfg.root_size)
        if cfg.root_window is None:
            cfg.root_window = (float(path.times[0]), float(path.times[-1] + path.frame_interval()))
        t0, t1 = cfg.root_window
        if not (t0 <= path.times[0] and path.times[-1] <= t1 and t1 > t0):
            raise ConfigError(f"root window {cfg.root_window} does not cover the camera path")
        return cfg.validate()


class Node:
    """A hypercube: spatial cube (depth, ix, iy, iz) x dyadic window (tk, tj)."""

    __slots__ = (
        "depth", "ix", "iy", "iz", "tk", "tj", "children", "split",
        "virtual", "surface", "visible", "coarse", "diam", "group",
    )

    def __init__(self, depth, ix, iy, iz, tk, tj):
        self.depth, self.ix, self.iy, self.iz = depth, ix, iy, iz
        self.tk, self.tj = tk, tj
        self.children: list[Node] | None = None
        self.split = LEAF
        self.virtual = 0
        self.surface = False
        self.visible = True
        self.coarse = False
        self.diam = 0.0
        self.group: str | None = None

    @property
    def key(self):
        return (self.depth, self.ix, self.iy, self.iz, self.tk, self.tj)

    @property
    def is_leaf(self):
        return self.children is None

    def __repr__(self):
        return f"Node(d={self.depth}, ix=({self.ix},{self.iy},{self.iz}), tw=({self.tk},{self.tj}), {self.split})"


def group_id(tk: int, tj: int) -> str:
    return format(tj, f"0{tk}b") if tk else ""


@dataclass(frozen=True)
class Cell:
    """A unit of surface testing: a leaf, or one sub-cube of a virtual leaf."""

    node: Node
    sub: tuple[int, int, int] | None = None

    def key(self):
        return (self.node.key, self.sub)


def temporal_split_test(diams: Sequence[float], times: Sequence[float], window_length: float, delta_t: float) -> bool:
    """True iff some maximal run of consecutive diameters below half the
    in-window maximum spans at least ``delta_t`` and halving the window keeps
    both children at least ``delta_t`` long."""
    d = np.asarray(diams, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if d.size == 0 or 0.5 * window_length < delta_t * (1 - 1e-12):
        return False
    thr = 0.5 * d.max()
    low = d < thr
    if not low.any():
        return False
    # run boundaries
    edges = np.diff(np.concatenate([[0], low.view(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    spans = t[stops] - t[starts]
    return bool((spans >= delta_t * (1 - 1e-12)).any())


class BinaryOctree:
    def __init__(self, field: OccupancyField, path: CameraPath, config: ExtractionConfig):
        self.field = field
        self.path = path
        self.config = config
        self.D = config.max_depth
        self.K = config.time_levels
        self.lattice = Lattice(tuple(config.root_origin), float(config.root_size), self.D)
        self.cache = CornerCache(field, self.lattice)
        self.T0, self.T1 = map(float, config.root_window)
        self._origin = np.asarray(config.root_origin, dtype=np.float64)
        self.root = self._new(0, 0, 0, 0, 0, 0)
        self.stats = {
            "nodes": 1,
            "temporal_splits": 0,
            "spatial_splits": 0,
            "depth_limited": 0,
            "cap_hit_coarse": 0,
            "cap_hit_refine": 0,
            "virtual_flags": 0,
            "virtual_flags_refine": 0,
            "virtual_instantiated": 0,
            "surface_coarse": 0,
            "surface_leaves": 0,
        }

    # -- geometry ---------------------------------------------------------
    def size_lattice(self, depth: int) -> int:
        return 1 << (self.D - depth)

    def cube(self, n: Node):
        """Lattice box (x0, y0, z0, size)."""
        s = 1 << (self.D - n.depth)
        return n.ix * s, n.iy * s, n.iz * s, s

    def window_ticks(self, n: Node):
        w = 1 << (self.K - n.tk)
        return n.tj * w, (n.tj + 1) * w

    def tick_time(self, tick) -> float:
        return self.T0 + (self.T1 - self.T0) * (tick / float(1 << self.K))

    def time_tick(self, t: float) -> int:
        """Tick containing time t (clamped to the root window)."""
        x = (t - self.T0) / (self.T1 - self.T0) * (1 << self.K)
        return min(max(int(math.floor(x)), 0), (1 << self.K) - 1)

    def window(self, n: Node) -> tuple[float, float]:
        a, b = self.window_ticks(n)
        return self.tick_time(a), self.tick_time(b)

    def world_size(self, depth: int) -> float:
        return self.config.root_size / (1 << depth)

    def center(self, n: Node) -> np.ndarray:
        s = self.world_size(n.depth)
        return self._origin + (np.array([n.ix, n.iy, n.iz], dtype=np.float64) + 0.5) * s

    def cell_box(self, c: Cell):
        x0, y0, z0, s = self.cube(c.node)
        if c.sub is None:
            return x0, y0, z0, s
        s //= c.node.virtual
        return x0 + c.sub[0] * s, y0 + c.sub[1] * s, z0 + c.sub[2] * s, s

    # -- diameters --------------------------------------------------------
    def node_diameters(self, n: Node):
        """(times, per-camera pixel diameters) for the cameras in n's window."""
        return self.box_diameters(n.depth, self.center(n), self.window(n))

    def box_diameters(self, depth, center, window):
        idx = self.path.window_indices(*window)
        d = self.path.diameters(self.world_size(depth), center, idx, self.config.contraction, pixels=True)
        return self.path.times[idx], d

    def max_diameter(self, n: Node) -> float:
        _, d = self.node_diameters(n)
        return float(d.max()) if d.size else 0.0

    # -- structure --------------------------------------------------------
    def _new(self, depth, ix, iy, iz, tk, tj) -> Node:
        n = Node(depth, ix, iy, iz, tk, tj)
        n.diam = self.max_diameter(n)
        return n

    def split_temporal(self, n: Node) -> list[Node]:
        assert n.is_leaf and n.tk < self.K
        n.children = [self._new(n.depth, n.ix, n.iy, n.iz, n.tk + 1, 2 * n.tj + h) for h in (0, 1)]
        n.split = TEMPORAL
        self._inherit(n)
        self.stats["temporal_splits"] += 1
        self.stats["nodes"] += 2
        return n.children

    def split_spatial(self, n: Node) -> list[Node]:
        assert n.is_leaf and n.depth < self.D
        d = n.depth + 1
        n.children = [
            self._new(d, 2 * n.ix + (o & 1), 2 * n.iy + ((o >> 1) & 1), 2 * n.iz + ((o >> 2) & 1), n.tk, n.tj)
            for o in range(8)
        ]
        n.split = SPATIAL
        self._inherit(n)
        self.stats["spatial_splits"] += 1
        self.stats["nodes"] += 8
        return n.children

    def _inherit(self, n: Node):
        for c in n.children:
            c.group = n.group
        n.virtual = 0

    def can_split_temporal(self, n: Node) -> bool:
        if not self.config.temporal_splits or n.tk >= self.K:
            return False
        times, d = self.node_diameters(n)
        a, b = self.window(n)
        return temporal_split_test(d, times, b - a, self.config.delta_t)

    def iter_nodes(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            if n.children:
                stack.extend(reversed(n.children))

    def leaves(self) -> list[Node]:
        return [n for n in self.iter_nodes() if n.is_leaf]

    def locate(self, x: int, y: int, z: int, tick: int) -> Node | None:
        """Leaf containing lattice point (x, y, z) at time tick, or None."""
        full = 1 << self.D
        if not (0 <= x < full and 0 <= y < full and 0 <= z < full and 0 <= tick < (1 << self.K)):
            return None
        n = self.root
        D, K = self.D, self.K
        while n.children is not None:
            if n.split == TEMPORAL:
                n = n.children[(tick >> (K - n.tk - 1)) & 1]
            else:
                sh = D - n.depth - 1
                n = n.children[((x >> sh) & 1) | (((y >> sh) & 1) << 1) | (((z >> sh) & 1) << 2)]
        return n

    def leaves_overlapping(self, lo, hi, t0: int, t1: int, start: Node | None = None) -> list[Node]:
        """Leaves whose box meets [lo, hi) x [t0, t1) (lattice / ticks)."""
        out = []
        stack = [start or self.root]
        while stack:
            n = stack.pop()
            x0, y0, z0, s = self.cube(n)
            a, b = self.window_ticks(n)
            if b <= t0 or a >= t1:
                continue
            if x0 + s <= lo[0] or x0 >= hi[0] or y0 + s <= lo[1] or y0 >= hi[1] or z0 + s <= lo[2] or z0 >= hi[2]:
                continue
            if n.children is None:
                out.append(n)
            else:
                stack.extend(n.children)
        return out

    # -- corners ----------------------------------------------------------
    def box_corners(self, x0, y0, z0, s) -> np.ndarray:
        return np.array([x0, y0, z0], dtype=np.int64) + CORNER_OFFSETS * s

    def corner_bits(self, n: Node) -> np.ndarray:
        return self.cache.get_or_eval(self.box_corners(*self.cube(n)))

    def cell_straddles(self, c: Cell) -> bool:
        bits = self.cache.get_or_eval(self.box_corners(*self.cell_box(c)))
        return bool(bits.min() != bits.max())

    def hypercube_corner_bits(self, n: Node) -> np.ndarray:
        """Bits at the 16 spacetime corners; the field is static so the value
        at (p, T0) equals the value at (p, T1)."""
        b = self.corner_bits(n)
        return np.concatenate([b, b])

    def straddles(self, n: Node) -> bool:
        b = self.corner_bits(n)
        return bool(b.min() != b.max())

    def refresh_surface_flags(self) -> int:
        """Exhaustive corner test on every leaf (batched through the cache)."""
        leaves = self.leaves()
        if not leaves:
            return 0
        ijk = np.array([self.cube(n) for n in leaves], dtype=np.int64)
        corners = ijk[:, None, :3] + CORNER_OFFSETS[None] * ijk[:, None, 3:4]
        bits = self.cache.get_or_eval(corners.reshape(-1, 3)).reshape(-1, 8)
        flags = bits.min(axis=1) != bits.max(axis=1)
        for n, f in zip(leaves, flags.tolist()):
            n.surface = f
        count = int(flags.sum())
        self.stats["surface_leaves"] = count
        return count

    # -- debug dump --------------------------------------------------------
    def dump(self) -> str:
        lines = []
        for n in self.iter_nodes():
            t0, t1 = self.window(n)
            parts = [str(n.depth), str(n.ix), str(n.iy), str(n.iz), repr(t0), repr(t1), n.split]
            if n.virtual:
                parts.append(f"V={n.virtual}")
            if n.surface:
                parts.append("S")
            if n.visible:
                parts.append("vis")
            lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        leaves = self.leaves()
        st = dict(self.stats)
        st["leaves"] = len(leaves)
        st["field_evaluations"] = self.cache.evaluations
        st["max_spatial_depth"] = max(n.depth for n in leaves)
        st["temporal_depth"] = max((n.tk for n in leaves if n.coarse), default=0)
        return st


def parse_dump(text: str) -> list[tuple]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        p = line.split()
        out.append((int(p[0]), int(p[1]), int(p[2]), int(p[3]), float(p[4]), float(p[5]), p[6], tuple(p[7:])))
    return out


# ---------------------------------------------------------------------------
# Algorithm: alternating temporal and spatial splits


class _Budget:
    def __init__(self, cap: int):
        self.cap = cap
        self.used = 0

    @property
    def exhausted(self):
        return self.used >= self.cap


def run_alternating_splits(tree: BinaryOctree, start: Node, d_hat: float, budget: _Budget | None = None) -> list[Node]:
    """Split ``start`` until every leaf below it has diameter <= d_hat or the
    budget runs out.  Returns the leaves still in the queue when the budget
    ran out with diameter > d_hat (empty when the threshold was met)."""
    budget = budget or _Budget(tree.config.size_cap)
    queue: list = []
    n = start
    K = tree.K
    while n.diam > d_hat and not budget.exhausted:
        if tree.can_split_temporal(n):
            kids = tree.split_temporal(n)
        elif n.depth < tree.D:
            kids = tree.split_spatial(n)
        else:
            kids = []
            tree.stats["depth_limited"] += 1
        budget.used += len(kids)
        for c in kids:
            heapq.heappush(queue, ((-c.diam, c.tj << (K - c.tk), c.depth, c.ix, c.iy, c.iz), id(c), c))
        if not queue:
            return []
        n = heapq.heappop(queue)[2]
    if n.diam <= d_hat:
        return []
    pending = [n] + [e[2] for e in queue if e[2].diam > d_hat]
    return pending


def flag_virtual_grid(tree: BinaryOctree, nodes: Iterable[Node], d_hat: float) -> int:
    """Mark leaves with diameter > d_hat as V^3 virtual grids, V the smallest
    power of two with diam < V * d_hat (capped at the remaining depth)."""
    count = 0
    for n in nodes:
        if not n.is_leaf or n.diam <= d_hat:
            continue
        v = virtual_grid_size(n.diam, d_hat)
        v = min(v, 1 << (tree.D - n.depth))
        if v > 1:
            n.virtual = v
            count += 1
    return count


def virtual_grid_size(diam: float, d_hat: float) -> int:
    v = 1
    while not diam < v * d_hat:
        v *= 2
    return v


# ---------------------------------------------------------------------------
# surface detection by flood fill


def _cells_in_box(tree: BinaryOctree, leaves: Iterable[Node], lo, hi) -> list[Cell]:
    out = []
    for n in leaves:
        if not n.virtual:
            out.append(Cell(n))
            continue
        x0, y0, z0, s = tree.cube(n)
        v = n.virtual
        ss = s // v
        rng = []
        for ax, base in enumerate((x0, y0, z0)):
            a = max(0, (lo[ax] - base) // ss)
            b = min(v, -(-(hi[ax] - base) // ss))
            rng.append(range(a, b))
        out.extend(Cell(n, (u, w, q)) for u in rng[0] for w in rng[1] for q in rng[2])
    return out


def cell_neighbors(tree: BinaryOctree, c: Cell) -> list[Cell]:
    """Spatial (6 faces) and temporal (2 ends) face neighbours of a cell."""
    x0, y0, z0, s = tree.cell_box(c)
    a, b = tree.window_ticks(c.node)
    lo0, hi0 = [x0, y0, z0], [x0 + s, y0 + s, z0 + s]
    out = []
    for ax in range(3):
        for side in (-1, 1):
            lo, hi = list(lo0), list(hi0)
            if side < 0:
                lo[ax], hi[ax] = lo0[ax] - 1, lo0[ax]
            else:
                lo[ax], hi[ax] = hi0[ax], hi0[ax] + 1
            out.extend(_cells_in_box(tree, tree.leaves_overlapping(lo, hi, a, b), lo, hi))
    for ta, tb in ((a - 1, a), (b, b + 1)):
        out.extend(_cells_in_box(tree, tree.leaves_overlapping(lo0, hi0, ta, tb), lo0, hi0))
    return out


def flood_fill_surface(tree: BinaryOctree, seeds: Iterable[Cell]) -> list[Cell]:
    """Surface-intersecting cells reachable from the seeds through chains of
    surface-intersecting face neighbours.  Deterministic as a set; returned
    sorted by cell key."""
    visited = set()
    found = {}
    q = deque()
    for c in seeds:
        k = c.key()
        if k not in visited:
            visited.add(k)
            q.append(c)
    while q:
        c = q.popleft()
        if not tree.cell_straddles(c):
            continue
        found[c.key()] = c
        for nb in cell_neighbors(tree, c):
            k = nb.key()
            if k not in visited:
                visited.add(k)
                q.append(nb)
    return [found[k] for k in sorted(found, key=_cell_sort_key)]


def _cell_sort_key(k):
    return (k[0], k[1] or (-1, -1, -1))


def _cell_at(tree: BinaryOctree, x, y, z, tick) -> Cell | None:
    n = tree.locate(x, y, z, tick)
    if n is None:
        return None
    if not n.virtual:
        return Cell(n)
    x0, y0, z0, s = tree.cube(n)
    ss = s // n.virtual
    return Cell(n, ((x - x0) // ss, (y - y0) // ss, (z - z0) // ss))


def seed_cells(tree: BinaryOctree) -> list[Cell]:
    cfg = tree.config
    if cfg.flood_seed_strategy == "all":
        leaves = tree.leaves()
        full = 1 << tree.D
        return _cells_in_box(tree, leaves, (0, 0, 0), (full, full, full))
    path = tree.path
    L = len(path)
    full = 1 << tree.D
    rng = np.random.default_rng(cfg.seed)
    cams = np.unique(np.linspace(0, L - 1, min(L, cfg.seed_cameras)).round().astype(int))
    cell = tree.lattice.cell
    origin = tree._origin
    seeds: dict = {}

    def add(c):
        if c is not None:
            seeds.setdefault(c.key(), c)

    for i in cams.tolist():
        cam = path[i]
        tick = tree.time_tick(cam.t)
        p = (np.asarray(cam.position) - origin) / cell
        px, py = int(math.floor(p[0])), int(math.floor(p[1]))
        if 0 <= px < full and 0 <= py < full:
            col = tree.leaves_overlapping((px, py, 0), (px + 1, py + 1, full), tick, tick + 1)
            for c in _cells_in_box(tree, col, (px, py, 0), (px + 1, py + 1, full)):
                add(c)
        # random rays through the frustum, walked leaf by leaf
        R = cam.rotation
        ty = math.tan(0.5 * cam.fov_y_rad)
        tx = ty * cam.width / cam.height
        for _ in range(cfg.n_random_rays):
            u, v = rng.uniform(-1, 1, 2)
            d = R @ np.array([u * tx, v * ty, -1.0])
            d /= np.linalg.norm(d)
            _walk_ray(tree, p, d, tick, add)
    return list(seeds.values())


def _walk_ray(tree: BinaryOctree, p0, d, tick, add, max_steps=4096):
    """Walk a lattice-space ray through the leaves it crosses, stopping at the
    first surface-straddling cell."""
    full = float(1 << tree.D)
    t_in, t_out = 0.0, math.inf
    for ax in range(3):
        if abs(d[ax]) < 1e-15:
            if not 0 <= p0[ax] < full:
                return
            continue
        a, b = (0.0 - p0[ax]) / d[ax], (full - p0[ax]) / d[ax]
        t_in, t_out = max(t_in, min(a, b)), min(t_out, max(a, b))
    if t_in >= t_out:
        return
    t = t_in + 1e-6
    for _ in range(max_steps):
        if t >= t_out:
            return
        q = p0 + t * d
        c = _cell_at(tree, *(int(math.floor(v)) for v in q), tick)
        if c is None:
            return
        add(c)
        if tree.cell_straddles(c):
            return
        x0, y0, z0, s = tree.cell_box(c)
        # exit distance from the current cell
        t_next = math.inf
        for ax, lo in enumerate((x0, y0, z0)):
            if d[ax] > 1e-15:
                t_next = min(t_next, (lo + s - p0[ax]) / d[ax])
            elif d[ax] < -1e-15:
                t_next = min(t_next, (lo - p0[ax]) / d[ax])
        t = max(t_next, t) + 1e-6


# ---------------------------------------------------------------------------
# visibility


def visibility_filter(tree: BinaryOctree, cells: Sequence[Cell], depth_buffers, camera_stride: int = 1) -> list[Cell]:
    """Keep cells whose bounding sphere footprint shows at least one pixel
    with buffer depth >= (nearest node depth - node diagonal) for some camera
    in the cell's window.  ``depth_buffers[i]`` is an (H, W) view-depth array
    for camera i (+inf where empty)."""
    path = tree.path
    kept = []
    for c in cells:
        x0, y0, z0, s = tree.cell_box(c)
        size = s * tree.lattice.cell
        center = tree.lattice.to_world(np.array([x0, y0, z0]) + 0.5 * s)
        r = 0.5 * math.sqrt(3.0) * size
        diag = 2 * r
        idx = path.window_indices(*tree.window(c.node))
        vis = False
        for i in range(idx.start, idx.stop, camera_stride):
            if _sphere_visible(path[i], center, r, diag, depth_buffers[i]):
                vis = True
                break
        c.node.visible = vis
        if vis:
            kept.append(c)
    return kept


def _sphere_visible(cam, center, r, diag, buf) -> bool:
    pc = cam.world_to_camera(center)
    z = -pc[2]
    if z + r <= 0:
        return False
    if z - r <= 1e-9:
        return True
    f = cam.focal
    u = 0.5 * cam.width + f * pc[0] / z
    v = 0.5 * cam.height - f * pc[1] / z
    rp = f * r / (z - r)
    H, W = buf.shape
    u0, u1 = max(0, int(math.floor(u - rp))), min(W, int(math.ceil(u + rp)))
    v0, v1 = max(0, int(math.floor(v - rp))), min(H, int(math.ceil(v + rp)))
    if u0 >= u1 or v0 >= v1:
        return False
    return bool((buf[v0:v1, u0:u1] >= (z - r) - diag).any())


# ---------------------------------------------------------------------------
# coarse-to-fine construction


def build_coarse(tree: BinaryOctree) -> list[Node]:
    """Step (a): alternating splits with the coarse threshold; virtual grids
    are flagged if the size cap stops refinement early."""
    cfg = tree.config
    budget = _Budget(cfg.size_cap - 1)
    pending = run_alternating_splits(tree, tree.root, cfg.d_hat_1, budget)
    if pending:
        tree.stats["cap_hit_coarse"] = 1
        tree.stats["virtual_flags"] += flag_virtual_grid(tree, pending, cfg.d_hat_1)
    for n in tree.leaves():
        n.coarse = True
        n.group = group_id(n.tk, n.tj)
    return pending


def instantiate_cell(tree: BinaryOctree, c: Cell, box=None) -> Node:
    """Materialise the path of spatial splits down to a virtual sub-cell.
    Pass ``box`` when an earlier sibling has already split the node."""
    if c.sub is None:
        return c.node
    n = c.node
    x0, y0, z0, s = box or tree.cell_box(c)
    target_depth = tree.D - (s.bit_length() - 1)
    while n.depth < target_depth:
        if n.is_leaf:
            tree.split_spatial(n)
            tree.stats["virtual_instantiated"] += 1
        sh = tree.D - n.depth - 1
        n = n.children[((x0 >> sh) & 1) | (((y0 >> sh) & 1) << 1) | (((z0 >> sh) & 1) << 2)]
    return n


def refine_surface_nodes(tree: BinaryOctree, cells: Sequence[Cell], d_hat: float | None = None) -> int:
    """Step (c): re-run the alternating splits on each surface cell with the
    fine threshold.  The size cap applies to the whole pass.  Returns the
    number of nodes created."""
    d_hat = tree.config.d_hat_2 if d_hat is None else d_hat
    budget = _Budget(tree.config.size_cap)
    # virtual cells first, leaf order is a plain function of the cell keys
    boxes = [tree.cell_box(c) for c in cells]
    targets = [instantiate_cell(tree, c, box) for c, box in zip(cells, boxes)]
    before = tree.stats["nodes"]
    for n in targets:
        if not n.is_leaf:
            continue
        pending = run_alternating_splits(tree, n, d_hat, budget)
        if pending:
            tree.stats["cap_hit_refine"] = 1
            tree.stats["virtual_flags_refine"] += len(pending)
    return tree.stats["nodes"] - before


def build_tree(field: OccupancyField, path: CameraPath, config: ExtractionConfig, depth_buffers=None) -> BinaryOctree:
    """Coarse tree, flood-fill surface detection, optional visibility filter,
    fine refinement and a final exhaustive surface flag pass."""
    config.validate()
    tree = BinaryOctree(field, path, config)
    build_coarse(tree)
    cells = flood_fill_surface(tree, seed_cells(tree))
    for c in cells:
        c.node.surface = True
    tree.stats["surface_coarse"] = len(cells)
    if config.visibility_filter and depth_buffers is not None:
        cells = visibility_filter(tree, cells, depth_buffers)
        tree.stats["surface_visible"] = len(cells)
    refine_surface_nodes(tree, cells)
    tree.refresh_surface_flags()
    return tree


def parse_extraction_config(text: str, base: ExtractionConfig | None = None) -> ExtractionConfig:
    """``key = value`` lines naming ExtractionConfig fields; ``#`` comments."""
    from dataclasses import fields as dc_fields

    cfg = replace(base or ExtractionConfig())
    known = {f.name: f for f in dc_fields(ExtractionConfig)}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown extraction key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        setattr(cfg, key, _coerce(key, getattr(ExtractionConfig, key, None), raw, lineno))
    return cfg


def _coerce(key, default, raw, lineno):
    try:
        if key in ("root_origin", "root_window"):
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            if len(vals) != (3 if key == "root_origin" else 2):
                raise ValueError("wrong number of values")
            return vals
        if key == "flood_seed_strategy":
            return raw
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r} ({exc})") from None
