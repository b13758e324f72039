"""Dual contouring over the spacetime leaf complex.

A dual element is a spatial lattice segment ``e`` (axis, base, length) at an
event tick ``t``.  Its eight incident cells are the leaves containing the
four quadrant probe points around ``e`` at ticks ``t - 1`` (lower side) and
``t`` (upper side).  The segment is used when no incident cell is smaller
than the segment and ``t`` is a window endpoint of some incident cell.  At
the first and last tick of the root window the missing side is filled by
ghost vertices that copy the existing cell's position at the root boundary.

Groups are the time windows of coarse leaves, named by binary strings.  The
search visits groups in lexicographic order and resolves each element when
the lexicographically largest group among its incident cells is visited; at
that point every incident group is resident because all of them pairwise
touch in time.
"""
from __future__ import annotations

import math
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field as dc_field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .binoctree import CUBE_EDGES, CORNER_OFFSETS, BinaryOctree, Node, TEMPORAL

MAGIC = b"BIN4"
VERSION = 1
LOCAL_BITS = 40

# quadrant order around an edge: (bit for axis a+1, bit for axis a+2), cyclic
QUADRANTS = ((0, 0), (1, 0), (1, 1), (0, 1))


class MeshFormatError(ValueError):
    pass


class ContourError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# group algebra


def group_increment(s: str, delta: int) -> str | None:
    """Fixed-length binary increment; None on under/overflow."""
    if delta == 0:
        return s
    if not s:
        return None
    v = int(s, 2) + delta
    if v < 0 or v >= (1 << len(s)):
        return None
    return format(v, f"0{len(s)}b")


def _ancestors(s: str) -> set[str]:
    return {s[:i] for i in range(len(s))}


def _descendants(s: str, d: int) -> set[str]:
    out = set()
    frontier = [s]
    while frontier:
        nxt = []
        for r in frontier:
            if len(r) < d:
                nxt.extend((r + "0", r + "1"))
        out.update(nxt)
        frontier = nxt
    return out


def _branch(s: str, bit: str, d: int) -> set[str]:
    return {s + bit * k for k in range(1, d - len(s) + 1)}


def neighbor_groups(s: str, d: int) -> set[str]:
    """Groups whose windows overlap or touch the window of ``s``."""
    out = {s} | _descendants(s, d) | _ancestors(s)
    left, right = group_increment(s, -1), group_increment(s, +1)
    if left is not None:
        out |= {left} | _branch(left, "1", d) | _ancestors(left)
    if right is not None:
        out |= {right} | _branch(right, "0", d) | _ancestors(right)
    return {r for r in out if len(r) <= d}


def predecessor_groups(s: str, d: int) -> set[str]:
    return {r for r in neighbor_groups(s, d) if r <= s}


def lex_order(d: int) -> list[str]:
    """All binary strings of length <= d in lexicographic order."""
    out = []

    def rec(s):
        out.append(s)
        if len(s) < d:
            rec(s + "0")
            rec(s + "1")

    rec("")
    return out


def group_window(s: str) -> tuple[float, float]:
    """Window of s as fractions of the root window."""
    if not s:
        return 0.0, 1.0
    n = 1 << len(s)
    v = int(s, 2)
    return v / n, (v + 1) / n


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class BipolarEdge:
    axis: int
    base: tuple[int, int, int]
    length: int
    t0: int
    t1: int
    polarity: int
    kind: str = "type1"
    owner: str = ""

    @property
    def key(self):
        return (self.axis, *self.base, self.length, self.t0, self.t1)


@dataclass
class Polyhedron:
    vertices: tuple[int, ...]
    faces: tuple[tuple[int, ...], ...]
    group: int
    edge: tuple | None = None
    kind: str | None = None


@dataclass
class Mesh4D:
    d: int
    root_window: tuple[float, float]
    groups: list[str]
    vertices: np.ndarray
    vertex_group: np.ndarray
    polyhedra: list[Polyhedron]
    vertex_keys: list | None = None

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def global_ids(self) -> np.ndarray:
        """File-level ids: (group ordinal << 40) | index within the group."""
        g = self.vertex_group.astype(np.int64)
        starts = np.searchsorted(g, np.arange(len(self.groups)))
        local = np.arange(len(g)) - starts[g]
        return (g << LOCAL_BITS) | local

    def canonical_polyhedra(self, by_key: bool = True) -> set:
        """Polyhedra as hashable tuples of vertex identities, for comparisons."""
        ident = self.vertex_keys if (by_key and self.vertex_keys is not None) else [
            tuple(v) for v in self.vertices.tolist()
        ]
        out = set()
        for p in self.polyhedra:
            faces = tuple(sorted(_rotate_min(tuple(ident[i] for i in f)) for f in p.faces))
            out.add(faces)
        return out


def _rotate_min(cycle):
    k = min(range(len(cycle)), key=lambda i: cycle[i])
    return cycle[k:] + cycle[:k]


# ---------------------------------------------------------------------------
# geometry helpers


def edge_probes(axis: int, base, h: int):
    """The four quadrant probe points (spatial lattice) around a segment."""
    a1, a2 = (axis + 1) % 3, (axis + 2) % 3
    out = []
    for q1, q2 in QUADRANTS:
        p = list(base)
        p[a1] = base[a1] - 1 + q1
        p[a2] = base[a2] - 1 + q2
        out.append(tuple(p))
    return out


def edge_endpoints(axis: int, base, h: int):
    p1 = list(base)
    p1[axis] += h
    return tuple(base), tuple(p1)


def leaf_bipolar_edges(tree: BinaryOctree, n: Node):
    """(axis, base, length, polarity) for the bipolar cube edges of a leaf."""
    x0, y0, z0, s = tree.cube(n)
    corners = np.array([x0, y0, z0], dtype=np.int64) + CORNER_OFFSETS * s
    bits = tree.cache.get_or_eval(corners)
    out = []
    for axis, o in CUBE_EDGES:
        o1 = o | (1 << axis)
        if bits[o] != bits[o1]:
            out.append((axis, tuple(int(v) for v in corners[o]), s, int(bits[o])))
    return out


def find_type1_edges(tree: BinaryOctree, leaves: Iterable[Node]) -> list[BipolarEdge]:
    """Bipolar cube edges of the given leaves, one record per (segment,
    window); owner is the smallest owning leaf by key."""
    found: dict = {}
    for n in sorted(leaves, key=lambda n: n.key):
        a, b = tree.window_ticks(n)
        for axis, base, h, pol in leaf_bipolar_edges(tree, n):
            k = (axis, base, h, a, b)
            if k not in found:
                found[k] = BipolarEdge(axis, base, h, a, b, pol, "type1", n.group or "")
    return [found[k] for k in sorted(found)]


class _Probe:
    """Point location restricted to resident groups."""

    def __init__(self, tree: BinaryOctree):
        self.tree = tree
        self.resident: set[str] | None = None  # None: everything resident
        self.full = 1 << tree.D
        self.ticks = 1 << tree.K

    def coarse(self, x, y, z, tick) -> Node | None:
        t = self.tree
        if not (0 <= x < self.full and 0 <= y < self.full and 0 <= z < self.full and 0 <= tick < self.ticks):
            return None
        n = t.root
        D, K = t.D, t.K
        while not n.coarse:
            if n.split == TEMPORAL:
                n = n.children[(tick >> (K - n.tk - 1)) & 1]
            else:
                sh = D - n.depth - 1
                n = n.children[((x >> sh) & 1) | (((y >> sh) & 1) << 1) | (((z >> sh) & 1) << 2)]
        return n

    def leaf(self, start: Node, x, y, z, tick) -> Node:
        if self.resident is not None and start.group not in self.resident:
            raise ContourError(f"group {start.group!r} is not resident")
        n = start
        t = self.tree
        D, K = t.D, t.K
        while n.children is not None:
            if n.split == TEMPORAL:
                n = n.children[(tick >> (K - n.tk - 1)) & 1]
            else:
                sh = D - n.depth - 1
                n = n.children[((x >> sh) & 1) | (((y >> sh) & 1) << 1) | (((z >> sh) & 1) << 2)]
        return n


def incident_coarse(probe: _Probe, axis, base, h, tick):
    """Coarse nodes for the 8 incident cells (lower side first); None marks
    a probe outside the root cube or the root window."""
    pts = edge_probes(axis, base, h)
    lower = [probe.coarse(*p, tick - 1) for p in pts]
    upper = [probe.coarse(*p, tick) for p in pts]
    return pts, lower, upper


# ---------------------------------------------------------------------------
# bisection


def bisect_edges(field, lattice, p0: np.ndarray, p1: np.ndarray, b0: np.ndarray, k: int) -> np.ndarray:
    """Batched bisection along segments p0 -> p1 (lattice coordinates, world
    evaluation); returns crossing points in world units."""
    w0 = lattice.to_world(p0)
    w1 = lattice.to_world(p1)
    lo = np.zeros(len(w0))
    hi = np.ones(len(w0))
    for _ in range(k):
        mid = 0.5 * (lo + hi)
        bits = field.eval_batch(w0 + mid[:, None] * (w1 - w0))
        same = bits == b0
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    s = 0.5 * (lo + hi)
    return w0 + s[:, None] * (w1 - w0)


def place_vertex(tree: BinaryOctree, node: Node, k: int | None = None) -> np.ndarray:
    """(x, y, z, t): mean of bisected crossings on the node's bipolar cube
    edges, clamped to the cube; t is the window midpoint."""
    k = tree.config.bisection_iters if k is None else k
    edges = leaf_bipolar_edges(tree, node)
    if not edges:
        raise ValueError(f"node {node.key} does not straddle the surface")
    p0 = np.array([e[1] for e in edges], dtype=np.float64)
    p1 = np.array([edge_endpoints(*e[:3])[1] for e in edges], dtype=np.float64)
    b0 = np.array([e[3] for e in edges], dtype=np.uint8)
    cross = bisect_edges(tree.field, tree.lattice, p0, p1, b0, k)
    pos = _clamp(tree, node, _fmean(cross))
    t0, t1 = tree.window(node)
    return np.array([*pos, 0.5 * (t0 + t1)])


def _fmean(pts: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(pts[:, i]) / len(pts) for i in range(3)])


def _clamp(tree: BinaryOctree, node: Node, p):
    x0, y0, z0, s = tree.cube(node)
    lo = tree.lattice.to_world((x0, y0, z0))
    hi = tree.lattice.to_world((x0 + s, y0 + s, z0 + s))
    return np.minimum(np.maximum(p, lo), hi)


# ---------------------------------------------------------------------------
# the search


def polyhedron_faces(lower: Sequence[int], upper: Sequence[int], polarity: int):
    """Faces of the combinatorial cube on the 8 incident vertices, oriented
    so that slicing yields outward-facing polygons, with collapsed vertices
    removed and degenerate faces dropped."""
    faces = [tuple(lower), tuple(reversed(upper))]
    for k in range(4):
        j = (k + 1) % 4
        faces.append((lower[j], lower[k], upper[k], upper[j]))
    if not polarity:
        faces = [tuple(reversed(f)) for f in faces]
    out = []
    for f in faces:
        g = _collapse(f)
        if len(g) >= 3:
            out.append(g)
    return out


def _collapse(f):
    out = []
    for v in f:
        if not out or out[-1] != v:
            out.append(v)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return tuple(out)


@dataclass
class SearchStats:
    d: int = 0
    groups_total: int = 0
    groups_nonempty: int = 0
    group_loads: int = 0
    peak_resident_groups: int = 0
    demand_loads: int = 0
    type1_records: int = 0
    type2_records: int = 0
    records: int = 0
    invalid_records: int = 0
    polyhedra: int = 0
    vertices: int = 0

    def as_dict(self):
        return dict(self.__dict__)


class _Search:
    def __init__(self, tree: BinaryOctree, bisection_iters: int | None, streaming: bool):
        self.tree = tree
        self.k = tree.config.bisection_iters if bisection_iters is None else bisection_iters
        self.probe = _Probe(tree)
        self.streaming = streaming
        self.ticks = 1 << tree.K
        self.seen: set = set()
        self.waiting: dict[str, list] = defaultdict(list)
        self.work: deque = deque()
        self.stats = SearchStats()
        # vertex registry
        self.vkey_index: dict = {}
        self.vkeys: list = []
        self.vnode: list = []
        self.vfallback: dict[int, list] = defaultdict(list)
        self.polys: list = []
        self.edges: list = []
        coarse = [n for n in tree.iter_nodes() if n.coarse]
        self.d = max((n.tk for n in coarse), default=0)
        self.chunks: dict[str, list[Node]] = defaultdict(list)
        for n in coarse:
            self.chunks[n.group].append(n)
        self.current = ""

    # group residency ------------------------------------------------------
    def set_resident(self, need: set[str]):
        res = self.probe.resident
        new = need - res
        self.stats.group_loads += len(new)
        self.probe.resident = set(need)
        self.stats.peak_resident_groups = max(self.stats.peak_resident_groups, len(need))

    def run(self):
        d = self.d
        self.stats.d = d
        order = lex_order(d)
        nonempty = set(self.chunks)
        self.stats.groups_total = len(order)
        self.stats.groups_nonempty = len(nonempty)
        if self.streaming:
            self.probe.resident = set()
        for s in order:
            self.current = s
            if self.streaming:
                self.set_resident(({s} | predecessor_groups(s, d)) & nonempty)
            if s not in nonempty:
                continue
            for n in sorted(self._chunk_leaves(s), key=lambda n: n.key):
                if not n.surface:
                    continue
                a, b = self.tree.window_ticks(n)
                for axis, base, h, pol in leaf_bipolar_edges(self.tree, n):
                    for t in (a, b):
                        self.submit((axis, base, h, t), pol, "type1")
            self.drain()
            for rec in self.waiting.pop(s, []):
                self.work.append(rec)
            self.drain()
        left = sum(len(v) for v in self.waiting.values())
        if left:
            k = next(iter(self.waiting.values()))[0]
            raise ContourError(f"{left} unresolved dual elements, e.g. {k}")

    def _chunk_leaves(self, s):
        out = []
        for c in self.chunks[s]:
            stack = [c]
            while stack:
                n = stack.pop()
                if n.children is None:
                    out.append(n)
                else:
                    stack.extend(n.children)
        return out

    def submit(self, key, polarity, kind):
        if key in self.seen:
            return
        self.seen.add(key)
        if kind == "type1":
            self.stats.type1_records += 1
        else:
            self.stats.type2_records += 1
        axis, base, h, t = key
        pts, lower, upper = incident_coarse(self.probe, axis, base, h, t)
        if t == 0:
            lower = [None] * 4
        if t == self.ticks:
            upper = [None] * 4
        side_ok = lambda side, edge_t: all(c is not None for c in side) or edge_t
        if not side_ok(lower, t == 0) or not side_ok(upper, t == self.ticks):
            self.stats.invalid_records += 1
            return
        groups = {c.group for c in lower + upper if c is not None}
        m = max(groups)
        rec = (key, polarity, kind, pts, lower, upper, m)
        if self.streaming and m > self.current:
            self.waiting[m].append(rec)
            return
        if self.streaming and not groups <= self.probe.resident:
            self.stats.demand_loads += len(groups - self.probe.resident)
            self.resolve(rec, extra=groups)
            return
        self.work.append(rec)

    def drain(self):
        while self.work:
            self.resolve(self.work.popleft())

    def resolve(self, rec, extra=None):
        (axis, base, h, t), polarity, kind, pts, lower, upper, m = rec
        saved = None
        if extra is not None:
            saved = self.probe.resident
            self.probe.resident = saved | extra
        tree = self.tree
        lo = [self.probe.leaf(c, *p, t - 1) if c is not None else None for c, p in zip(lower, pts)]
        up = [self.probe.leaf(c, *p, t) if c is not None else None for c, p in zip(upper, pts)]
        if saved is not None:
            self.probe.resident = saved
        real = [n for n in lo + up if n is not None]
        sizes = [tree.size_lattice(n.depth) for n in real]
        size_h = tree.size_lattice
        # walk forward while a same-size upper cell keeps the segment as a cube edge
        if t < self.ticks and any(size_h(n.depth) == h for n in up):
            nxt = min(tree.window_ticks(n)[1] for n in up)
            self.submit((axis, base, h, nxt), polarity, "type2")
        if min(sizes) != h:
            self.stats.invalid_records += 1
            return
        if t == 0:
            lo_v = [self.vertex(n, -1) for n in up]
        else:
            lo_v = [self.vertex(n, 0) for n in lo]
        if t == self.ticks:
            up_v = [self.vertex(n, +1) for n in lo]
        else:
            up_v = [self.vertex(n, 0) for n in up]
        ekey = (axis, *base, h, t)
        for v in set(lo_v + up_v):
            if v in self.vfallback:
                self.vfallback[v].append(ekey)
        faces = polyhedron_faces(lo_v, up_v, polarity)
        if not faces:
            return
        verts = tuple(dict.fromkeys(v for f in faces for v in f))
        is_t1 = any(t in tree.window_ticks(n) and size_h(n.depth) == h for n in real)
        self.polys.append((m, verts, tuple(faces), ekey, "type1" if is_t1 else "type2"))
        self.stats.polyhedra += 1

    def vertex(self, n: Node, ghost: int) -> int:
        key = (*n.key, ghost)
        i = self.vkey_index.get(key)
        if i is None:
            i = len(self.vkeys)
            self.vkey_index[key] = i
            self.vkeys.append(key)
            self.vnode.append(n)
            if not self.tree.straddles(n):
                self.vfallback[i] = []
        return i

    # assembly ---------------------------------------------------------------
    def assemble(self) -> Mesh4D:
        tree = self.tree
        groups = sorted(self.chunks)
        gord = {g: i for i, g in enumerate(groups)}
        n = len(self.vkeys)
        pos = np.zeros((n, 4))
        # bisection, batched over all distinct segments
        seg_index: dict = {}
        segs = []
        own_edges = []
        for i, node in enumerate(self.vnode):
            if i in self.vfallback:
                own = [e[:5] for e in self.vfallback[i]]
                spec = []
                for axis, bx, by, bz, h in own:
                    b0 = int(tree.cache.get(bx, by, bz))
                    spec.append((axis, (bx, by, bz), h, b0))
            else:
                spec = leaf_bipolar_edges(tree, node)
            idx = []
            for axis, base, h, b0 in spec:
                k = (axis, base, h)
                j = seg_index.get(k)
                if j is None:
                    j = len(segs)
                    seg_index[k] = j
                    segs.append((base, edge_endpoints(axis, base, h)[1], b0))
                idx.append(j)
            own_edges.append(idx)
        if segs:
            p0 = np.array([s[0] for s in segs], dtype=np.float64)
            p1 = np.array([s[1] for s in segs], dtype=np.float64)
            b0 = np.array([s[2] for s in segs], dtype=np.uint8)
            cross = bisect_edges(tree.field, tree.lattice, p0, p1, b0, self.k)
        else:
            cross = np.zeros((0, 3))
        for i, node in enumerate(self.vnode):
            idx = sorted(set(own_edges[i]))
            p = _clamp(tree, node, _fmean(cross[idx]))
            ghost = self.vkeys[i][-1]
            if ghost < 0:
                t = tree.T0
            elif ghost > 0:
                t = tree.T1
            else:
                a, b = tree.window(node)
                t = 0.5 * (a + b)
            pos[i, :3] = p
            pos[i, 3] = t
        # order vertices by (group ordinal, creation order)
        vg = np.array([gord[nd.group] for nd in self.vnode], dtype=np.int64)
        perm = np.argsort(vg, kind="stable")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(n)
        polys = []
        for m, verts, faces, ekey, kind in sorted(self.polys, key=lambda p: (gord[p[0]],)):
            polys.append(
                Polyhedron(
                    tuple(int(inv[v]) for v in verts),
                    tuple(tuple(int(inv[v]) for v in f) for f in faces),
                    gord[m],
                    ekey,
                    kind,
                )
            )
        self.stats.vertices = n
        return Mesh4D(
            d=self.d,
            root_window=(tree.T0, tree.T1),
            groups=groups,
            vertices=pos[perm],
            vertex_group=vg[perm],
            polyhedra=polys,
            vertex_keys=[self.vkeys[j] for j in perm.tolist()],
        )


def dual_polyhedron_search(tree: BinaryOctree, bisection_iters: int | None = None, streaming: bool = True):
    """Streamed search over groups; returns (Mesh4D, SearchStats)."""
    s = _Search(tree, bisection_iters, streaming)
    s.run()
    mesh = s.assemble()
    s.stats.records = len(s.seen)
    return mesh, s.stats


def propagate_type2(tree: BinaryOctree, edge: BipolarEdge) -> list[BipolarEdge]:
    """Offset copies of a type-1 record at every finer neighbour window
    boundary inside its time range (whole tree resident)."""
    probe = _Probe(tree)
    out = []
    t = edge.t0
    while t < edge.t1:
        pts, _, upper = incident_coarse(probe, edge.axis, edge.base, edge.length, t)
        if any(c is None for c in upper):
            break
        up = [probe.leaf(c, *p, t) for c, p in zip(upper, pts)]
        t = min(tree.window_ticks(n)[1] for n in up)
        if t < edge.t1:
            out.append(
                BipolarEdge(edge.axis, edge.base, edge.length, t, t, edge.polarity, "type2", edge.owner)
            )
    return out


# ---------------------------------------------------------------------------
# binary file format


def write_mesh4d(mesh: Mesh4D, fp: BinaryIO) -> None:
    gids = mesh.global_ids()
    fp.write(MAGIC)
    fp.write(struct.pack("<II", VERSION, mesh.d))
    fp.write(struct.pack("<2d", *mesh.root_window))
    by_group = defaultdict(list)
    for p in mesh.polyhedra:
        by_group[p.group].append(p)
    vg = mesh.vertex_group
    for gi, g in enumerate(mesh.groups):
        name = g.encode("ascii")
        fp.write(struct.pack("<B", len(name)) + name)
        sel = np.flatnonzero(vg == gi)
        fp.write(struct.pack("<Q", len(sel)))
        fp.write(np.ascontiguousarray(mesh.vertices[sel], dtype="<f8").tobytes())
        polys = by_group.get(gi, [])
        fp.write(struct.pack("<Q", len(polys)))
        for p in polys:
            fp.write(struct.pack("<B", len(p.vertices)))
            fp.write(np.array([gids[v] for v in p.vertices], dtype="<u8").tobytes())
            fp.write(struct.pack("<B", len(p.faces)))
            for f in p.faces:
                fp.write(struct.pack("<B", len(f)))
                fp.write(np.array([gids[v] for v in f], dtype="<u8").tobytes())


def save_mesh4d(mesh: Mesh4D, path) -> None:
    with open(path, "wb") as fp:
        write_mesh4d(mesh, fp)


def _take(buf, pos, n):
    if pos + n > len(buf):
        raise MeshFormatError("truncated mesh file")
    return buf[pos:pos + n], pos + n


def read_mesh4d(data: bytes) -> Mesh4D:
    raw, pos = _take(data, 0, 4)
    if raw != MAGIC:
        raise MeshFormatError(f"bad magic {raw!r}")
    raw, pos = _take(data, pos, 8)
    version, d = struct.unpack("<II", raw)
    if version != VERSION:
        raise MeshFormatError(f"unsupported version {version}")
    raw, pos = _take(data, pos, 16)
    root_window = struct.unpack("<2d", raw)
    groups, verts, vgroup, polys_raw = [], [], [], []
    while pos < len(data):
        raw, pos = _take(data, pos, 1)
        raw, pos = _take(data, pos, raw[0])
        groups.append(raw.decode("ascii"))
        gi = len(groups) - 1
        raw, pos = _take(data, pos, 8)
        (nv,) = struct.unpack("<Q", raw)
        raw, pos = _take(data, pos, 32 * nv)
        verts.append(np.frombuffer(raw, dtype="<f8").reshape(nv, 4))
        vgroup.append(np.full(nv, gi, dtype=np.int64))
        raw, pos = _take(data, pos, 8)
        (np_,) = struct.unpack("<Q", raw)
        for _ in range(np_):
            raw, pos = _take(data, pos, 1)
            raw, pos = _take(data, pos, 8 * raw[0])
            pv = np.frombuffer(raw, dtype="<u8").astype(np.int64)
            raw, pos = _take(data, pos, 1)
            faces = []
            for _ in range(raw[0]):
                raw, pos = _take(data, pos, 1)
                raw, pos = _take(data, pos, 8 * raw[0])
                faces.append(np.frombuffer(raw, dtype="<u8").astype(np.int64))
            polys_raw.append((gi, pv, faces))
    vertices = np.concatenate(verts) if verts else np.zeros((0, 4))
    vertex_group = np.concatenate(vgroup) if vgroup else np.zeros(0, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum([len(v) for v in verts])]).astype(np.int64)
    mask = (1 << LOCAL_BITS) - 1

    def flat(gid):
        g, local = gid >> LOCAL_BITS, gid & mask
        if g >= len(groups) or local >= starts[g + 1] - starts[g]:
            raise MeshFormatError(f"dangling vertex id {gid}")
        return int(starts[g] + local)

    polys = [
        Polyhedron(tuple(flat(int(v)) for v in pv), tuple(tuple(flat(int(v)) for v in f) for f in faces), gi)
        for gi, pv, faces in polys_raw
    ]
    return Mesh4D(d, tuple(root_window), groups, vertices, vertex_group, polys)


def load_mesh4d(path) -> Mesh4D:
    with open(path, "rb") as fp:
        return read_mesh4d(fp.read())
