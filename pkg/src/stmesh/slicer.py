"""Constant-time cross-sections of the 4D mesh, cap pyramids and OBJ export.

An edge (u, v) of a polyhedron face crosses time t1 when t_u <= t1 < t_v
after ordering the endpoints by time.  Within one face the crossings
alternate between upward and downward edges along the face cycle; each
upward crossing is joined to the next downward one, and sliced polygons are
the cycles formed by these chords.  Sliced vertices are identified by the
polyhedron edge they lie on, never by position.
"""
from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .contour4d import Mesh4D, Polyhedron


class SliceError(RuntimeError):
    pass


class SliceInputError(ValueError):
    pass


@dataclass
class Mesh3:
    vertices: np.ndarray
    polygons: list[tuple[int, ...]]
    provenance: list[int]
    keys: list[tuple[int, int]] = dc_field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    def boundary_edges(self) -> int:
        """Polygon edges without an oppositely oriented partner."""
        count = defaultdict(int)
        for poly in self.polygons:
            for a, b in zip(poly, poly[1:] + poly[:1]):
                count[(a, b)] += 1
        return sum(1 for (a, b), c in count.items() for _ in range(c) if count.get((b, a), 0) == 0)

    def triangles(self) -> np.ndarray:
        tris = []
        for poly in self.polygons:
            for k in range(1, len(poly) - 1):
                tris.append((poly[0], poly[k], poly[k + 1]))
        return np.array(tris, dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# single polyhedron


def _face_chords(face, times, t1, upper_closed=False):
    """Chords (start edge key, end edge key) of one face at time t1."""
    n = len(face)
    cross = []
    for i in range(n):
        a, b = face[i], face[(i + 1) % n]
        ta, tb = times[a], times[b]
        if upper_closed:
            up = ta < t1 <= tb
            down = tb < t1 <= ta
        else:
            up = ta <= t1 < tb
            down = tb <= t1 < ta
        if up or down:
            cross.append(((min(a, b), max(a, b)), up))
    if not cross:
        return []
    if len(cross) % 2:
        raise SliceError(f"face {face} has {len(cross)} crossings at t={t1}")
    start = next((i for i, c in enumerate(cross) if c[1]), None)
    if start is None:
        raise SliceError(f"face {face} has no upward crossing at t={t1}")
    cross = cross[start:] + cross[:start]
    chords = []
    for i in range(0, len(cross), 2):
        (ka, ua), (kb, ub) = cross[i], cross[i + 1]
        if not ua or ub:
            raise SliceError(f"face {face} crossings do not alternate at t={t1}")
        chords.append((ka, kb))
    return chords


def _chain(chords):
    nxt = {}
    for a, b in chords:
        if a in nxt:
            raise SliceError(f"edge {a} starts two chords")
        nxt[a] = b
    cycles = []
    done = set()
    for a in sorted(nxt):
        if a in done:
            continue
        cyc = [a]
        done.add(a)
        k = nxt[a]
        while k != a:
            if k in done or k not in nxt:
                raise SliceError(f"open chord chain through edge {k}")
            cyc.append(k)
            done.add(k)
            k = nxt[k]
        if len(set(cyc)) >= 3:
            cycles.append(tuple(cyc))
    return cycles


def polyhedron_cycles(poly: Polyhedron, times, t1: float, upper_closed=False):
    """Edge-key cycles of the cross-section of one polyhedron."""
    chords = []
    for f in poly.faces:
        chords.extend(_face_chords(f, times, t1, upper_closed))
    return _chain(chords)


def interpolate(vertices: np.ndarray, keys, t1: float) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
    a, b = vertices[k[:, 0]], vertices[k[:, 1]]
    swap = a[:, 3] > b[:, 3]
    u = np.where(swap[:, None], b, a)
    v = np.where(swap[:, None], a, b)
    w = (t1 - u[:, 3]) / (v[:, 3] - u[:, 3])
    return u[:, :3] + w[:, None] * (v[:, :3] - u[:, :3])


def slice_polyhedron(poly: Polyhedron, vertices: np.ndarray, t1: float):
    """List of polygons, each a list of ((u, v) edge key, xyz position)."""
    times = vertices[:, 3]
    out = []
    for cyc in polyhedron_cycles(poly, times, t1):
        pos = interpolate(vertices, cyc, t1)
        out.append([(k, tuple(p)) for k, p in zip(cyc, pos.tolist())])
    return out


# ---------------------------------------------------------------------------
# whole mesh


class SliceTable:
    """Per polyhedron and per interval between consecutive distinct vertex
    times, the cross-section cycles; a slice is then a table lookup plus a
    vectorised interpolation."""

    def __init__(self, mesh: Mesh4D):
        self.mesh = mesh
        times = mesh.vertices[:, 3]
        ta, tb, pid, cycles = [], [], [], []
        for i, p in enumerate(mesh.polyhedra):
            ts = sorted(set(float(times[v]) for v in p.vertices))
            for lo, hi in zip(ts, ts[1:]):
                cyc = polyhedron_cycles(p, times, lo)
                if cyc:
                    ta.append(lo)
                    tb.append(hi)
                    pid.append(i)
                    cycles.append(cyc)
        self.ta = np.array(ta)
        self.tb = np.array(tb)
        self.pid = np.array(pid, dtype=np.int64)
        self.cycles = cycles

    def select(self, t1: float, upper_closed=False) -> np.ndarray:
        if upper_closed:
            return np.flatnonzero((self.ta < t1) & (t1 <= self.tb))
        return np.flatnonzero((self.ta <= t1) & (t1 < self.tb))

    def slice(self, t1: float) -> Mesh3:
        T0, T1 = self.mesh.root_window
        if not T0 <= t1 <= T1:
            raise SliceInputError(f"t={t1} outside root window [{T0}, {T1}]")
        last = t1 == T1
        rows = self.select(t1, upper_closed=last)
        key_index: dict = {}
        keys: list = []
        polygons, prov = [], []
        for r in rows.tolist():
            cycs = self.cycles[r]
            if last:
                cycs = polyhedron_cycles(self.mesh.polyhedra[self.pid[r]], self.mesh.vertices[:, 3], t1, True)
            for cyc in cycs:
                idx = []
                for k in cyc:
                    j = key_index.get(k)
                    if j is None:
                        j = len(keys)
                        key_index[k] = j
                        keys.append(k)
                    idx.append(j)
                polygons.append(tuple(idx))
                prov.append(int(self.pid[r]))
        pos = interpolate(self.mesh.vertices, keys, t1) if keys else np.zeros((0, 3))
        return Mesh3(pos, polygons, prov, keys)


def slice_mesh(mesh: Mesh4D, t1: float, table: SliceTable | None = None) -> Mesh3:
    return (table or SliceTable(mesh)).slice(t1)


# ---------------------------------------------------------------------------
# cap pyramids on unmatched time-orthogonal faces


def extrude_time_faces(mesh: Mesh4D) -> Mesh4D:
    """Cap every time-orthogonal face that lies on its polyhedron's temporal
    boundary and has no polyhedron on its other side with a pyramid whose
    apex sits at the face centroid, offset away from the polyhedron by half
    the polyhedron's time span.  The cross-section of the cap grows from the
    centroid instead of appearing at full size."""
    T0, T1 = mesh.root_window
    V = mesh.vertices
    times = V[:, 3]
    sides = defaultdict(list)  # face vertex set -> list of (poly index, side, face)
    for i, p in enumerate(mesh.polyhedra):
        pts = [times[v] for v in p.vertices]
        lo, hi = min(pts), max(pts)
        for f in p.faces:
            tf = {float(times[v]) for v in f}
            if len(tf) != 1:
                continue
            tau = tf.pop()
            if tau == lo and hi > lo:
                sides[frozenset(f)].append((i, +1, f, hi - lo))
            elif tau == hi and hi > lo:
                sides[frozenset(f)].append((i, -1, f, hi - lo))
    new_v = [V]
    new_g = [mesh.vertex_group]
    new_keys = list(mesh.vertex_keys) if mesh.vertex_keys is not None else None
    polys = list(mesh.polyhedra)
    n = len(V)
    added = []
    for fs in sorted(sides, key=lambda s: sorted(s)):
        entries = sides[fs]
        if {e[1] for e in entries} != {entries[0][1]}:
            continue  # matched on both sides
        i, side, f, span = entries[0]
        tau = float(times[f[0]])
        if tau in (T0, T1):
            continue
        delta = 0.5 * span
        c = V[list(f), :3].mean(axis=0)
        apex_t = tau - side * delta
        apex_t = min(max(apex_t, T0), T1)
        added.append(np.array([[*c, apex_t]]))
        g = mesh.polyhedra[i].group
        new_g.append(np.array([g], dtype=np.int64))
        if new_keys is not None:
            new_keys.append(("apex", tuple(sorted(f))))
        apex = n
        n += 1
        base = tuple(reversed(f))
        tris = tuple((f[k], f[(k + 1) % len(f)], apex) for k in range(len(f)))
        polys.append(Polyhedron(tuple(f) + (apex,), (base,) + tris, g, None, "cap"))
    if not added:
        return mesh
    verts = np.concatenate(new_v + added)
    groups = np.concatenate(new_g)
    order = np.argsort(groups, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    polys = [
        Polyhedron(tuple(int(inv[v]) for v in p.vertices), tuple(tuple(int(inv[v]) for v in f) for f in p.faces),
                   p.group, p.edge, p.kind)
        for p in polys
    ]
    polys.sort(key=lambda p: p.group)
    return Mesh4D(
        mesh.d, mesh.root_window, mesh.groups, verts[order], groups[order], polys,
        [new_keys[j] for j in order.tolist()] if new_keys is not None else None,
    )


# ---------------------------------------------------------------------------
# OBJ export


def canonical_triangles(mesh3: Mesh3, min_area: float = 1e-12):
    """Canonically ordered vertices and fan triangles; triangles with area
    below ``min_area`` are skipped."""
    V = mesh3.vertices
    if len(V) == 0:
        return V, np.zeros((0, 3), dtype=np.int64)
    order = np.lexsort((V[:, 2], V[:, 1], V[:, 0]))
    rank = np.empty(len(V), dtype=np.int64)
    rank[order] = np.arange(len(V))
    polys = []
    for p in mesh3.polygons:
        q = [int(rank[i]) for i in p]
        k = q.index(min(q))
        polys.append(tuple(q[k:] + q[:k]))
    polys.sort()
    Vs = V[order]
    tris = []
    for q in polys:
        for k in range(1, len(q) - 1):
            tris.append((q[0], q[k], q[k + 1]))
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris):
        a, b, c = Vs[tris[:, 0]], Vs[tris[:, 1]], Vs[tris[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        tris = tris[area >= min_area]
    return Vs, tris


def obj_text(mesh3: Mesh3, triangulate: bool = True) -> str:
    lines = []
    if triangulate:
        V, tris = canonical_triangles(mesh3)
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist())
        lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris.tolist())
    else:
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh3.vertices.tolist())
        lines.extend("f " + " ".join(str(i + 1) for i in p) for p in mesh3.polygons)
    return "\n".join(lines) + ("\n" if lines else "")


def export_obj(mesh3: Mesh3, path, triangulate: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(obj_text(mesh3, triangulate))


def frame_name(i: int) -> str:
    return f"frame_{i:06d}.obj"


def write_frames(meshes: Sequence[Mesh3], times: Sequence[float], out_dir, triangulate: bool = True) -> list[str]:
    """One OBJ per frame plus ``manifest.txt`` (frame index, file, time)."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, m in enumerate(meshes):
        name = frame_name(i)
        export_obj(m, os.path.join(out_dir, name), triangulate)
        names.append(name)
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fp:
        for i, (name, t) in enumerate(zip(names, times)):
            fp.write(f"{i} {name} {float(t)!r}\n")
    return names


def load_obj(path) -> Mesh3:
    """Read ``v`` and ``f`` lines back into a Mesh3 (1-based indices)."""
    verts, polys = [], []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append(tuple(float(v) for v in parts[1:4]))
            elif parts[0] == "f":
                polys.append(tuple(int(p.split("/")[0]) - 1 for p in parts[1:]))
            else:
                raise SliceInputError(f"{path}:{lineno}: unsupported OBJ record {parts[0]!r}")
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    for p in polys:
        if min(p) < 0 or max(p) >= len(V):
            raise SliceInputError(f"{path}: face index out of range")
    return Mesh3(V, polys, [-1] * len(polys))
