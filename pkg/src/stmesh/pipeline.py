"""End-to-end extraction: tree, 4D mesh, per-frame slices."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .binoctree import BinaryOctree, ExtractionConfig, build_tree
from .contour4d import Mesh4D, dual_polyhedron_search
from .field import OccupancyField
from .slicer import Mesh3, SliceTable, extrude_time_faces
from .trajectory import CameraPath


@dataclass
class Extraction:
    tree: BinaryOctree
    mesh: Mesh4D
    stats: dict

    def frames(self, times, extrude: bool = False) -> list[Mesh3]:
        mesh = extrude_time_faces(self.mesh) if extrude else self.mesh
        table = SliceTable(mesh)
        return [table.slice(float(t)) for t in times]


def field_base_height(field: OccupancyField) -> float:
    spec = getattr(field, "spec", None)
    if spec is not None and spec.kind == "terrain":
        return float(spec.resolved()["base_height"])
    return 0.0


def extract(field: OccupancyField, path: CameraPath, config: ExtractionConfig, depth_buffers=None) -> Extraction:
    cfg = config.resolved(path, field_base_height(field))
    t0 = time.perf_counter()
    tree = build_tree(field, path, cfg, depth_buffers)
    t1 = time.perf_counter()
    mesh, st = dual_polyhedron_search(tree)
    t2 = time.perf_counter()
    stats = tree.summary()
    stats.update({f"dc_{k}" if k in ("d",) else k: v for k, v in st.as_dict().items()})
    stats["field_evaluations"] = tree.cache.evaluations
    stats["time_tree_s"] = round(t1 - t0, 3)
    stats["time_contour_s"] = round(t2 - t1, 3)
    return Extraction(tree, mesh, stats)


def run_frames(field, path, config, extrude=False):
    ex = extract(field, path, config)
    return ex, ex.frames(path.times, extrude)
