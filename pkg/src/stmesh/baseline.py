"""Fixed-length block baseline: one static mesh per block of frames.

Each block runs the same pipeline with temporal splits disabled over the
block's own time window, slices the resulting single-group mesh once and
reuses it for every frame of the block.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .binoctree import ExtractionConfig
from .field import OccupancyField
from .pipeline import extract, field_base_height
from .slicer import Mesh3
from .trajectory import CameraPath


@dataclass(frozen=True)
class BaselinePlan:
    length: int
    blocks: tuple[tuple[int, int], ...]  # [start, stop) frame ranges

    @property
    def boundaries(self) -> tuple[int, ...]:
        """First frame of every block after the first."""
        return tuple(a for a, _ in self.blocks[1:])


def plan_blocks(n_frames: int, length: int) -> BaselinePlan:
    if length < 1:
        raise ValueError("block length must be >= 1")
    blocks = tuple((a, min(a + length, n_frames)) for a in range(0, n_frames, length))
    return BaselinePlan(length, blocks)


def extract_baseline(field: OccupancyField, path: CameraPath, length: int, config: ExtractionConfig):
    """Per-frame meshes and per-block stats."""
    plan = plan_blocks(len(path), length)
    full = config.resolved(path, field_base_height(field))
    dt = path.frame_interval()
    meshes: list[Mesh3] = []
    stats = []
    for a, b in plan.blocks:
        sub = CameraPath(path.samples[a:b])
        window = (float(path.times[a]), float(path.times[b - 1] + dt)) if b < len(path) or a > 0 else full.root_window
        cfg = replace(full, temporal_splits=False, root_window=window)
        ex = extract(field, sub, cfg)
        mesh = ex.frames([sub.times[0]])[0]
        meshes.extend([mesh] * (b - a))
        stats.append(ex.stats)
    return meshes, plan, stats
