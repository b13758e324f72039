"""Camera paths, projected node diameters and frustum tests.

Cameras follow the OpenGL convention: the camera looks down its local -Z
axis with +Y up; the orientation quaternion rotates camera axes into world
axes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

CSV_HEADER = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "fov_y_deg", "width", "height"]

INFINITE_DIAMETER = math.inf


class PathError(ValueError):
    """Malformed or invalid camera path."""


@dataclass(frozen=True)
class CameraSample:
    t: float
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z)
    fov_y: float  # degrees
    width: int
    height: int

    def validate(self):
        q = self.orientation
        norm = math.sqrt(sum(c * c for c in q))
        if abs(norm - 1.0) > 1e-9:
            raise PathError(f"camera at t={self.t}: quaternion norm {norm!r} is not 1")
        if not 0.0 < self.fov_y < 180.0:
            raise PathError(f"camera at t={self.t}: fov_y {self.fov_y} outside (0, 180)")
        if self.width < 1 or self.height < 1:
            raise PathError(f"camera at t={self.t}: image size must be >= 1")
        if not all(math.isfinite(v) for v in (self.t, *self.position)):
            raise PathError(f"camera at t={self.t}: non-finite value")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    @property
    def fov_y_rad(self) -> float:
        return math.radians(self.fov_y)

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return 0.5 * self.height / math.tan(0.5 * self.fov_y_rad)

    @property
    def pixels_per_ratio(self) -> float:
        """Small-angle conversion from a diameter ratio to pixels."""
        return self.height / self.fov_y_rad

    def world_to_camera(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - np.asarray(self.position)) @ self.rotation

    def project(self, pts):
        """Return (pixel_xy, depth) for world points; depth is along the view axis."""
        c = self.world_to_camera(pts)
        depth = -c[..., 2]
        f = self.focal
        with np.errstate(divide="ignore", invalid="ignore"):
            u = 0.5 * self.width + f * c[..., 0] / depth
            v = 0.5 * self.height - f * c[..., 1] / depth
        return np.stack([u, v], axis=-1), depth

    def frustum_planes(self) -> np.ndarray:
        """(5, 4) inward planes (n, d) in world space with n.p + d >= 0 inside;
        near plane passes through the eye, far plane is at infinity."""
        return _frustum_planes(
            np.asarray(self.position, dtype=np.float64)[None],
            self.rotation[None],
            np.array([self.fov_y_rad]),
            np.array([self.width / self.height]),
        )[0]


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> tuple[float, float, float, float]:
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    n = math.sqrt(sum(c * c for c in q))
    q = tuple(float(c / n) for c in q)
    return q if q[0] >= 0 else tuple(-c for c in q)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[float, float, float, float]:
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    cam_up = np.cross(right, fwd)
    return matrix_to_quat(np.stack([right, cam_up, -fwd], axis=1))


def _frustum_planes(pos, rot, fov_y, aspect):
    ty = np.tan(0.5 * fov_y)
    tx = ty * aspect
    one, zero = np.ones_like(ty), np.zeros_like(ty)
    # camera-space inward normals
    n_cam = np.stack(
        [
            np.stack([zero, zero, -one], -1),
            np.stack([-one, zero, -tx], -1),
            np.stack([one, zero, -tx], -1),
            np.stack([zero, -one, -ty], -1),
            np.stack([zero, one, -ty], -1),
        ],
        axis=1,
    )
    n_cam /= np.linalg.norm(n_cam, axis=-1, keepdims=True)
    n_world = np.einsum("lij,lpj->lpi", rot, n_cam)
    d = -np.einsum("lpi,li->lp", n_world, pos)
    return np.concatenate([n_world, d[..., None]], axis=-1)


class CameraPath:
    """Time-ordered camera samples with vectorised per-camera quantities."""

    def __init__(self, samples: Sequence[CameraSample]):
        samples = list(samples)
        if not samples:
            raise PathError("camera path must contain at least one sample")
        for s in samples:
            s.validate()
        for a, b in zip(samples, samples[1:]):
            if not b.t > a.t:
                raise PathError(f"timestamps must be strictly increasing: {a.t} then {b.t}")
        self.samples = samples
        self.times = np.array([s.t for s in samples], dtype=np.float64)
        self.positions = np.array([s.position for s in samples], dtype=np.float64)
        self.rotations = np.stack([s.rotation for s in samples])
        self.fov_y_rad = np.array([s.fov_y_rad for s in samples])
        self.aspect = np.array([s.width / s.height for s in samples])
        self.pixels_per_ratio = np.array([s.pixels_per_ratio for s in samples])
        self.planes = _frustum_planes(self.positions, self.rotations, self.fov_y_rad, self.aspect)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> CameraSample:
        return self.samples[i]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def frame_interval(self) -> float:
        if len(self.times) < 2:
            return 1.0
        return float(np.median(np.diff(self.times)))

    def window_indices(self, t0: float, t1: float) -> slice:
        """Samples with t0 <= t_i <= t1."""
        lo = int(np.searchsorted(self.times, t0, side="left"))
        hi = int(np.searchsorted(self.times, t1, side="right"))
        return slice(lo, hi)

    def in_frustum(self, center, radius, idx=slice(None)) -> np.ndarray:
        planes = self.planes[idx]
        dist = planes[..., :3] @ np.asarray(center, dtype=np.float64) + planes[..., 3]
        return (dist >= -radius).all(axis=-1)

    def diameters(self, size, center, idx=slice(None), contraction=1.0, pixels=False):
        """Per-camera projected diameters S / |x_i - X| for the cameras in ``idx``,
        multiplied by ``contraction`` for cameras whose frustum misses the
        node's bounding sphere."""
        center = np.asarray(center, dtype=np.float64)
        dist = np.linalg.norm(self.positions[idx] - center, axis=-1)
        with np.errstate(divide="ignore"):
            d = np.where(dist > 0, size / np.where(dist > 0, dist, 1.0), INFINITE_DIAMETER)
        if contraction != 1.0:
            vis = self.in_frustum(center, 0.5 * math.sqrt(3.0) * size, idx)
            d = np.where(vis, d, d * contraction)
        if pixels:
            d = d * self.pixels_per_ratio[idx]
        return d

    def max_diameter(self, size, center, window, contraction=1.0, pixels=False) -> float:
        idx = self.window_indices(*window)
        if idx.stop <= idx.start:
            return 0.0
        return float(self.diameters(size, center, idx, contraction, pixels).max())


def projected_diameter(size: float, center, cam: CameraSample) -> float:
    dist = math.dist(tuple(map(float, center)), tuple(map(float, cam.position)))
    if dist == 0.0:
        return INFINITE_DIAMETER
    return size / dist


def contracted_diameter(size: float, center, cam: CameraSample, contraction: float) -> float:
    if not 0.0 < contraction <= 1.0:
        raise ValueError(f"contraction must be in (0, 1], got {contraction}")
    d = projected_diameter(size, center, cam)
    planes = cam.frustum_planes()
    r = 0.5 * math.sqrt(3.0) * size
    inside = bool(((planes[:, :3] @ np.asarray(center, dtype=np.float64) + planes[:, 3]) >= -r).all())
    return d if inside else d * contraction


def pixel_threshold_to_ratio(d_hat_px: float, cam: CameraSample) -> float:
    return d_hat_px * cam.fov_y_rad / cam.height


# ---------------------------------------------------------------------------
# CSV I/O


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_path(path: CameraPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in path.samples:
        w.writerow(
            [_fmt(s.t), *map(_fmt, s.position), *map(_fmt, s.orientation), _fmt(s.fov_y), s.width, s.height]
        )
    return buf.getvalue()


def save_path(path: CameraPath, file) -> None:
    Path(file).write_text(dumps_path(path), encoding="utf-8")


def loads_path(text: str) -> CameraPath:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise PathError("line 1: expected header " + ",".join(CSV_HEADER))
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise PathError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row[:9]]
            width, height = int(row[9]), int(row[10])
        except ValueError as exc:
            raise PathError(f"line {lineno}: {exc}") from None
        samples.append(CameraSample(vals[0], tuple(vals[1:4]), tuple(vals[4:8]), vals[8], width, height))
    return CameraPath(samples)


def load_path(file) -> CameraPath:
    return loads_path(Path(file).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# synthetic paths


def generate_path(
    kind: str,
    duration: float = 20.0,
    fps: int = 24,
    seed: int = 0,
    *,
    width: int = 160,
    height: int = 90,
    fov_y: float = 60.0,
    center=(0.0, 0.0, 0.0),
    radius: float = 4.0,
    altitude: float = 1.0,
    start=None,
    end=None,
    look_ahead: float = 6.0,
) -> CameraPath:
    """Deterministic camera paths.

    ``static``: fixed camera at ``center + (radius, 0, altitude)`` looking at
    ``center``.  ``orbit``: circle of ``radius`` about ``center`` at height
    ``altitude``, phase set by ``seed``.  ``flythrough``: straight flight from
    ``start`` to ``end`` with a seeded lateral wiggle, looking ``look_ahead``
    units forward and slightly down.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    if int(fps) < 1:
        raise ValueError("fps must be >= 1")
    n = max(1, int(round(duration * fps)))
    times = np.arange(n) / float(fps)
    center = np.asarray(center, dtype=np.float64)
    rng = np.random.default_rng(seed)
    samples = []
    if kind == "static":
        eye = center + np.array([radius, 0.0, altitude])
        q = look_at(eye, center)
        samples = [CameraSample(float(t), tuple(map(float, eye)), q, fov_y, width, height) for t in times]
    elif kind == "orbit":
        phase = float(rng.uniform(0, 2 * math.pi))
        omega = 2 * math.pi / max(duration, 1e-9) * 0.25
        for t in times:
            a = phase + omega * t
            eye = center + np.array([radius * math.cos(a), radius * math.sin(a), altitude])
            samples.append(CameraSample(float(t), tuple(map(float, eye)), look_at(eye, center), fov_y, width, height))
    elif kind == "flythrough":
        start = np.array(start if start is not None else (-10.0, 0.0, 6.0), dtype=np.float64)
        end = np.array(end if end is not None else (10.0, 0.0, 3.0), dtype=np.float64)
        amp = float(rng.uniform(0.5, 1.5))
        phase = float(rng.uniform(0, 2 * math.pi))
        heading = (end - start) / max(np.linalg.norm(end - start), 1e-12)
        lateral = np.cross(np.array([0.0, 0.0, 1.0]), heading)
        if np.linalg.norm(lateral) < 1e-9:
            lateral = np.array([0.0, 1.0, 0.0])
        lateral /= np.linalg.norm(lateral)
        total = times[-1] if n > 1 else 1.0
        for t in times:
            s = t / total if total > 0 else 0.0
            eye = start + s * (end - start) + amp * math.sin(2 * math.pi * s + phase) * lateral * 0.5
            target = eye + heading * look_ahead - np.array([0.0, 0.0, 0.35 * look_ahead])
            samples.append(CameraSample(float(t), tuple(map(float, eye)), look_at(eye, target), fov_y, width, height))
    else:
        raise ValueError(f"unknown path kind {kind!r}")
    return CameraPath(samples)
