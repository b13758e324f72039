"""Procedural occupancy fields f: R^3 -> {0, 1} and an exact-lattice corner cache.

Every field is defined by a scalar function that is strictly negative inside;
``f(p) = 1`` iff ``scalar(p) < 0`` (an exact zero maps to outside).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .noise import PerlinNoise

FIELD_KINDS = ("sphere", "blobs", "terrain")


class ConfigError(ValueError):
    """Invalid scene or extraction configuration."""


class InputError(ValueError):
    """Invalid input data passed to an evaluator."""


_DEFAULTS: dict[str, dict[str, Any]] = {
    "sphere": {"center": (0.0, 0.0, 0.0), "radius": 1.0},
    "blobs": {
        "ellipsoids": (),
        "octaves": 3,
        "lacunarity": 2.0,
        "gain": 0.5,
        "amplitude": 0.3,
        "frequency": 1.0,
    },
    "terrain": {
        "octaves": 5,
        "lacunarity": 2.0,
        "gain": 0.5,
        "amplitude": 4.0,
        "frequency": 0.05,
        "base_height": 0.0,
        "overhang": 0.0,
    },
}


@dataclass(frozen=True)
class OccupancyFieldSpec:
    kind: str
    seed: int = 0
    params: Mapping[str, Any] = dc_field(default_factory=dict)

    def resolved(self) -> dict[str, Any]:
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"unknown field kind {self.kind!r}")
        out = dict(_DEFAULTS[self.kind])
        for key, value in self.params.items():
            if key not in out:
                raise ConfigError(f"{self.kind}: unknown parameter {key!r}")
            out[key] = value
        return out


class OccupancyField:
    """Immutable evaluator.  Subclasses implement :meth:`scalar`."""

    kind = "abstract"

    def __init__(self, spec: OccupancyFieldSpec):
        self.spec = spec

    def scalar(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval_batch(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        finite = np.isfinite(pts).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise InputError(f"non-finite coordinate at index {bad}: {pts[bad].tolist()}")
        return (self.scalar(pts) < 0.0).astype(np.uint8)

    def __call__(self, point) -> int:
        return int(self.eval_batch(np.asarray(point, dtype=np.float64)[None, :])[0])

    def __repr__(self):
        return f"{type(self).__name__}(seed={self.spec.seed}, {self.spec.resolved()})"


class SphereField(OccupancyField):
    kind = "sphere"

    def __init__(self, spec):
        super().__init__(spec)
        p = spec.resolved()
        self.center = np.array(p["center"], dtype=np.float64).reshape(3)
        self.radius = float(p["radius"])
        if not self.radius > 0:
            raise ConfigError(f"sphere: radius must be > 0, got {self.radius}")

    def scalar(self, pts):
        d = pts - self.center
        return np.einsum("ij,ij->i", d, d) - self.radius * self.radius


def _check_noise(kind: str, p: Mapping[str, Any]):
    if int(p["octaves"]) < 1:
        raise ConfigError(f"{kind}: octaves must be >= 1, got {p['octaves']}")
    if float(p["amplitude"]) < 0:
        raise ConfigError(f"{kind}: amplitude must be >= 0, got {p['amplitude']}")


class BlobsField(OccupancyField):
    """Union of ellipsoids whose normalised radius is perturbed by fBm noise."""

    kind = "blobs"

    def __init__(self, spec):
        super().__init__(spec)
        p = spec.resolved()
        _check_noise("blobs", p)
        ell = np.array(p["ellipsoids"], dtype=np.float64).reshape(-1, 6)
        if len(ell) == 0:
            raise ConfigError("blobs: at least one ellipsoid is required")
        if (ell[:, 3:] <= 0).any():
            raise ConfigError("blobs: ellipsoid radii must be > 0")
        self.centers, self.radii = ell[:, :3], ell[:, 3:]
        self.octaves = int(p["octaves"])
        self.lacunarity = float(p["lacunarity"])
        self.gain = float(p["gain"])
        self.amplitude = float(p["amplitude"])
        self.frequency = float(p["frequency"])
        self.noise = PerlinNoise(spec.seed)

    def scalar(self, pts):
        q = (pts[:, None, :] - self.centers[None]) / self.radii[None]
        s = np.einsum("ijk,ijk->ij", q, q).min(axis=1) - 1.0
        if self.amplitude > 0:
            f = pts * self.frequency
            s = s - self.amplitude * self.noise.fbm(
                f[:, 0], f[:, 1], f[:, 2], self.octaves, self.lacunarity, self.gain
            )
        return s


class TerrainField(OccupancyField):
    """Height field ``z < base + amplitude * fbm(x, y)`` with optional 3D
    perturbation (``overhang``) producing caves and overhangs."""

    kind = "terrain"

    def __init__(self, spec):
        super().__init__(spec)
        p = spec.resolved()
        _check_noise("terrain", p)
        self.octaves = int(p["octaves"])
        self.lacunarity = float(p["lacunarity"])
        self.gain = float(p["gain"])
        self.amplitude = float(p["amplitude"])
        self.frequency = float(p["frequency"])
        self.base_height = float(p["base_height"])
        self.overhang = float(p["overhang"])
        if self.frequency <= 0:
            raise ConfigError("terrain: frequency must be > 0")
        self.noise = PerlinNoise(spec.seed)
        self.noise3 = PerlinNoise(spec.seed + 1)

    def height(self, x, y):
        fx, fy = np.asarray(x) * self.frequency, np.asarray(y) * self.frequency
        return self.base_height + self.amplitude * self.noise.fbm(
            fx, fy, np.zeros_like(fx) + 0.5, self.octaves, self.lacunarity, self.gain
        )

    def scalar(self, pts):
        s = pts[:, 2] - self.height(pts[:, 0], pts[:, 1])
        if self.overhang > 0:
            f = pts * (2.0 * self.frequency)
            s = s + self.overhang * self.noise3.fbm(
                f[:, 0], f[:, 1], f[:, 2], 2, self.lacunarity, self.gain
            )
        return s


_KINDS = {"sphere": SphereField, "blobs": BlobsField, "terrain": TerrainField}


def make_field(spec: OccupancyFieldSpec) -> OccupancyField:
    if spec.kind not in _KINDS:
        raise ConfigError(f"unknown field kind {spec.kind!r}; expected one of {FIELD_KINDS}")
    return _KINDS[spec.kind](spec)


class ConstantField(OccupancyField):
    """Field with the same bit everywhere; handy for degenerate cases."""

    kind = "constant"

    def __init__(self, value: int = 0):
        super().__init__(OccupancyFieldSpec("sphere"))
        self.value = int(bool(value))

    def scalar(self, pts):
        return np.full(len(pts), -1.0 if self.value else 1.0)


class HalfSpaceField(OccupancyField):
    """Inside iff ``coord[axis] < offset``."""

    kind = "halfspace"

    def __init__(self, axis: int = 0, offset: float = 0.0):
        super().__init__(OccupancyFieldSpec("sphere"))
        self.axis, self.offset = int(axis), float(offset)

    def scalar(self, pts):
        return pts[:, self.axis] - self.offset


class UnionField(OccupancyField):
    kind = "union"

    def __init__(self, *fields: OccupancyField):
        super().__init__(OccupancyFieldSpec("sphere"))
        self.fields = fields

    def scalar(self, pts):
        return np.min([f.scalar(pts) for f in self.fields], axis=0)


# ---------------------------------------------------------------------------
# scene config files


def _parse_value(key: str, raw: str, lineno: int):
    raw = raw.strip()
    try:
        if key in ("kind",):
            return raw
        if key in ("seed", "octaves"):
            return int(raw)
        if key in ("center", "ellipsoid"):
            vals = tuple(float(v) for v in raw.replace(",", " ").split())
            want = 3 if key == "center" else 6
            if len(vals) != want:
                raise ValueError(f"expected {want} numbers")
            return vals
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {raw!r} ({exc})") from None


def parse_scene_config(text: str) -> OccupancyFieldSpec:
    """Parse ``key = value`` lines; ``#`` starts a comment.  ``ellipsoid``
    may repeat (``cx cy cz rx ry rz``); every other key must be unique."""
    kind = None
    seed = 0
    params: dict[str, Any] = {}
    ellipsoids = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        value = _parse_value(key, raw, lineno)
        if key == "kind":
            kind = value
        elif key == "seed":
            seed = value
        elif key == "ellipsoid":
            ellipsoids.append(value)
        else:
            if key in params:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            params[key] = value
    if kind is None:
        raise ConfigError("scene config is missing 'kind'")
    if kind not in _DEFAULTS:
        raise ConfigError(f"unknown field kind {kind!r}")
    if ellipsoids:
        params["ellipsoids"] = tuple(ellipsoids)
    unknown = set(params) - set(_DEFAULTS[kind])
    if unknown:
        raise ConfigError(f"{kind}: unknown keys {sorted(unknown)}")
    return OccupancyFieldSpec(kind, seed, params)


def load_scene_config(path) -> OccupancyFieldSpec:
    return parse_scene_config(Path(path).read_text(encoding="utf-8"))


def format_scene_config(spec: OccupancyFieldSpec) -> str:
    lines = [f"kind = {spec.kind}", f"seed = {spec.seed}"]
    for key, value in spec.params.items():
        if key == "ellipsoids":
            lines += ["ellipsoid = " + " ".join(repr(float(v)) for v in e) for e in value]
        elif isinstance(value, (tuple, list)):
            lines.append(f"{key} = " + " ".join(repr(float(v)) for v in value))
        else:
            lines.append(f"{key} = {value!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# lattice corners


@dataclass(frozen=True)
class Lattice:
    """Integer lattice of the finest cells: world = origin + i * cell."""

    origin: tuple[float, float, float]
    root_size: float
    max_depth: int

    @property
    def cell(self) -> float:
        return self.root_size / (1 << self.max_depth)

    def to_world(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=np.float64)
        return np.asarray(self.origin, dtype=np.float64) + c * self.cell


class CornerCache:
    """Get-or-evaluate cache keyed on integer lattice coordinates.

    Each distinct coordinate is evaluated at most once per cache lifetime; a
    lock serialises evaluation of misses so concurrent callers never evaluate
    the same key twice.
    """

    def __init__(self, field: OccupancyField, lattice: Lattice):
        self.field = field
        self.lattice = lattice
        self._bits: dict[tuple[int, int, int], int] = {}
        self._lock = threading.Lock()
        self.evaluations = 0

    def __len__(self):
        return len(self._bits)

    def get_or_eval(self, coords) -> np.ndarray:
        arr = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        keys = list(map(tuple, arr.tolist()))
        bits = self._bits
        with self._lock:
            missing = list(dict.fromkeys(k for k in keys if k not in bits))
            if missing:
                vals = self.field.eval_batch(self.lattice.to_world(np.array(missing)))
                self.evaluations += len(missing)
                for k, v in zip(missing, vals.tolist()):
                    bits[k] = v
            return np.fromiter((bits[k] for k in keys), dtype=np.uint8, count=len(keys))

    def get(self, ix: int, iy: int, iz: int) -> int:
        b = self._bits.get((ix, iy, iz))
        if b is None:
            b = int(self.get_or_eval([(ix, iy, iz)])[0])
        return b


def probe_grid(n: int, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)

