"""Seedable improved Perlin gradient noise, vectorised over numpy arrays.

The algorithm is Ken Perlin's 2002 "improved noise": quintic fade curve,
12 edge-centred gradient directions selected by ``hash & 15``, and a 256 entry
permutation table repeated once.  The only deviation from the reference is
the permutation table itself, which is derived from the seed as::

    perm = numpy.random.Generator(numpy.random.PCG64(seed)).permutation(256)

so two processes with the same seed build identical tables.
"""
from __future__ import annotations

import numpy as np

# (u-source, v-source, flip-u, flip-v) decoded from Perlin's grad() for h in 0..15
_GRAD = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
        [1, 1, 0], [0, -1, 1], [-1, 1, 0], [0, -1, -1],
    ],
    dtype=np.float64,
)


def permutation_table(seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    perm = rng.permutation(256).astype(np.int64)
    return np.concatenate([perm, perm])


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


class PerlinNoise:
    """3D gradient noise in roughly [-1, 1]; zero at integer lattice points."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._perm = permutation_table(seed)

    def __call__(self, x, y, z) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        p = self._perm
        fx, fy, fz = np.floor(x), np.floor(y), np.floor(z)
        X = fx.astype(np.int64) & 255
        Y = fy.astype(np.int64) & 255
        Z = fz.astype(np.int64) & 255
        x, y, z = x - fx, y - fy, z - fz
        u, v, w = _fade(x), _fade(y), _fade(z)

        A = p[X] + Y
        AA = p[A] + Z
        AB = p[A + 1] + Z
        B = p[X + 1] + Y
        BA = p[B] + Z
        BB = p[B + 1] + Z

        def grad(h, gx, gy, gz):
            g = _GRAD[p[h] & 15]
            return g[..., 0] * gx + g[..., 1] * gy + g[..., 2] * gz

        x1, y1, z1 = x - 1.0, y - 1.0, z - 1.0
        l0 = _lerp(u, grad(AA, x, y, z), grad(BA, x1, y, z))
        l1 = _lerp(u, grad(AB, x, y1, z), grad(BB, x1, y1, z))
        l2 = _lerp(u, grad(AA + 1, x, y, z1), grad(BA + 1, x1, y, z1))
        l3 = _lerp(u, grad(AB + 1, x, y1, z1), grad(BB + 1, x1, y1, z1))
        return _lerp(w, _lerp(v, l0, l1), _lerp(v, l2, l3))

    def fbm(self, x, y, z, octaves: int, lacunarity: float, gain: float) -> np.ndarray:
        """Fractal sum of ``octaves`` noise layers; octave ``o`` is shifted by
        a fixed offset so that lattice zeros do not line up across octaves."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        total = np.zeros(np.broadcast(x, y, z).shape)
        freq, amp = 1.0, 1.0
        for o in range(octaves):
            shift = 17.31 * o
            total += amp * self(x * freq + shift, y * freq + shift, z * freq + shift)
            freq *= lacunarity
            amp *= gain
        return total


def _lerp(t, a, b):
    return a + t * (b - a)
