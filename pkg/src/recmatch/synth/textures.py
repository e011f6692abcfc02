"""Procedural value-noise textures.

Textures are pure functions of (u, v) surface coordinates and an integer
seed: a stateless integer-lattice hash drives multi-octave value noise, so
any point can be evaluated independently, in any order, on any worker, with
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_PX = np.uint64(0x9E3779B97F4A7C15)
_PY = np.uint64(0xC2B2AE3D27D4EB4F)


def _mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def lattice_hash(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [0, 1) value per integer lattice point, stateless."""
    ix = np.asarray(ix, dtype=np.int64).astype(np.uint64)
    iy = np.asarray(iy, dtype=np.int64).astype(np.uint64)
    s = np.uint64(np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF))
    h = _mix(ix * _PX ^ iy * _PY ^ s)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(u, v, seed: int) -> np.ndarray:
    """Single-octave value noise: smooth interpolation of lattice hashes."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = _fade(u - u0)
    fv = _fade(v - v0)
    i0 = u0.astype(np.int64)
    j0 = v0.astype(np.int64)
    n00 = lattice_hash(i0, j0, seed)
    n10 = lattice_hash(i0 + 1, j0, seed)
    n01 = lattice_hash(i0, j0 + 1, seed)
    n11 = lattice_hash(i0 + 1, j0 + 1, seed)
    top = n00 * (1 - fu) + n10 * fu
    bot = n01 * (1 - fu) + n11 * fu
    return top * (1 - fv) + bot * fv


def fractal_noise(u, v, seed: int, frequency: float, octaves: int) -> np.ndarray:
    """Octave-summed value noise, normalized to [0, 1]."""
    acc = np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape, dtype=np.float64)
    amp = 1.0
    total = 0.0
    for o in range(octaves):
        scale = frequency * (2.0 ** o)
        acc += amp * value_noise(np.asarray(u) * scale, np.asarray(v) * scale, seed + 7919 * o)
        total += amp
        amp *= 0.5
    return acc / total


@dataclass(frozen=True)
class TextureParams:
    """Two-color fractal noise texture."""

    seed: int
    frequency: float
    octaves: int
    color0: tuple
    color1: tuple

    def sample(self, u, v) -> np.ndarray:
        """RGB values (..., 3) in [0, 1] at surface coordinates (u, v)."""
        g = fractal_noise(u, v, self.seed, self.frequency, self.octaves)
        c0 = np.asarray(self.color0, dtype=np.float64)
        c1 = np.asarray(self.color1, dtype=np.float64)
        return c0 + g[..., None] * (c1 - c0)


def random_texture(rng: np.random.Generator) -> TextureParams:
    """Texture with random palette and scale; high contrast for matchability."""
    c0 = rng.uniform(0.0, 0.45, size=3)
    c1 = rng.uniform(0.55, 1.0, size=3)
    if rng.random() < 0.5:
        c0, c1 = c1, c0
    return TextureParams(
        seed=int(rng.integers(0, 2**63 - 1)),
        frequency=float(rng.uniform(1.5, 5.0)),
        octaves=int(rng.integers(2, 5)),
        color0=tuple(float(x) for x in c0),
        color1=tuple(float(x) for x in c1),
    )
