"""Dataset construction: embarrassingly parallel sample synthesis.

Every sample is a pure function of (dataset seed, sample index, config):
per-index RNG streams come from numpy SeedSequence keyed on those values, so
the written tree is bit-identical no matter how many workers produced it.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np

from .formats import DatasetManifest, read_manifest, read_sample, write_manifest, write_sample
from .pairs import FB_ALPHA1, FB_ALPHA2, ZBUF_TOL, SamplePair, sample_pair
from .scene import SceneConfig, generate_scene

_SCENE_STREAM = 0
_PAIR_STREAM = 1


@dataclass(frozen=True)
class DatasetConfig:
    pairs: int = 20
    pairs_per_scene: int = 5
    scene: SceneConfig = field(default_factory=SceneConfig)
    interval_bounds: Tuple[int, int] = (15, 30)
    supervision: str = "sparse"
    alpha1: float = FB_ALPHA1
    alpha2: float = FB_ALPHA2
    zbuf_tol: float = ZBUF_TOL

    def __post_init__(self):
        if self.pairs <= 0 or self.pairs_per_scene <= 0:
            raise ValueError("pairs and pairs_per_scene must be positive")
        lo, hi = self.interval_bounds
        if not 1 <= lo <= hi:
            raise ValueError(f"bad interval bounds {self.interval_bounds}")
        if hi > self.scene.max_interval:
            raise ValueError(
                f"interval bound {hi} exceeds scene max_interval {self.scene.max_interval}"
            )


def _scene_seed(seed: int, scene_idx: int) -> int:
    ss = np.random.SeedSequence(entropy=(seed, _SCENE_STREAM, scene_idx))
    return int(ss.generate_state(1, np.uint64)[0] & np.uint64(0x7FFFFFFFFFFFFFFF))


def build_sample(seed: int, index: int, config: DatasetConfig) -> SamplePair:
    """Sample `index` of the dataset: deterministic, order-independent."""
    scene_idx = index // config.pairs_per_scene
    scene = generate_scene(_scene_seed(seed, scene_idx), config.scene)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, _PAIR_STREAM, index)))
    lo, hi = config.interval_bounds
    interval = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, len(scene.trajectory) - interval))
    return sample_pair(
        scene, start, interval,
        bounds=config.interval_bounds,
        supervision=config.supervision,
        alpha1=config.alpha1, alpha2=config.alpha2, zbuf_tol=config.zbuf_tol,
    )


def sample_dir_name(index: int) -> str:
    return f"sample_{index:05d}"


def _write_one(args) -> str:
    seed, index, config, root = args
    pair = build_sample(seed, index, config)
    name = sample_dir_name(index)
    write_sample(Path(root) / name, pair)
    return name


def write_dataset(root, seed: int, config: DatasetConfig, workers: int = 1) -> DatasetManifest:
    """Synthesize config.pairs samples under root and write the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tasks = [(seed, i, config, root) for i in range(config.pairs)]
    if workers <= 1:
        names = [_write_one(t) for t in tasks]
    else:
        with multiprocessing.Pool(workers) as pool:
            names = pool.map(_write_one, tasks)
    # manifest only after every worker has finished its samples
    write_manifest(root, seed, names)
    return read_manifest(root / "manifest.txt")


def read_dataset(manifest_path) -> list:
    """All samples listed by a manifest, in manifest order."""
    manifest = read_manifest(manifest_path)
    return [read_sample(manifest.sample_path(i)) for i in range(len(manifest))]
