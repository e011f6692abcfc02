"""Synthetic data: procedural scenes, analytic rendering, exact flow labels."""

from .dataset import DatasetConfig, build_sample, read_dataset, sample_dir_name, write_dataset
from .formats import (
    DatasetManifest,
    FormatError,
    read_depth_raw,
    read_flo,
    read_image_png,
    read_manifest,
    read_mask_pgm,
    read_meta,
    read_sample,
    write_depth_raw,
    write_flo,
    write_image_png,
    write_manifest,
    write_mask_pgm,
    write_sample,
)
from .pairs import SamplePair, pair_flow_and_validity, sample_pair
from .render import RenderedFrame, camera_rays, render
from .scene import AxisBox, RectPlane, SceneConfig, SceneSpec, generate_scene, smooth_trajectory
from .textures import TextureParams, fractal_noise, lattice_hash, random_texture, value_noise

__all__ = [
    "AxisBox", "DatasetConfig", "DatasetManifest", "FormatError", "RectPlane",
    "RenderedFrame", "SamplePair", "SceneConfig", "SceneSpec", "TextureParams",
    "build_sample", "camera_rays", "fractal_noise", "generate_scene", "lattice_hash",
    "pair_flow_and_validity", "random_texture", "read_dataset", "read_depth_raw",
    "read_flo", "read_image_png", "read_manifest", "read_mask_pgm", "read_meta",
    "read_sample", "render", "sample_dir_name", "sample_pair", "smooth_trajectory",
    "value_noise", "write_dataset", "write_depth_raw", "write_flo", "write_image_png",
    "write_manifest", "write_mask_pgm", "write_sample",
]
