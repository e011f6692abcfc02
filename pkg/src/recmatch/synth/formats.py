"""On-disk interchange formats for samples and datasets.

* Flow: Middlebury layout — float32 magic 202021.25, int32 width, int32
  height, then row-major interleaved float32 (u, v); everything little-endian.
* Mask: binary PGM (P5), 255 = valid, 0 = invalid.
* Image: 8-bit RGB PNG.
* Depth: 8-byte header (magic b"RGMD", uint16 H, uint16 W) then row-major
  little-endian float32; NaN is the no-hit sentinel.
* Manifest: "# schema=1 seed=<n>" header, then one sample directory per line.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import CameraIntrinsics, Pose
from .pairs import SamplePair
from .render import RenderedFrame

FLO_MAGIC = 202021.25
DEPTH_MAGIC = b"RGMD"
MANIFEST_SCHEMA = 1


class FormatError(ValueError):
    """A file failed structural validation (magic, schema, or layout)."""


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.ascontiguousarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12:
            raise FormatError(f"{path}: truncated flow header")
        (magic,) = struct.unpack("<f", head[:4])
        if magic != np.float32(FLO_MAGIC):
            raise FormatError(f"{path}: bad flow magic {magic!r}")
        w, h = struct.unpack("<ii", head[4:12])
        if w <= 0 or h <= 0:
            raise FormatError(f"{path}: bad flow dimensions {w}x{h}")
        data = f.read(4 * 2 * w * h)
    if len(data) != 4 * 2 * w * h:
        raise FormatError(f"{path}: truncated flow payload")
    return np.frombuffer(data, dtype="<f4").reshape(h, w, 2).copy()


def write_mask_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be (H, W), got {mask.shape}")
    h, w = mask.shape
    payload = np.where(mask.astype(bool), 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload.tobytes())


def read_mask_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval, one whitespace, then payload
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise FormatError(f"{path}: malformed PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: PGM maxval must be 255, got {maxval}")
    payload = raw[m.end():]
    if len(payload) != w * h:
        raise FormatError(f"{path}: PGM payload size mismatch")
    return (np.frombuffer(payload, dtype=np.uint8).reshape(h, w) == 255)


def write_image_png(path, image: np.ndarray) -> None:
    """image: (H, W, 3) float in [0, 1], quantized to 8-bit levels."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {arr.shape}")
    q = np.round(arr.astype(np.float64) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def read_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / np.float32(255.0)


def write_depth_raw(path, depth: np.ndarray) -> None:
    depth = np.ascontiguousarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError(f"depth must be (H, W), got {depth.shape}")
    h, w = depth.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise ValueError("depth raster exceeds uint16 header limits")
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<HH", h, w))
        f.write(depth.tobytes())


def read_depth_raw(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) < 8 or head[:4] != DEPTH_MAGIC:
            raise FormatError(f"{path}: bad depth magic")
        h, w = struct.unpack("<HH", head[4:8])
        data = f.read(4 * h * w)
    if len(data) != 4 * h * w:
        raise FormatError(f"{path}: truncated depth payload")
    return np.frombuffer(data, dtype="<f4").reshape(h, w).copy()


# --- sample directories -----------------------------------------------------

_SAMPLE_FILES = ("ref.png", "tgt.png", "ref_depth.raw", "tgt_depth.raw",
                 "flow.flo", "valid.pgm", "meta.json")


def write_sample(sample_dir, pair: SamplePair) -> None:
    d = Path(sample_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_image_png(d / "ref.png", pair.ref.image)
    write_image_png(d / "tgt.png", pair.tgt.image)
    write_depth_raw(d / "ref_depth.raw", pair.ref.depth)
    write_depth_raw(d / "tgt_depth.raw", pair.tgt.depth)
    write_flo(d / "flow.flo", pair.flow_gt)
    write_mask_pgm(d / "valid.pgm", pair.valid)
    meta = {
        "K": pair.intrinsics.K.tolist(),
        "pose_ref": pair.ref.pose.E.tolist(),
        "pose_tgt": pair.tgt.pose.E.tolist(),
        "interval": int(pair.interval),
        "supervision": pair.supervision,
    }
    with open(d / "meta.json", "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
        f.write("\n")


def read_meta(sample_dir) -> dict:
    d = Path(sample_dir)
    try:
        with open(d / "meta.json") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FormatError(f"{d}: missing sample metadata") from None


def read_sample(sample_dir) -> SamplePair:
    d = Path(sample_dir)
    for name in _SAMPLE_FILES:
        if not (d / name).exists():
            raise FormatError(f"{d / name}: missing sample file")
    meta = read_meta(d)
    ref = RenderedFrame(
        image=read_image_png(d / "ref.png"),
        depth=read_depth_raw(d / "ref_depth.raw"),
        pose=Pose(np.array(meta["pose_ref"], dtype=np.float64)),
    )
    tgt = RenderedFrame(
        image=read_image_png(d / "tgt.png"),
        depth=read_depth_raw(d / "tgt_depth.raw"),
        pose=Pose(np.array(meta["pose_tgt"], dtype=np.float64)),
    )
    return SamplePair(
        ref=ref,
        tgt=tgt,
        flow_gt=read_flo(d / "flow.flo"),
        valid=read_mask_pgm(d / "valid.pgm"),
        interval=int(meta["interval"]),
        supervision=str(meta["supervision"]),
        intrinsics=CameraIntrinsics(np.array(meta["K"], dtype=np.float64)),
    )


# --- dataset manifests -------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    seed: int
    sample_dirs: tuple  # relative directory names
    supervision: tuple  # per-sample flag, aligned with sample_dirs
    schema: int = MANIFEST_SCHEMA

    def sample_path(self, idx: int) -> Path:
        return self.root / self.sample_dirs[idx]

    def __len__(self) -> int:
        return len(self.sample_dirs)


def write_manifest(root, seed: int, sample_dirs) -> Path:
    root = Path(root)
    path = root / "manifest.txt"
    with open(path, "w") as f:
        f.write(f"# schema={MANIFEST_SCHEMA} seed={seed}\n")
        for d in sample_dirs:
            f.write(f"{d}\n")
    return path


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    m = re.match(r"# schema=(\d+) seed=(\d+)$", lines[0])
    if m is None:
        raise FormatError(f"{path}: malformed manifest header {lines[0]!r}")
    schema = int(m.group(1))
    if schema != MANIFEST_SCHEMA:
        raise FormatError(f"{path}: unsupported schema version {schema}")
    seed = int(m.group(2))
    root = path.parent
    dirs = [ln.strip() for ln in lines[1:] if ln.strip()]
    supervision = []
    for d in dirs:
        if not (root / d).is_dir():
            raise FormatError(f"{root / d}: missing sample directory")
        supervision.append(str(read_meta(root / d)["supervision"]))
    return DatasetManifest(
        root=root, seed=seed, sample_dirs=tuple(dirs), supervision=tuple(supervision)
    )
