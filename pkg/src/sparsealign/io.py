"""File formats: images, binary depth/heightmap grids, poses, CSV tables.

Binary formats (all little-endian):
  depth  -- magic b"DPTH", width u32, height u32, then float32 row-major.
  hmap   -- magic b"HMAP", width u32, height u32, spacing f32, then
            float32 heights row-major.

CSV schemas:
  features        -- u,v,inverse_depth
  correspondences -- ref_u,ref_v,tgt_u,tgt_v,inv_depth,converged
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import PinholeCamera, Se3Pose
from .iclk import SparseFeature

DEPTH_MAGIC = b"DPTH"
HMAP_MAGIC = b"HMAP"


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM as float in [0, 1]; (H, W) gray or (H, W, 3) RGB."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
            return arr / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        return arr / 255.0


def write_png(path, image: np.ndarray) -> None:
    """Write a [0, 1] float image (gray or RGB) as 8-bit PNG."""
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] float grayscale image as binary 8-bit PGM (debug dumps)."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_depth(path, depth: np.ndarray) -> None:
    arr = np.asarray(depth, dtype=np.float32)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(arr.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DEPTH_MAGIC:
            raise ValueError(f"not a depth file: bad magic {magic!r}")
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    if data.size != w * h:
        raise ValueError("truncated depth file")
    return data.reshape(h, w).astype(np.float64)


def write_heightmap(path, elevation: np.ndarray, spacing: float) -> None:
    arr = np.asarray(elevation, dtype=np.float32)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(HMAP_MAGIC)
        f.write(struct.pack("<IIf", w, h, float(spacing)))
        f.write(arr.astype("<f4").tobytes())


def read_heightmap(path):
    """Return (elevation, spacing)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != HMAP_MAGIC:
            raise ValueError(f"not a heightmap file: bad magic {magic!r}")
        w, h, spacing = struct.unpack("<IIf", f.read(12))
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4")
    if data.size != w * h:
        raise ValueError("truncated heightmap file")
    return data.reshape(h, w).astype(np.float64), float(spacing)


def write_pose_json(path, pose: Se3Pose) -> None:
    Path(path).write_text(json.dumps(pose.to_list(), indent=1))


def read_pose_json(path) -> Se3Pose:
    return Se3Pose.from_list(json.loads(Path(path).read_text()))


def write_features_csv(path, features) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["u", "v", "inverse_depth"])
        for feat in features:
            writer.writerow([repr(feat.u), repr(feat.v), repr(feat.inverse_depth)])


def read_features_csv(path) -> list:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                SparseFeature(
                    u=float(row["u"]),
                    v=float(row["v"]),
                    inverse_depth=float(row["inverse_depth"]),
                )
            )
    return out


def write_correspondences_csv(path, correspondences) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["ref_u", "ref_v", "tgt_u", "tgt_v", "inv_depth", "converged"])
        for c in correspondences:
            writer.writerow(
                [
                    repr(float(c.ref_pixel[0])),
                    repr(float(c.ref_pixel[1])),
                    repr(float(c.target_pixel[0])),
                    repr(float(c.target_pixel[1])),
                    repr(float(c.inverse_depth)),
                    int(c.alignment_converged),
                ]
            )


def read_correspondences_csv(path) -> list:
    from .refine import FeatureCorrespondence

    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                FeatureCorrespondence(
                    ref_pixel=np.array([float(row["ref_u"]), float(row["ref_v"])]),
                    target_pixel=np.array([float(row["tgt_u"]), float(row["tgt_v"])]),
                    inverse_depth=float(row["inv_depth"]),
                    alignment_converged=bool(int(row["converged"])),
                )
            )
    return out


def write_camera_json(path, camera: PinholeCamera) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=1))


def read_camera_json(path) -> PinholeCamera:
    return PinholeCamera.from_dict(json.loads(Path(path).read_text()))
