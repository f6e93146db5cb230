"""File formats: PFM rasters, intrinsics/pose JSON, ground-mask exports."""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Intrinsics, Pose
from .errors import FormatError

MASK_MAGIC = b"GMSK"


def write_pfm(path, raster: np.ndarray) -> None:
    """Little-endian greyscale PFM, rows stored bottom-up."""
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise ValueError("only single-channel rasters are supported")
    h, w = raster.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(raster[::-1], dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a PFM file", 0)
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    offset = m.end()
    if len(data) - offset < 4 * n:
        raise FormatError(f"{path}: truncated raster", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=offset).astype(np.float32)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return arr[::-1].copy()


def load_intrinsics(path) -> Intrinsics:
    return Intrinsics.from_dict(json.loads(Path(path).read_text()))


def load_poses(path) -> list[Pose]:
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            poses.append(Pose.from_record(json.loads(line)))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad pose record ({exc})") from exc
    return poses


def save_poses(path, poses) -> None:
    with open(path, "w") as f:
        for p in poses:
            f.write(json.dumps(p.to_record()) + "\n")


def load_rough_params(path) -> tuple[float, float]:
    d = json.loads(Path(path).read_text())
    return float(d["s_bar"]), float(d["t_bar"])


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def write_mask_bits(path, mask: np.ndarray) -> None:
    """``GMSK`` magic, u32 height, u32 width, then row-major packed bits."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(MASK_MAGIC + struct.pack("<II", h, w))
        f.write(np.packbits(mask.ravel()).tobytes())


def read_mask_bits(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MASK_MAGIC:
        raise FormatError(f"{path}: bad mask magic", 0)
    h, w = struct.unpack_from("<II", data, 4)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=12), count=h * w)
    if bits.size != h * w:
        raise FormatError(f"{path}: truncated mask", len(data))
    return bits.reshape(h, w).astype(bool)


def write_error_png(path, err: np.ndarray, vmax: float = 0.2) -> None:
    """Grey-scale visualisation, 0 -> black, ``vmax`` and above -> white."""
    img = np.clip(np.nan_to_num(err) / vmax, 0.0, 1.0) * 255.0
    Image.fromarray(img.astype(np.uint8), mode="L").save(path)
