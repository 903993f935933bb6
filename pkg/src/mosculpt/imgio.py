"""Image and depth-map file I/O.

Frames are numbered PNGs (``frame_%05d.png``), masks are 8-bit grayscale
PNGs with 255 = foreground, and depth maps are PFM (little-endian, scale
-1.0, bottom-up rows per the format) plus a sidecar JSON that names the
validity-mask PNG.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthMap, Mask

FRAME_PATTERN = "frame_%05d.png"


def read_image(path) -> np.ndarray:
    """Load an RGB image as (H, W, 3) float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_image(path, rgb: np.ndarray) -> None:
    arr = np.clip(np.asarray(rgb), 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_mask(path) -> Mask:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return Mask(arr)


def write_mask(path, mask: Mask) -> None:
    data = (np.clip(mask.values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def write_indexed_png(path, labels: np.ndarray, palette: list[tuple[int, int, int]]) -> None:
    """Write a small label map as a paletted PNG."""
    if labels.max(initial=0) >= len(palette):
        raise ValueError("label exceeds palette size")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    flat = []
    for rgb in palette:
        flat.extend(rgb)
    flat.extend([0] * (768 - len(flat)))
    im.putpalette(flat)
    im.save(path, format="PNG")


def read_indexed_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.int64)


def frame_path(directory, index: int) -> Path:
    return Path(directory) / (FRAME_PATTERN % index)


def list_frames(directory) -> list[Path]:
    return sorted(Path(directory).glob("frame_*.png"))


# --- PFM ---------------------------------------------------------------

def write_pfm(path, values: np.ndarray) -> None:
    """Grayscale PFM, little-endian (scale -1.0). Rows stored bottom-up."""
    values = np.asarray(values, dtype=np.float32)
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(values).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM file: {header!r}")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        data = f.read(w * h * 4)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w)
    return np.flipud(arr).astype(np.float64)


def write_depth(path_base, depth: DepthMap) -> None:
    """Persist a DepthMap as <base>.pfm + <base>.json + <base>_valid.png."""
    base = Path(path_base)
    values = np.where(depth.valid, depth.values, 0.0)
    write_pfm(base.with_suffix(".pfm"), values)
    valid_name = base.stem + "_valid.png"
    write_mask(base.parent / valid_name, Mask(depth.valid.astype(np.float64)))
    sidecar = {"pfm": base.stem + ".pfm", "validity_mask": valid_name}
    base.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def read_depth(path_base) -> DepthMap:
    base = Path(path_base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    values = read_pfm(base.parent / sidecar["pfm"])
    valid = read_mask(base.parent / sidecar["validity_mask"]).binary()
    values = np.where(valid, np.maximum(values, 1e-12), 0.0)
    return DepthMap(values, valid)


def write_flow_pfm(path, u: np.ndarray, v: np.ndarray) -> None:
    """Two-channel flow stored as a color PFM (u, v, 0)."""
    u = np.asarray(u, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    h, w = u.shape
    rgb = np.zeros((h, w, 3), dtype="<f4")
    rgb[:, :, 0] = u
    rgb[:, :, 1] = v
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(rgb).tobytes())


def read_flow_pfm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"PF":
            raise ValueError("not a color PFM file")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        data = f.read(w * h * 12)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.flipud(np.frombuffer(data, dtype=dtype).reshape(h, w, 3))
    return arr[:, :, 0].astype(np.float64), arr[:, :, 1].astype(np.float64)
