"""Image file formats: linear float PFM and display-space 16-bit PNG.

Masks are stored as 8-bit PNG companions next to the image with the suffix
``.mask.png``; a missing companion means every pixel is valid.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import cv2
import numpy as np

from .imaging import Image

GAMMA = 2.2


def mask_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".mask.png")


def write_pfm(path, arr: np.ndarray):
    """Write a 1- or 3-channel float array as little-endian PFM."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        header = "Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM stores 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM rows run bottom-to-top
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file")
        dims = fh.readline()
        while dims.startswith(b"#"):
            dims = fh.readline()
        m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValueError(f"{path}: malformed PFM dimensions")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(), dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    data = data[: int(np.prod(shape))].reshape(shape)[::-1]
    return data.astype(np.float64)


def _write_mask(path, mask: np.ndarray):
    mp = mask_path(path)
    if mask.all():
        if mp.exists():
            mp.unlink()
        return
    cv2.imwrite(str(mp), mask.astype(np.uint8) * 255)


def _read_mask(path, shape):
    mp = mask_path(path)
    if not mp.exists():
        return np.ones(shape, dtype=bool)
    m = cv2.imread(str(mp), cv2.IMREAD_GRAYSCALE)
    return m > 127


def save_image(path, img: Image):
    """Save by extension: ``.pfm`` linear float, ``.png`` gamma-encoded 16-bit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ext = path.suffix.lower()
    if ext == ".pfm":
        write_pfm(path, img.data)
    elif ext == ".png":
        disp = np.clip(img.data, 0.0, 1.0) ** (1.0 / GAMMA)
        q = np.round(disp * 65535.0).astype(np.uint16)
        if img.channels == 3:
            q = q[:, :, ::-1]
        cv2.imwrite(str(path), q)
    else:
        raise ValueError(f"unsupported image format: {path}")
    _write_mask(path, img.mask)


def load_image(path) -> Image:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pfm":
        data = read_pfm(path)
    elif ext == ".png":
        q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if q is None:
            raise OSError(f"cannot read {path}")
        if q.ndim == 3:
            q = q[:, :, ::-1]
        scale = 65535.0 if q.dtype == np.uint16 else 255.0
        data = (q.astype(np.float64) / scale) ** GAMMA
    else:
        raise ValueError(f"unsupported image format: {path}")
    return Image(data, _read_mask(path, data.shape[:2]))


def save_vector_field(path, vec: np.ndarray, extra: np.ndarray | None = None):
    """Store an (H, W, 2) displacement field as 3-channel PFM (dx, dy, extra)."""
    third = np.zeros(vec.shape[:2]) if extra is None else extra
    write_pfm(path, np.dstack([vec[..., 0], vec[..., 1], third]))


def load_vector_field(path):
    arr = read_pfm(path)
    return arr[..., :2].copy(), arr[..., 2].copy()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=2, sort_keys=True)
    path.write_text(text + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
