"""Image and depth-map file I/O.

RGB rasters travel as PNG (8- or 16-bit, converted to float in [0, 1] on
read). Depth maps support two on-disk forms:

* 16-bit single-channel PNG plus a JSON sidecar ``<name>.json`` holding
  ``{"scale": <units-per-level>}``; depth = pixel_value * scale.
* a raw little-endian float32 dump with an 8-byte header: the magic bytes
  ``UWDM`` followed by height and width as unsigned 16-bit integers.

cv2 is used for PNG coding; channel order is converted so that this module's
API is RGB throughout.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import cv2
import numpy as np

from .errors import ValidationError
from .imaging import validate_depth, validate_image

DEPTH_MAGIC = b"UWDM"
_HEADER = struct.Struct("<4sHH")


def read_image(path) -> np.ndarray:
    """Read an 8- or 16-bit RGB PNG into a float64 H x W x 3 array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"cannot read image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValidationError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValidationError(f"unsupported image dtype {raw.dtype} in {path}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / scale


def write_image(path, image: np.ndarray, bits: int = 8) -> None:
    """Write a float [0, 1] RGB array as an 8- or 16-bit PNG."""
    image = validate_image(image)
    path = Path(path)
    if bits == 8:
        raster = np.round(image * 255.0).astype(np.uint8)
    elif bits == 16:
        raster = np.round(image * 65535.0).astype(np.uint16)
    else:
        raise ValidationError(f"bits must be 8 or 16, got {bits}")
    bgr = cv2.cvtColor(raster, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), bgr):
        raise ValidationError(f"cannot write image: {path}")


def write_depth_png(path, depth: np.ndarray, scale: float | None = None) -> None:
    """Write a depth map as 16-bit PNG plus a JSON sidecar with the scale.

    ``scale`` is units per integer level; when omitted it is chosen so the
    maximum depth maps to the top of the 16-bit range.
    """
    depth = validate_depth(depth)
    path = Path(path)
    if scale is None:
        top = float(depth.max())
        scale = top / 65535.0 if top > 0 else 1.0
    if scale <= 0 or not np.isfinite(scale):
        raise ValidationError(f"scale must be positive and finite, got {scale}")
    levels = np.round(depth / scale)
    if levels.max() > 65535:
        raise ValidationError(
            f"depth range {float(depth.max())} exceeds 16-bit capacity at scale {scale}"
        )
    if not cv2.imwrite(str(path), levels.astype(np.uint16)):
        raise ValidationError(f"cannot write depth png: {path}")
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"scale": scale}), encoding="utf-8")


def read_depth_png(path) -> np.ndarray:
    """Read a 16-bit depth PNG written by :func:`write_depth_png`."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise ValidationError(f"depth sidecar missing: {sidecar}")
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        scale = float(meta["scale"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad depth sidecar {sidecar}: {exc}") from exc
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValidationError(f"cannot read depth png: {path}")
    if raw.ndim != 2 or raw.dtype != np.uint16:
        raise ValidationError(
            f"depth png must be single-channel 16-bit, got shape {raw.shape} dtype {raw.dtype}"
        )
    return raw.astype(np.float64) * scale


def write_depth_raw(path, depth: np.ndarray) -> None:
    """Write a depth map as raw little-endian float32 with an 8-byte header."""
    depth = validate_depth(depth)
    h, w = depth.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise ValidationError(f"raw depth format caps dimensions at 65535, got {depth.shape}")
    payload = depth.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(_HEADER.pack(DEPTH_MAGIC, h, w) + payload)


def read_depth_raw(path) -> np.ndarray:
    """Read a raw float32 depth dump written by :func:`write_depth_raw`."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValidationError(f"depth file too short: {path}")
    magic, h, w = _HEADER.unpack_from(blob)
    if magic != DEPTH_MAGIC:
        raise ValidationError(f"bad depth magic {magic!r} in {path}")
    expected = _HEADER.size + 4 * h * w
    if len(blob) != expected:
        raise ValidationError(
            f"depth payload size mismatch in {path}: expected {expected} bytes, got {len(blob)}"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(h, w).astype(np.float64)


def read_depth(path) -> np.ndarray:
    """Read a depth map in either supported format, sniffing by extension."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_depth_png(path)
    return read_depth_raw(path)
