"""Dense tensor/image containers, region algebra, and bit-exact file I/O.

In-memory conventions used across the package:

* tensors are ``float32`` numpy arrays, row-major, all values finite;
* grayscale images are 2-D ``(H, W)`` arrays with intensities in ``[0, 1]``
  (the channel axis of stored ``[1, H, W]`` files is squeezed on load);
* masks are 2-D boolean arrays where ``True`` marks a hole pixel and
  ``False`` marks a context pixel.

File formats:

* SFT1 tensor file (little-endian): magic ``SFT1``, u32 ndim, ndim x u32
  dims, then ``prod(dims)`` float32 payload, row-major.
* PNG: single-channel 8- or 16-bit grayscale, mapped linearly to ``[0, 1]``.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

SFT1_MAGIC = b"SFT1"


class FormatError(Exception):
    """A file does not conform to one of the supported on-disk formats."""


def as_tensor(data, dims=None) -> np.ndarray:
    """Coerce ``data`` to a finite float32 array, optionally reshaped to ``dims``."""
    arr = np.asarray(data, dtype=np.float32)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in dims):
            raise ValueError(f"tensor dims must be positive, got {dims}")
        if arr.size != int(np.prod(dims)):
            raise ValueError(
                f"data length {arr.size} does not match product of dims {dims}"
            )
        arr = arr.reshape(dims)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"non-finite value at flat offset {bad}")
    return arr


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Assert all values finite; returns the array unchanged."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{what} contains a non-finite value at flat offset {bad}")
    return arr


def as_mask(data) -> np.ndarray:
    """Coerce to a 2-D boolean hole mask (True = hole)."""
    m = np.asarray(data)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def check_mask_matches(mask: np.ndarray, img: np.ndarray) -> None:
    if mask.shape != img.shape[-2:]:
        raise ValueError(
            f"mask shape {mask.shape} does not match image shape {img.shape[-2:]}"
        )


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def mirror_horizontal(t: np.ndarray) -> np.ndarray:
    """Reflect about the vertical centerline: out[..., x] = in[..., W-1-x].

    Works on images, masks, and feature tensors alike (the last axis is
    always width). Applying twice is the identity, bit-exact.
    """
    if t.ndim < 1:
        raise ValueError("mirror_horizontal needs at least one axis")
    return t[..., ::-1].copy()


def apply_mask(img: np.ndarray, mask: np.ndarray, fill: float) -> np.ndarray:
    """Replace hole pixels by ``fill``; context pixels pass through bit-exact."""
    mask = as_mask(mask)
    check_mask_matches(mask, img)
    out = img.copy()
    out[..., mask] = np.float32(fill)
    return out


# ---------------------------------------------------------------------------
# SFT1 tensor files
# ---------------------------------------------------------------------------

def write_tensor(path, t: np.ndarray) -> None:
    """Write a float32 tensor in SFT1 format (see module docstring)."""
    arr = as_tensor(t)
    dims = arr.shape if arr.ndim > 0 else (1,)
    with open(path, "wb") as f:
        f.write(SFT1_MAGIC)
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    """Read an SFT1 tensor file; write-then-read round-trips bit-exactly."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SFT1_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {SFT1_MAGIC!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    header_end = 8 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dim list (ndim={ndim})")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    if ndim == 0 or any(d == 0 for d in dims):
        raise FormatError(f"{path}: invalid dims {dims}")
    count = int(np.prod(dims))
    expected = header_end + 4 * count
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch, expected {expected} bytes "
            f"for dims {dims}, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FormatError(
            f"{path}: non-finite value at element {bad} "
            f"(byte offset {header_end + 4 * bad})"
        )
    return data.reshape(dims).astype(np.float32)


# ---------------------------------------------------------------------------
# Grayscale PNG
# ---------------------------------------------------------------------------

def read_png_gray(path) -> np.ndarray:
    """Load an 8- or 16-bit single-channel PNG as a [0,1] float32 image."""
    with Image.open(path) as im:
        mode = im.mode
        if mode == "L":
            arr = np.asarray(im, dtype=np.float32)
            scale = 255.0
        elif mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float32)
            if arr.min() < 0 or arr.max() > 65535:
                raise FormatError(f"{path}: sample values outside 16-bit range")
            scale = 65535.0
        else:
            raise FormatError(
                f"{path}: unsupported PNG mode {mode!r} (need 8/16-bit grayscale)"
            )
    return clamp01(arr / np.float32(scale)).astype(np.float32)


def write_png_gray(path, img: np.ndarray, bitdepth: int = 8) -> None:
    """Write a [0,1] image as grayscale PNG, rounding half away from zero."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    check_finite(img, "image")
    if bitdepth == 8:
        peak, dtype = 255.0, np.uint8
    elif bitdepth == 16:
        peak, dtype = 65535.0, np.uint16
    else:
        raise ValueError("bitdepth must be 8 or 16")
    # floor(x + 0.5) is round-half-away-from-zero for the non-negative
    # clamped range (np.round would round half to even).
    quant = np.floor(np.clip(img, 0.0, 1.0) * peak + 0.5).astype(dtype)
    Image.fromarray(quant).save(path, format="PNG")


def read_image_any(path) -> np.ndarray:
    """Read a grayscale image from PNG or SFT1, clamped to [0,1].

    SFT1 tensors of dims [H, W] or [1, H, W] are accepted.
    """
    path = str(path)
    if path.lower().endswith(".png"):
        return read_png_gray(path)
    t = read_tensor(path)
    if t.ndim == 3 and t.shape[0] == 1:
        t = t[0]
    if t.ndim != 2:
        raise FormatError(f"{path}: expected image dims [H,W] or [1,H,W], got {t.shape}")
    return clamp01(t).astype(np.float32)


def read_mask_any(path) -> np.ndarray:
    """Read a hole mask from PNG (nonzero = hole) or SFT1 (>0.5 = hole)."""
    path = str(path)
    if path.lower().endswith(".png"):
        img = read_png_gray(path)
        return img > 0.0
    t = read_tensor(path)
    if t.ndim == 3 and t.shape[0] == 1:
        t = t[0]
    if t.ndim != 2:
        raise FormatError(f"{path}: expected mask dims [H,W] or [1,H,W], got {t.shape}")
    return t > 0.5


def write_mask_png(path, mask: np.ndarray) -> None:
    """Store a mask as 8-bit PNG, 0 = context, 255 = hole."""
    mask = as_mask(mask)
    write_png_gray(path, mask.astype(np.float32))
