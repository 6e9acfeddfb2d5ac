"""Coarse hole fill: harmonic (diffusion) inpainting plus an import path.

The rough first-pass prediction inside the hole is the discrete Laplace
solution with Dirichlet boundary given by the surrounding context pixels.
Image borders act as mirrored (Neumann) boundaries. Iteration is Jacobi,
not Gauss-Seidel, so the result is independent of sweep order and thread
count. Externally computed coarse predictions can be imported instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import as_mask, check_mask_matches, clamp01, read_image_any, read_tensor

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class CoarseFillParams:
    max_iters: int = 10000
    tolerance: float = 1e-6
    mode: str = "diffusion"  # or "external"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.mode not in ("diffusion", "external"):
            raise ValueError(f"unknown coarse-fill mode {self.mode!r}")


def hole_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 4-connected hole components (0 = context, 1..n = components)."""
    return ndimage.label(as_mask(mask), structure=_CROSS)


def check_hole_reaches_context(mask: np.ndarray) -> None:
    """Raise if some hole component has no 4-adjacent context pixel."""
    mask = as_mask(mask)
    if not (~mask).any():
        raise ValueError("isolated hole: mask has no context pixels")
    labels, n = hole_components(mask)
    if n == 0:
        return
    context_adjacent = ndimage.binary_dilation(~mask, structure=_CROSS)
    touched = np.unique(labels[mask & context_adjacent])
    orphans = np.setdiff1d(np.arange(1, n + 1), touched)
    if orphans.size:
        ys, xs = np.nonzero(labels == orphans[0])
        raise ValueError(
            f"isolated hole: component at pixel ({ys[0]}, {xs[0]}) "
            "has no context boundary"
        )


def diffusion_fill(img: np.ndarray, mask: np.ndarray,
                   params: CoarseFillParams | None = None,
                   residuals: list | None = None) -> np.ndarray:
    """Fill hole pixels with the harmonic extension of the context.

    Jacobi sweeps: each hole pixel moves toward the mean of its four
    neighbors read from the previous iterate (out-of-image neighbors are
    edge-mirrored). Each hole component is seeded with the mean of its own
    boundary context values, so every iterate respects the discrete
    maximum principle. Context pixels are never touched. Stops when the
    largest per-pixel update drops to ``params.tolerance`` or after
    ``params.max_iters`` sweeps. ``residuals``, if given, collects the
    per-sweep max |update|.
    """
    params = params or CoarseFillParams()
    mask = as_mask(mask)
    img = np.asarray(img, dtype=np.float32)
    check_mask_matches(mask, img)
    check_hole_reaches_context(mask)

    out = img.copy()
    if not mask.any():
        return out

    cur = img.astype(np.float64)
    labels, n = hole_components(mask)
    context_adjacent = ndimage.binary_dilation(~mask, structure=_CROSS)
    for comp in range(1, n + 1):
        inside = labels == comp
        boundary = ndimage.binary_dilation(inside, structure=_CROSS) & ~mask
        cur[inside] = cur[boundary].mean()

    for _ in range(params.max_iters):
        padded = np.pad(cur, 1, mode="edge")
        neighbor_mean = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1] +
                                padded[1:-1, :-2] + padded[1:-1, 2:])
        update = neighbor_mean[mask] - cur[mask]
        cur[mask] += update
        res = float(np.abs(update).max())
        if residuals is not None:
            residuals.append(res)
        if res <= params.tolerance:
            break

    out[mask] = cur[mask].astype(np.float32)
    return out


def import_coarse(path, expected_shape: tuple[int, int]) -> np.ndarray:
    """Load an externally computed coarse prediction (SFT1 or PNG).

    Values are clamped to [0,1] (with a warning if any fell outside); the
    spatial dims must match the pipeline input.
    """
    img = read_image_any(path)
    if img.shape != tuple(expected_shape):
        raise ValueError(
            f"coarse prediction dims {img.shape} do not match input {tuple(expected_shape)}"
        )
    if not str(path).lower().endswith(".png"):
        raw = read_tensor(path)
        if raw.min() < 0.0 or raw.max() > 1.0:
            warnings.warn(
                f"{path}: coarse prediction values outside [0,1] were clamped",
                stacklevel=2,
            )
    return clamp01(img).astype(np.float32)
