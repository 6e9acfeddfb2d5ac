"""Quasi-symmetry penalty on the inpainted region.

Medical head images are roughly mirror-symmetric about the vertical
midline. The penalty ties each hole pixel to its horizontal mirror, but
only when that mirror lands in known context: pairs where both sides
are holes carry no information and are excluded, as is the self-paired
center column of odd-width images.

Loss is the mean of squared differences over the contributing pairs,
accumulated in float64. The gradient is analytic: +2(a - b)/n at the
hole pixel and -2(a - b)/n at its mirror.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import as_mask, check_mask_matches


def symmetry_pairs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates (hole pixels, mirror context pixels), row-major order.

    A pair contributes iff the pixel is a hole and its horizontal mirror
    is context. Mirrors are an involution, so pairs never share pixels.
    """
    mask = as_mask(mask)
    w = mask.shape[1]
    mirrored = mask[:, ::-1]
    use = mask & ~mirrored
    holes = np.argwhere(use)
    mirrors = holes.copy()
    mirrors[:, 1] = w - 1 - holes[:, 1]
    return holes, mirrors


def symmetry_loss(img: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared hole-vs-mirror difference; 0.0 when no pair contributes."""
    img = np.asarray(img)
    mask = as_mask(mask)
    check_mask_matches(mask, img)
    holes, mirrors = symmetry_pairs(mask)
    if not len(holes):
        if mask.any():
            warnings.warn("every hole pixel's mirror is also a hole; "
                          "symmetry constraint is vacuous")
        return 0.0
    a = img[holes[:, 0], holes[:, 1]].astype(np.float64)
    b = img[mirrors[:, 0], mirrors[:, 1]].astype(np.float64)
    # summing in sorted order makes the value independent of the pair
    # enumeration order, so mirroring the whole problem is bit-exact
    d = np.sort((a - b) ** 2)
    return float(d.sum() / d.size)


def symmetry_grad(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Analytic gradient of ``symmetry_loss`` w.r.t. every image pixel.

    Context mirrors receive the negated term even though the optimizer
    only steps hole pixels; finite differences validate the full field.
    """
    img = np.asarray(img)
    mask = as_mask(mask)
    check_mask_matches(mask, img)
    grad = np.zeros(img.shape, dtype=np.float64)
    holes, mirrors = symmetry_pairs(mask)
    if not len(holes):
        return grad
    a = img[holes[:, 0], holes[:, 1]].astype(np.float64)
    b = img[mirrors[:, 0], mirrors[:, 1]].astype(np.float64)
    term = 2.0 * (a - b) / len(holes)
    grad[holes[:, 0], holes[:, 1]] = term
    grad[mirrors[:, 0], mirrors[:, 1]] = -term
    return grad
