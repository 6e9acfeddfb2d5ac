"""Evaluation metrics: masked L1, SSIM, PSNR, perceptual and MI.

All metrics accumulate in float64. Mutual information sums its
histogram terms in sorted order so that mi(a, b) == mi(b, a) bit-exactly
and mi(a, a) equals ``binned_entropy(a)`` bit-exactly; the joint term is
written p*(log p - (log px + log py)) to keep it invariant under
argument swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import featnet
from .core import as_mask, check_mask_matches

REPORT_FIELDS = ("mean_l1_hole", "mean_l1_hole_x255", "ssim", "psnr_db",
                 "perceptual", "mi_nats")


@dataclass
class MetricReport:
    mean_l1_hole: float
    mean_l1_hole_x255: float
    ssim: float
    psnr_db: float
    perceptual: float | None
    mi_nats: float

    def to_row(self) -> list[str]:
        """CSV cells in REPORT_FIELDS order; infinities and None stay readable."""
        cells = []
        for name in REPORT_FIELDS:
            v = getattr(self, name)
            if v is None:
                cells.append("")
            elif math.isinf(v):
                cells.append("inf")
            else:
                cells.append(f"{v:.9g}")
        return cells


def _pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"image dims differ: {a.shape} vs {b.shape}")
    return a, b


def mean_l1(a: np.ndarray, b: np.ndarray, m: np.ndarray | None = None) -> float:
    """Mean absolute difference over hole pixels (all pixels when m is None)."""
    a, b = _pair(a, b)
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64))
    if m is None:
        return float(diff.mean())
    m = as_mask(m)
    check_mask_matches(m, a)
    if not m.any():
        raise ValueError("mask selects no hole pixels")
    return float(diff[m].mean())


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf sentinel for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, K1=.01 K2=.03, peak 1.

    Borders inside the window radius are cropped before averaging, so the
    filter boundary mode cannot influence the result.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2-D images, got shape {a.shape}")
    win, sigma, k1, k2, peak = 11, 1.5, 0.01, 0.03, 1.0
    r = win // 2
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} smaller than the {win}x{win} window")

    x = a.astype(np.float64)
    y = b.astype(np.float64)
    blur = lambda t: gaussian_filter(t, sigma, truncate=3.5, mode="nearest")
    ux, uy = blur(x), blur(y)
    uxx, uyy, uxy = blur(x * x), blur(y * y), blur(x * y)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / \
        ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(np.clip(s[r:-r, r:-r].mean(), -1.0, 1.0))


def _bin_indices(img: np.ndarray, bins: int) -> np.ndarray:
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.minimum((v * bins).astype(np.int64), bins - 1)


def _selected(a: np.ndarray, b: np.ndarray,
              exclude: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    a, b = _pair(a, b)
    if exclude is None:
        return a.ravel(), b.ravel()
    exclude = as_mask(exclude)
    check_mask_matches(exclude, a)
    keep = ~exclude
    if not keep.any():
        raise ValueError("exclusion mask removes every pixel")
    return a[keep], b[keep]


def mutual_information(a: np.ndarray, b: np.ndarray,
                       exclude: np.ndarray | None = None,
                       bins: int = 32) -> float:
    """Histogram MI in nats over non-excluded pixels, equal-width bins on [0,1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    av, bv = _selected(a, b, exclude)
    if av.size < 2:
        raise ValueError("need at least 2 non-excluded pixels")
    ia = _bin_indices(av, bins)
    ib = _bin_indices(bv, bins)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).astype(np.float64)
    joint = joint.reshape(bins, bins) / av.size
    # both marginals go through the same contiguous row reduction so that
    # swapping the arguments transposes the joint but reproduces the exact
    # same marginal values (bitwise argument symmetry)
    px = joint.sum(axis=1)
    py = np.ascontiguousarray(joint.T).sum(axis=1)
    nz = joint > 0
    li, lj = np.nonzero(nz)
    p = joint[nz]
    terms = p * (np.log(p) - (np.log(px[li]) + np.log(py[lj])))
    return float(np.sort(terms).sum())


def binned_entropy(a: np.ndarray, exclude: np.ndarray | None = None,
                   bins: int = 32) -> float:
    """Entropy (nats) of the binned intensity distribution; MI(a,a) equals this."""
    av, _ = _selected(a, a, exclude)
    if av.size < 2:
        raise ValueError("need at least 2 non-excluded pixels")
    ia = _bin_indices(av, bins)
    p = np.bincount(ia, minlength=bins).astype(np.float64) / av.size
    p = p[p > 0]
    terms = -p * np.log(p)
    return float(np.sort(terms).sum())


def perceptual_distance(a: np.ndarray, b: np.ndarray, net) -> tuple[float, float]:
    """(L2 norm, per-element RMS) of the tap-layer feature difference."""
    a, b = _pair(a, b)
    fa, _ = featnet.forward(net, a)
    fb, _ = featnet.forward(net, b)
    diff = fa.astype(np.float64) - fb.astype(np.float64)
    l2 = float(np.linalg.norm(diff.ravel()))
    return l2, l2 / math.sqrt(diff.size)


def compute_report(a: np.ndarray, b: np.ndarray,
                   mask: np.ndarray | None = None, net=None,
                   bins: int = 32) -> MetricReport:
    """Assemble the standard comparison row for image pair (a, b)."""
    l1 = mean_l1(a, b, mask)
    perc = perceptual_distance(a, b, net)[0] if net is not None else None
    return MetricReport(
        mean_l1_hole=l1,
        mean_l1_hole_x255=255.0 * l1,
        ssim=ssim(a, b),
        psnr_db=psnr(a, b),
        perceptual=perc,
        mi_nats=mutual_information(a, b, bins=bins),
    )
