"""Irregular hole mask generation.

Holes are unions of random-walk brush strokes, which gives the
irregular, non-rectangular shapes the evaluation protocol needs.
Stamps that would push coverage past the +20% band are rejected, and
radii shrink automatically near the target, so the achieved hole
fraction lands within +-20% relative of the requested coverage.
Everything derives from one seeded generator, so masks are bit-exact
reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .coarse import check_hole_reaches_context


@dataclass
class MaskGenParams:
    seed: int
    coverage: float
    walkers: int = 4
    brush_radius_range: tuple[int, int] = (2, 6)

    def __post_init__(self):
        if not (0.0 < self.coverage <= 0.5):
            raise ValueError(f"coverage {self.coverage} outside (0, 0.5]")
        if self.walkers < 1:
            raise ValueError("walkers must be >= 1")
        rmin, rmax = self.brush_radius_range
        if rmin < 1 or rmax < rmin:
            raise ValueError(f"bad brush_radius_range {self.brush_radius_range}")


def _disk(r: int) -> np.ndarray:
    dy, dx = np.ogrid[-r:r + 1, -r:r + 1]
    return dy * dy + dx * dx <= r * r


def _walk_once(h: int, w: int, p: MaskGenParams,
               rng: np.random.Generator) -> np.ndarray | None:
    """One brush pass; None when the coverage band was not reached in budget."""
    target = p.coverage * h * w
    lo, hi = 0.8 * target, 1.2 * target
    mask = np.zeros((h, w), dtype=bool)
    pos = rng.uniform(0.0, 1.0, size=(p.walkers, 2)) * [h - 1, w - 1]
    rmin, rmax = p.brush_radius_range
    count = 0
    budget = 4000 + int(target)
    step = 0
    while count < lo and budget > 0:
        budget -= 1
        widx = step % p.walkers
        step += 1
        r = int(rng.integers(rmin, rmax + 1))
        # Shrink the brush once a full-size stamp could overshoot the band.
        while r > 1 and (2 * r + 1) ** 2 > hi - count:
            r -= 1
        cy, cx = int(round(pos[widx, 0])), int(round(pos[widx, 1]))
        cy, cx = min(max(cy, 0), h - 1), min(max(cx, 0), w - 1)
        disk = _disk(r)
        y0, x0 = max(cy - r, 0), max(cx - r, 0)
        y1, x1 = min(cy + r + 1, h), min(cx + r + 1, w)
        sub = disk[y0 - (cy - r):y1 - (cy - r), x0 - (cx - r):x1 - (cx - r)]
        added = int((sub & ~mask[y0:y1, x0:x1]).sum())
        if count + added <= hi:
            mask[y0:y1, x0:x1] |= sub
            count += added
        if rng.uniform() < 0.05:
            pos[widx] = rng.uniform(0.0, 1.0, size=2) * [h - 1, w - 1]
        else:
            theta = rng.uniform(0.0, 2.0 * np.pi)
            dist = rng.uniform(r, 2.0 * r + 1.0)
            pos[widx, 0] = min(max(pos[widx, 0] + dist * np.sin(theta), 0.0), h - 1)
            pos[widx, 1] = min(max(pos[widx, 1] + dist * np.cos(theta), 0.0), w - 1)
    if count < lo or count > hi:
        return None
    return mask


def random_irregular_mask(h: int, w: int, p: MaskGenParams) -> np.ndarray:
    """Seeded irregular mask with hole fraction within +-20% of p.coverage."""
    if h < 16 or w < 16:
        raise ValueError(f"mask dims {h}x{w} below the 16x16 minimum")
    rng = np.random.default_rng(p.seed)
    for _ in range(8):
        mask = _walk_once(h, w, p, rng)
        if mask is None:
            continue
        if not (~mask).any():
            continue
        try:
            check_hole_reaches_context(mask)
        except ValueError:
            continue
        return mask
    raise RuntimeError(
        f"coverage {p.coverage} unreachable within iteration cap for {h}x{w}"
    )


def mask_from_labels(label_map: np.ndarray, hole_labels) -> np.ndarray:
    """Hole wherever the label map value is in hole_labels."""
    labels = np.asarray(label_map)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"label map must be integer-typed, got {labels.dtype}")
    wanted = np.asarray(sorted(set(int(v) for v in hole_labels)), dtype=labels.dtype)
    mask = np.isin(labels, wanted)
    if not mask.any():
        warnings.warn("none of the requested labels occur; mask is empty")
    return mask
