"""Context-aware patch swapping in feature space.

Every feature patch centered in the hole region r is replaced by the
context patch from r-bar that maximizes normalized cross-correlation
(cosine similarity of the flattened patches). ``swap_naive`` is the
exhaustive O(|r| * |r-bar|) reference; ``swap_fast`` batches the same
scores into one matrix product and must select bit-identical indices.

Both paths share patch extraction, normalization, and the apply/average
step, and both score in float64, so the argmax comparison is the only
place they can differ. Ties break to the lowest row-major linear index
of the candidate center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import as_mask

TIE_BREAK = "lowest-linear-index"


@dataclass
class SwapParams:
    patch_size: int = 1
    tie_break: str = TIE_BREAK

    def __post_init__(self):
        if self.patch_size not in (1, 3, 5):
            raise ValueError("patch_size must be one of 1, 3, 5")
        if self.tie_break != TIE_BREAK:
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


def downsample_mask(mask: np.ndarray, feature_h: int, feature_w: int) -> np.ndarray:
    """Map an image-space hole mask to feature resolution.

    A feature cell is a hole iff any image pixel it covers is a hole
    (conservative dilation).
    """
    mask = as_mask(mask)
    h, w = mask.shape
    if h % feature_h or w % feature_w:
        raise ValueError(
            f"image dims {h}x{w} are not integer multiples of "
            f"feature dims {feature_h}x{feature_w}"
        )
    sh, sw = h // feature_h, w // feature_w
    fm = mask.reshape(feature_h, sh, feature_w, sw).any(axis=(1, 3))
    if not (~fm).any():
        raise ValueError("feature mask has no context cells")
    return fm


def ncc(p: np.ndarray, q: np.ndarray) -> float:
    """Cosine similarity of two flattened patches; 0 if either norm is 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"patch length mismatch: {p.size} vs {q.size}")
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    if np_ == 0.0 or nq == 0.0:
        return 0.0
    return float(np.clip(np.dot(p, q) / (np_ * nq), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Shared machinery (identical in both swap paths by construction)
# ---------------------------------------------------------------------------

def _hole_centers(fm: np.ndarray) -> np.ndarray:
    """(N, 2) hole cell coordinates in row-major order."""
    return np.argwhere(fm)


def _candidate_centers(fm: np.ndarray, k: int) -> np.ndarray:
    """Centers whose k x k footprint lies fully inside the map and in r-bar."""
    fh, fw = fm.shape
    r = k // 2
    context = ~fm
    if k == 1:
        ok = context
    else:
        ok = np.zeros_like(context)
        if fh >= k and fw >= k:
            win = sliding_window_view(context, (k, k))
            ok[r:fh - r, r:fw - r] = win.all(axis=(2, 3))
    return np.argwhere(ok)


def _patch_vectors(feat: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """(N, C*k*k) raw patch vectors; out-of-bounds window cells read as 0."""
    c, fh, fw = feat.shape
    r = k // 2
    if k == 1:
        return feat[:, centers[:, 0], centers[:, 1]].T.copy()
    padded = np.pad(feat, ((0, 0), (r, r), (r, r)))
    win = sliding_window_view(padded, (k, k), axis=(1, 2))  # (C, fh, fw, k, k)
    vecs = win[:, centers[:, 0], centers[:, 1]]             # (C, N, k, k)
    return vecs.transpose(1, 0, 2, 3).reshape(len(centers), c * k * k)


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    """Unit-norm rows in float64; zero rows stay zero (they score 0)."""
    m64 = mat.astype(np.float64)
    norms = np.linalg.norm(m64, axis=1, keepdims=True)
    nonzero = norms[:, 0] > 0.0
    out = np.zeros_like(m64)
    out[nonzero] = m64[nonzero] / norms[nonzero]
    return out


def _apply_swaps(feat: np.ndarray, fm: np.ndarray, holes: np.ndarray,
                 cands: np.ndarray, chosen: np.ndarray, k: int) -> np.ndarray:
    """Write the selected candidate patches over the hole, averaging overlaps.

    Only hole cells are written (context immutability); for patch_size 1
    the average degenerates to direct assignment of the matched vector.
    """
    out = feat.copy()
    if k == 1:
        src = cands[chosen]
        out[:, holes[:, 0], holes[:, 1]] = feat[:, src[:, 0], src[:, 1]]
        return out

    c, fh, fw = feat.shape
    r = k // 2
    acc = np.zeros((c, fh, fw), dtype=np.float64)
    cnt = np.zeros((fh, fw), dtype=np.int64)
    for (hy, hx), sel in zip(holes, chosen):
        cy, cx = cands[sel]
        y0, y1 = max(hy - r, 0), min(hy + r + 1, fh)
        x0, x1 = max(hx - r, 0), min(hx + r + 1, fw)
        sy, sx = y0 - (hy - r), x0 - (hx - r)
        patch = feat[:, cy - r + sy:cy - r + sy + (y1 - y0),
                     cx - r + sx:cx - r + sx + (x1 - x0)]
        acc[:, y0:y1, x0:x1] += patch
        cnt[y0:y1, x0:x1] += 1
    write = fm & (cnt > 0)
    out[:, write] = (acc[:, write] / cnt[write]).astype(np.float32)
    return out


def _prepare(feat: np.ndarray, fm: np.ndarray, params: SwapParams):
    feat = np.asarray(feat, dtype=np.float32)
    if feat.ndim != 3:
        raise ValueError(f"feature map must be (C, h, w), got shape {feat.shape}")
    fm = as_mask(fm)
    if fm.shape != feat.shape[1:]:
        raise ValueError(
            f"feature mask shape {fm.shape} != feature grid {feat.shape[1:]}"
        )
    holes = _hole_centers(fm)
    cands = _candidate_centers(fm, params.patch_size)
    if len(holes) and not len(cands):
        raise ValueError("no eligible context patch (r-bar holds no full patch)")
    return feat, fm, holes, cands


def swap_naive(feat: np.ndarray, fm: np.ndarray,
               params: SwapParams | None = None) -> np.ndarray:
    """Exhaustive reference matcher: per-pair scores, explicit argmax loop."""
    params = params or SwapParams()
    feat, fm, holes, cands = _prepare(feat, fm, params)
    if not len(holes):
        return feat.copy()
    k = params.patch_size
    tvecs = _normalize_rows(_patch_vectors(feat, holes, k))
    cvecs = _normalize_rows(_patch_vectors(feat, cands, k))
    chosen = np.empty(len(holes), dtype=np.int64)
    for i, t in enumerate(tvecs):
        best_score = -np.inf
        best_idx = 0
        for j in range(len(cvecs)):
            s = float(np.dot(t, cvecs[j]))
            if s > best_score:  # strict: ties keep the lowest candidate index
                best_score = s
                best_idx = j
        chosen[i] = best_idx
    return _apply_swaps(feat, fm, holes, cands, chosen, k)


def swap_fast(feat: np.ndarray, fm: np.ndarray,
              params: SwapParams | None = None) -> np.ndarray:
    """Batched matcher: one normalized cross-correlation matrix product.

    Selects bit-identical indices to ``swap_naive`` under the shared
    lowest-linear-index tie-break.
    """
    params = params or SwapParams()
    feat, fm, holes, cands = _prepare(feat, fm, params)
    if not len(holes):
        return feat.copy()
    k = params.patch_size
    tvecs = _normalize_rows(_patch_vectors(feat, holes, k))
    cvecs = _normalize_rows(_patch_vectors(feat, cands, k))
    scores = tvecs @ cvecs.T
    chosen = scores.argmax(axis=1)  # first maximum = lowest linear index
    return _apply_swaps(feat, fm, holes, cands, chosen, k)


def match_indices(feat: np.ndarray, fm: np.ndarray,
                  params: SwapParams | None = None,
                  method: str = "fast") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expose (hole centers, candidate centers, chosen candidate row) for tests."""
    params = params or SwapParams()
    feat, fm, holes, cands = _prepare(feat, fm, params)
    if not len(holes):
        return holes, cands, np.empty(0, dtype=np.int64)
    k = params.patch_size
    tvecs = _normalize_rows(_patch_vectors(feat, holes, k))
    cvecs = _normalize_rows(_patch_vectors(feat, cands, k))
    if method == "fast":
        chosen = (tvecs @ cvecs.T).argmax(axis=1)
    elif method == "naive":
        chosen = np.empty(len(holes), dtype=np.int64)
        for i, t in enumerate(tvecs):
            best_score, best_idx = -np.inf, 0
            for j in range(len(cvecs)):
                s = float(np.dot(t, cvecs[j]))
                if s > best_score:
                    best_score, best_idx = s, j
            chosen[i] = best_idx
    else:
        raise ValueError(f"unknown method {method!r}")
    return holes, cands, chosen
