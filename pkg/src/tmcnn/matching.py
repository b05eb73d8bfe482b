"""Masked normalized cross-correlation against a template bank.

The score of a window I under template T with binary mask M is

    sum(T~ * I~) / sqrt(sum(T~^2) * sum(I~^2))

where both factors are mean-corrected over the mask support and zeroed
outside it. Because sum(T~) over the mask is zero, the numerator reduces
to a plain cross-correlation of the image with the masked mean-corrected
template, and the window statistics reduce to cross-correlations of the
image (and its square) with the mask: three frequency-domain products
per bank entry against two image spectra computed once per image.
"""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.ndimage

FLAT_WINDOW_EPS = 1e-9
REGION_FRACTION = 0.8  # flood-fill follows scores above this fraction of t


@dataclass
class CorrelationMap:
    """Per-pixel best score across the bank and the entry achieving it."""

    best_score: np.ndarray
    best_entry: np.ndarray

    @property
    def shape(self):
        return self.best_score.shape


@dataclass(frozen=True)
class Candidate:
    x: int
    y: int
    score: float
    tentative_label: str
    entry: int


class NccEngine:
    """Correlates one image against many masked templates.

    Precomputes padded spectra of the image and its square; each
    template then costs two forward and three inverse transforms.
    """

    def __init__(self, img: np.ndarray, side: int = 21):
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2:
            raise ValueError(f"expected a 2-D image, got shape {img.shape}")
        h, w = img.shape
        if h < side or w < side:
            raise ValueError(f"image {img.shape} smaller than template side {side}")
        self.side = side
        self.h, self.w = h, w
        self.fshape = (sfft.next_fast_len(h + side - 1), sfft.next_fast_len(w + side - 1))
        self._f_img = sfft.rfft2(img, self.fshape)
        self._f_img2 = sfft.rfft2(img * img, self.fshape)

    def _corr_valid(self, f_kernel: np.ndarray, f_base: np.ndarray) -> np.ndarray:
        # cross-correlation at valid lags: ifft(F_image * conj(F_kernel))
        full = sfft.irfft2(f_base * np.conj(f_kernel), self.fshape)
        return full[: self.h - self.side + 1, : self.w - self.side + 1]

    def score_map(self, template: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Masked NCC of every window center; border margin scored -1."""
        s = self.side
        if template.shape != (s, s) or mask.shape != (s, s):
            raise ValueError(
                f"template/mask must be {s}x{s}, got {template.shape} and {mask.shape}")
        m = mask.astype(np.float64)
        m_count = m.sum()
        if m_count == 0:
            raise ValueError("mask considers no pixels")
        t_centered = np.where(mask, template - (template * m).sum() / m_count, 0.0)
        t_ss = float((t_centered * t_centered).sum())

        out = np.full((self.h, self.w), -1.0)
        lo = s // 2
        if t_ss < FLAT_WINDOW_EPS:
            out[lo:self.h - s + 1 + lo, lo:self.w - s + 1 + lo] = 0.0
            return out

        f_t = sfft.rfft2(t_centered, self.fshape)
        f_m = sfft.rfft2(m, self.fshape)
        num = self._corr_valid(f_t, self._f_img)
        win_sum = self._corr_valid(f_m, self._f_img)
        win_sum2 = self._corr_valid(f_m, self._f_img2)
        win_var = np.maximum(win_sum2 - win_sum * win_sum / m_count, 0.0)

        flat = win_var < FLAT_WINDOW_EPS
        denom = np.sqrt(t_ss * np.where(flat, 1.0, win_var))
        scores = np.where(flat, 0.0, num / denom)
        out[lo:self.h - s + 1 + lo, lo:self.w - s + 1 + lo] = scores
        return out


def masked_ncc_map(img: np.ndarray, template: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return NccEngine(img, template.shape[0]).score_map(template, mask)


def fuse_maps(maps) -> CorrelationMap:
    """Per-pixel max across maps; ties keep the lowest entry index."""
    if len(maps) == 0:
        raise ValueError("no maps to fuse")
    best = np.array(maps[0], dtype=np.float64)
    entry = np.zeros(best.shape, dtype=np.int32)
    for i, m in enumerate(maps[1:], start=1):
        if m.shape != best.shape:
            raise ValueError(f"map {i} shape {m.shape} != {best.shape}")
        better = m > best
        best[better] = m[better]
        entry[better] = i
    return CorrelationMap(best, entry)


_WORKER_ENGINE = None


def _init_worker(img, side):
    global _WORKER_ENGINE
    _WORKER_ENGINE = NccEngine(img, side)


def _score_chunk(args):
    start, templates, masks = args
    best = None
    entry = None
    for i, (tpl, mask) in enumerate(zip(templates, masks)):
        sm = _WORKER_ENGINE.score_map(tpl, mask)
        if best is None:
            best = sm
            entry = np.full(sm.shape, start, dtype=np.int32)
        else:
            better = sm > best
            best[better] = sm[better]
            entry[better] = start + i
    return start, best, entry


def correlate_bank(img, bank, jobs: int | None = None, progress=None) -> CorrelationMap:
    """Fused correlation map of the whole bank over one image.

    Streams entries so only the running best map is held. jobs > 1
    splits the bank across processes; the fused result is identical
    because chunks are combined in ascending entry order.
    """
    entries = getattr(bank, "entries", bank)
    if len(entries) == 0:
        raise ValueError("empty bank")
    side = entries[0].template.shape[0]
    if jobs is None:
        jobs = os.cpu_count() or 1
    jobs = max(1, min(jobs, len(entries)))

    if jobs == 1:
        engine = NccEngine(img, side)
        best = None
        entry = None
        for i, e in enumerate(entries):
            sm = engine.score_map(e.template, e.mask)
            if best is None:
                best = sm
                entry = np.zeros(sm.shape, dtype=np.int32)
            else:
                better = sm > best
                best[better] = sm[better]
                entry[better] = i
            if progress is not None:
                progress(i + 1, len(entries))
        return CorrelationMap(best, entry)

    bounds = np.linspace(0, len(entries), jobs + 1).astype(int)
    chunks = [
        (int(b0), [e.template for e in entries[b0:b1]], [e.mask for e in entries[b0:b1]])
        for b0, b1 in zip(bounds[:-1], bounds[1:])
        if b1 > b0
    ]
    results = []
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(np.asarray(img, dtype=np.float64), side)) as pool:
        done = 0
        for res in pool.map(_score_chunk, chunks):
            results.append(res)
            done += 1
            if progress is not None:
                progress(done, len(chunks))
    results.sort(key=lambda r: r[0])
    best = None
    entry = None
    for start, pb, pe in results:
        if best is None:
            best, entry = pb, pe
        else:
            better = pb > best
            best[better] = pb[better]
            entry[better] = pe[better]
    return CorrelationMap(best, entry)


def extract_peaks(cm: CorrelationMap, t: float, kinds=None) -> list[Candidate]:
    """One candidate per region of the 0.8t super-level set reachable
    from a score above t, at the region's maximum.

    Equivalent to a raster scan that flood-fills and zeroes each region
    as it is discovered: emission order follows the first above-t pixel
    of each region in row-major order; the region maximum breaks exact
    ties toward the earlier row-major position.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {t}")
    score = cm.best_score
    above_y, above_x = np.nonzero(score > t)
    if above_y.size == 0:
        return []
    labels, _ = scipy.ndimage.label(score > REGION_FRACTION * t, structure=np.ones((3, 3), dtype=int))

    # discovery order: first above-t seed per region in raster order
    seed_labels = labels[above_y, above_x]
    uniq, first_seed = np.unique(seed_labels, return_index=True)
    discovered = uniq[np.argsort(first_seed)]

    # region argmax with raster-order tie-breaking
    flat_idx = np.nonzero(labels.ravel())[0]
    lab = labels.ravel()[flat_idx]
    val = score.ravel()[flat_idx]
    order = np.lexsort((flat_idx, -val, lab))
    group_labels, group_first = np.unique(lab[order], return_index=True)
    argmax_of = dict(zip(group_labels.tolist(), flat_idx[order[group_first]].tolist()))

    w = score.shape[1]
    out = []
    for lb in discovered:
        pos = argmax_of[int(lb)]
        y, x = divmod(pos, w)
        e = int(cm.best_entry[y, x])
        label = kinds[e] if kinds is not None else "unknown"
        out.append(Candidate(int(x), int(y), float(score[y, x]), label, e))
    return out


def bfs_extract_peaks(score_map: np.ndarray, t: float, kinds=None, entries=None):
    """Literal single-pass scan-flood-zero variant, kept as the slow
    reference for extract_peaks. Returns (candidates, residual map).
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {t}")
    s = score_map.copy()
    h, w = s.shape
    low = REGION_FRACTION * t
    out = []
    for y in range(h):
        for x in range(w):
            if s[y, x] <= t:
                continue
            queue = deque([(y, x)])
            region = [(y, x)]
            s_region = {(y, x)}
            while queue:
                cy, cx = queue.popleft()
                for ny in range(max(0, cy - 1), min(h, cy + 2)):
                    for nx in range(max(0, cx - 1), min(w, cx + 2)):
                        if (ny, nx) not in s_region and s[ny, nx] > low:
                            s_region.add((ny, nx))
                            region.append((ny, nx))
                            queue.append((ny, nx))
            by, bx = max(region, key=lambda p: (s[p[0], p[1]], -p[0] * w - p[1]))
            e = int(entries[by, bx]) if entries is not None else 0
            label = kinds[e] if kinds is not None else "unknown"
            out.append(Candidate(int(bx), int(by), float(s[by, bx]), label, e))
            for ry, rx in region:
                s[ry, rx] = 0.0
    return out, s


def correlation_to_u16(cm: CorrelationMap) -> np.ndarray:
    """Scores linearly mapped from [-1, 1] to the full 16-bit range."""
    scaled = np.clip((cm.best_score + 1.0) * 0.5, 0.0, 1.0) * 65535.0
    return np.floor(scaled + 0.5).astype(np.uint16)
