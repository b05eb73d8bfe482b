"""Synthetic labyrinth images with skeleton-derived ground truth.

The generator band-pass filters white noise around one spatial frequency and
sign-thresholds the field, which produces the familiar maze-like stripe
morphology.  Ground truth comes from morphological thinning of one phase:
skeleton endpoints are terminals, branch pixels are junctions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize

__all__ = [
    "SynthConfig",
    "GroundTruthPoint",
    "GroundTruth",
    "generate_labyrinth",
    "skeleton_ground_truth",
    "draw_stripes",
]


@dataclass(frozen=True)
class SynthConfig:
    width: int
    height: int
    wavelength: float = 12.0
    bandwidth: float = 0.25      # spectral width as a fraction of the centre frequency
    noise_sigma: float = 0.03
    blur_sigma: float = 1.0
    seed: int = 0
    relax_iterations: int = 0    # sign -> band-pass annealing passes; 0 keeps the raw field

    def __post_init__(self):
        if self.wavelength < 6:
            raise ValueError(f"wavelength must be >= 6, got {self.wavelength}")
        if self.width < 4 * self.wavelength or self.height < 4 * self.wavelength:
            raise ValueError(
                f"image dims ({self.width}x{self.height}) must be at least 4x the wavelength"
            )
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_sigma < 0 or self.blur_sigma < 0:
            raise ValueError("sigmas must be non-negative")
        if self.relax_iterations < 0:
            raise ValueError("relax_iterations must be non-negative")


@dataclass(frozen=True)
class GroundTruthPoint:
    x: int
    y: int
    label: str  # "junction" | "terminal"


@dataclass(frozen=True)
class GroundTruth:
    points: tuple[GroundTruthPoint, ...]
    phase: str  # "dark" | "bright"

    def count(self, label: str) -> int:
        return sum(1 for p in self.points if p.label == label)


def generate_labyrinth(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return (grayscale image in [0,1], boolean dark-phase field).

    White noise is filtered with a Gaussian annulus centred on the stripe
    frequency, the sign of the filtered field picks the phase, and the
    grayscale render adds blur plus pixel noise on top of the binary field.

    relax_iterations > 0 anneals the field before thresholding by repeatedly
    re-filtering its sign.  Each pass straightens stripes and removes the
    weakest defects, so deep annealing gives sparse, well-formed labyrinths
    while the default leaves the raw band-pass texture untouched.
    """
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((cfg.height, cfg.width))

    fy = np.fft.fftfreq(cfg.height)[:, None]
    fx = np.fft.fftfreq(cfg.width)[None, :]
    freq = np.hypot(fy, fx)
    f0 = 1.0 / cfg.wavelength
    weight = np.exp(-0.5 * ((freq - f0) / (cfg.bandwidth * f0)) ** 2)
    field = np.fft.ifft2(np.fft.fft2(noise) * weight).real
    for _ in range(cfg.relax_iterations):
        field = np.fft.ifft2(np.fft.fft2(np.sign(field)) * weight).real

    dark = field < 0.0
    gray = np.where(dark, 0.0, 1.0)
    if cfg.blur_sigma > 0:
        gray = ndimage.gaussian_filter(gray, cfg.blur_sigma)
    if cfg.noise_sigma > 0:
        gray = gray + rng.normal(0.0, cfg.noise_sigma, gray.shape)
    return np.clip(gray, 0.0, 1.0), dark


def draw_stripes(shape: tuple[int, int], segments, stripe_width: float) -> np.ndarray:
    """Boolean mask of capsule-shaped stripes (segments with round caps).

    segments: iterable of (x0, y0, x1, y1) in pixel coordinates.
    """
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros(shape, dtype=bool)
    half = stripe_width / 2.0
    for x0, y0, x1, y1 in segments:
        dx, dy = x1 - x0, y1 - y0
        norm2 = dx * dx + dy * dy
        if norm2 == 0:
            dist = np.hypot(xx - x0, yy - y0)
        else:
            t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / norm2, 0.0, 1.0)
            dist = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
        out |= dist <= half
    return out


def _merge_until_separated(points: np.ndarray, weights: np.ndarray, min_dist: float):
    """Weighted-centroid merging until no two points lie closer than min_dist."""
    pts = points.astype(np.float64).copy()
    wts = weights.astype(np.float64).copy()
    while len(pts) > 1:
        pairs = cKDTree(pts).query_pairs(r=min_dist, output_type="ndarray")
        # query_pairs(r) is closed (<= r); drop the boundary to keep "within" strict
        if len(pairs):
            d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
            pairs = pairs[d < min_dist]
        if not len(pairs):
            break
        parent = np.arange(len(pts))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in pairs:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([find(i) for i in range(len(pts))])
        uniq, inv = np.unique(roots, return_inverse=True)
        new_pts = np.zeros((len(uniq), 2))
        new_wts = np.zeros(len(uniq))
        np.add.at(new_wts, inv, wts)
        np.add.at(new_pts, inv, pts * wts[:, None])
        pts = new_pts / new_wts[:, None]
        wts = new_wts
    return pts, wts


def _has_close_pair(pts: np.ndarray, min_dist: float) -> bool:
    if len(pts) < 2:
        return False
    pairs = cKDTree(pts).query_pairs(r=min_dist, output_type="ndarray")
    if not len(pairs):
        return False
    d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
    return bool((d < min_dist).any())


def _cluster_junction_pixels(coords: np.ndarray, wavelength: float) -> np.ndarray:
    """(row, col) branch pixels -> merged centroids, one per defect."""
    if len(coords) == 0:
        return coords.reshape(0, 2).astype(np.float64)
    pts, wts = _merge_until_separated(
        coords.astype(np.float64), np.ones(len(coords)), wavelength / 4.0
    )
    # clustering at quarter wavelength can still leave near-duplicate centroids;
    # further passes enforce half-wavelength separation, re-checked after pixel
    # rounding (rounding shrinks distances and can reintroduce a close pair)
    min_dist = wavelength / 2.0
    pts, wts = _merge_until_separated(pts, wts, min_dist)
    while True:
        rounded = np.round(pts)
        if not _has_close_pair(rounded, min_dist):
            return rounded
        pts, wts = _merge_until_separated(rounded, wts, min_dist)


def skeleton_ground_truth(
    field: np.ndarray, wavelength: float, phase: str = "dark"
) -> GroundTruth:
    """Thin one phase of the binary field and read defects off the skeleton.

    Endpoint pixels (exactly one skeleton neighbor) become terminals; branch
    pixels (three or more) become junctions, merged so no two junction points
    sit closer than half a wavelength.  Points within half a wavelength of the
    border are dropped: truncated stripes would otherwise contribute endpoints
    that are artifacts of the field of view.
    """
    if phase not in ("dark", "bright"):
        raise ValueError(f"phase must be 'dark' or 'bright', got {phase!r}")
    if field.ndim != 2 or field.dtype != bool:
        raise ValueError("field must be a 2-D boolean array")
    mask = field if phase == "dark" else ~field
    if not mask.any():
        return GroundTruth(points=(), phase=phase)

    skel = skeletonize(mask)
    counts = ndimage.convolve(skel.astype(np.uint8), np.ones((3, 3), np.uint8), mode="constant")
    neighbors = counts - 1  # kernel includes the centre pixel
    term_rc = np.argwhere(skel & (neighbors == 1))
    junc_rc = np.argwhere(skel & (neighbors >= 3))
    junc_rc = _cluster_junction_pixels(junc_rc, wavelength)

    h, w = field.shape
    margin = wavelength / 2.0

    def inside(x, y):
        return margin <= x <= (w - 1) - margin and margin <= y <= (h - 1) - margin

    points = []
    for r, c in junc_rc:
        x, y = int(c), int(r)
        if inside(x, y):
            points.append(GroundTruthPoint(x=x, y=y, label="junction"))
    for r, c in term_rc:
        x, y = int(c), int(r)
        if inside(x, y):
            points.append(GroundTruthPoint(x=x, y=y, label="terminal"))
    points.sort(key=lambda p: (p.label, p.y, p.x))
    return GroundTruth(points=tuple(points), phase=phase)
