"""Rotation-swept template bank for stripe-defect matching.

A junction prototype is three dark rays meeting at the patch center, a
terminal prototype is a single dark ray whose center end is closed by a
rounded cap. Each prototype is paired with binary masks that choose
which pixels take part in correlation: a core band along the stroke
plus a ring, band, or wedge of clean background, separated by an
ignored guard band. All geometry is evaluated on a 4x4 subpixel grid;
templates keep fractional edge coverage, masks threshold it at 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SIDE = 21
DEFAULT_STROKE = 3.0
ANGLE_STEP = 15
GAP_MIN = 70
GAP_MAX = 190
TERMINAL_ANGLE_STEP = 3

# published figure the junction enumeration is compared against
REFERENCE_JUNCTION_COUNT = 439

_CENTER = (SIDE - 1) / 2.0
_SS = 4  # subpixel samples per axis

# precomputed subpixel sample coordinates, math convention (x right, y up)
_OFF = (np.arange(_SS) + 0.5) / _SS - 0.5
_POS = (np.arange(SIDE)[:, None] + _OFF[None, :]).ravel()
_X = _POS[None, :] - _CENTER
_Y = _CENTER - _POS[:, None]
_R = np.hypot(*np.broadcast_arrays(_X, _Y))


def _coverage(flags: np.ndarray) -> np.ndarray:
    """Fraction of each pixel's subsamples where ``flags`` holds."""
    full = np.broadcast_to(flags, (SIDE * _SS, SIDE * _SS))
    return full.reshape(SIDE, _SS, SIDE, _SS).mean(axis=(1, 3))


def _ray_distance(angles_deg) -> np.ndarray:
    """Distance from every sample point to the nearest center ray.

    Rays are half-lines from the origin; points behind a ray measure to
    the origin itself.
    """
    best = np.full((SIDE * _SS, SIDE * _SS), np.inf)
    for a in angles_deg:
        rad = math.radians(a)
        t = _X * math.cos(rad) + _Y * math.sin(rad)
        perp = np.sqrt(np.maximum(_R * _R - t * t, 0.0))
        np.minimum(best, np.where(t > 0.0, perp, _R), out=best)
    return best


@dataclass(frozen=True)
class JunctionParams:
    """Three ray angles in degrees, strictly ascending, on the 15-degree grid."""

    angles: tuple[int, int, int]

    def __post_init__(self):
        a, b, g = self.angles
        if not (0 <= a < b < g < 360):
            raise ValueError(f"angles must be strictly ascending in [0, 360): {self.angles}")
        if any(v % ANGLE_STEP for v in self.angles):
            raise ValueError(f"angles must be multiples of {ANGLE_STEP}: {self.angles}")


@dataclass(frozen=True)
class TerminalParams:
    """Single ray angle in degrees on the 3-degree grid."""

    angle: int

    def __post_init__(self):
        if not 0 <= self.angle < 360 or self.angle % TERMINAL_ANGLE_STEP:
            raise ValueError(f"angle must be a multiple of {TERMINAL_ANGLE_STEP} in [0, 360): {self.angle}")


@dataclass(frozen=True)
class MaskSpec:
    """Pixel widths of the considered/ignored bands around the stroke.

    kind "band" puts the background in a parallel band alongside the
    strip, "wedge" puts it in the open sectors between the rays, and
    "terminal" adds the tip disc and tip ring geometry. A negative
    background_width only makes sense for wedges, where its magnitude
    sets how far beyond the strip the open sectors start.
    """

    kind: str
    strip_width: float
    discard_width: float
    background_width: float
    tip_radius: float = 0.0
    ring_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("band", "wedge", "terminal"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.strip_width < 1 or self.discard_width < 0:
            raise ValueError(f"bad band widths in {self}")


JUNCTION_MASK_SPECS = (
    MaskSpec("band", strip_width=3, discard_width=7, background_width=1),
    MaskSpec("band", strip_width=2, discard_width=5, background_width=3),
    MaskSpec("wedge", strip_width=2, discard_width=6, background_width=-6),
)

TERMINAL_MASK_SPECS = (
    MaskSpec("terminal", strip_width=2, discard_width=3, background_width=2, ring_radius=5, tip_radius=2),
    MaskSpec("terminal", strip_width=2, discard_width=5, background_width=1, ring_radius=5, tip_radius=3),
    MaskSpec("terminal", strip_width=2, discard_width=4, background_width=0, ring_radius=7, tip_radius=4),
    MaskSpec("terminal", strip_width=2, discard_width=6, background_width=1, ring_radius=10, tip_radius=8),
    MaskSpec("terminal", strip_width=2, discard_width=7, background_width=0, ring_radius=8, tip_radius=4),
)


def enumerate_junction_params(constrain_wrap: bool = False) -> list[JunctionParams]:
    """All angle triples on the 15-degree grid with both in-order gaps in
    [GAP_MIN, GAP_MAX]; ``constrain_wrap`` additionally bounds the
    wrap-around gap. Lexicographically ordered.
    """
    out = []
    for a in range(0, 360, ANGLE_STEP):
        for b in range(a + ANGLE_STEP, 360, ANGLE_STEP):
            if not GAP_MIN <= b - a <= GAP_MAX:
                continue
            for g in range(b + ANGLE_STEP, 360, ANGLE_STEP):
                if not GAP_MIN <= g - b <= GAP_MAX:
                    continue
                if constrain_wrap and not GAP_MIN <= 360 + a - g <= GAP_MAX:
                    continue
                out.append(JunctionParams((a, b, g)))
    return out


def enumerate_terminal_params() -> list[TerminalParams]:
    return [TerminalParams(a) for a in range(0, 360, TERMINAL_ANGLE_STEP)]


def render_junction_template(params: JunctionParams, stroke: float = DEFAULT_STROKE) -> np.ndarray:
    """21x21 float image: three dark rays on a white background."""
    if stroke < 1:
        raise ValueError(f"stroke must be >= 1, got {stroke}")
    ink = _ray_distance(params.angles) <= stroke / 2.0
    return 1.0 - _coverage(ink)


def render_terminal_template(params: TerminalParams, stroke: float = DEFAULT_STROKE) -> np.ndarray:
    """21x21 float image: one dark ray, center end closed by a rounded cap."""
    if stroke < 1:
        raise ValueError(f"stroke must be >= 1, got {stroke}")
    rad = math.radians(params.angle)
    t = _X * math.cos(rad) + _Y * math.sin(rad)
    perp = np.sqrt(np.maximum(_R * _R - t * t, 0.0))
    dray = np.where(t > 0.0, perp, _R)
    cap = math.ceil(stroke / 2.0)
    ink = (dray <= stroke / 2.0) | ((_R <= cap) & (t <= 0.0))
    return 1.0 - _coverage(ink)


def _wedge_flags(dray: np.ndarray, spec: MaskSpec) -> np.ndarray:
    # Open sectors between consecutive rays, beyond |background_width|
    # from the strip edge and clear of every ray's discard band. The
    # union over all gaps is exactly the set below: every off-ray
    # direction belongs to some gap, and the discard clearance trims the
    # sector flanks.
    half = spec.strip_width / 2.0
    r_lo = half + abs(spec.background_width)
    clear = half + spec.discard_width
    return (_R > r_lo) & (dray > clear)


def build_junction_masks(params: JunctionParams, specs=JUNCTION_MASK_SPECS) -> list[np.ndarray]:
    """Binary considered-pixel masks for one junction, one per spec."""
    d = _ray_distance(params.angles)
    masks = []
    for spec in specs:
        half = spec.strip_width / 2.0
        strip = d <= half
        if spec.kind == "band":
            lo = half + spec.discard_width
            background = (d > lo) & (d <= lo + spec.background_width)
        elif spec.kind == "wedge":
            background = _wedge_flags(d, spec)
        else:
            raise ValueError(f"junction masks accept band/wedge specs, got {spec.kind!r}")
        mask = _coverage(strip | (background & ~strip)) >= 0.5
        if not mask.any():
            raise ValueError(f"mask spec {spec} considers no pixels for {params}")
        masks.append(mask)
    return masks


def build_terminal_masks(params: TerminalParams, specs=TERMINAL_MASK_SPECS) -> list[np.ndarray]:
    """Binary considered-pixel masks for one terminal, one per spec.

    The strip follows the ray capsule. Beside the ray the usual
    discard/background bands apply; behind and around the tip two
    concentric circles take over: inside tip_radius nothing but the
    strip is considered (the stroke end may wander that far), between
    tip_radius and ring_radius the image must read as background. The
    five specs grade that tip tolerance from tight to loose.
    """
    rad = math.radians(params.angle)
    t = _X * math.cos(rad) + _Y * math.sin(rad)
    perp = np.sqrt(np.maximum(_R * _R - t * t, 0.0))
    dray = np.where(t > 0.0, perp, _R)
    beside = t > 0.0
    masks = []
    for spec in specs:
        if spec.kind != "terminal":
            raise ValueError(f"terminal masks need terminal specs, got {spec.kind!r}")
        half = spec.strip_width / 2.0
        strip = dray <= half
        lo = half + spec.discard_width
        side = beside & (perp > lo) & (perp <= lo + spec.background_width)
        ring = (_R > spec.tip_radius) & (_R <= spec.ring_radius)
        discard = (beside & (perp <= lo)) | (_R <= spec.tip_radius)
        mask = _coverage(strip | ((side | ring) & ~discard & ~strip)) >= 0.5
        if not mask.any():
            raise ValueError(f"mask spec {spec} considers no pixels for {params}")
        masks.append(mask)
    return masks


@dataclass(frozen=True)
class BankEntry:
    index: int
    kind: str  # "junction" or "terminal"
    params: JunctionParams | TerminalParams
    mask_index: int
    template: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BankConfig:
    stroke: float = DEFAULT_STROKE
    constrain_wrap: bool = False
    junction_mask_specs: tuple = JUNCTION_MASK_SPECS
    terminal_mask_specs: tuple = TERMINAL_MASK_SPECS


@dataclass
class TemplateBank:
    entries: list[BankEntry]
    config: BankConfig
    junction_param_count: int
    terminal_param_count: int

    def __len__(self):
        return len(self.entries)

    def manifest(self) -> dict:
        """Audit manifest: enumeration counts, per-entry params, and the
        comparison against the reference junction count."""
        j, t = self.junction_param_count, self.terminal_param_count
        info = {
            "entry_count": len(self.entries),
            "junction_param_count": j,
            "terminal_param_count": t,
            "junction_masks": len(self.config.junction_mask_specs),
            "terminal_masks": len(self.config.terminal_mask_specs),
            "stroke": self.config.stroke,
            "wrap_gap_constrained": self.config.constrain_wrap,
            "reference_junction_param_count": REFERENCE_JUNCTION_COUNT,
        }
        if j != REFERENCE_JUNCTION_COUNT:
            info["junction_count_note"] = (
                f"exhaustive enumeration under the configured gap rule yields {j} "
                f"angle triples; the reference figure {REFERENCE_JUNCTION_COUNT} is "
                "not reproduced by either gap interpretation (without wrap: 448, "
                "with wrap: 368)"
            )
        info["entries"] = [
            {
                "index": e.index,
                "kind": e.kind,
                "params": list(e.params.angles) if e.kind == "junction" else e.params.angle,
                "mask_index": e.mask_index,
                "considered_pixels": int(e.mask.sum()),
            }
            for e in self.entries
        ]
        return info


def build_bank(config: BankConfig | None = None) -> TemplateBank:
    """Assemble the full entry list: junctions (param order x mask order)
    first, then terminals. Deterministic for a given config."""
    cfg = config or BankConfig()
    entries: list[BankEntry] = []
    jparams = enumerate_junction_params(cfg.constrain_wrap)
    tparams = enumerate_terminal_params()
    for p in jparams:
        tpl = render_junction_template(p, cfg.stroke)
        for mi, mask in enumerate(build_junction_masks(p, cfg.junction_mask_specs)):
            entries.append(BankEntry(len(entries), "junction", p, mi, tpl, mask))
    for p in tparams:
        tpl = render_terminal_template(p, cfg.stroke)
        for mi, mask in enumerate(build_terminal_masks(p, cfg.terminal_mask_specs)):
            entries.append(BankEntry(len(entries), "terminal", p, mi, tpl, mask))
    return TemplateBank(entries, cfg, len(jparams), len(tparams))
