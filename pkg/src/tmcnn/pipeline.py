"""End-to-end detection: correlate the bank, pick peaks, classify patches.

The two-stage flow: template matching proposes candidate defect locations
with tentative labels; an optional classifier then assigns the final label,
demoting mistakes to "false" without ever moving or adding detections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .cnn import LABELS, CnnModel
from .matching import correlate_bank, extract_peaks

PATCH_SIDE = 50
_HALF_LO = PATCH_SIDE // 2          # 25 pixels before the centre
_HALF_HI = PATCH_SIDE - _HALF_LO    # 25 total after, i.e. offsets [-25, +24]

LABEL_COLORS = {
    "junction": (0, 255, 0),
    "terminal": (0, 255, 255),
    "false": (255, 0, 0),
}

__all__ = [
    "PATCH_SIDE",
    "LABEL_COLORS",
    "Detection",
    "DetectionSet",
    "extract_patch",
    "detect",
    "candidates_to_detections",
    "render_overlay",
    "save_overlay_png",
]


@dataclass(frozen=True)
class Detection:
    id: int
    x: int
    y: int
    score: float | None
    tm_label: str
    final_label: str
    probs: tuple[float, float, float] | None
    source: str  # "tm" | "cnn" | "human"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "x": self.x,
            "y": self.y,
            "score": self.score,
            "tm_label": self.tm_label,
            "label": self.final_label,
            "probs": list(self.probs) if self.probs is not None else None,
            "source": self.source,
        }


@dataclass
class DetectionSet:
    image: str
    width: int
    height: int
    threshold: float
    detections: list[Detection] = field(default_factory=list)

    def __post_init__(self):
        ids = [d.id for d in self.detections]
        if len(ids) != len(set(ids)):
            raise ValueError("detection ids must be unique within a set")

    def count(self, label: str) -> int:
        return sum(1 for d in self.detections if d.final_label == label)

    def positives(self) -> list[Detection]:
        """Detections that survive filtering (everything not marked false)."""
        return [d for d in self.detections if d.final_label != "false"]

    def to_dict(self) -> dict:
        return {
            "image": self.image,
            "width": self.width,
            "height": self.height,
            "threshold": self.threshold,
            "detections": [d.to_dict() for d in self.detections],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionSet":
        dets = [
            Detection(
                id=int(d["id"]),
                x=int(d["x"]),
                y=int(d["y"]),
                score=None if d["score"] is None else float(d["score"]),
                tm_label=str(d["tm_label"]),
                final_label=str(d["label"]),
                probs=None if d["probs"] is None else tuple(float(p) for p in d["probs"]),
                source=str(d["source"]),
            )
            for d in data["detections"]
        ]
        return cls(
            image=str(data["image"]),
            width=int(data["width"]),
            height=int(data["height"]),
            threshold=float(data["threshold"]),
            detections=dets,
        )

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "DetectionSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def extract_patch(img: np.ndarray, x: int, y: int) -> np.ndarray:
    """50x50 window centred at (x, y); borders filled by edge replication."""
    if img.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    h, w = img.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"point ({x}, {y}) outside image {w}x{h}")
    rows = np.clip(np.arange(y - _HALF_LO, y + _HALF_HI), 0, h - 1)
    cols = np.clip(np.arange(x - _HALF_LO, x + _HALF_HI), 0, w - 1)
    return img[np.ix_(rows, cols)]


def _classify_batch(model: CnnModel, patches: np.ndarray) -> np.ndarray:
    probs = np.empty((len(patches), 3), dtype=np.float64)
    for start in range(0, len(patches), 64):
        stop = min(start + 64, len(patches))
        probs[start:stop] = model.forward(patches[start:stop])
    return probs


def detect(
    img: np.ndarray,
    bank,
    t: float,
    model: CnnModel | None = None,
    *,
    image_id: str = "image",
    jobs: int | None = None,
    progress=None,
) -> DetectionSet:
    """Run the full detector on a preprocessed grayscale image.

    Without a model every candidate keeps its template-matching label; with a
    model the classifier decides, and rejected candidates stay in the output
    flagged as false so downstream counting can skip them.
    """
    entries = getattr(bank, "entries", bank)
    cm = correlate_bank(img, entries, jobs=jobs, progress=progress)
    kinds = [e.kind for e in entries]
    candidates = extract_peaks(cm, t, kinds=kinds)
    h, w = img.shape
    detections = candidates_to_detections(img, candidates, model)
    return DetectionSet(
        image=image_id, width=w, height=h, threshold=float(t), detections=detections
    )


def candidates_to_detections(
    img: np.ndarray, candidates, model: CnnModel | None, cache: dict | None = None
) -> list[Detection]:
    """Turn ranked peak candidates into Detection records.

    With a model, each candidate's patch is classified and the decision
    recorded; ``cache`` (keyed by position) lets threshold sweeps reuse
    classifier output for peaks that repeat across thresholds.
    """
    detections: list[Detection] = []
    for i, c in enumerate(candidates):
        detections.append(
            Detection(
                id=i,
                x=c.x,
                y=c.y,
                score=float(c.score),
                tm_label=c.tentative_label,
                final_label=c.tentative_label,
                probs=None,
                source="tm",
            )
        )

    if model is None or not detections:
        return detections

    if cache is None:
        cache = {}
    fresh = [d for d in detections if (d.x, d.y) not in cache]
    if fresh:
        patches = np.stack([extract_patch(img, d.x, d.y) for d in fresh])
        probs = _classify_batch(model, patches)
        for d, p in zip(fresh, probs):
            cache[(d.x, d.y)] = tuple(float(v) for v in p)
    out = []
    for d in detections:
        probs = cache[(d.x, d.y)]
        pick = int(np.argmax(probs))
        out.append(replace(d, final_label=LABELS[pick], probs=probs, source="cnn"))
    return out


def render_overlay(img: np.ndarray, detections, dot_radius: int = 3) -> np.ndarray:
    """RGB uint8 render of the image with a coloured dot per detection."""
    gray = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    rgb = np.repeat((gray * 255.0 + 0.5).astype(np.uint8)[:, :, None], 3, axis=2)
    h, w = gray.shape
    yy, xx = np.mgrid[-dot_radius: dot_radius + 1, -dot_radius: dot_radius + 1]
    disc = (yy * yy + xx * xx) <= dot_radius * dot_radius
    dets = getattr(detections, "detections", detections)
    for d in dets:
        color = LABEL_COLORS.get(d.final_label)
        if color is None:
            raise ValueError(f"no overlay colour for label {d.final_label!r}")
        y0, y1 = max(0, d.y - dot_radius), min(h, d.y + dot_radius + 1)
        x0, x1 = max(0, d.x - dot_radius), min(w, d.x + dot_radius + 1)
        oy, ox = d.y - dot_radius, d.x - dot_radius
        sub = disc[y0 - oy: y1 - oy, x0 - ox: x1 - ox]
        rgb[y0:y1, x0:x1][sub] = color
    return rgb


def save_overlay_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
