"""Human-in-the-loop annotation service.

A project is a directory: a manifest listing images and their review
status, one PNG per image, one editable detection file per image, and an
append-only audit log. The HTTP layer exposes machine proposals, human
corrections, hard-negative mining, and training-set export. Mutations
are serialized per image; every change lands in the audit log, and the
current detections are always reproducible by replaying audit events
over the stored machine proposal.
"""

import datetime as _dt
import json
import os
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .image import load_png, save_png
from .matching import correlate_bank, extract_peaks
from .pipeline import (
    Detection,
    DetectionSet,
    candidates_to_detections,
    detect,
    extract_patch,
)

STATUSES = ("unreviewed", "in_review", "done")
LABELS = ("junction", "terminal", "false")
BOX_SIDE = 21


class ServiceError(Exception):
    """Carries an HTTP status plus the error payload shape."""

    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail


def _not_found(what: str, key) -> ServiceError:
    return ServiceError(404, "not_found", f"unknown {what}: {key}")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


class Project:
    """Filesystem state for one annotation project."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"
        if not self.manifest_path.exists():
            raise FileNotFoundError(f"not a project directory: {self.root}")
        self._manifest = json.loads(self.manifest_path.read_text())
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    @classmethod
    def create(cls, root) -> "Project":
        root = Path(root)
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "detections").mkdir(exist_ok=True)
        (root / "proposals").mkdir(exist_ok=True)
        manifest = {"images": []}
        _atomic_write(root / "manifest.json", json.dumps(manifest, indent=2) + "\n")
        (root / "audit.log").touch()
        return cls(root)

    def lock(self, image_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(image_id, threading.Lock())

    # -- manifest ---------------------------------------------------------

    def records(self) -> list[dict]:
        return [dict(r) for r in self._manifest["images"]]

    def _record(self, image_id: str) -> dict:
        for r in self._manifest["images"]:
            if r["id"] == image_id:
                return r
        raise _not_found("image", image_id)

    def has_image(self, image_id: str) -> bool:
        return any(r["id"] == image_id for r in self._manifest["images"])

    def add_image(self, image_id: str, img: np.ndarray, status: str = "unreviewed") -> None:
        if self.has_image(image_id):
            raise ServiceError(409, "conflict", f"image exists: {image_id}")
        if status not in STATUSES:
            raise ServiceError(422, "invalid_status", f"status must be one of {STATUSES}")
        save_png(img, self.image_path(image_id))
        self._manifest["images"].append({"id": image_id, "file": f"images/{image_id}.png",
                                         "status": status})
        self._save_manifest()

    def set_status(self, image_id: str, status: str) -> dict:
        if status not in STATUSES:
            raise ServiceError(422, "invalid_status", f"status must be one of {STATUSES}")
        rec = self._record(image_id)
        rec["status"] = status
        self._save_manifest()
        self.append_audit({"action": "status", "image": image_id, "new_status": status})
        return dict(rec)

    def _save_manifest(self) -> None:
        _atomic_write(self.manifest_path, json.dumps(self._manifest, indent=2) + "\n")

    # -- per-image files --------------------------------------------------

    def image_path(self, image_id: str) -> Path:
        return self.root / "images" / f"{image_id}.png"

    def load_image(self, image_id: str) -> np.ndarray:
        self._record(image_id)
        return load_png(self.image_path(image_id))

    def detections_path(self, image_id: str) -> Path:
        return self.root / "detections" / f"{image_id}.json"

    def proposal_path(self, image_id: str) -> Path:
        return self.root / "proposals" / f"{image_id}.json"

    def load_detections(self, image_id: str) -> DetectionSet | None:
        p = self.detections_path(image_id)
        if not p.exists():
            return None
        return DetectionSet.from_dict(json.loads(p.read_text()))

    def save_detections(self, image_id: str, ds: DetectionSet) -> None:
        _atomic_write(self.detections_path(image_id),
                      json.dumps(ds.to_dict(), indent=2) + "\n")

    def save_proposal(self, image_id: str, ds: DetectionSet) -> None:
        _atomic_write(self.proposal_path(image_id),
                      json.dumps(ds.to_dict(), indent=2) + "\n")

    # -- audit ------------------------------------------------------------

    def append_audit(self, event: dict) -> None:
        event = {"ts": _now(), **event}
        with open(self.root / "audit.log", "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def audit_events(self) -> list[dict]:
        out = []
        for line in (self.root / "audit.log").read_text().splitlines():
            if line.strip():
                out.append(json.loads(line))
        return out

    def max_allocated_id(self, image_id: str) -> int:
        """Highest detection id ever used for the image, from the audit log."""
        top = -1
        for e in self.audit_events():
            if e.get("image") != image_id:
                continue
            ids = e.get("detection_ids", [])
            if e.get("detection_id") is not None:
                ids = list(ids) + [e["detection_id"]]
            for i in ids:
                top = max(top, int(i))
        ds = self.load_detections(image_id)
        if ds is not None:
            for d in ds.detections:
                top = max(top, d.id)
        return top


def replay_audit(proposal: DetectionSet, events) -> DetectionSet:
    """Reconstruct the current detections from the stored machine proposal
    plus the audit events recorded after it. The event-sourcing invariant:
    this must equal the stored current set.
    """
    dets = {d.id: d for d in proposal.detections}
    for e in events:
        act = e.get("action")
        if act == "correct":
            d = dets[e["detection_id"]]
            dets[e["detection_id"]] = replace(d, final_label=e["new_label"], source="human")
        elif act == "add":
            dets[e["detection_id"]] = Detection(
                id=e["detection_id"], x=e["x"], y=e["y"], score=None,
                tm_label=e["new_label"], final_label=e["new_label"],
                probs=None, source="human")
        elif act == "delete":
            d = dets[e["detection_id"]]
            if d.source == "human":
                dets[e["detection_id"]] = replace(d, final_label="false")
            else:
                del dets[e["detection_id"]]
        elif act == "mine":
            for rec in e["mined"]:
                dets[rec["id"]] = Detection(
                    id=rec["id"], x=rec["x"], y=rec["y"], score=rec["score"],
                    tm_label=rec["tm_label"], final_label="false",
                    probs=None, source="tm")
    out = sorted(dets.values(), key=lambda d: d.id)
    return replace(proposal, detections=out)


def propose(project: Project, image_id: str, t: float, bank, model=None) -> DetectionSet:
    """Machine proposal for an image, preserving human-sourced entries."""
    img = project.load_image(image_id)
    with project.lock(image_id):
        prev = project.load_detections(image_id)
        humans = [d for d in prev.detections if d.source == "human"] if prev else []
        next_id = project.max_allocated_id(image_id) + 1
        raw = detect(img, bank, t, model, image_id=image_id)
        machine = []
        for d in raw.detections:
            machine.append(replace(d, id=next_id))
            next_id += 1
        ds = replace(raw, detections=humans + machine)
        project.save_proposal(image_id, ds)
        project.save_detections(image_id, ds)
        project.append_audit({"action": "propose", "image": image_id,
                              "threshold": t, "used_model": model is not None,
                              "detection_ids": [d.id for d in machine],
                              "kept_human_ids": [d.id for d in humans]})
    return ds


def correct(project: Project, image_id: str, det_id: int, label: str) -> Detection:
    if label not in LABELS:
        raise ServiceError(422, "invalid_label", f"label must be one of {LABELS}")
    with project.lock(image_id):
        ds = project.load_detections(image_id)
        if ds is None:
            raise _not_found("detections for image", image_id)
        match = [d for d in ds.detections if d.id == det_id]
        if not match:
            raise _not_found("detection", det_id)
        old = match[0]
        new = replace(old, final_label=label, source="human")
        dets = [new if d.id == det_id else d for d in ds.detections]
        project.save_detections(image_id, replace(ds, detections=dets))
        project.append_audit({"action": "correct", "image": image_id,
                              "detection_id": det_id, "old_label": old.final_label,
                              "new_label": label})
    return new


def add_missed(project: Project, image_id: str, x: int, y: int, label: str) -> Detection:
    if label not in LABELS:
        raise ServiceError(422, "invalid_label", f"label must be one of {LABELS}")
    img = project.load_image(image_id)
    h, w = img.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ServiceError(422, "out_of_bounds",
                           f"({x}, {y}) outside {w}x{h}")
    with project.lock(image_id):
        ds = project.load_detections(image_id)
        if ds is None:
            ds = DetectionSet(image=image_id, width=w, height=h,
                              threshold=0.0, detections=[])
            project.save_proposal(image_id, ds)
        det = Detection(id=project.max_allocated_id(image_id) + 1, x=x, y=y,
                        score=None, tm_label=label, final_label=label,
                        probs=None, source="human")
        project.save_detections(image_id, replace(ds, detections=list(ds.detections) + [det]))
        project.append_audit({"action": "add", "image": image_id,
                              "detection_id": det.id, "new_label": label,
                              "x": x, "y": y})
    return det


def delete(project: Project, image_id: str, det_id: int) -> dict:
    """Remove a machine detection; relabel a human one to false."""
    with project.lock(image_id):
        ds = project.load_detections(image_id)
        if ds is None:
            raise _not_found("detections for image", image_id)
        match = [d for d in ds.detections if d.id == det_id]
        if not match:
            raise _not_found("detection", det_id)
        old = match[0]
        if old.source == "human":
            new = replace(old, final_label="false")
            dets = [new if d.id == det_id else d for d in ds.detections]
            result = {"deleted": False, "detection": new.to_dict()}
        else:
            dets = [d for d in ds.detections if d.id != det_id]
            result = {"deleted": True, "detection": old.to_dict()}
        project.save_detections(image_id, replace(ds, detections=dets))
        project.append_audit({"action": "delete", "image": image_id,
                              "detection_id": det_id, "old_label": old.final_label,
                              "new_label": "false" if old.source == "human" else None})
    return result


def mine_negatives(project: Project, image_id: str, t_low: float, count: int,
                   seed: int, bank) -> list[Detection]:
    """Sample sub-threshold peaks away from positives as false examples."""
    if count < 0:
        raise ServiceError(422, "invalid_count", f"count must be >= 0, got {count}")
    img = project.load_image(image_id)
    with project.lock(image_id):
        ds = project.load_detections(image_id)
        if ds is None:
            raise ServiceError(409, "no_proposal",
                               f"image {image_id} has no proposal to mine against")
        if t_low >= ds.threshold:
            raise ServiceError(422, "bad_threshold",
                               f"t_low {t_low} must be below the proposal threshold "
                               f"{ds.threshold}")
        entries = getattr(bank, "entries", bank)
        cm = correlate_bank(img, entries)
        cands = extract_peaks(cm, t_low, kinds=[e.kind for e in entries])
        positives = [(d.x, d.y) for d in ds.detections if d.final_label != "false"]
        pool = []
        for c in cands:
            if all(max(abs(c.x - px), abs(c.y - py)) >= BOX_SIDE for px, py in positives):
                pool.append(c)
        rng = np.random.default_rng(seed)
        take = min(count, len(pool))
        picked = sorted(rng.choice(len(pool), size=take, replace=False)) if take else []
        next_id = project.max_allocated_id(image_id) + 1
        mined = []
        for i in picked:
            c = pool[i]
            mined.append(Detection(id=next_id, x=c.x, y=c.y, score=float(c.score),
                                   tm_label=c.tentative_label, final_label="false",
                                   probs=None, source="tm"))
            next_id += 1
        project.save_detections(image_id, replace(ds, detections=list(ds.detections) + mined))
        project.append_audit({"action": "mine", "image": image_id,
                              "t_low": t_low, "count": count, "seed": seed,
                              "detection_ids": [d.id for d in mined],
                              "mined": [{"id": d.id, "x": d.x, "y": d.y,
                                         "score": d.score, "tm_label": d.tm_label}
                                        for d in mined]})
    return mined


def export_training_set(project: Project, out_dir) -> dict:
    """Write one 50x50 patch per detection of every done image."""
    done = [r for r in project.records() if r["status"] == "done"]
    if not done:
        raise ServiceError(409, "nothing_done", "no image has status done")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patches = []
    counts = {label: 0 for label in LABELS}
    for rec in done:
        image_id = rec["id"]
        ds = project.load_detections(image_id)
        if ds is None:
            continue
        img = project.load_image(image_id)
        for d in ds.detections:
            patch = extract_patch(img, d.x, d.y)
            fname = f"{image_id}_{d.id}_{d.final_label}.png"
            save_png(patch, out / fname)
            patches.append({"file": fname, "label": d.final_label,
                            "image": image_id, "x": d.x, "y": d.y})
            counts[d.final_label] += 1
    manifest = {"patches": patches, "counts": counts}
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    project.append_audit({"action": "export", "out_dir": str(out),
                          "counts": counts})
    return manifest


def create_app(project_root, *, bank=None, model=None):
    """FastAPI application over a project directory.

    ``bank`` may be a TemplateBank, a list of entries, or a zero-argument
    callable built lazily on first use (the full bank takes a moment and
    not every session proposes).
    """
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse
    from pydantic import BaseModel

    project = Project(project_root)
    app = FastAPI(title="stripe defect annotation")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = {"bank": bank, "model": model}

    def the_bank():
        b = state["bank"]
        if b is None:
            from .templates import build_bank
            b = build_bank()
        elif callable(b) and not hasattr(b, "entries") and not isinstance(b, list):
            b = b()
        state["bank"] = b
        return b

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.error, "detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": "validation", "detail": str(exc.errors())})

    class ProposeBody(BaseModel):
        threshold: float
        use_model: bool = False

    class LabelBody(BaseModel):
        label: str

    class AddBody(BaseModel):
        x: int
        y: int
        label: str

    class StatusBody(BaseModel):
        status: str

    class MineBody(BaseModel):
        t_low: float
        count: int
        seed: int = 0

    class ExportBody(BaseModel):
        out_dir: str

    @app.get("/images")
    def list_images():
        return {"images": project.records()}

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        if not project.has_image(image_id):
            raise _not_found("image", image_id)
        return FileResponse(project.image_path(image_id), media_type="image/png")

    @app.get("/images/{image_id}/detections")
    def get_detections(image_id: str):
        if not project.has_image(image_id):
            raise _not_found("image", image_id)
        ds = project.load_detections(image_id)
        if ds is None:
            img = project.load_image(image_id)
            h, w = img.shape
            ds = DetectionSet(image=image_id, width=w, height=h,
                              threshold=0.0, detections=[])
        return ds.to_dict()

    @app.post("/images/{image_id}/propose")
    def post_propose(image_id: str, body: ProposeBody):
        m = None
        if body.use_model:
            if state["model"] is None:
                raise ServiceError(422, "no_model", "service started without a model")
            m = state["model"]
        ds = propose(project, image_id, body.threshold, the_bank(), m)
        return ds.to_dict()

    @app.patch("/images/{image_id}/detections/{det_id}")
    def patch_detection(image_id: str, det_id: int, body: LabelBody):
        return correct(project, image_id, det_id, body.label).to_dict()

    @app.post("/images/{image_id}/detections")
    def post_detection(image_id: str, body: AddBody):
        return add_missed(project, image_id, body.x, body.y, body.label).to_dict()

    @app.delete("/images/{image_id}/detections/{det_id}")
    def delete_detection(image_id: str, det_id: int):
        return delete(project, image_id, det_id)

    @app.post("/images/{image_id}/status")
    def post_status(image_id: str, body: StatusBody):
        return project.set_status(image_id, body.status)

    @app.post("/images/{image_id}/mine")
    def post_mine(image_id: str, body: MineBody):
        mined = mine_negatives(project, image_id, body.t_low, body.count,
                               body.seed, the_bank())
        return {"mined": [d.to_dict() for d in mined]}

    @app.post("/export")
    def post_export(body: ExportBody):
        return export_training_set(project, body.out_dir)

    return app
