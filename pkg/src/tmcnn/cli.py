"""Command line front end: one executable exposing every workflow.

Exit status is 0 on success, 1 on a domain error (bad data, missing
files, empty inputs), 2 on a usage error. Diagnostics go to stderr so
stdout stays parseable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .cnn import LABELS, TrainConfig, load_weights, save_weights, train
from .eval import (
    Assignment,
    SweepResult,
    SweepRow,
    _metrics,
    match_detections,
    step_series,
)
from .image import load_png, resize, save_png
from .pipeline import Detection, DetectionSet, detect
from .report import plot_step_series, plot_sweep, render_overlay
from .synth import GroundTruth, GroundTruthPoint, SynthConfig, generate_labyrinth, skeleton_ground_truth
from .templates import build_bank


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


class DomainError(Exception):
    pass


def _jobs_from(args) -> int | None:
    if getattr(args, "jobs", None) is not None:
        return args.jobs
    env = os.environ.get("TMCNN_JOBS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise DomainError(f"TMCNN_JOBS must be an integer, got {env!r}")
    return None  # owning modules default to the available cores


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise DomainError(f"size must look like 1300x972, got {text!r}")


# -- detect -----------------------------------------------------------------

def _input_images(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.iterdir()
                      if p.suffix.lower() == ".png" and not p.name.endswith("_field.png"))
    raise DomainError(f"input path does not exist: {path}")


def cmd_detect(args) -> int:
    images = _input_images(Path(args.input))
    if not images:
        raise DomainError("no input images")
    model = load_weights(args.weights) if args.weights else None
    jobs = _jobs_from(args)
    size = _parse_size(args.resize) if args.resize else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _log("building template bank...")
    bank = build_bank()
    for p in images:
        img = load_png(p)
        if size is not None:
            img = resize(img, (size[1], size[0]))
        ds = detect(img, bank, args.threshold, model, image_id=p.stem, jobs=jobs)
        ds.save_json(out / f"{p.stem}.json")
        overlay = render_overlay(img, ds.detections)
        Image.fromarray(overlay).save(out / f"{p.stem}_overlay.png")
        kept = len(ds.positives())
        _log(f"{p.name}: {len(ds.detections)} candidates, {kept} kept")
    return 0


# -- templates --------------------------------------------------------------

def cmd_templates_dump(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bank = build_bank()
    seen = set()
    for e in bank.entries:
        if e.params in seen:
            continue
        seen.add(e.params)
        if e.kind == "junction":
            a = e.params.angles
            name = f"junction_{a[0]:03d}_{a[1]:03d}_{a[2]:03d}.png"
        else:
            name = f"terminal_{e.params.angle:03d}.png"
        save_png(e.template, out / name)
    manifest = bank.manifest()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _log(f"wrote {len(seen)} template renders and manifest.json to {out}")
    return 0


# -- train ------------------------------------------------------------------

def _load_patch_dataset(root: Path):
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DomainError(f"dataset manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    entries = manifest.get("patches", [])
    if not entries:
        raise DomainError("dataset manifest lists no patches")
    patches = np.empty((len(entries), 50, 50), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    for i, rec in enumerate(entries):
        if rec["label"] not in LABELS:
            raise DomainError(f"unknown label {rec['label']!r} in manifest")
        patches[i] = load_png(root / rec["file"])
        labels[i] = LABELS.index(rec["label"])
    return patches, labels


def cmd_train(args) -> int:
    patches, labels = _load_patch_dataset(Path(args.dataset))
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch,
                      seed=args.seed)
    _log(f"training on {len(patches)} patches "
         f"({', '.join(f'{LABELS[i]}: {int((labels == i).sum())}' for i in range(3))})")

    def log_epoch(rec):
        _log(f"epoch {rec['epoch'] + 1}/{cfg.epochs}: "
             f"train_loss {rec['train_loss']:.4f} val_acc {rec['val_acc']:.4f}")

    model, history = train(patches, labels, cfg, log=log_epoch)
    save_weights(model, args.out)
    best = max(h["val_acc"] for h in history)
    _log(f"saved weights to {args.out} (best val_acc {best:.4f})")
    return 0


# -- synth ------------------------------------------------------------------

def _gt_to_detection_set(gt: GroundTruth, image_id: str, w: int, h: int) -> DetectionSet:
    dets = [
        Detection(id=i, x=p.x, y=p.y, score=None, tm_label=p.label,
                  final_label=p.label, probs=None, source="human")
        for i, p in enumerate(gt.points)
    ]
    return DetectionSet(image=image_id, width=w, height=h, threshold=0.0,
                        detections=dets)


def cmd_synth(args) -> int:
    if args.count < 1:
        raise DomainError(f"count must be >= 1, got {args.count}")
    w, h = _parse_size(args.size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        cfg = SynthConfig(width=w, height=h, wavelength=args.wavelength,
                          bandwidth=args.bandwidth, noise_sigma=args.noise,
                          blur_sigma=args.blur, seed=args.seed + i,
                          relax_iterations=args.relax)
        gray, field = generate_labyrinth(cfg)
        gt = skeleton_ground_truth(field, cfg.wavelength)
        stem = f"img_{i:04d}"
        save_png(gray, out / f"{stem}.png")
        save_png(field.astype(np.float64), out / f"{stem}_field.png")
        _gt_to_detection_set(gt, stem, w, h).save_json(out / f"{stem}_gt.json")
        _log(f"{stem}: {gt.count('junction')} junctions, {gt.count('terminal')} terminals")
    return 0


# -- eval -------------------------------------------------------------------

def _detection_set_as_gt(ds: DetectionSet) -> GroundTruth:
    pts = tuple(GroundTruthPoint(x=d.x, y=d.y, label=d.final_label)
                for d in ds.detections if d.final_label != "false")
    return GroundTruth(points=pts, phase="dark")


def _eval_pairs(pred_dir: Path, gt_dir: Path):
    pairs = []
    for pf in sorted(pred_dir.glob("*.json")):
        if pf.name.endswith("_gt.json") or pf.name == "manifest.json":
            continue
        gf = gt_dir / pf.name
        if not gf.exists():
            gf = gt_dir / f"{pf.stem}_gt.json"
        if not gf.exists():
            continue
        pairs.append((DetectionSet.load_json(pf), DetectionSet.load_json(gf)))
    if not pairs:
        raise DomainError("no prediction/ground-truth pairs found")
    return pairs


def _filtered(ds: DetectionSet, t: float) -> DetectionSet:
    kept = [d for d in ds.detections if d.score is None or d.score >= t]
    return DetectionSet(image=ds.image, width=ds.width, height=ds.height,
                        threshold=t, detections=kept)


def cmd_eval(args) -> int:
    pairs = _eval_pairs(Path(args.pred), Path(args.gt))
    class_aware = not args.class_agnostic

    def micro(ts_pairs):
        tp = fp = fn = 0
        for pred, gt in ts_pairs:
            a: Assignment = match_detections(pred, _detection_set_as_gt(gt),
                                             iou_thresh=args.iou,
                                             box_side=args.box,
                                             class_aware=class_aware)
            tp += len(a.pairs)
            fp += len(a.unmatched_pred)
            fn += len(a.unmatched_gt)
        return _metrics(tp, fp, fn)

    if not args.sweep:
        m = micro(pairs)
        print(json.dumps(m.to_dict(), indent=2))
        return 0

    try:
        thresholds = sorted({float(x) for x in args.sweep.split(",") if x.strip()})
    except ValueError:
        raise DomainError(f"bad sweep list: {args.sweep!r}")
    if not thresholds:
        raise DomainError("sweep list is empty")
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise DomainError(f"sweep thresholds must be in (0, 1), got {t}")
    rows = []
    for t in thresholds:
        m = micro([(_filtered(p, t), g) for p, g in pairs])
        rows.append(SweepRow(threshold=t, metrics=m))
    best = max(rows, key=lambda r: (r.metrics.f1, -r.threshold))
    result = SweepResult(rows=tuple(rows), best_threshold=best.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.to_csv(out / "sweep.csv")
    plot_sweep(result, out / "sweep.png")
    _log(f"wrote sweep.csv and sweep.png to {out}")
    print(json.dumps({"best_threshold": best.threshold,
                      **best.metrics.to_dict()}, indent=2))
    return 0


# -- counts -----------------------------------------------------------------

def cmd_counts(args) -> int:
    det_dir = Path(args.detections)
    manifest_path = Path(args.runs)
    if not manifest_path.exists():
        raise DomainError(f"runs manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    runs_spec = manifest.get("runs")
    if not runs_spec:
        raise DomainError("runs manifest lists no runs")
    runs = []
    for files in runs_spec:
        run = []
        for name in files:
            p = det_dir / name
            if not p.exists():
                raise DomainError(f"detection file not found: {p}")
            run.append(DetectionSet.load_json(p))
        runs.append(run)
    series = step_series(runs)
    out_csv = Path(args.out)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    series.to_csv(out_csv)
    out_png = out_csv.with_suffix(".png")
    plot_step_series(series, out_png)
    _log(f"wrote {out_csv} and {out_png}")
    return 0


# -- serve ------------------------------------------------------------------

def _bootstrap_project(root: Path, image_args: list[str]):
    from .service import Project

    project = Project(root) if (root / "manifest.json").exists() else Project.create(root)
    for arg in image_args:
        for src in _input_images(Path(arg)):
            if not project.has_image(src.stem):
                project.add_image(src.stem, load_png(src))
                _log(f"imported {src} as {src.stem}")
    return project


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    _bootstrap_project(Path(args.project), args.images or [])
    model = load_weights(args.weights) if args.weights else None
    app = create_app(args.project, bank=build_bank, model=model)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmcnn",
        description="Junction/terminal detector for labyrinthine stripe images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the detector over images")
    p.add_argument("--input", required=True, help="image file or directory of PNGs")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="template matching threshold (default 0.5)")
    p.add_argument("--weights", help="optional .tmcw weights enabling the CNN stage")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resize", help="resize input to WxH before detection (e.g. 1300x972)")
    p.add_argument("--jobs", type=int, help="worker count (default: TMCNN_JOBS or all cores)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("templates", help="template bank utilities")
    tsub = p.add_subparsers(dest="templates_command", required=True)
    pd = tsub.add_parser("dump", help="render the bank and write its manifest")
    pd.add_argument("--out", required=True, help="output directory")
    pd.set_defaults(func=cmd_templates_dump)

    p = sub.add_parser("train", help="train the patch classifier")
    p.add_argument("--dataset", required=True,
                   help="directory with 50x50 patches and manifest.json")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights file to write (.tmcw)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="generate a synthetic labyrinth corpus")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--size", default="1300x972", help="canvas WxH (default 1300x972)")
    p.add_argument("--lambda", dest="wavelength", type=float, default=12.0,
                   help="stripe wavelength in pixels (default 12)")
    p.add_argument("--seed", type=int, default=0, help="seed of the first image")
    p.add_argument("--bandwidth", type=float, default=0.25)
    p.add_argument("--noise", type=float, default=0.03, help="pixel noise sigma")
    p.add_argument("--blur", type=float, default=1.0, help="render blur sigma")
    p.add_argument("--relax", type=int, default=0,
                   help="stripe annealing passes; deep relaxation thins defects")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--pred", required=True, help="directory of detection JSONs")
    p.add_argument("--gt", required=True, help="directory of ground-truth JSONs")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--box", type=int, default=21, help="matching box side in pixels")
    p.add_argument("--class-agnostic", action="store_true",
                   help="ignore labels when matching")
    p.add_argument("--sweep", help="comma-separated thresholds to re-score at")
    p.add_argument("--out", default=".",
                   help="directory for sweep.csv/sweep.png (sweep mode only)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("counts", help="defect counts across a run series")
    p.add_argument("--detections", required=True, help="directory of detection JSONs")
    p.add_argument("--runs", required=True,
                   help="JSON manifest: {\"runs\": [[file, ...], ...]}")
    p.add_argument("--out", required=True, help="CSV path (plot PNG written next to it)")
    p.set_defaults(func=cmd_counts)

    p = sub.add_parser("serve", help="start the annotation service")
    p.add_argument("--project", required=True,
                   help="project directory (created if missing)")
    p.add_argument("--images", nargs="+",
                   help="PNGs or directories of PNGs to import before serving")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--weights", help="optional .tmcw weights for model proposals")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DomainError as e:
        _log(f"error: {e}")
        return 1
    except (FileNotFoundError, NotADirectoryError, PermissionError) as e:
        _log(f"error: {e}")
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
