"""Contract-level checks for the shipped detector.

The fast checks pin the numeric contracts: correlation against direct
summation, enumeration counts, peak extraction invariants, gradients
against finite differences, serialization, and the evaluation
arithmetic. The e2e-marked checks regenerate a 20-image corpus, train
the classifier from scratch on mined patches, and compare both detector
variants at their best thresholds. Expect hours for the marked set;
progress is appended to /tmp/acceptance_e2e.log.
"""
import itertools
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import scipy.ndimage

from oracles import central_diff, grad_rel_error, naive_masked_ncc
from tmcnn.cnn import (
    CnnModel,
    LABELS,
    TrainConfig,
    conv3x3_backward,
    conv3x3_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    global_maxpool_backward,
    global_maxpool_forward,
    load_weights,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    save_weights,
    softmax_cross_entropy,
    train,
)
from tmcnn.errors import WeightFormatError
from tmcnn.eval import detect_at_thresholds, match_detections, step_series
from tmcnn.image import median_filter, resize
from tmcnn.matching import (
    CorrelationMap,
    bfs_extract_peaks,
    correlate_bank,
    extract_peaks,
    masked_ncc_map,
)
from tmcnn.pipeline import Detection, DetectionSet, candidates_to_detections, extract_patch
from tmcnn.synth import SynthConfig, generate_labyrinth, skeleton_ground_truth
from tmcnn.templates import build_bank

# Corpus recipe for the e2e checks. Annealing plus mild pixel noise gives
# defect-dense images whose score ridges still break into separate peaks.
RECIPE = dict(width=1300, height=972, wavelength=12.0, bandwidth=0.25,
              noise_sigma=0.15, blur_sigma=0.5, relax_iterations=100)
EVAL_SEEDS = list(range(1000, 1020))     # 20 scored images
TRAIN_SEEDS = list(range(2000, 2008))    # disjoint images for the classifier
THRESHOLDS = [0.90, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97]
MINE_GRID = [round(0.86 + 0.01 * i, 2) for i in range(12)]
JITTER = 3       # stays inside the IoU > 0.5 hit zone of 21x21 boxes
NEG_MARGIN = 7   # sampled negatives keep this chebyshev moat from any gt
CLASS_CAP = 2000
HARD_CAP = 600   # mined lookalikes admitted per template kind; the rest of
                 # the false class is easy background so the training prior
                 # over lookalikes stays far from 50/50

# Floor for the filtered detector's best corpus F1, fixed after the
# calibration run of this exact protocol: best F1 0.8252 at t=0.94
# (raw matching 0.8240), pinned below the attained value to absorb
# numeric drift. Absolute F1 on this recipe is recall-bound near 0.83:
# dense regions merge neighbouring features so matching tops out around
# 0.71 recall while precision reaches 0.998 after filtering.
E2E_F1_FLOOR = 0.81

_PROGRESS = Path("/tmp/acceptance_e2e.log")


def _note(msg: str) -> None:
    line = f"[{time.strftime('%H:%M:%S')}] {msg}"
    print(line, flush=True)
    with _PROGRESS.open("a") as fh:
        fh.write(line + "\n")


def clear_of_gt(cx, cy, gx, gy) -> bool:
    # Negatives keep a NEG_MARGIN moat from every gt point. 21x21 boxes
    # reach IoU > 0.5 only where (21-|dx|)(21-|dy|) > 294, so margin >= 7
    # already implies a strict non-hit ((21-7)*21 = 294, never above); the
    # extra pixels past the positive jitter radius keep the two classes
    # from sampling near-identical patches with opposite labels.
    if gx.size == 0:
        return True
    d = np.maximum(np.abs(gx - cx), np.abs(gy - cy))
    return int(d.min()) >= NEG_MARGIN


@pytest.fixture(scope="session")
def full_bank():
    return build_bank()


@pytest.fixture(scope="session")
def eval_corpus():
    corpus = []
    for seed in EVAL_SEEDS:
        t0 = time.monotonic()
        img, field = generate_labyrinth(SynthConfig(seed=seed, **RECIPE))
        gt = skeleton_ground_truth(field, RECIPE["wavelength"])
        corpus.append((img, gt))
        _note(f"eval corpus seed {seed}: {len(gt.points)} gt points "
              f"({time.monotonic() - t0:.0f}s)")
    return corpus


@pytest.fixture(scope="session")
def probe_map(eval_corpus, full_bank):
    """Timed single-image bank correlation, shared by the throughput checks."""
    img, _ = eval_corpus[0]
    t0 = time.monotonic()
    cm = correlate_bank(img, full_bank, jobs=None)
    seconds = time.monotonic() - t0
    _note(f"probe correlation: {seconds:.0f}s")
    return cm, seconds


@pytest.fixture(scope="session")
def trained(full_bank):
    rng = np.random.default_rng(7)
    kinds = [e.kind for e in full_bank.entries]
    pos = {"junction": [], "terminal": []}
    neg = []  # (score, seed, x, y, kind)
    imgs, gxs, gys = {}, {}, {}
    for seed in TRAIN_SEEDS:
        t0 = time.monotonic()
        img, field = generate_labyrinth(SynthConfig(seed=seed, **RECIPE))
        gt = skeleton_ground_truth(field, RECIPE["wavelength"])
        for p in gt.points:
            dx, dy = rng.integers(-JITTER, JITTER + 1, size=2)
            pos[p.label].append(extract_patch(img, p.x + int(dx), p.y + int(dy)))
        cm = correlate_bank(img, full_bank, jobs=None)
        gx = np.array([p.x for p in gt.points])
        gy = np.array([p.y for p in gt.points])
        imgs[seed], gxs[seed], gys[seed] = img, gx, gy
        falses = {}
        for t in MINE_GRID:
            for c in extract_peaks(cm, t, kinds=kinds):
                if (c.x, c.y) not in falses and clear_of_gt(c.x, c.y, gx, gy):
                    falses[(c.x, c.y)] = c
        for (x, y), c in falses.items():
            neg.append((c.score, seed, x, y, c.tentative_label))
        _note(f"train seed {seed}: {len(falses)} mined negatives "
              f"({time.monotonic() - t0:.0f}s)")
    # The false class mixes capped per-kind lookalikes with easy background
    # patches. Mined peaks are nearly all stripe-end lookalikes, while at
    # detection time real terminals outnumber false peaks thirty to one, so
    # an uncapped hard class teaches far too aggressive a kill rule.
    neg.sort(key=lambda sp: (-sp[0], sp[1], sp[2], sp[3]))
    used = {(s, x, y) for _, s, x, y, _ in neg}
    kind_taken = {"junction": 0, "terminal": 0}
    hard = []
    for score, s, x, y, kind in neg:
        if kind_taken[kind] < HARD_CAP:
            kind_taken[kind] += 1
            hard.append((s, x, y))
    neg_patches = [extract_patch(imgs[s], x, y) for s, x, y in hard]
    h, w = RECIPE["height"], RECIPE["width"]
    i, attempts = 0, 0
    while len(neg_patches) < CLASS_CAP and attempts < 200 * CLASS_CAP:
        attempts += 1
        s = TRAIN_SEEDS[i % len(TRAIN_SEEDS)]
        i += 1
        x = int(rng.integers(0, w))
        y = int(rng.integers(0, h))
        if (s, x, y) in used or not clear_of_gt(x, y, gxs[s], gys[s]):
            continue
        used.add((s, x, y))
        neg_patches.append(extract_patch(imgs[s], x, y))
    _note(f"false class: pool {len(neg)}, hard {kind_taken}, "
          f"easy {len(neg_patches) - len(hard)}")
    pools = {"junction": pos["junction"], "terminal": pos["terminal"],
             "false": neg_patches}
    counts = {}
    patches, labels = [], []
    for ci, name in enumerate(LABELS):
        pool = pools[name]
        if len(pool) > CLASS_CAP:
            pick = rng.choice(len(pool), size=CLASS_CAP, replace=False)
            pool = [pool[i] for i in pick]
        counts[name] = len(pool)
        patches.extend(pool)
        labels.extend([ci] * len(pool))
    _note(f"training set: {counts}")
    t0 = time.monotonic()
    model, history = train(np.stack(patches), np.array(labels),
                           TrainConfig(dropout_rate=0.3),
                           log=lambda r: _note(f"epoch {r['epoch']}: "
                                               f"loss {r['train_loss']:.4f} "
                                               f"val {r['val_acc']:.4f}"))
    seconds = time.monotonic() - t0
    _note(f"training done in {seconds:.0f}s")
    return {"model": model, "history": history, "seconds": seconds,
            "counts": counts}


@pytest.fixture(scope="session")
def dual_sweep(eval_corpus, full_bank, trained):
    """Micro-averaged metrics per threshold for both detector variants.

    One correlation pass per image serves both: the raw variant rereads
    each detection's template label, the filtered variant keeps the
    classifier's decision.
    """
    counts = {(m, t): [0, 0, 0] for m in ("tm", "cnn") for t in THRESHOLDS}
    for i, (img, gt) in enumerate(eval_corpus):
        sets = detect_at_thresholds(img, full_bank, THRESHOLDS,
                                    model=trained["model"], image_id=f"img{i}")
        for t, ds in zip(THRESHOLDS, sets):
            a = match_detections(ds, gt)
            counts[("cnn", t)][0] += len(a.pairs)
            counts[("cnn", t)][1] += len(a.unmatched_pred)
            counts[("cnn", t)][2] += len(a.unmatched_gt)
            raw = DetectionSet(
                image=ds.image, width=ds.width, height=ds.height, threshold=t,
                detections=[replace(d, final_label=d.tm_label, probs=None,
                                    source="tm") for d in ds.detections])
            a = match_detections(raw, gt)
            counts[("tm", t)][0] += len(a.pairs)
            counts[("tm", t)][1] += len(a.unmatched_pred)
            counts[("tm", t)][2] += len(a.unmatched_gt)
        _note(f"sweep image {i + 1}/{len(eval_corpus)} done")
    out = {}
    for method in ("tm", "cnn"):
        rows = {}
        for t in THRESHOLDS:
            tp, fp, fn = counts[(method, t)]
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            rows[t] = {"tp": tp, "fp": fp, "fn": fn,
                       "precision": p, "recall": r, "f1": f1}
        best_t = max(rows, key=lambda t: (rows[t]["f1"], -t))
        out[method] = {"rows": rows, "best_t": best_t,
                       "best_f1": rows[best_t]["f1"]}
        _note(f"{method}: best t={best_t} f1={rows[best_t]['f1']:.4f}")
    return out


# ---------------------------------------------------------------- correlation

class TestCorrelationOracle:
    def test_fft_path_matches_direct_summation(self, full_bank):
        rng = np.random.default_rng(202)
        picks = rng.integers(0, len(full_bank.entries), size=20)
        t0 = time.monotonic()
        for trial in range(10):
            img = rng.random((64, 64))
            for ei in picks:
                e = full_bank.entries[int(ei)]
                fast = masked_ncc_map(img, e.template, e.mask)
                slow = naive_masked_ncc(img, e.template, e.mask)
                assert np.max(np.abs(fast - slow)) < 1e-5
        assert time.monotonic() - t0 < 60.0

    def test_self_match_scores_one(self, full_bank):
        rng = np.random.default_rng(1)
        for ei in (0, 700, 1500):
            e = full_bank.entries[ei]
            img = rng.random((41, 41))
            img[10:31, 10:31] = e.template
            sm = masked_ncc_map(img, e.template, e.mask)
            assert abs(sm[20, 20] - 1.0) < 1e-6

    def test_linear_brightness_contrast_invariance(self, full_bank):
        rng = np.random.default_rng(2)
        img = rng.random((64, 64))
        for ei in (5, 640, 1890):
            e = full_bank.entries[ei]
            base = masked_ncc_map(img, e.template, e.mask)
            moved = masked_ncc_map(0.5 * img + 0.25, e.template, e.mask)
            assert np.max(np.abs(base - moved)) < 1e-6


# ---------------------------------------------------------------- enumeration

class TestEnumerationCounts:
    def test_terminal_rotations_count_120(self, full_bank):
        assert full_bank.manifest()["terminal_param_count"] == 120

    def test_junction_count_matches_brute_force(self, full_bank):
        # independent recount: ascending 15-degree triples whose two
        # in-order gaps both lie in [70, 190]
        brute = sum(
            1 for a, b, g in itertools.combinations(range(0, 360, 15), 3)
            if 70 <= b - a <= 190 and 70 <= g - b <= 190
        )
        manifest = full_bank.manifest()
        assert manifest["junction_param_count"] == brute
        _note(f"junction enumeration: brute force {brute}, "
              f"published reference {manifest['reference_junction_param_count']}")

    def test_reference_discrepancy_documented(self, full_bank):
        manifest = full_bank.manifest()
        assert manifest["reference_junction_param_count"] == 439
        note = manifest["junction_count_note"]
        assert "439" in note and str(manifest["junction_param_count"]) in note

    def test_bank_size_formula(self, full_bank):
        manifest = full_bank.manifest()
        j = manifest["junction_param_count"]
        assert manifest["entry_count"] == 3 * j + 5 * 120
        assert len(full_bank.entries) == manifest["entry_count"]


# ---------------------------------------------------------------- peaks

def _as_map(score: np.ndarray) -> CorrelationMap:
    return CorrelationMap(score, np.zeros(score.shape, dtype=np.int32))


class TestPeakExtraction:
    def test_hundred_random_maps_one_candidate_per_region(self):
        t = 0.7
        for seed in range(100):
            rng = np.random.default_rng(seed)
            score = rng.random((48, 64))
            cands = extract_peaks(_as_map(score), t)
            regions, _ = scipy.ndimage.label(score > 0.8 * t,
                                             structure=np.ones((3, 3), dtype=int))
            labels = [regions[c.y, c.x] for c in cands]
            assert all(lb > 0 for lb in labels)
            assert len(set(labels)) == len(labels)
            ref, residual = bfs_extract_peaks(score, t)
            assert [(c.x, c.y) for c in cands] == [(c.x, c.y) for c in ref]
            assert extract_peaks(_as_map(residual), t) == []

    def test_twin_peaks_fuse_over_a_surviving_bridge(self):
        score = np.zeros((9, 30))
        score[4, 6] = 0.95
        score[4, 23] = 0.93
        score[4, 7:23] = 0.85     # above 0.8 * 0.9 = 0.72, one region
        cands = extract_peaks(_as_map(score), 0.9)
        assert [(c.x, c.y, c.score) for c in cands] == [(6, 4, 0.95)]

    def test_twin_peaks_split_over_a_drowned_trough(self):
        score = np.zeros((9, 30))
        score[4, 6] = 0.95
        score[4, 23] = 0.93
        score[4, 7:23] = 0.60     # below the 0.72 flood, two regions
        cands = extract_peaks(_as_map(score), 0.9)
        assert [(c.x, c.y) for c in cands] == [(6, 4), (23, 4)]


# ---------------------------------------------------------------- gradients

def _sample_positions(rng, shape, n):
    size = int(np.prod(shape))
    return rng.choice(size, size=min(n, size), replace=False)


class TestGradientChecks:
    def setup_method(self):
        self.rng = np.random.default_rng(33)

    def test_conv_layer(self):
        x = self.rng.standard_normal((2, 3, 6, 6))
        w = self.rng.standard_normal((4, 3, 3, 3)) * 0.5
        b = self.rng.standard_normal(4)
        sens = self.rng.standard_normal((2, 4, 6, 6))

        def f():
            return float((conv3x3_forward(x, w, b)[0] * sens).sum())

        y, cache = conv3x3_forward(x, w, b)
        dx, dw, db = conv3x3_backward(sens, cache)
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            for idx in _sample_positions(self.rng, arr.shape, 12):
                num = central_diff(f, arr, idx, h=1e-5)
                assert grad_rel_error(grad.flat[idx], num) < 1e-3

    def test_dense_layer(self):
        x = self.rng.standard_normal((3, 7))
        w = self.rng.standard_normal((4, 7))
        b = self.rng.standard_normal(4)
        sens = self.rng.standard_normal((3, 4))

        def f():
            return float((dense_forward(x, w, b)[0] * sens).sum())

        _, cache = dense_forward(x, w, b)
        dx, dw, db = dense_backward(sens, cache)
        for arr, grad in ((x, dx), (w, dw), (b, db)):
            for idx in _sample_positions(self.rng, arr.shape, 12):
                num = central_diff(f, arr, idx, h=1e-5)
                assert grad_rel_error(grad.flat[idx], num) < 1e-3

    def test_relu(self):
        # keep samples away from the kink at zero
        x = self.rng.standard_normal((4, 9))
        x[np.abs(x) < 1e-2] = 0.5
        sens = self.rng.standard_normal((4, 9))

        def f():
            return float((relu_forward(x)[0] * sens).sum())

        _, mask = relu_forward(x)
        dx = relu_backward(sens, mask)
        for idx in _sample_positions(self.rng, x.shape, 15):
            num = central_diff(f, x, idx, h=1e-5)
            assert grad_rel_error(dx.flat[idx], num) < 1e-3

    def test_maxpool(self):
        # well-separated values keep the argmax stable under the probe step
        x = self.rng.permutation(4 * 2 * 6 * 6).astype(np.float64).reshape(4, 2, 6, 6)
        sens = self.rng.standard_normal((4, 2, 3, 3))

        def f():
            return float((maxpool2_forward(x)[0] * sens).sum())

        _, cache = maxpool2_forward(x)
        dx = maxpool2_backward(sens, cache)
        for idx in _sample_positions(self.rng, x.shape, 20):
            num = central_diff(f, x, idx, h=1e-5)
            assert grad_rel_error(dx.flat[idx], num) < 1e-3

    def test_global_maxpool(self):
        x = self.rng.permutation(2 * 3 * 5 * 5).astype(np.float64).reshape(2, 3, 5, 5)
        sens = self.rng.standard_normal((2, 3))

        def f():
            return float((global_maxpool_forward(x)[0] * sens).sum())

        _, cache = global_maxpool_forward(x)
        dx = global_maxpool_backward(sens, cache)
        for idx in _sample_positions(self.rng, x.shape, 20):
            num = central_diff(f, x, idx, h=1e-5)
            assert grad_rel_error(dx.flat[idx], num) < 1e-3

    def test_dropout(self):
        x = self.rng.standard_normal((5, 8)) + 3.0
        sens = self.rng.standard_normal((5, 8))
        rate = 0.4

        def f():
            y, _ = dropout_forward(x, rate, np.random.default_rng(12))
            return float((y * sens).sum())

        _, keep = dropout_forward(x, rate, np.random.default_rng(12))
        dx = dropout_backward(sens, keep, rate)
        for idx in _sample_positions(self.rng, x.shape, 15):
            num = central_diff(f, x, idx, h=1e-5)
            assert grad_rel_error(dx.flat[idx], num) < 1e-3

    def test_softmax_cross_entropy(self):
        logits = self.rng.standard_normal((4, 3))
        onehot = np.eye(3)[[0, 2, 1, 0]]

        def f():
            return softmax_cross_entropy(logits, onehot)[0]

        _, _, dlogits = softmax_cross_entropy(logits, onehot)
        for idx in _sample_positions(self.rng, logits.shape, 12):
            num = central_diff(f, logits, idx, h=1e-5)
            assert grad_rel_error(dlogits.flat[idx], num) < 1e-3

    def test_full_model_on_reduced_input(self):
        model = CnnModel(seed=3, dropout_rate=0.0, dtype=np.float64)
        x = self.rng.random((2, 12, 12))
        onehot = np.eye(3)[[0, 2]]
        _, grads = model.loss_and_grads(x, onehot)

        def f():
            return model.loss_and_grads(x, onehot)[0]

        names = sorted(model.params)
        weights = np.array([model.params[n].size for n in names], dtype=np.float64)
        picks = self.rng.choice(len(names), size=100, p=weights / weights.sum())
        for ni in picks:
            name = names[int(ni)]
            arr = model.params[name]
            idx = int(self.rng.integers(arr.size))
            num = central_diff(f, arr, idx, h=1e-5)
            assert grad_rel_error(grads[name].flat[idx], num) < 1e-3, name


# ---------------------------------------------------------------- serialization

class TestSerialization:
    def test_weight_round_trip_bit_exact(self, tmp_path):
        model = CnnModel(seed=9)
        path = tmp_path / "w.tmcw"
        save_weights(model, path)
        back = load_weights(path)
        assert sorted(back.params) == sorted(model.params)
        for name, arr in model.params.items():
            got = back.params[name]
            assert got.dtype == arr.dtype and got.shape == arr.shape
            assert arr.tobytes() == got.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "w.tmcw"
        save_weights(CnnModel(seed=0), path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightFormatError):
            load_weights(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "w.tmcw"
        save_weights(CnnModel(seed=0), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(WeightFormatError):
            load_weights(path)

    def test_detection_set_json_round_trip(self, tmp_path):
        ds = DetectionSet(
            image="img7", width=320, height=240, threshold=0.93,
            detections=[
                Detection(id=0, x=10, y=12, score=0.97, tm_label="junction",
                          final_label="junction", probs=(0.8, 0.15, 0.05),
                          source="cnn"),
                Detection(id=1, x=100, y=40, score=0.91, tm_label="terminal",
                          final_label="false", probs=(0.1, 0.2, 0.7),
                          source="cnn"),
                Detection(id=2, x=55, y=81, score=None, tm_label="terminal",
                          final_label="terminal", probs=None, source="human"),
            ])
        path = tmp_path / "d.json"
        ds.save_json(path)
        back = DetectionSet.load_json(path)
        assert back.to_dict() == ds.to_dict()


# ---------------------------------------------------------------- evaluation

def _one(x, y, label="junction", score=0.9, i=0):
    return Detection(id=i, x=x, y=y, score=score, tm_label=label,
                     final_label=label, probs=None, source="tm")


def _gt(*points):
    from tmcnn.synth import GroundTruth, GroundTruthPoint
    return GroundTruth(points=tuple(GroundTruthPoint(x, y, lbl)
                                    for x, y, lbl in points), phase="dark")


class TestEvalArithmetic:
    def test_offset_seven_box_pair_sits_exactly_on_half(self):
        ds = DetectionSet(image="i", width=100, height=100, threshold=0.5,
                          detections=[_one(57, 50)])
        gt = _gt((50, 50, "junction"))
        # 14x21 overlap: 294 / (441 + 441 - 294) is exactly one half
        relaxed = match_detections(ds, gt, iou_thresh=0.49)
        assert len(relaxed.pairs) == 1
        assert relaxed.pairs[0].iou == 294 / 588 == 0.5

    def test_exact_half_is_rejected_by_the_strict_threshold(self):
        ds = DetectionSet(image="i", width=100, height=100, threshold=0.5,
                          detections=[_one(57, 50)])
        a = match_detections(ds, gt=_gt((50, 50, "junction")))
        assert a.pairs == () and list(a.unmatched_pred) == [0]
        assert list(a.unmatched_gt) == [0]

    def test_offset_six_box_pair_is_accepted(self):
        ds = DetectionSet(image="i", width=100, height=100, threshold=0.5,
                          detections=[_one(56, 50)])
        a = match_detections(ds, gt=_gt((50, 50, "junction")))
        assert len(a.pairs) == 1
        assert a.pairs[0].iou == 315 / 567

    def test_two_run_count_series_mean_and_std(self):
        def counted(n, image):
            dets = [_one(5 + 2 * (i % 600), 5 + 2 * (i // 600), i=i)
                    for i in range(n)]
            return DetectionSet(image=image, width=1300, height=972,
                                threshold=0.5, detections=dets)

        series = step_series([[counted(700, "a")], [counted(800, "b")]])
        stats = series.steps[0]
        assert stats.junction_mean == 750.0
        assert abs(stats.junction_std - 70.7107) < 1e-3


# ---------------------------------------------------------------- image ops

class TestImageOracles:
    def test_median_matches_naive_window_median(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            img = rng.random((int(rng.integers(6, 24)), int(rng.integers(6, 24))))
            size = int(rng.choice([3, 5]))
            pad = size // 2
            padded = np.pad(img, pad, mode="edge")
            want = np.empty_like(img)
            for y in range(img.shape[0]):
                for x in range(img.shape[1]):
                    want[y, x] = np.median(padded[y:y + size, x:x + size])
            got = median_filter(img, size=size)
            assert np.array_equal(got, want)

    def test_resize_matches_naive_bilinear(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            src_h, src_w = int(rng.integers(4, 30)), int(rng.integers(4, 30))
            out_h, out_w = int(rng.integers(2, 40)), int(rng.integers(2, 40))
            img = rng.random((src_h, src_w))
            want = np.empty((out_h, out_w))
            for r in range(out_h):
                for c in range(out_w):
                    sy = min(max((r + 0.5) * src_h / out_h - 0.5, 0.0), src_h - 1.0)
                    sx = min(max((c + 0.5) * src_w / out_w - 0.5, 0.0), src_w - 1.0)
                    y0, x0 = int(np.floor(sy)), int(np.floor(sx))
                    y1, x1 = min(y0 + 1, src_h - 1), min(x0 + 1, src_w - 1)
                    fy, fx = sy - y0, sx - x0
                    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
                    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
                    want[r, c] = top * (1 - fy) + bot * fy
            got = resize(img, (out_h, out_w))
            assert np.max(np.abs(got - want)) < 1e-6


# ---------------------------------------------------------------- corpus scale

@pytest.mark.e2e
class TestThroughput:
    def test_full_bank_correlation_within_ten_minutes(self, probe_map):
        _, seconds = probe_map
        assert seconds <= 600.0

    def test_candidate_classification_within_two_minutes(self, probe_map,
                                                         eval_corpus, full_bank,
                                                         trained):
        cm, _ = probe_map
        img, _ = eval_corpus[0]
        kinds = [e.kind for e in full_bank.entries]
        cands = extract_peaks(cm, min(THRESHOLDS), kinds=kinds)
        t0 = time.monotonic()
        dets = candidates_to_detections(img, cands, trained["model"], cache={})
        seconds = time.monotonic() - t0
        _note(f"classified {len(cands)} candidates in {seconds:.0f}s")
        assert len(dets) == len(cands)
        assert seconds <= 120.0


@pytest.mark.e2e
class TestTrainingSanity:
    def test_dataset_has_a_thousand_patches_per_class(self, trained):
        assert all(trained["counts"][name] >= 1000 for name in LABELS), trained["counts"]

    def test_validation_accuracy_within_twenty_epochs(self, trained):
        assert len(trained["history"]) <= 20
        assert max(h["val_acc"] for h in trained["history"]) >= 0.95

    def test_training_runtime_within_thirty_minutes(self, trained):
        assert trained["seconds"] <= 1800.0


@pytest.mark.e2e
class TestEndToEndOrdering:
    def test_filtered_detector_beats_raw_matching(self, dual_sweep):
        assert dual_sweep["cnn"]["best_f1"] > dual_sweep["tm"]["best_f1"], {
            m: (dual_sweep[m]["best_t"], round(dual_sweep[m]["best_f1"], 4))
            for m in ("tm", "cnn")
        }

    def test_filtered_detector_clears_the_pinned_floor(self, dual_sweep):
        assert E2E_F1_FLOOR is not None, "floor not pinned yet"
        assert dual_sweep["cnn"]["best_f1"] >= E2E_F1_FLOOR
