"""Evaluation toolkit: IoU and AP@0.5 metrics, dataset ingestion, FPS
benchmarking, AUROC scoring, and experiment orchestration.
"""

from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio, masking, model, pipeline, splitting, synth, training
from .errors import InputError, UndefinedMetricError
from .patchlab import DetectionBox

REPORT_SCHEMA_VERSION = 1
TOOL_VERSION = "0.1.0"


def iou(a: DetectionBox, b: DetectionBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    union = (
        (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    )
    return inter / union


def ap_at_50(
    detections: dict[str, list[DetectionBox]],
    groundtruth: dict[str, list[DetectionBox]],
    class_id: int,
) -> float:
    """Average precision at IoU >= 0.5 for one class.

    Detections are matched one-to-one to ground truth greedily in order of
    descending confidence; precision-recall is integrated with all-point
    interpolation (area under the stepwise PR curve).
    """
    gts = {img: [b for b in boxes if b.class_id == class_id]
           for img, boxes in groundtruth.items()}
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise UndefinedMetricError(f"no ground truth boxes for class {class_id}")

    dets = [
        (img, b)
        for img, boxes in detections.items()
        for b in boxes
        if b.class_id == class_id
    ]
    dets.sort(key=lambda t: -t[1].confidence)
    matched: dict[str, set[int]] = {img: set() for img in gts}
    tp = np.zeros(len(dets))
    for i, (img, det) in enumerate(dets):
        candidates = gts.get(img, [])
        best, best_iou = -1, 0.5
        for j, gt in enumerate(candidates):
            if j in matched.get(img, set()):
                continue
            v = iou(det, gt)
            if v >= best_iou:
                best, best_iou = j, v
        if best >= 0:
            matched.setdefault(img, set()).add(best)
            tp[i] = 1.0
    if len(dets) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(dets) + 1)
    recall = cum_tp / n_gt
    # all-point interpolation: precision envelope, integrate over recall steps
    prec = np.concatenate([[0.0], precision, [0.0]])
    rec = np.concatenate([[0.0], recall, [recall[-1]]])
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    steps = np.nonzero(np.diff(rec) > 0)[0]
    return float(np.sum((rec[steps + 1] - rec[steps]) * prec[steps + 1]))


def mean_ap_at_50(detections, groundtruth) -> dict:
    """AP per class (over classes present in ground truth) and their mean."""
    classes = sorted({b.class_id for boxes in groundtruth.values() for b in boxes})
    per_class = {c: ap_at_50(detections, groundtruth, c) for c in classes}
    return dict(
        per_class=per_class,
        map=(sum(per_class.values()) / len(per_class)) if per_class else None,
    )


def auroc(negative_scores: np.ndarray, positive_scores: np.ndarray) -> float:
    """Area under the ROC curve for scores where positives should rank higher.

    Rank-based (Mann-Whitney) computation, ties counted as half.
    """
    neg = np.asarray(negative_scores, dtype=np.float64)
    pos = np.asarray(positive_scores, dtype=np.float64)
    if len(neg) == 0 or len(pos) == 0:
        raise UndefinedMetricError("AUROC needs both score populations")
    all_scores = np.concatenate([neg, pos])
    order = all_scores.argsort(kind="stable")
    ranks = np.empty(len(all_scores))
    ranks[order] = np.arange(1, len(all_scores) + 1)
    # midranks for ties
    sorted_scores = all_scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    r_pos = ranks[len(neg) :].sum()
    u = r_pos - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


@dataclass
class Dataset:
    """A directory of images plus one JSON annotation file mapping image
    name to a list of {class, x1, y1, x2, y2} records."""

    image_paths: list[Path]
    annotations: dict[str, list[DetectionBox]] = field(default_factory=dict)


def load_dataset(images_dir, annotations_path=None) -> Dataset:
    images_dir = Path(images_dir)
    if not images_dir.is_dir():
        raise InputError(f"{images_dir}: not a directory")
    paths = sorted(
        p for p in images_dir.iterdir()
        if p.suffix.lower() in imageio.SUPPORTED_SUFFIXES
    )
    if not paths:
        raise InputError(f"{images_dir}: no PNG/PPM images found")
    annotations: dict[str, list[DetectionBox]] = {}
    if annotations_path is not None:
        with open(annotations_path) as f:
            doc = json.load(f)
        names = {p.name for p in paths}
        for name, recs in doc.items():
            if name not in names:
                raise InputError(f"annotation references missing image {name!r}")
            annotations[name] = [
                DetectionBox(
                    class_id=int(r["class"]), confidence=float(r.get("conf", 1.0)),
                    x1=float(r["x1"]), y1=float(r["y1"]),
                    x2=float(r["x2"]), y2=float(r["y2"]),
                )
                for r in recs
            ]
    return Dataset(image_paths=paths, annotations=annotations)


def bench_fps(
    run_frame,
    images: list[np.ndarray],
    repetitions: int = 50,
    warmup: int = 10,
) -> dict:
    """Latency/FPS statistics for a per-frame callable.

    The first ``warmup`` frames (at least 10) are excluded from statistics.
    """
    if not images:
        raise InputError("empty image set")
    warmup = max(10, warmup)
    latencies_ms: list[float] = []
    total = warmup + repetitions
    for i in range(total):
        img = images[i % len(images)]
        t0 = time.perf_counter()
        run_frame(img)
        dt = (time.perf_counter() - t0) * 1e3
        if i >= warmup:
            latencies_ms.append(dt)
    latencies_ms.sort()
    mean = statistics.fmean(latencies_ms)
    return dict(
        frames=repetitions,
        warmup=warmup,
        mean_ms=mean,
        median_ms=statistics.median(latencies_ms),
        p95_ms=latencies_ms[min(len(latencies_ms) - 1, int(0.95 * len(latencies_ms)))],
        fps=1e3 / mean if mean > 0 else float("inf"),
    )


def detect_remote(url: str, image: np.ndarray, timeout: float = 30.0) -> dict:
    """POST a PNG frame to a detector bridge and return its JSON response."""
    import io as _io
    import urllib.request

    from PIL import Image

    buf = _io.BytesIO()
    arr = (np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    req = urllib.request.Request(
        url.rstrip("/") + "/detect",
        data=buf.getvalue(),
        headers={"Content-Type": "image/png"},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode())


def boxes_from_response(doc: dict) -> list[DetectionBox]:
    return [
        DetectionBox(
            class_id=int(b["class_id"]), confidence=float(b["conf"]),
            x1=float(b["x1"]), y1=float(b["y1"]),
            x2=float(b["x2"]), y2=float(b["y2"]),
        )
        for b in doc.get("boxes", [])
    ]


def write_report(report: dict, path) -> None:
    """Atomically write a self-describing JSON report."""
    path = Path(path)
    doc = dict(schema_version=REPORT_SCHEMA_VERSION, tool_version=TOOL_VERSION)
    doc.update(report)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    os.replace(tmp, path)


def load_report(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _stage_bench(stage: dict, ctx: dict) -> dict:
    cfg = ctx["defense_config"]
    params = ctx["params"]
    size = int(stage.get("image_size", 416))
    images = synth.synth_corpus(int(stage.get("seed", 0)), 4, size, size)
    return bench_fps(
        lambda img: pipeline.defend(img, params, cfg),
        images,
        repetitions=int(stage.get("repetitions", 30)),
    )


def _stage_separation(stage: dict, ctx: dict) -> dict:
    params = ctx["params"]
    b = params.block_size
    seed = int(stage.get("seed", 1234))
    n = int(stage.get("tiles", 500))
    clean_imgs = synth.synth_corpus(seed + 1, max(1, n * b * b // (416 * 416) + 1))
    clean_tiles = np.concatenate(
        [splitting.split(img, b).blocks for img in clean_imgs]
    )[:n]
    noise = synth.noise_tiles(seed + 2, n, b)
    clean_err = _tile_mae(params, clean_tiles)
    noise_err = _tile_mae(params, noise)
    return dict(
        auroc=auroc(clean_err, noise_err),
        mean_clean_error=float(clean_err.mean()),
        mean_noise_error=float(noise_err.mean()),
        ratio=float(noise_err.mean() / clean_err.mean()),
    )


def _tile_mae(params: model.AEParams, tiles: np.ndarray) -> np.ndarray:
    recon = model.reconstruct_blocks(params, tiles.astype(np.float32))
    return np.abs(recon.astype(np.float64) - tiles).mean(axis=(1, 2, 3))


def run_experiment(config: dict, out_dir) -> tuple[dict, bool]:
    """Execute the configured stages sequentially and write report.json.

    Returns (report, ok). A failing stage is recorded in the report and
    subsequent stages still run; ok is False if any stage failed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report: dict = {"config": config, "stages": {}, "failures": []}

    ctx: dict = {}
    b = int(config.get("block_size", 13))
    thr = masking.Thresholds(
        k1=float(config.get("k1", masking.DEFAULT_K1)),
        k2=float(config.get("k2", masking.DEFAULT_K2)),
    )
    ctx["defense_config"] = pipeline.DefenseConfig(block_size=b, thresholds=thr)

    if "checkpoint" in config:
        ctx["params"] = model.load_checkpoint(config["checkpoint"])

    for stage in config.get("stages", []):
        name = stage.get("name", stage["type"])
        try:
            if stage["type"] == "train":
                cfg = training.TrainConfig(
                    block_size=b, **stage.get("train", {})
                )
                spec = training.NoiseOverlaySpec(**stage.get("noise", {}))
                corpus = synth.synth_corpus(
                    int(stage.get("corpus_seed", 7)),
                    int(stage.get("corpus_images", 8)),
                    int(stage.get("image_size", 416)),
                    int(stage.get("image_size", 416)),
                )
                params, history = training.train(corpus, spec, cfg)
                ckpt = out_dir / "model.nnae"
                model.save_checkpoint(params, ckpt, seed=cfg.seed)
                ctx["params"] = params
                report["stages"][name] = dict(
                    checkpoint=str(ckpt), final_loss=history.total_loss[-1]
                )
            elif stage["type"] == "bench":
                report["stages"][name] = _stage_bench(stage, ctx)
            elif stage["type"] == "separation":
                report["stages"][name] = _stage_separation(stage, ctx)
            elif stage["type"] == "eval":
                ds = load_dataset(stage["images"], stage.get("annotations"))
                with open(stage["detections"]) as f:
                    det_doc = json.load(f)
                detections = {
                    img: [
                        DetectionBox(
                            class_id=int(r["class"]), confidence=float(r["conf"]),
                            x1=float(r["x1"]), y1=float(r["y1"]),
                            x2=float(r["x2"]), y2=float(r["y2"]),
                        )
                        for r in recs
                    ]
                    for img, recs in det_doc.items()
                }
                report["stages"][name] = mean_ap_at_50(detections, ds.annotations)
            else:
                raise InputError(f"unknown stage type {stage['type']!r}")
        except Exception as exc:  # record and continue per contract
            report["failures"].append(dict(stage=name, error=str(exc)))
    write_report(report, out_dir / "report.json")
    return report, not report["failures"]
