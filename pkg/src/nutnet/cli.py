"""Command-line interface.

Subcommands: train, defend, locate, attack, eval, bench, experiment.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evalkit, imageio, masking, model, patchlab, pipeline, synth, training
from .errors import (
    ConfigError,
    InputError,
    IntegrityError,
    NutNetError,
    PlacementError,
    UndefinedMetricError,
    VersionError,
)

_DATA_ERRORS = (
    InputError, ConfigError, IntegrityError, VersionError,
    PlacementError, UndefinedMetricError, FileNotFoundError,
    json.JSONDecodeError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nutnet",
        description="Block-autoencoder defense against adversarial patches",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--checkpoint", type=Path, help="model checkpoint path")
        p.add_argument("--block-size", type=int, choices=(13, 26, 52), default=13)
        p.add_argument("--k1", type=float, default=masking.DEFAULT_K1,
                       help="block error threshold")
        p.add_argument("--k2", type=float, default=masking.DEFAULT_K2,
                       help="pixel difference threshold")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true")
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--detector-url", help="optional detector bridge URL")
        return p

    p = common(sub.add_parser("train", help="train the autoencoder"))
    p.add_argument("--images", type=Path, help="directory of clean PNG/PPM images")
    p.add_argument("--synthetic-images", type=int, default=0,
                   help="train on N generated images instead of --images")

    p = common(sub.add_parser("defend", help="mask patches in images"))
    p.add_argument("input", type=Path, help="image file or directory")

    p = common(sub.add_parser("locate", help="emit masks and overlap ratios"))
    p.add_argument("input", type=Path, help="image file or directory")
    p.add_argument("--gt-masks", type=Path, required=True,
                   help="directory of ground-truth mask PNGs (same file names)")

    common(sub.add_parser("attack", help="run the adaptive attack"))

    p = common(sub.add_parser("eval", help="AP@0.5 from detections JSON"))
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)

    p = common(sub.add_parser("bench", help="FPS benchmark"))
    p.add_argument("--repetitions", type=int, default=50)

    common(sub.add_parser("experiment", help="run a multi-stage experiment"))
    return parser


def _load_params(args) -> model.AEParams:
    if not args.checkpoint:
        raise InputError("--checkpoint is required for this command")
    params = model.load_checkpoint(args.checkpoint)
    if params.block_size != args.block_size:
        raise InputError(
            f"checkpoint block size {params.block_size} != --block-size {args.block_size}"
        )
    return params


def _defense_config(args) -> pipeline.DefenseConfig:
    return pipeline.DefenseConfig(
        block_size=args.block_size,
        thresholds=masking.Thresholds(k1=args.k1, k2=args.k2),
        deterministic=args.deterministic,
    )


def _input_images(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir()
            if p.suffix.lower() in imageio.SUPPORTED_SUFFIXES
        )
        if not files:
            raise InputError(f"{path}: no PNG/PPM images found")
        return files
    if not path.exists():
        raise InputError(f"{path}: no such file")
    return [path]


def _cmd_train(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    if args.config:
        cfg, spec = training.load_train_config(args.config)
    else:
        cfg, spec = training.TrainConfig(), training.NoiseOverlaySpec()
    cfg.block_size = args.block_size
    cfg.seed = args.seed
    if args.synthetic_images:
        corpus = synth.synth_corpus(args.seed, args.synthetic_images)
    elif args.images:
        corpus = [imageio.load_image(p) for p in _input_images(args.images)]
    else:
        raise InputError("provide --images or --synthetic-images")
    params, history = training.train(corpus, spec, cfg, checkpoint_dir=args.out)
    ckpt = args.out / "model.nnae"
    model.save_checkpoint(params, ckpt, seed=cfg.seed)
    (args.out / "history.json").write_text(history.to_json())
    print(f"trained {cfg.epochs} epochs; checkpoint: {ckpt}")
    return 0


def _cmd_defend(args) -> int:
    params = _load_params(args)
    cfg = _defense_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    stats = {}
    for path in _input_images(args.input):
        image = imageio.load_image(path)
        result = pipeline.defend(image, params, cfg)
        imageio.save_image(result.masked_image, args.out / f"{path.stem}_masked.png")
        imageio.save_mask(result.final_mask, args.out / f"{path.stem}_mask.png")
        stats[path.name] = dict(
            masked_fraction=result.masked_fraction,
            **masking.mask_stats(result.masks),
            stage_times_us=result.stage_times_us,
        )
    evalkit.write_report({"defend": stats}, args.out / "defend.json")
    print(f"defended {len(stats)} image(s) -> {args.out}")
    return 0


def _cmd_locate(args) -> int:
    params = _load_params(args)
    cfg = _defense_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    ratios = {}
    for path in _input_images(args.input):
        image = imageio.load_image(path)
        result = pipeline.defend(image, params, cfg)
        imageio.save_mask(result.final_mask, args.out / f"{path.stem}_mask.png")
        gt_path = args.gt_masks / f"{path.stem}.png"
        if not gt_path.exists():
            raise InputError(f"missing ground-truth mask {gt_path}")
        gt = imageio.load_mask(gt_path)
        ratios[path.name] = patchlab.overlap_ratio(result.final_mask, gt)
    mean = sum(ratios.values()) / len(ratios)
    evalkit.write_report(
        {"overlap_ratios": ratios, "mean_overlap_ratio": mean},
        args.out / "locate.json",
    )
    print(f"mean overlap ratio {mean:.3f} over {len(ratios)} image(s)")
    return 0


def _cmd_attack(args) -> int:
    params = _load_params(args)
    args.out.mkdir(parents=True, exist_ok=True)
    attack_cfg = {}
    if args.config:
        with open(args.config) as f:
            attack_cfg = json.load(f)
    cfg = patchlab.AdaptiveAttackConfig(
        alpha=float(attack_cfg.get("alpha", 1.0)),
        steps=int(attack_cfg.get("steps", 100)),
        step_size=float(attack_cfg.get("step_size", 0.01)),
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    size = int(attack_cfg.get("image_size", 8 * params.block_size))
    image = synth.synth_photo(rng, size, size)
    psize = int(attack_cfg.get("patch_size", 2 * params.block_size))
    patch = rng.uniform(0, 1, size=(psize, psize, 3))
    position = tuple(attack_cfg.get("position", (params.block_size, params.block_size)))
    oracle = patchlab.mock_detector_oracle(seed=args.seed)
    result = patchlab.adaptive_attack(image, patch, position, cfg, params, oracle)
    evalkit.write_report(
        dict(
            alpha=cfg.alpha,
            steps=cfg.steps,
            attack_loss=result.attack_loss,
            recon_dist=result.recon_dist,
            inner_products=result.inner_products,
        ),
        args.out / "attack.json",
    )
    with open(args.out / "attack.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "attack_loss", "recon_dist"])
        for i, (al, rd) in enumerate(zip(result.attack_loss, result.recon_dist)):
            writer.writerow([i, al, rd])
    imageio.save_image(result.patches[-1], args.out / "final_patch.png")
    print(f"attack finished: final loss {result.attack_loss[-1]:.4f}, "
          f"final recon dist {result.recon_dist[-1]:.4f}")
    return 0


def _cmd_eval(args) -> int:
    ds = evalkit.load_dataset(args.images, args.annotations)
    with open(args.detections) as f:
        det_doc = json.load(f)
    detections = {
        img: [
            patchlab.DetectionBox(
                class_id=int(r["class"]), confidence=float(r["conf"]),
                x1=float(r["x1"]), y1=float(r["y1"]),
                x2=float(r["x2"]), y2=float(r["y2"]),
            )
            for r in recs
        ]
        for img, recs in det_doc.items()
    }
    result = evalkit.mean_ap_at_50(detections, ds.annotations)
    args.out.mkdir(parents=True, exist_ok=True)
    evalkit.write_report(result, args.out / "eval.json")
    print(json.dumps(result, indent=2))
    return 0


def _cmd_bench(args) -> int:
    params = _load_params(args)
    cfg = _defense_config(args)
    images = synth.synth_corpus(args.seed, 4, 416, 416)
    report = {
        "preprocessing": evalkit.bench_fps(
            lambda img: pipeline.defend(img, params, cfg),
            images, repetitions=args.repetitions,
        )
    }
    if args.detector_url:
        def full(img):
            result = pipeline.defend(img, params, cfg)
            evalkit.detect_remote(args.detector_url, result.masked_image)
        report["with_detector"] = evalkit.bench_fps(
            full, images, repetitions=args.repetitions
        )
    args.out.mkdir(parents=True, exist_ok=True)
    evalkit.write_report(report, args.out / "bench.json")
    pre = report["preprocessing"]
    print(f"preprocessing: median {pre['median_ms']:.2f} ms, {pre['fps']:.1f} FPS")
    return 0


def _cmd_experiment(args) -> int:
    if not args.config:
        raise InputError("--config is required for experiment")
    with open(args.config) as f:
        config = json.load(f)
    config.setdefault("block_size", args.block_size)
    config.setdefault("k1", args.k1)
    config.setdefault("k2", args.k2)
    if args.checkpoint:
        config.setdefault("checkpoint", str(args.checkpoint))
    report, ok = evalkit.run_experiment(config, args.out)
    if not ok:
        print(f"experiment finished with failures: {report['failures']}",
              file=sys.stderr)
        return 3
    print(f"experiment finished -> {args.out / 'report.json'}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "defend": _cmd_defend,
    "locate": _cmd_locate,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NutNetError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
