"""Command-line entry point: ``pointref <command> ...``.

Exit codes: 0 success, 1 validation failure, 2 I/O failure. Set
``POINTREF_LOG_LEVEL`` (e.g. ``DEBUG``) to change log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import losses
from .config import RunConfig, load_config
from .ensemble import STRATEGIES, QueryContext, Source, run_strategy
from .exceptions import DegenerateRay, NoIntersection, PointRefError, ValidationError
from .geometry import GesturalKeypoints
from .heatmap import HeatmapSpec, make_heatmap, merge_heatmaps, render_heatmap
from .io import (
    FINAL_KEY,
    EmbeddingStore,
    FinalPrediction,
    dump_final,
    load_annotations,
    load_final,
    load_predictions,
)
from .metrics import EvalRecord, EvalReport, build_report

logger = logging.getLogger("pointref")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2
GRADIENT_TOLERANCE = 1e-4


# gen-heatmaps ------------------------------------------------------------


def _rescaled(kp: GesturalKeypoints, sx, sy) -> GesturalKeypoints:
    def scale(p):
        return None if p is None else (p[0] * sx, p[1] * sy)

    return GesturalKeypoints(scale(kp.eye), scale(kp.fingertip), scale(kp.wrist), scale(kp.elbow))


def _render_one(record, spec: HeatmapSpec, lines, out_dir: Path, size=None):
    kp = record.keypoints
    raster = tuple(int(round(v)) for v in (size or record.image_size))
    if size is not None:
        # sigma stays in raster pixels; only the keypoints move
        kp = _rescaled(kp, raster[0] / record.image_size[0], raster[1] / record.image_size[1])
    written = []
    if lines == "merged":
        maps = [make_heatmap(kp, replace(spec, line=ln), raster) for ln in ("h2f", "w2f")]
        targets = [("merged", merge_heatmaps(*maps))]
    else:
        chosen = ("h2f", "w2f") if lines == "both" else (lines,)
        targets = [(ln, make_heatmap(kp, replace(spec, line=ln), raster)) for ln in chosen]
    for name, heat in targets:
        path = out_dir / f"{record.image_id}.{name}.{spec.style.value}.png"
        render_heatmap(heat, path)
        written.append(path)
    return written


def cmd_gen_heatmaps(annotations, spec: HeatmapSpec, out_dir, lines="both", size=None, jobs=1) -> int:
    """Render heatmaps for every annotation; degenerate records are skipped and logged."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(record):
        try:
            return _render_one(record, spec, lines, out_dir, size)
        except (DegenerateRay, NoIntersection) as exc:
            logger.warning("skipping %s: %s", record.image_id, exc)
            return []

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, annotations))
    else:
        results = [work(r) for r in annotations]
    return sum(len(r) for r in results)


# ensemble ----------------------------------------------------------------


def cmd_ensemble(predictions, embeddings, strategy, config: RunConfig, out_path) -> int:
    """Pick one box per image and write the final predictions file.

    When ``embeddings`` is given, the chosen crop and text embeddings are
    written next to the output as ``<out>.emb`` so ``evaluate`` can score CLIP.
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}", field="strategy")
    finals = []
    chosen_store = EmbeddingStore(embeddings.dim) if embeddings is not None else None
    for image_id in sorted(predictions):
        per_model = predictions[image_id]
        if Source.H2F not in per_model or Source.W2F not in per_model:
            logger.warning("skipping %s: needs predictions from both models", image_id)
            continue
        ctx = None
        if embeddings is not None and embeddings.text(image_id) is not None:
            ctx = QueryContext(embeddings.text(image_id))
        h2f = per_model[Source.H2F].to_candidates()
        w2f = per_model[Source.W2F].to_candidates()
        pick = run_strategy(strategy, h2f, w2f, ctx, config.ensemble)
        finals.append(FinalPrediction(image_id, pick.box, pick.confidence, pick.source, pick.rank))
        if chosen_store is not None and pick.image_embedding is not None and ctx is not None:
            chosen_store.put(image_id, FINAL_KEY, 0, pick.image_embedding)
            chosen_store.put(image_id, "TEXT", 0, ctx.text_embedding)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dump_final(finals, out_path, strategy, asdict(config.ensemble))
    if chosen_store is not None and len(chosen_store):
        chosen_store.save(out_path.with_suffix(out_path.suffix + ".emb"))
    return len(finals)


# evaluate ----------------------------------------------------------------


def cmd_evaluate(annotations, finals, config: RunConfig, out_dir, embeddings=None, strategy=None) -> EvalReport:
    records, missing = [], 0
    for ann in annotations:
        pred = finals.get(ann.image_id)
        if pred is None:
            missing += 1
            continue
        pred_emb = text_emb = None
        if embeddings is not None:
            pred_emb = embeddings.get((ann.image_id, FINAL_KEY, 0))
            text_emb = embeddings.text(ann.image_id)
        records.append(EvalRecord(ann.image_id, ann.gt_box, pred.box, pred_emb, text_emb))
    meta = {"n_annotations": str(len(annotations)), "n_evaluated": str(len(records)),
            "n_missing_predictions": str(missing)}
    if strategy:
        meta["strategy"] = strategy
    small, large = config.size_thresholds
    report = build_report(records, config.iou_thresholds, small, large, meta)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    return report


# loss-check --------------------------------------------------------------


def _random_box(rng):
    w, h = rng.uniform(0.05, 0.6, 2)
    x, y = rng.uniform(0, 1 - w), rng.uniform(0, 1 - h)
    return np.array([x, y, x + w, y + h])


def random_gradient_cases(rng, trials):
    """Yield ``(probe, params)`` pairs at random configurations; the caller skips kinks."""
    for _ in range(trials):
        anchor = rng.uniform(0, 1, 2)
        tip = anchor + rng.normal(0, 0.2, 2)
        gt_c, pred_c = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        gt, pred = _random_box(rng), _random_box(rng)
        cases = [
            (losses.referent_alignment_probe(anchor, tip, gt_c), pred_c),
            (losses.center_probe(gt_c), pred_c),
            (losses.giou_probe(gt), pred),
            (losses.box_loss_probe(gt), pred),
        ]
        yield from cases


def cmd_loss_check(seed=0, trials=100, epsilon=1e-6) -> float:
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for probe, params in random_gradient_cases(rng, trials):
        try:
            err = losses.grad_check(probe, params, epsilon, kink_tol=1e-4)
        except losses.NonDifferentiablePoint:
            skipped += 1
            continue
        except PointRefError as exc:
            logger.debug("skipping degenerate case: %s", exc)
            skipped += 1
            continue
        checked += 1
        worst = max(worst, err)
    logger.info("gradient check: %d cases, %d skipped near kinks, max relative error %.3e", checked, skipped, worst)
    return worst


# argument parsing --------------------------------------------------------


def _parse_size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="pointref", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="YAML/JSON run configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-heatmaps", help="render pointing heatmaps for an annotation file")
    p.add_argument("annotations")
    p.add_argument("--out-dir", help="default: output.dir from --config")
    p.add_argument("--line", choices=("h2f", "w2f", "both", "merged"), default="both")
    p.add_argument("--style", choices=("gaussian", "conic"))
    p.add_argument("--sigma", type=float, help="Gaussian width in raster pixels")
    p.add_argument("--half-angle-deg", type=float, help="cone half-angle in degrees")
    p.add_argument("--size", type=_parse_size, help="raster size WIDTHxHEIGHT (default: image size)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("ensemble", help="fuse H2F and W2F candidates into one box per image")
    p.add_argument("predictions")
    p.add_argument("--embeddings", help="embedding sidecar for candidates and text")
    p.add_argument("--strategy", choices=STRATEGIES, default="cape")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score final predictions against annotations")
    p.add_argument("annotations")
    p.add_argument("final")
    p.add_argument("--embeddings", help="sidecar written by 'ensemble' (default: <final>.emb if present)")
    p.add_argument("--out-dir", help="default: output.dir from --config")

    p = sub.add_parser("loss-check", help="verify analytic loss gradients by finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-6)

    p = sub.add_parser("report", help="print a saved report.json as a table")
    p.add_argument("report")

    p = sub.add_parser("make-fixture", help="write a seeded synthetic dataset")
    p.add_argument("out_dir")
    p.add_argument("--n-images", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _heatmap_spec(args, config):
    spec = config.heatmap
    if args.style:
        spec = replace(spec, style=args.style)
    if args.sigma is not None:
        spec = replace(spec, sigma=args.sigma)
    if args.half_angle_deg is not None:
        spec = replace(spec, cone_half_angle=math.radians(args.half_angle_deg))
    return HeatmapSpec(spec.style, spec.line, spec.sigma, spec.cone_half_angle)


def _out_dir(args, config, sub):
    if args.out_dir:
        return args.out_dir
    if config.output_dir is None:
        raise ValidationError("--out-dir is required when the config sets no output.dir", field="out_dir")
    return str(Path(config.output_dir) / sub)


def run(args) -> int:
    config = load_config(args.config)
    if args.command == "gen-heatmaps":
        out_dir = _out_dir(args, config, "heatmaps")
        n = cmd_gen_heatmaps(load_annotations(args.annotations), _heatmap_spec(args, config),
                             out_dir, args.line, args.size, args.jobs)
        print(f"wrote {n} heatmaps to {out_dir}")
    elif args.command == "ensemble":
        store = EmbeddingStore.load(args.embeddings) if args.embeddings else None
        n = cmd_ensemble(load_predictions(args.predictions, store), store, args.strategy, config, args.out)
        print(f"wrote {n} final predictions to {args.out}")
    elif args.command == "evaluate":
        emb_path = args.embeddings or (args.final + ".emb" if os.path.exists(args.final + ".emb") else None)
        store = EmbeddingStore.load(emb_path) if emb_path else None
        header, finals = load_final(args.final)
        report = cmd_evaluate(load_annotations(args.annotations), finals, config,
                              _out_dir(args, config, "report"),
                              store, header.get("strategy"))
        sys.stdout.write(report.to_text())
    elif args.command == "loss-check":
        worst = cmd_loss_check(args.seed, args.trials, args.epsilon)
        print(f"max relative gradient error: {worst:.3e} (tolerance {GRADIENT_TOLERANCE:g})")
        if not worst < GRADIENT_TOLERANCE:
            return EXIT_VALIDATION
    elif args.command == "report":
        with open(args.report, encoding="utf-8") as fh:
            sys.stdout.write(EvalReport.from_dict(json.load(fh)).to_text())
    elif args.command == "make-fixture":
        from .synthetic import write_dataset

        out = write_dataset(args.out_dir, args.n_images, args.seed)
        print(f"wrote synthetic dataset to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("POINTREF_LOG_LEVEL", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ValidationError, PointRefError, KeyError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
