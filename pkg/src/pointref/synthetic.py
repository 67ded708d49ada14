"""Seeded synthetic scenes for demos and end-to-end tests.

Each scene places a person (eye, wrist, fingertip) and a referent lying on
either the head-to-fingertip or the wrist-to-fingertip ray. Two fake models
propose candidates near their own ray, and crop embeddings are drawn so that
boxes overlapping the referent align with the text embedding.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .boxes import BBox, iou
from .ensemble import Source
from .geometry import extend_ray_to_border
from .io import AnnotationRecord, EmbeddingStore, PredictionRecord, TEXT_KEY, dump_annotations, dump_predictions

EMBEDDING_DIM = 16


def _box_around(center, w, h):
    cx = float(np.clip(center[0], w / 2, 1 - w / 2))
    cy = float(np.clip(center[1], h / 2, 1 - h / 2))
    return BBox.from_center(cx, cy, w, h)


def _point_on_ray(rng, start, tip, size):
    seg = extend_ray_to_border(start, tip, size)
    t = rng.uniform(0.35, 0.9)
    x = seg.through.x + t * (seg.border_end.x - seg.through.x)
    y = seg.through.y + t * (seg.border_end.y - seg.through.y)
    return x / size[0], y / size[1]


def _scene(rng, i, size):
    w, h = size
    while True:
        eye = np.array([rng.uniform(0.1, 0.3) * w, rng.uniform(0.15, 0.35) * h])
        wrist = eye + np.array([rng.uniform(0.05, 0.15) * w, rng.uniform(0.15, 0.3) * h])
        fingertip = wrist + np.array([rng.uniform(0.04, 0.1) * w, rng.uniform(-0.12, 0.02) * h])
        if np.linalg.norm(fingertip - eye) > 5 and np.linalg.norm(fingertip - wrist) > 5:
            break
    true_line = "h2f" if rng.random() < 0.6 else "w2f"
    start = eye if true_line == "h2f" else wrist
    center = _point_on_ray(rng, start, fingertip, size)
    side = float(np.sqrt(rng.choice([0.002, 0.004, 0.01, 0.03, 0.08])))
    aspect = rng.uniform(0.7, 1.4)
    gt = _box_around(center, side * aspect, side / aspect)
    kp = {"eye": tuple(map(float, eye)), "fingertip": tuple(map(float, fingertip)),
          "wrist": tuple(map(float, wrist)), "elbow": None}
    return true_line, gt, kp


def _model_candidates(rng, model_line, true_line, gt, kp, size, n=3):
    start = kp["eye"] if model_line == "h2f" else kp["wrist"]
    cands = []
    for k in range(n):
        if k == 0 and model_line == true_line:
            jitter = rng.normal(0, 0.3, 4) * np.array([gt.width, gt.height, gt.width, gt.height])
            box = BBox(*(np.array(gt) + jitter))
            if not (box.x_min < box.x_max and box.y_min < box.y_max):
                box = gt
            box = BBox(*np.clip(box, 0.0, 1.0))
        else:
            center = _point_on_ray(rng, start, kp["fingertip"], size)
            box = _box_around(center, gt.width * rng.uniform(0.7, 1.3), gt.height * rng.uniform(0.7, 1.3))
        cands.append(box)
    confs = np.sort(rng.beta(4.0, 1.0, n))[::-1]
    return [(b, float(round(c, 4))) for b, c in zip(cands, confs)]


def make_dataset(n_images=20, seed=0, image_size=(160, 120)):
    """Return ``(annotations, predictions, embeddings)`` for ``n_images`` scenes."""
    rng = np.random.default_rng(seed)
    annotations, predictions = [], {}
    store = EmbeddingStore(EMBEDDING_DIM)
    for i in range(n_images):
        image_id = f"syn{i:03d}"
        true_line, gt, kp = _scene(rng, i, image_size)
        text = f"the object on the {'head' if true_line == 'h2f' else 'hand'} line"
        annotations.append(AnnotationRecord(image_id, tuple(image_size), text, gt, kp, {"true_line": true_line}))
        text_emb = rng.normal(size=EMBEDDING_DIM)
        text_emb /= np.linalg.norm(text_emb)
        store.put(image_id, TEXT_KEY, 0, text_emb)
        predictions[image_id] = {}
        for model, line in ((Source.H2F, "h2f"), (Source.W2F, "w2f")):
            cands = _model_candidates(rng, line, true_line, gt, kp, image_size)
            predictions[image_id][model] = PredictionRecord(image_id, model, cands)
            for rank, (box, _) in enumerate(cands):
                align = float(np.clip(0.15 + 0.6 * iou(box, gt) + rng.normal(0, 0.15), -0.9, 0.95))
                noise = rng.normal(size=EMBEDDING_DIM)
                noise -= (noise @ text_emb) * text_emb
                noise /= np.linalg.norm(noise)
                store.put(image_id, model.value, rank, align * text_emb + np.sqrt(1 - align ** 2) * noise)
    return annotations, predictions, store


def write_dataset(out_dir, n_images=20, seed=0, image_size=(160, 120)):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    annotations, predictions, store = make_dataset(n_images, seed, image_size)
    dump_annotations(annotations, out / "annotations.jsonl")
    dump_predictions(predictions, out / "predictions.jsonl")
    store.save(out / "embeddings.bin")
    return out
