"""Line-delimited JSON records and the binary embedding sidecar.

Every JSONL file may open with a header line ``{"header": {...}}`` that
declares coordinate units. Internally boxes are normalized corners and
keypoints are pixels; files in other units are converted on load.

Embedding sidecar layout (little-endian)::

    8 bytes   magic b"PTREMB01"
    uint32    dimension
    uint32    count
    uint32    byte length of the key index
    bytes     UTF-8 JSON list of [image_id, model, rank], one per vector
    float64   count x dimension matrix, row-major
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .boxes import BBox
from .ensemble import Candidate, Source
from .exceptions import DegenerateRay, DimensionMismatch, ParseError, ValidationError
from .geometry import GesturalKeypoints, as_point

logger = logging.getLogger(__name__)

ANNOTATION_FORMAT = "pointref.annotations"
PREDICTION_FORMAT = "pointref.predictions"
FINAL_FORMAT = "pointref.final"
FORMAT_VERSION = 1

EMBEDDING_MAGIC = b"PTREMB01"
TEXT_KEY = "TEXT"
FINAL_KEY = "FINAL"

KEYPOINT_NAMES = ("eye", "fingertip", "wrist", "elbow")


class UnsortedCandidatesWarning(UserWarning):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), ensure_ascii=False)


def _iter_jsonl(path) -> Iterator[Tuple[int, dict]]:
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}: each line must be a JSON object", line=lineno)
            yield lineno, obj


def _read_with_header(path, expected_format):
    header, records = None, []
    for lineno, obj in _iter_jsonl(path):
        if "header" in obj and not records and header is None:
            header = obj["header"]
            fmt = header.get("format")
            if fmt is not None and fmt != expected_format:
                raise ParseError(f"{path}: expected format {expected_format!r}, got {fmt!r}", line=lineno)
            continue
        records.append((lineno, obj))
    return header or {}, records


def _require(obj, key, lineno):
    if key not in obj:
        raise ValidationError(f"line {lineno}: missing field {key!r}", field=key)
    return obj[key]


def _units(header, key, default, lineno=1):
    units = header.get(key, default)
    if units not in ("normalized", "pixel"):
        raise ValidationError(f"line {lineno}: {key} must be 'normalized' or 'pixel'", field=key)
    return units


def _image_size(value, lineno):
    try:
        w, h = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"line {lineno}: image_size must be [width, height]", field="image_size") from exc
    if not (w > 0 and h > 0):
        raise ValidationError(f"line {lineno}: image_size must be positive", field="image_size")
    return (int(w) if w == int(w) else w, int(h) if h == int(h) else h)


def _box(coords, units, size, field_name, lineno):
    try:
        box = BBox.validated(coords, field_name)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}", field=field_name) from exc
    if units == "pixel":
        if size is None:
            raise ValidationError(f"line {lineno}: pixel boxes need image_size", field="image_size")
        w, h = size
        box = BBox(box.x_min / w, box.y_min / h, box.x_max / w, box.y_max / h)
    return box


# annotations -------------------------------------------------------------


@dataclass(eq=False)
class AnnotationRecord:
    image_id: str
    image_size: Tuple[float, float]
    text: str
    gt_box: BBox
    keypoints_raw: Dict[str, Optional[Tuple[float, float]]]
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def keypoints(self) -> GesturalKeypoints:
        """Validated keypoints; raises :class:`DegenerateRay` when unusable."""
        missing = [n for n in ("eye", "fingertip", "wrist") if self.keypoints_raw.get(n) is None]
        if missing:
            raise DegenerateRay(f"{self.image_id}: missing keypoints {missing}", field="keypoints")
        return GesturalKeypoints(**{n: v for n, v in self.keypoints_raw.items() if v is not None})

    def to_json(self) -> dict:
        out = {
            "image_id": self.image_id,
            "image_size": list(self.image_size),
            "text": self.text,
            "gt_box": list(self.gt_box),
            "keypoints": {k: (list(v) if v is not None else None) for k, v in self.keypoints_raw.items()},
        }
        out.update(self.extra)
        return out

    def __eq__(self, other):
        if not isinstance(other, AnnotationRecord):
            return NotImplemented
        return self.to_json() == other.to_json()


def _parse_annotation(obj, header, lineno) -> AnnotationRecord:
    box_units = _units(header, "box_units", "normalized", lineno)
    kp_units = _units(header, "keypoint_units", "pixel", lineno)
    image_id = str(_require(obj, "image_id", lineno))
    size = _image_size(_require(obj, "image_size", lineno), lineno)
    text = _require(obj, "text", lineno)
    if not isinstance(text, str):
        raise ValidationError(f"line {lineno}: text must be a string", field="text")
    gt_box = _box(_require(obj, "gt_box", lineno), box_units, size, "gt_box", lineno)

    raw_kp = obj.get("keypoints") or {}
    if not isinstance(raw_kp, dict):
        raise ValidationError(f"line {lineno}: keypoints must be an object", field="keypoints")
    keypoints = {}
    for name, value in raw_kp.items():
        if value is None:
            keypoints[name] = None
            continue
        try:
            p = as_point(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: keypoint {name!r} must be [x, y]", field=f"keypoints.{name}") from exc
        if kp_units == "normalized":
            p = (p[0] * size[0], p[1] * size[1])
        keypoints[name] = (float(p[0]), float(p[1]))

    known = {"image_id", "image_size", "text", "gt_box", "keypoints"}
    extra = {k: v for k, v in obj.items() if k not in known}
    return AnnotationRecord(image_id, size, text, gt_box, keypoints, extra)


def load_annotations(path) -> List[AnnotationRecord]:
    """Parse an annotation JSONL file. Unknown fields are kept in ``extra``."""
    header, rows = _read_with_header(path, ANNOTATION_FORMAT)
    return [_parse_annotation(obj, header, lineno) for lineno, obj in rows]


def dump_annotations(records, path) -> None:
    header = {"format": ANNOTATION_FORMAT, "version": FORMAT_VERSION,
              "box_units": "normalized", "keypoint_units": "pixel"}
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(_dumps({"header": header}) + "\n")
        for r in records:
            fh.write(_dumps(r.to_json()) + "\n")


# predictions -------------------------------------------------------------


@dataclass(eq=False)
class PredictionRecord:
    image_id: str
    model: Source
    candidates: List[Tuple[BBox, float]]
    embeddings: Optional[List[np.ndarray]] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def to_candidates(self) -> List[Candidate]:
        embs = self.embeddings or [None] * len(self.candidates)
        return [Candidate(box, conf, self.model, rank, emb)
                for rank, ((box, conf), emb) in enumerate(zip(self.candidates, embs))]

    def to_json(self) -> dict:
        out = {
            "image_id": self.image_id,
            "model": self.model.value,
            "candidates": [{"box": list(b), "confidence": c} for b, c in self.candidates],
        }
        out.update(self.extra)
        return out


def _parse_prediction(obj, header, lineno) -> PredictionRecord:
    box_units = _units(header, "box_units", "normalized", lineno)
    image_id = str(_require(obj, "image_id", lineno))
    try:
        model = Source(str(_require(obj, "model", lineno)).upper())
    except ValueError as exc:
        raise ValidationError(f"line {lineno}: model must be H2F or W2F", field="model") from exc
    size = _image_size(obj["image_size"], lineno) if "image_size" in obj else None
    raw = _require(obj, "candidates", lineno)
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"line {lineno}: candidates must be a non-empty list", field="candidates")
    cands = []
    for c in raw:
        if not isinstance(c, dict):
            raise ValidationError(f"line {lineno}: candidate must be an object", field="candidates")
        box = _box(_require(c, "box", lineno), box_units, size, "candidates.box", lineno)
        conf = float(_require(c, "confidence", lineno))
        if not 0.0 <= conf <= 1.0:
            raise ValidationError(f"line {lineno}: confidence {conf} outside [0, 1]", field="candidates.confidence")
        cands.append((box, conf))
    extra = {k: v for k, v in obj.items() if k not in {"image_id", "model", "candidates"}}
    return PredictionRecord(image_id, model, cands, None, extra)


def load_predictions(path, embeddings: Optional["EmbeddingStore"] = None) -> Dict[str, Dict[Source, PredictionRecord]]:
    """Parse per-model candidate lists, keyed by image id then model.

    Candidates are re-sorted by descending confidence (stable) when needed,
    with an :class:`UnsortedCandidatesWarning`. Embeddings, when supplied, are
    attached by ``(image_id, model, file position)``.
    """
    header, rows = _read_with_header(path, PREDICTION_FORMAT)
    out: Dict[str, Dict[Source, PredictionRecord]] = {}
    for lineno, obj in rows:
        rec = _parse_prediction(obj, header, lineno)
        if embeddings is not None:
            embs = [embeddings.get((rec.image_id, rec.model.value, i)) for i in range(len(rec.candidates))]
            if all(e is not None for e in embs):
                rec.embeddings = embs
            elif any(e is not None for e in embs):
                logger.warning("%s/%s: partial embeddings ignored", rec.image_id, rec.model.value)
        confs = [c for _, c in rec.candidates]
        if any(a < b for a, b in zip(confs, confs[1:])):
            msg = f"line {lineno}: candidates for {rec.image_id}/{rec.model.value} not sorted; re-sorting"
            warnings.warn(msg, UnsortedCandidatesWarning, stacklevel=2)
            logger.warning(msg)
            order = sorted(range(len(confs)), key=lambda i: -confs[i])
            rec.candidates = [rec.candidates[i] for i in order]
            if rec.embeddings is not None:
                rec.embeddings = [rec.embeddings[i] for i in order]
        if rec.model in out.get(rec.image_id, {}):
            raise ValidationError(f"line {lineno}: duplicate {rec.model.value} record for {rec.image_id}",
                                  field="image_id")
        out.setdefault(rec.image_id, {})[rec.model] = rec
    return out


def dump_predictions(by_image, path) -> None:
    header = {"format": PREDICTION_FORMAT, "version": FORMAT_VERSION, "box_units": "normalized"}
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(_dumps({"header": header}) + "\n")
        for image_id in by_image:
            for model in (Source.H2F, Source.W2F):
                if model in by_image[image_id]:
                    fh.write(_dumps(by_image[image_id][model].to_json()) + "\n")


# final (ensembled) predictions ------------------------------------------


@dataclass(frozen=True)
class FinalPrediction:
    image_id: str
    box: BBox
    confidence: float
    source: Source
    rank: int

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "box": list(self.box), "confidence": self.confidence,
                "source": self.source.value, "rank": self.rank}


def dump_final(preds, path, strategy, config: dict) -> None:
    header = {"format": FINAL_FORMAT, "version": FORMAT_VERSION, "box_units": "normalized",
              "strategy": strategy, "config": config}
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for p in preds:
            fh.write(_dumps(p.to_json()) + "\n")


def load_final(path) -> Tuple[dict, Dict[str, FinalPrediction]]:
    header, rows = _read_with_header(path, FINAL_FORMAT)
    out = {}
    for lineno, obj in rows:
        image_id = str(_require(obj, "image_id", lineno))
        box = _box(_require(obj, "box", lineno), "normalized", None, "box", lineno)
        out[image_id] = FinalPrediction(image_id, box, float(obj.get("confidence", 0.0)),
                                        Source(obj.get("source", "H2F")), int(obj.get("rank", 0)))
    return header, out


# embeddings --------------------------------------------------------------


class EmbeddingStore:
    """Mapping ``(image_id, model, rank) -> vector`` with a fixed dimension.

    ``model`` is ``"H2F"``/``"W2F"`` for candidate crops, ``"TEXT"`` for the
    query text (rank 0) and ``"FINAL"`` for the crop chosen by an ensemble.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self._data: Dict[Tuple[str, str, int], np.ndarray] = {}

    def __len__(self):
        return len(self._data)

    def __contains__(self, key):
        return key in self._data

    def keys(self):
        return list(self._data)

    def get(self, key, default=None):
        return self._data.get(key, default)

    def __getitem__(self, key):
        return self._data[key]

    def put(self, image_id, model, rank, vector) -> None:
        v = np.asarray(vector, dtype=np.float64).ravel()
        if v.size != self.dim:
            raise DimensionMismatch(f"embedding for {(image_id, model, rank)} has size {v.size}, expected {self.dim}")
        v = v.copy()
        v.setflags(write=False)
        self._data[(str(image_id), str(model), int(rank))] = v

    def text(self, image_id):
        return self._data.get((str(image_id), TEXT_KEY, 0))

    def save(self, path) -> None:
        keys = list(self._data)
        index = json.dumps([list(k) for k in keys]).encode("utf-8")
        matrix = np.stack([self._data[k] for k in keys]) if keys else np.zeros((0, self.dim))
        with open(Path(path), "wb") as fh:
            fh.write(EMBEDDING_MAGIC)
            fh.write(struct.pack("<III", self.dim, len(keys), len(index)))
            fh.write(index)
            fh.write(matrix.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        blob = Path(path).read_bytes()
        if blob[:8] != EMBEDDING_MAGIC:
            raise ParseError(f"{path}: not an embedding sidecar (bad magic)")
        try:
            dim, count, index_len = struct.unpack_from("<III", blob, 8)
        except struct.error as exc:
            raise ParseError(f"{path}: truncated header") from exc
        start = 20 + index_len
        try:
            keys = json.loads(blob[20:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: corrupt key index") from exc
        if len(keys) != count or len(blob) - start != count * dim * 8:
            raise ParseError(f"{path}: header declares {count}x{dim} but payload disagrees")
        matrix = np.frombuffer(blob, dtype="<f8", offset=start).reshape(count, dim)
        store = cls(dim)
        for (image_id, model, rank), row in zip(keys, matrix):
            store.put(image_id, model, rank, row)
        return store
