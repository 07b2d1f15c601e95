"""Two-stage detection/segmentation pipeline and the model file.

Stage 1 runs on the full depth map; its thresholded probability map is
split into 4-connected blobs whose margin-expanded bounding boxes become
ROIs. Stage 2 only evaluates pixels inside those ROIs, optionally smooths
its probabilities with the depth-guided bilateral filter, and thresholds
them into the final mask.

Model file layout (JSON, UTF-8, keys in this order, no whitespace)::

    {"format": "handseg-cascade", "version": 1,
     "conventions": {"split": "feature<theta:left", "log_base": 2, "threshold": "p>=boundary"},
     "boundary1": float, "boundary2": float, "roi_margin": int, "min_blob_area": int,
     "stage1_stride": int, "filter": {window, sigma_r, sigma_s, max_depth_diff} | null,
     "stage1": forest | null, "stage2": forest | null}

where a forest is ``{"convention", "log_base", "config": {...}, "trees": [...]}``
and a tree is parallel node arrays ``left, right, u, v, theta, posterior,
support`` (``left = -1`` marks a leaf; ``u``/``v`` are flattened pairs).
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from .forest import LOG_BASE, SPLIT_CONVENTION, Forest, TrainConfig
from .inference import PackedForest, infer_map
from .postprocess import FilterConfig, SweepResult, bilateral_filter, sweep_boundary
from .raster import DepthMap, LabelMask, ProbabilityMap, Roi, SamplePair, roi_mask
from .training import train_forest

__all__ = [
    "CascadeModel",
    "ModelFormatError",
    "detect_rois",
    "merge_rois",
    "run_cascade",
    "stage2_training_rois",
    "ground_truth_rois",
    "train_cascade",
    "save_model",
    "load_model",
    "dumps_model",
    "loads_model",
]

log = logging.getLogger(__name__)

FORMAT_NAME = "handseg-cascade"
FORMAT_VERSION = 1
THRESHOLD_CONVENTION = "p>=boundary"

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class ModelFormatError(ValueError):
    pass


@dataclass
class CascadeModel:
    stage1: Forest | None
    stage2: Forest | None
    boundary1: float = 0.5
    boundary2: float = 0.5
    roi_margin: int = 20
    min_blob_area: int = 50
    filter: FilterConfig | None = FilterConfig()
    stage1_stride: int = 1

    def __post_init__(self):
        for name in ("boundary1", "boundary2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.roi_margin < 0:
            raise ValueError("roi_margin must be >= 0")
        if self.min_blob_area < 1:
            raise ValueError("min_blob_area must be >= 1")
        if self.stage1_stride < 1:
            raise ValueError("stage1_stride must be >= 1")
        self._packed: dict[int, PackedForest] = {}

    def packed(self, stage: int) -> PackedForest:
        forest = self.stage1 if stage == 1 else self.stage2
        if forest is None:
            raise ValueError(f"model has no stage-{stage} forest")
        key = id(forest)
        if key not in self._packed:
            self._packed = {k: v for k, v in self._packed.items() if k in (id(self.stage1), id(self.stage2))}
            self._packed[key] = PackedForest(forest)
        return self._packed[key]


# ---------------------------------------------------------------------
# ROI extraction
# ---------------------------------------------------------------------
def merge_rois(rois: Sequence[Roi]) -> list[Roi]:
    """Replace overlapping boxes by their bounding box until none overlap."""
    boxes = list(rois)
    merged = True
    while merged:
        merged = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if boxes[i].overlaps(boxes[j]):
                    boxes[i] = boxes[i].union(boxes[j])
                    del boxes[j]
                    merged = True
                    break
            if merged:
                break
    return sorted(boxes, key=lambda r: (r.y0, r.x0))


def detect_rois(prob: ProbabilityMap, boundary: float, margin: int = 20,
                min_area: int = 50) -> list[Roi]:
    """ROIs around the 4-connected blobs of ``prob >= boundary``.

    Blobs smaller than *min_area* pixels are dropped; each remaining blob's
    bounding box is grown by *margin* on every side, clamped to the raster,
    and overlapping boxes are merged.
    """
    if not 0.0 <= boundary <= 1.0:
        raise ValueError("boundary must lie in [0, 1]")
    positive = prob.data >= boundary
    labels, n = ndimage.label(positive, structure=_FOUR_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    boxes = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[k] < min_area:
            continue
        ys, xs = sl
        box = Roi.from_bounds(xs.start, ys.start, xs.stop, ys.stop)
        boxes.append(box.expand(margin).clamp(prob.width, prob.height))
    return merge_rois(boxes)


def ground_truth_rois(labels: LabelMask, margin: int) -> list[Roi]:
    """Tight bounding box of the foreground, grown by *margin* and clamped."""
    ys, xs = np.nonzero(labels.data)
    if ys.size == 0:
        return []
    box = Roi.from_bounds(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
    return [box.expand(margin).clamp(labels.width, labels.height)]


# ---------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------
def stage2_probability(model: CascadeModel, depth: DepthMap, rois: Sequence[Roi],
                       use_filter: bool = True,
                       timings: dict | None = None) -> ProbabilityMap:
    t0 = time.perf_counter()
    if not rois:
        prob = ProbabilityMap(np.zeros((depth.height, depth.width)))
    else:
        prob = infer_map(model.packed(2), depth, rois)
    t1 = time.perf_counter()
    if use_filter and model.filter is not None and rois:
        prob = bilateral_filter(prob, depth, model.filter, rois)
    t2 = time.perf_counter()
    if timings is not None:
        timings["stage2_ms"] = (t1 - t0) * 1e3
        timings["filter_ms"] = (t2 - t1) * 1e3
    return prob


def run_cascade(model: CascadeModel, depth: DepthMap, use_filter: bool = True,
                timings: dict | None = None) -> tuple[ProbabilityMap, LabelMask, list[Roi]]:
    """Segment *depth*; returns (final probability map, mask, ROIs).

    When a *timings* dict is given it receives per-phase wall times in
    milliseconds (``stage1_ms``, ``rois_ms``, ``stage2_ms``, ``filter_ms``,
    ``total_ms``).
    """
    t0 = time.perf_counter()
    p1 = infer_map(model.packed(1), depth, stride=model.stage1_stride)
    t1 = time.perf_counter()
    rois = detect_rois(p1, model.boundary1, model.roi_margin, model.min_blob_area)
    t2 = time.perf_counter()
    prob = stage2_probability(model, depth, rois, use_filter, timings)
    inside = roi_mask(rois, depth.width, depth.height) & depth.valid
    mask = LabelMask((prob.data >= model.boundary2) & inside)
    t3 = time.perf_counter()
    if timings is not None:
        timings["stage1_ms"] = (t1 - t0) * 1e3
        timings["rois_ms"] = (t2 - t1) * 1e3
        timings["total_ms"] = (t3 - t0) * 1e3
    return prob, mask, rois


# ---------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------
def stage2_training_rois(stage1: Forest, dataset: Sequence[SamplePair], boundary: float,
                         margin: int, min_area: int, stride: int = 1) -> list[list[Roi]]:
    packed = PackedForest(stage1)
    return [detect_rois(infer_map(packed, p.depth, stride=stride), boundary, margin, min_area)
            for p in dataset]


def train_cascade(train: Sequence[SamplePair], val: Sequence[SamplePair] | None = None,
                  cfg: TrainConfig = TrainConfig(), *, boundary1: float = 0.5,
                  boundary2: float = 0.5, roi_margin: int = 20, min_blob_area: int = 50,
                  filter: FilterConfig | None = FilterConfig(), gt_rois: bool = False,
                  step: float = 0.01) -> tuple[CascadeModel, SweepResult | None]:
    """Train both stages and, given *val*, sweep the stage-2 boundary on it.

    Stage 2 trains inside the ROIs that stage 1 detects on the training
    images, or inside ground-truth boxes when *gt_rois* is set. Stage 2
    uses ``cfg.rng_seed + cfg.num_trees`` as its base seed so the two
    stages never share a random stream.
    """
    log.info("training stage 1 on %d images", len(train))
    stage1 = train_forest(train, None, cfg)
    if gt_rois:
        rois = [ground_truth_rois(p.labels, roi_margin) for p in train]
    else:
        rois = stage2_training_rois(stage1, train, boundary1, roi_margin, min_blob_area)
    log.info("training stage 2 on %d ROIs", sum(len(r) for r in rois))
    stage2 = train_forest(train, rois, replace(cfg, rng_seed=cfg.rng_seed + cfg.num_trees))
    model = CascadeModel(stage1, stage2, boundary1, boundary2, roi_margin, min_blob_area, filter)
    sweep = None
    if val:
        sweep = sweep_stage(model, val, 2, step)
        model.boundary2 = sweep.best_boundary
    return model, sweep


def stage_probabilities(model: CascadeModel, dataset: Sequence[SamplePair], stage: int,
                        use_filter: bool = True) -> list[ProbabilityMap]:
    """Probability maps a boundary sweep of *stage* should see."""
    if stage == 1:
        packed = model.packed(1)
        return [infer_map(packed, p.depth, stride=model.stage1_stride) for p in dataset]
    if stage != 2:
        raise ValueError("stage must be 1 or 2")
    out = []
    for p in dataset:
        p1 = infer_map(model.packed(1), p.depth, stride=model.stage1_stride)
        rois = detect_rois(p1, model.boundary1, model.roi_margin, model.min_blob_area)
        out.append(stage2_probability(model, p.depth, rois, use_filter))
    return out


def sweep_stage(model: CascadeModel, dataset: Sequence[SamplePair], stage: int,
                step: float = 0.01, use_filter: bool = True) -> SweepResult:
    probs = stage_probabilities(model, dataset, stage, use_filter)
    return sweep_boundary(probs, [p.labels for p in dataset], step)


# ---------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------
def _model_dict(model: CascadeModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "conventions": {"split": SPLIT_CONVENTION, "log_base": LOG_BASE, "threshold": THRESHOLD_CONVENTION},
        "boundary1": float(model.boundary1),
        "boundary2": float(model.boundary2),
        "roi_margin": int(model.roi_margin),
        "min_blob_area": int(model.min_blob_area),
        "stage1_stride": int(model.stage1_stride),
        "filter": None if model.filter is None else model.filter.to_dict(),
        "stage1": None if model.stage1 is None else model.stage1.to_dict(),
        "stage2": None if model.stage2 is None else model.stage2.to_dict(),
    }


def dumps_model(model: CascadeModel) -> str:
    return json.dumps(_model_dict(model), separators=(",", ":"), allow_nan=False)


def loads_model(text: str) -> CascadeModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model is not valid JSON: {exc}") from exc
    if not isinstance(d, dict) or d.get("format") != FORMAT_NAME:
        raise ModelFormatError("not a handseg cascade model")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')}")
    conv = d.get("conventions", {})
    expected = {"split": SPLIT_CONVENTION, "log_base": LOG_BASE, "threshold": THRESHOLD_CONVENTION}
    if conv != expected:
        raise ModelFormatError(f"model conventions {conv} differ from {expected}")
    try:
        return CascadeModel(
            stage1=None if d["stage1"] is None else Forest.from_dict(d["stage1"]),
            stage2=None if d["stage2"] is None else Forest.from_dict(d["stage2"]),
            boundary1=float(d["boundary1"]),
            boundary2=float(d["boundary2"]),
            roi_margin=int(d["roi_margin"]),
            min_blob_area=int(d["min_blob_area"]),
            filter=None if d["filter"] is None else FilterConfig.from_dict(d["filter"]),
            stage1_stride=int(d.get("stage1_stride", 1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from exc


def save_model(model: CascadeModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))


def load_model(path: str | os.PathLike) -> CascadeModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
