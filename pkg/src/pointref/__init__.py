"""Pointing-gesture heatmaps, dual-model ensembling and evaluation for embodied reference understanding."""

from .boxes import BBox, giou, iou
from .ensemble import (
    Candidate,
    EnsembleConfig,
    EnsembleInput,
    PointingEnsemble,
    QueryContext,
    Source,
    cape,
    clip_fusion,
    clip_only_top1,
    clip_only_top2_threshold,
    clip_sim,
    confidence_only,
)
from .geometry import (
    GesturalKeypoints,
    Point2,
    RaySegment,
    alignment_cosine,
    angular_deviation,
    extend_ray_to_border,
    point_segment_distance,
)
from .heatmap import (
    HeatmapSpec,
    PointingHeatmap,
    RasterHeatmap,
    conic_heatmap,
    gaussian_ray_heatmap,
    merge_heatmaps,
    render_heatmap,
)
from .losses import LossWeights, box_loss, center_loss, gesture_loss, referent_alignment_loss, total_loss
from .metrics import EvalRecord, SizeBucket, bucket_of, build_report, center_distance, clip_metric, map_at

__version__ = "0.1.0"
