"""Probabilistic merging of overlapping detections in densely packed scenes."""
from .baselines import DimStats, greedy_nms, monkey
from .em_merger import (
    Detection,
    EMResult,
    MergeConfig,
    MergedBox,
    Mixture,
    NoDetectionsError,
    ScoreSource,
    build_mixture,
    e_step,
    em_reduce,
    estimate_k,
    extract_boxes,
    init_clusters,
    m_step,
    merge,
    objective,
    suppress,
)
from .gaussian import BoxGaussian, box_to_gaussian, gaussian_to_box, kl_divergence, mahalanobis_sq
from .geometry import Box, from_corner, iou, to_corner
from .metrics import (
    EvalReport,
    average_precision,
    average_recall,
    count_errors,
    evaluate,
    match_detections,
    precision_at_recall,
    soft_iou_loss,
    soft_iou_targets,
)
from .synth import SceneSpec, generate_scene, simulate_detections

__version__ = "0.1.0"
