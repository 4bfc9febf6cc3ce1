"""Multi-angle feature aggregation segmentation."""

from ._core import (
    Config,
    Model,
    aggregate,
    align,
    angle_set,
    contour_band,
    cross_entropy_seg_loss,
    dice_contour_loss,
    dsc,
    generate_synthetic,
    gradcheck,
    iou,
    iou_nb,
    load_dataset,
    mafa_features,
    near_boundary_band,
    rotate,
    rotational_stats,
    set_thread_count,
)

__all__ = [
    "Config",
    "Model",
    "aggregate",
    "align",
    "angle_set",
    "contour_band",
    "cross_entropy_seg_loss",
    "dice_contour_loss",
    "dsc",
    "generate_synthetic",
    "gradcheck",
    "iou",
    "iou_nb",
    "load_dataset",
    "mafa_features",
    "near_boundary_band",
    "rotate",
    "rotational_stats",
    "set_thread_count",
]
