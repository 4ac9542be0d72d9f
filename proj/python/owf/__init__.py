"""Open-world object detection with teacher-assisted down-weight training."""

from ._core import (
    Box,
    Error,
    NumericFault,
    ValidationError,
    focal,
    giou,
    giou_loss,
    hungarian,
    iou,
    l1_box_loss,
    nms,
    run,
    synthetic_corpus,
)

__all__ = [
    "Box",
    "Error",
    "NumericFault",
    "ValidationError",
    "focal",
    "giou",
    "giou_loss",
    "hungarian",
    "iou",
    "l1_box_loss",
    "nms",
    "run",
    "synthetic_corpus",
]
