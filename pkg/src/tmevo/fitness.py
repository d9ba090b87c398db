"""Triple-metric fitness: attack strength, pixel sparsity, distance budget.

All three metrics are minimized. M1 averages the confidences the detector
still assigns to the original objects; M2 is the fraction of ground-truth box
pixels that were modified; M3 is the L2 distance to the original normalized
by the distance to the farther uniform (all-black or all-white) image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import DetectionSet
from .imaging import BoundingBox, diff_mask, iou, l2_norm, mask_from_boxes

__all__ = [
    "FitnessBreakdown",
    "GroundTruth",
    "GroundTruthError",
    "IOU_MATCH_THRESHOLD",
    "Weights",
    "m1_score",
    "m2_score",
    "m3_score",
    "make_ground_truth",
    "weighted_fitness",
]

IOU_MATCH_THRESHOLD = 0.5


class GroundTruthError(Exception):
    """The original image yields no detection above the attack threshold."""


@dataclass(frozen=True)
class Weights:
    w1: float
    w2: float
    w3: float

    def adapted(self) -> "Weights":
        """One plateau step: attack weight up 5%, noise weights down 5%."""
        return Weights(
            w1=min(1.0, self.w1 * 1.05),
            w2=max(0.0, self.w2 * 0.95),
            w3=max(0.0, self.w3 * 0.95),
        )


@dataclass(frozen=True)
class FitnessBreakdown:
    m1: float
    m2: float
    m3: float
    weighted: float


@dataclass
class GroundTruth:
    """Boxes the detector reports with high confidence on the original image,
    plus derived quantities reused on every fitness evaluation."""

    boxes: list[BoundingBox]
    n: int
    pixel_total: int
    i_uni_distance: float
    box_mask: np.ndarray          # (H, W) bool, union of boxes
    union_coords: np.ndarray      # (pixel_total, 2) int, row-major (y, x)


def make_ground_truth(
    image: np.ndarray, detector, confidence_threshold: float = 0.9
) -> GroundTruth:
    """Detect on the unmodified image and freeze the qualifying boxes.

    Raises GroundTruthError when nothing scores strictly above the threshold:
    such an image is not a valid attack subject.
    """
    dets = detector.detect(image)
    boxes = [d.box for d in dets.detections if d.score > confidence_threshold]
    if not boxes:
        raise GroundTruthError(
            f"no detection above {confidence_threshold} on the original image"
        )
    height, width = image.shape[0], image.shape[1]
    box_mask = mask_from_boxes(boxes, height, width)
    union_coords = np.argwhere(box_mask)
    d_black = float(np.sqrt(np.sum(image * image)))
    white = 1.0 - image
    d_white = float(np.sqrt(np.sum(white * white)))
    # ties go to the all-black reference
    i_uni_distance = d_black if d_black >= d_white else d_white
    return GroundTruth(
        boxes=boxes,
        n=len(boxes),
        pixel_total=int(box_mask.sum()),
        i_uni_distance=i_uni_distance,
        box_mask=box_mask,
        union_coords=union_coords,
    )


def m1_score(dets: DetectionSet, gt: GroundTruth) -> float:
    """Mean confidence the detector retains on the original objects.

    Each ground-truth box is matched to the detection of highest IoU, if any
    reaches the IoU threshold; unmatched boxes score 0. A detection may match
    more than one box. Ties on IoU go to the higher-scoring detection.
    """
    total = 0.0
    for box in gt.boxes:
        best_iou = 0.0
        best_score = 0.0
        for det in dets.detections:
            v = iou(box, det.box)
            if v < IOU_MATCH_THRESHOLD:
                continue
            if v > best_iou or (v == best_iou and det.score > best_score):
                best_iou = v
                best_score = det.score
        total += best_score
    return total / gt.n


def m2_score(modified_pixels: int | np.ndarray, gt: GroundTruth) -> float:
    """Modified-pixel count normalized by the ground-truth box pixel count."""
    if isinstance(modified_pixels, np.ndarray):
        modified_pixels = int(modified_pixels.sum())
    return modified_pixels / gt.pixel_total


def m3_score(original: np.ndarray, candidate: np.ndarray, gt: GroundTruth) -> float:
    """L2 distance from the original, normalized by the uniform-image
    distance. Equals 1.0 exactly when the candidate is the reference uniform
    image."""
    return l2_norm(original, candidate) / gt.i_uni_distance


def weighted_fitness(m1: float, m2: float, m3: float, w: Weights) -> float:
    return w.w1 * m1 + w.w2 * m2 + w.w3 * m3
