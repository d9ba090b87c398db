"""Black-box adversarial attacks on object detectors via evolutionary search."""

from .detector import (
    CountingDetector,
    Detection,
    DetectionSet,
    DetectorError,
    ProtocolError,
    RemoteDetector,
    SyntheticBox,
    SyntheticDetector,
    SyntheticSpec,
    TransportError,
    generate_scenario,
    load_scenario,
    save_scenario,
)
from .evolution import (
    AttackResult,
    Individual,
    MODE_BASELINE,
    MODE_TM_EVO,
    SearchConfig,
    run_attack,
)
from .fitness import (
    FitnessBreakdown,
    GroundTruth,
    GroundTruthError,
    Weights,
    make_ground_truth,
)
from .harness import Subject, run_experiment, wilcoxon_rank_sum, write_report
from .imaging import (
    BoundingBox,
    clamp_image,
    diff_mask,
    iou,
    l0_norm,
    l2_norm,
    load_image,
    save_image,
)

__version__ = "0.1.0"

__all__ = [
    "AttackResult",
    "BoundingBox",
    "CountingDetector",
    "Detection",
    "DetectionSet",
    "DetectorError",
    "FitnessBreakdown",
    "GroundTruth",
    "GroundTruthError",
    "Individual",
    "MODE_BASELINE",
    "MODE_TM_EVO",
    "ProtocolError",
    "RemoteDetector",
    "SearchConfig",
    "Subject",
    "SyntheticBox",
    "SyntheticDetector",
    "SyntheticSpec",
    "TransportError",
    "Weights",
    "clamp_image",
    "diff_mask",
    "generate_scenario",
    "iou",
    "l0_norm",
    "l2_norm",
    "load_image",
    "load_scenario",
    "make_ground_truth",
    "run_attack",
    "run_experiment",
    "save_image",
    "save_scenario",
    "wilcoxon_rank_sum",
    "write_report",
]
