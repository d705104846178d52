"""Numeric core for monocular 3D detection.

Box geometry and orientation codecs, the MGIoU overlap surrogate, 2D/3D-aware
prediction-to-ground-truth assignment, the supervised and distillation loss
suite, a deterministic head-forward engine with confidence-gated inference
proven bitwise-equal to dense evaluation, and a KITTI-protocol AP evaluator,
all on plain numpy arrays.
"""

from .detections import Detection, GroundTruthObject, Prediction
from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    OrientationMultiBin,
    allocentric_to_egocentric,
    backproject,
    bev_polygon,
    corners_3d,
    egocentric_to_allocentric,
    gram_schmidt_6d,
    iou_2d,
    iou_3d,
    multibin_decode,
    multibin_encode,
    project,
    rotated_iou_bev,
    rotation_to_yaw,
    yaw_to_rotation,
)
from .mgiou import Interval, giou_1d, mgiou_3d, mgiou_clamped
from .matching import AssignmentResult, MatchConfig, assign, candidate_anchors, score_2d, score_2d3d
from .losses import (
    LossWeights,
    bce_cls,
    depth_laplacian,
    l1_term,
    orientation_multibin_loss,
    orientation_so3_loss,
    total_loss,
)
from .distill import (
    DistillPair,
    ImportanceWeights,
    distill_loss,
    importance_omega,
    mixup_blend,
    pair_teacher_student,
    quality_eta,
)
from .heads import (
    FeatureMapSet,
    HeadParams,
    HeadSet,
    conv2d,
    flop_count_dense,
    flop_count_gated,
    head_forward,
)
from .inference import SelectedCenter, dense_classify, decode_detections, infer, topk_select
from .eval_kitti import Difficulty, EvalReport, ap_r40, difficulty_filter, evaluate, match_for_pr
from .dataio import KittiObject, RunConfig, load_config, parse_kitti_calib, parse_kitti_label_line
from .synthetic import NoiseSpec, SceneSpec, generate_scene, perturb

__version__ = "0.1.0"
