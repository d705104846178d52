"""Denoising distillation: mixup blending, teacher/student pairing, weighted feature loss.

The student sees a pixel-blended image carrying the union of both source
images' objects; the teacher sees each clean image. Each ground truth is
matched one-to-one against teacher predictions of its source image and
against student predictions of the blended image; only doubly matched
instances contribute. The feature loss reweights the per-channel L1 by the
teacher's depth quality eta and the per-channel importance omega derived
from the depth head's final weight vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detections import GroundTruthObject, Prediction
from .matching import ONE_TO_ONE, MatchConfig, assign

FEATURE_DIM = 64


@dataclass(frozen=True, eq=False)
class DistillPair:
    """Teacher/student depth features for one matched ground-truth instance."""

    feat_teacher: np.ndarray
    feat_student: np.ndarray
    z_gt: float
    z_teacher: float
    image_index: int = 0
    instance_index: int = 0

    def __post_init__(self):
        ft = np.asarray(self.feat_teacher, dtype=np.float64).reshape(-1)
        fs = np.asarray(self.feat_student, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "feat_teacher", ft)
        object.__setattr__(self, "feat_student", fs)
        if ft.shape != (FEATURE_DIM,) or fs.shape != (FEATURE_DIM,):
            raise ValueError(
                f"depth features must be {FEATURE_DIM}-vectors, got {ft.shape} and {fs.shape}"
            )
        if self.z_gt <= 0.0:
            raise ValueError(f"ground-truth depth must be positive, got {self.z_gt}")


@dataclass(frozen=True, eq=False)
class ImportanceWeights:
    """Normalized per-channel importance (non-negative, sums to 1)."""

    omega: np.ndarray

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "omega", om)
        if om.shape != (FEATURE_DIM,):
            raise ValueError(f"omega must be a {FEATURE_DIM}-vector, got {om.shape}")
        if np.any(om < 0.0) or abs(om.sum() - 1.0) > 1e-12:
            raise ValueError("omega entries must be non-negative and sum to 1")


def quality_eta(z: float, z_hat_teacher: float, epsilon: float = 0.1, cap: float | None = None) -> float:
    """Teacher quality weight z / max(|z - z_hat|, epsilon).

    Relative (not absolute) error keeps far objects from being systematically
    down-weighted. cap optionally bounds the weight from above (off by default).
    """
    if z <= 0.0:
        raise ValueError(f"ground-truth depth must be positive, got {z}")
    eta = z / max(abs(z - z_hat_teacher), epsilon)
    if cap is not None:
        eta = min(eta, cap)
    return eta


def importance_omega(w_final: np.ndarray) -> ImportanceWeights:
    """Normalized absolute weights of the depth head's final 1x1 convolution."""
    w = np.asarray(w_final, dtype=np.float64).reshape(-1)
    if w.shape != (FEATURE_DIM,):
        raise ValueError(f"final weight vector must have {FEATURE_DIM} channels, got {w.shape}")
    total = np.abs(w).sum()
    if total <= 0.0:
        raise ValueError("all-zero weight vector has no defined importance")
    return ImportanceWeights(np.abs(w) / total)


def distill_loss(
    pairs: list[DistillPair],
    omega: ImportanceWeights | np.ndarray,
    etas: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Quality- and importance-weighted L1 over paired depth features.

    loss = (1/N) * sum_pairs eta_p * sum_q omega_q * |F_T - F_S|
    with N = number of pairs. Returns (loss, gradient w.r.t. student features)
    of shape (N, 64).
    """
    if len(pairs) == 0:
        raise ValueError("distill_loss requires at least one teacher/student pair")
    om = omega.omega if isinstance(omega, ImportanceWeights) else np.asarray(omega, dtype=np.float64)
    etas = np.asarray(etas, dtype=np.float64).reshape(-1)
    if etas.shape[0] != len(pairs):
        raise ValueError(f"expected {len(pairs)} eta weights, got {etas.shape[0]}")
    n = len(pairs)
    ft = np.stack([p.feat_teacher for p in pairs])
    fs = np.stack([p.feat_student for p in pairs])
    diff = ft - fs
    loss = float((etas[:, None] * om[None, :] * np.abs(diff)).sum() / n)
    grad_student = -etas[:, None] * om[None, :] * np.sign(diff) / n
    return loss, grad_student


def mixup_blend(
    img_a: np.ndarray,
    img_b: np.ndarray,
    ratio: float = 0.5,
    labels_a: list = (),
    labels_b: list = (),
) -> tuple[np.ndarray, list[tuple[object, int]]]:
    """Pixelwise blend ratio*a + (1-ratio)*b; labels become the tagged union.

    Each returned label is (object, source) with source 0 for img_a, 1 for img_b.
    """
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image shape mismatch: {img_a.shape} vs {img_b.shape}")
    blended = ratio * img_a + (1.0 - ratio) * img_b
    labels = [(lab, 0) for lab in labels_a] + [(lab, 1) for lab in labels_b]
    return blended, labels


def pair_teacher_student(
    gts_by_image: list[list[GroundTruthObject]],
    teacher_preds_by_image: list[list[Prediction]],
    student_preds: list[Prediction],
    centers: np.ndarray,
    cfg: MatchConfig,
) -> tuple[list[DistillPair], int]:
    """Build distillation pairs for the union label set of a mixup image.

    Teacher matching runs one-to-one per clean source image; student matching
    runs once against the union of ground truths. A pair is emitted only when
    a ground truth is matched on both sides; the second return value counts
    the ground truths left unpaired.
    """
    if len(gts_by_image) != len(teacher_preds_by_image):
        raise ValueError("need one teacher prediction set per clean image")
    union_gts = [gt for per_image in gts_by_image for gt in per_image]
    student_match = {
        j: i for j, i, _ in assign(union_gts, student_preds, centers, cfg, ONE_TO_ONE).pairs
    }
    pairs: list[DistillPair] = []
    unpaired = 0
    offset = 0
    for n, (gts_n, teacher_preds) in enumerate(zip(gts_by_image, teacher_preds_by_image)):
        teacher_match = {
            j: i for j, i, _ in assign(gts_n, teacher_preds, centers, cfg, ONE_TO_ONE).pairs
        }
        for i_gt, gt in enumerate(gts_n):
            t_anchor = teacher_match.get(i_gt)
            s_anchor = student_match.get(offset + i_gt)
            if t_anchor is None or s_anchor is None:
                unpaired += 1
                continue
            t_pred = teacher_preds[t_anchor]
            s_pred = student_preds[s_anchor]
            if t_pred.depth_feature is None or s_pred.depth_feature is None:
                raise ValueError("distillation pairing requires depth features on both sides")
            pairs.append(
                DistillPair(
                    feat_teacher=t_pred.depth_feature,
                    feat_student=s_pred.depth_feature,
                    z_gt=gt.box3d.z,
                    z_teacher=t_pred.z,
                    image_index=n,
                    instance_index=i_gt,
                )
            )
        offset += len(gts_n)
    return pairs, unpaired
