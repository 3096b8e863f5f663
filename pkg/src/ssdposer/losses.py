"""Training objective: weighted sum of rotation, position and root-orientation
L2 losses, each a mean of per-sample Euclidean norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import PoseSequence, forward_kinematics
from .nn import Tensor, as_tensor, norm
from .skeleton import Skeleton


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.02

    def __post_init__(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_rot: Tensor
    l_pos: Tensor
    l_ori: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("total", "l_rot", "l_pos", "l_ori")}


def _pose_arrays(pose) -> tuple:
    if isinstance(pose, PoseSequence):
        return pose.rotations6d, pose.root_translation
    return pose


def compute_loss(pred, gt, skel: Skeleton, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Loss between predicted and ground-truth local 6D rotations.

    ``pred`` is a :class:`PoseSequence` or a (rotations6d, root_translation)
    pair whose rotations may be a graph-carrying tensor of shape
    (..., T, 22, 6). ``l_rot`` covers the non-root joints, ``l_ori`` the root
    (global orientation), and ``l_pos`` every FK joint position.
    """
    pred_rot, pred_trans = _pose_arrays(pred)
    gt_rot, gt_trans = _pose_arrays(gt)
    pred_rot = as_tensor(pred_rot)
    gt_rot = Tensor(np.asarray(gt_rot))
    if pred_rot.shape != gt_rot.shape:
        raise ValueError(f"prediction shape {pred_rot.shape} != ground truth shape {gt_rot.shape}")
    residual = pred_rot - gt_rot
    l_rot = norm(residual[..., 1:, :]).mean()
    l_ori = norm(residual[..., 0, :]).mean()
    pred_pos, _ = forward_kinematics(pred_rot, pred_trans, skel)
    gt_pos, _ = forward_kinematics(gt_rot, gt_trans, skel)
    l_pos = norm(pred_pos - gt_pos.detach()).mean()
    total = weights.alpha * l_rot + weights.beta * l_pos + weights.gamma * l_ori
    return LossBreakdown(l_rot, l_pos, l_ori, total)
