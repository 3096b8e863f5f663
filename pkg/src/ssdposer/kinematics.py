"""6D rotations, forward kinematics and synthesis of the sparse tracker input.

The rotation and FK routines are written against :class:`~ssdposer.nn.Tensor`
so the training losses can differentiate through them; passing plain arrays
works too and returns tensors without a graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Tensor, as_tensor, cross, default_dtype, no_grad, norm, stack
from .skeleton import NUM_JOINTS, TRACKER_JOINTS, Skeleton

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
TRACKER_WIDTH = 18
INPUT_WIDTH = TRACKER_WIDTH * len(TRACKER_JOINTS)


class DegenerateRotationError(ValueError):
    """A 6D rotation whose columns are zero or parallel."""


@dataclass
class PoseSequence:
    """Local joint rotations (T, 22, 6) and root translation (T, 3) in metres."""

    rotations6d: np.ndarray
    root_translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotations6d = np.asarray(self.rotations6d)
        self.root_translation = np.asarray(self.root_translation)
        T = self.rotations6d.shape[0]
        if self.rotations6d.shape[1:] != (NUM_JOINTS, 6):
            raise ValueError(f"rotations must be (T, {NUM_JOINTS}, 6), got {self.rotations6d.shape}")
        if self.root_translation.shape != (T, 3):
            raise ValueError(f"root translation must be ({T}, 3), got {self.root_translation.shape}")

    @property
    def num_frames(self) -> int:
        return self.rotations6d.shape[0]

    def flat(self) -> np.ndarray:
        return self.rotations6d.reshape(self.num_frames, NUM_JOINTS * 6)

    def window(self, start: int, length: int) -> "PoseSequence":
        stop = start + length
        return PoseSequence(self.rotations6d[start:stop].copy(), self.root_translation[start:stop].copy())


def rot6d_to_matrix(r, eps: float = 1e-8) -> Tensor:
    """Gram-Schmidt decode of (..., 6) into (..., 3, 3) rotation matrices.

    The six numbers are the first two matrix columns; the third column is
    their cross product after orthonormalisation.
    """
    r = as_tensor(r)
    if r.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {r.shape}")
    a1, a2 = r[..., 0:3], r[..., 3:6]
    n1 = norm(a1, keepdims=True)
    if (n1.data <= eps).any():
        raise DegenerateRotationError("first 6D column is zero")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    # second projection pass: restores orthogonality lost to cancellation
    # when the columns are nearly parallel (matters in float32)
    u2 = u2 - (b1 * u2).sum(axis=-1, keepdims=True) * b1
    n2 = norm(u2, keepdims=True)
    scale = np.maximum(np.linalg.norm(a2.data, axis=-1, keepdims=True), eps)
    if (n2.data <= 1e-6 * scale).any() or (n2.data <= eps).any():
        raise DegenerateRotationError("6D columns are parallel or the second is zero")
    b2 = u2 / n2
    b3 = cross(b1, b2)
    return stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R) -> np.ndarray:
    """First two columns of (..., 3, 3) matrices, column-major."""
    R = np.asarray(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_matrix(aa) -> np.ndarray:
    """Rodrigues' formula for (..., 3) axis-angle vectors."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = aa / np.where(small, 1.0, theta)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack([
        np.stack([zero, -z, y], -1),
        np.stack([z, zero, -x], -1),
        np.stack([-y, x, zero], -1),
    ], -2)
    th = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)
    return np.where(small[..., None], eye, R)


def geodesic_angle(R1, R2) -> np.ndarray:
    """Rotation angle of ``R1^T R2`` in radians.

    Uses the chord length ``|R1 - R2|_F = 2 sqrt(2) sin(theta / 2)``, which
    is exactly zero for equal inputs and well conditioned at small angles,
    unlike ``arccos`` of the trace.
    """
    chord = np.linalg.norm(np.asarray(R1) - np.asarray(R2), axis=(-2, -1))
    return 2.0 * np.arcsin(np.clip(chord / (2.0 * np.sqrt(2.0)), 0.0, 1.0))


def forward_kinematics(rotations, root_translation, skel: Skeleton,
                       rotations_are_matrices: bool = False) -> tuple[Tensor, Tensor]:
    """Global joint positions (..., J, 3) and rotations (..., J, 3, 3).

    ``rotations`` holds local rotations, either 6D (..., J, 6) or matrices
    (..., J, 3, 3). The root sits at ``root_translation + offsets[0]``.
    """
    local = as_tensor(rotations)
    if not rotations_are_matrices:
        local = rot6d_to_matrix(local)
    trans = as_tensor(root_translation)
    J = skel.num_joints
    if local.shape[-3] != J:
        raise ValueError(f"expected {J} joints, got {local.shape[-3]}")
    offsets = skel.offsets.astype(local.dtype)
    glob: list[Tensor] = []
    pos: list[Tensor] = []
    for j in range(J):
        Rj = local[..., j, :, :]
        p = skel.parents[j]
        if p < 0:
            glob.append(Rj)
            pos.append(trans + Tensor(offsets[j]))
        else:
            Rp = glob[p]
            glob.append(Rp @ Rj)
            pos.append(pos[p] + (Rp @ Tensor(offsets[j][:, None]))[..., 0])
    return stack(pos, axis=-2), stack(glob, axis=-3)


def joint_positions(pose: PoseSequence, skel: Skeleton) -> np.ndarray:
    """Non-differentiable FK in float64, returning (T, J, 3) positions."""
    with no_grad(), default_dtype(np.float64):
        pos, _ = forward_kinematics(pose.rotations6d, pose.root_translation, skel)
    return pos.data


def build_tracker_input(pose: PoseSequence, skel: Skeleton, fps: float = 60.0) -> np.ndarray:
    """Sparse head/hand signals (T, 54) derived from a full-body sequence.

    Per tracker and frame: position (3), linear velocity (3), global
    rotation in 6D (6), and the 6D encoding of the frame-to-frame relative
    rotation ``R_{t-1}^T R_t`` (6). Frame 0 reuses frame 1's velocities.
    """
    T = pose.num_frames
    if T < 2:
        raise ValueError("tracker synthesis needs at least 2 frames")
    with no_grad(), default_dtype(np.float64):
        pos, glob = forward_kinematics(pose.rotations6d, pose.root_translation, skel)
    idx = list(TRACKER_JOINTS)
    p = pos.data[:, idx]
    R = glob.data[:, idx]
    v = np.empty_like(p)
    v[1:] = (p[1:] - p[:-1]) * fps
    v[0] = v[1]
    rel = np.empty_like(R)
    rel[1:] = np.swapaxes(R[:-1], -1, -2) @ R[1:]
    rel[0] = rel[1]
    feats = np.concatenate([p, v, matrix_to_rot6d(R), matrix_to_rot6d(rel)], axis=-1)
    return feats.reshape(T, INPUT_WIDTH)


__all__ = [
    "DegenerateRotationError", "IDENTITY_6D", "INPUT_WIDTH", "PoseSequence",
    "axis_angle_to_matrix", "build_tracker_input", "forward_kinematics",
    "geodesic_angle", "joint_positions", "matrix_to_rot6d", "rot6d_to_matrix",
]
