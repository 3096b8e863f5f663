"""Evaluation metrics: rotation, position and velocity errors plus jitter.

Units follow the usual reporting convention: degrees, centimetres,
centimetres per second, and 10^2 m/s^3 for jitter.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

import numpy as np

from .kinematics import PoseSequence, geodesic_angle, joint_positions, rot6d_to_matrix
from .nn import default_dtype, no_grad
from .skeleton import HAND_JOINTS, LOWER_JOINTS, ROOT_JOINTS, UPPER_JOINTS, Skeleton

COLUMNS = ("MPJRE", "MPJPE", "MPJVE", "Hand PE", "Upper PE", "Lower PE", "Root PE", "Jitter", "GT Jitter")


@dataclass
class MetricReport:
    mpjre: float
    mpjpe: float
    mpjve: float
    hand_pe: float
    upper_pe: float
    lower_pe: float
    root_pe: float
    jitter: float
    jitter_gt: float

    def values(self) -> tuple[float, ...]:
        return astuple(self)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(COLUMNS, self.values()))

    @classmethod
    def mean(cls, reports: list["MetricReport"]) -> "MetricReport":
        if not reports:
            raise ValueError("cannot average an empty list of reports")
        arr = np.array([r.values() for r in reports], dtype=np.float64)
        return cls(*(float(v) for v in arr.mean(axis=0)))


def jitter(positions: np.ndarray, fps: float) -> float:
    """Mean norm of the third time derivative of (T, J, 3) positions, in 10^2 m/s^3."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] < 4:
        raise ValueError("jitter needs at least 4 frames")
    third = positions[3:] - 3 * positions[2:-1] + 3 * positions[1:-2] - positions[:-3]
    return float(np.linalg.norm(third * fps ** 3, axis=-1).mean() / 100.0)


def position_metrics(pred_pos: np.ndarray, gt_pos: np.ndarray, fps: float) -> dict[str, float]:
    """MPJPE, subset PEs (cm), MPJVE (cm/s) and jitter from joint positions in metres."""
    pred_pos = np.asarray(pred_pos, dtype=np.float64)
    gt_pos = np.asarray(gt_pos, dtype=np.float64)
    if pred_pos.shape != gt_pos.shape:
        raise ValueError(f"position shapes differ: {pred_pos.shape} vs {gt_pos.shape}")
    if pred_pos.shape[0] < 4:
        raise ValueError("metrics need at least 4 frames")
    err = np.linalg.norm(pred_pos - gt_pos, axis=-1) * 100.0
    dv = (np.diff(pred_pos, axis=0) - np.diff(gt_pos, axis=0)) * fps
    return {
        "mpjpe": float(err.mean()),
        "hand_pe": float(err[:, list(HAND_JOINTS)].mean()),
        "upper_pe": float(err[:, list(UPPER_JOINTS)].mean()),
        "lower_pe": float(err[:, list(LOWER_JOINTS)].mean()),
        "root_pe": float(err[:, list(ROOT_JOINTS)].mean()),
        "mpjve": float(np.linalg.norm(dv, axis=-1).mean() * 100.0),
        "jitter": jitter(pred_pos, fps),
        "jitter_gt": jitter(gt_pos, fps),
    }


def rotation_error_degrees(pred_rot6d: np.ndarray, gt_rot6d: np.ndarray) -> float:
    """Mean geodesic angle between decoded local rotations."""
    with no_grad(), default_dtype(np.float64):
        Rp = rot6d_to_matrix(pred_rot6d).data
        Rg = rot6d_to_matrix(gt_rot6d).data
    return float(np.degrees(geodesic_angle(Rp, Rg)).mean())


def compute_metrics(pred: PoseSequence, gt: PoseSequence, skel: Skeleton, fps: float = 60.0) -> MetricReport:
    if pred.num_frames != gt.num_frames:
        raise ValueError(f"frame counts differ: {pred.num_frames} vs {gt.num_frames}")
    if pred.num_frames < 4:
        raise ValueError("metrics need at least 4 frames")
    pos = position_metrics(joint_positions(pred, skel), joint_positions(gt, skel), fps)
    return MetricReport(mpjre=rotation_error_degrees(pred.rotations6d, gt.rotations6d), **pos)


# -- serialisation -----------------------------------------------------------

def report_csv(rows: list[tuple[str, MetricReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("sequence",) + COLUMNS)
    for label, rep in rows:
        writer.writerow((label,) + tuple(f"{v:.6f}" for v in rep.values()))
    return buf.getvalue()


def report_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Aligned plain-text table in the same column order as the CSV."""
    width = max([len("sequence")] + [len(label) for label, _ in rows])
    head = "sequence".ljust(width) + "".join(f"{c:>11}" for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for label, rep in rows:
        lines.append(label.ljust(width) + "".join(f"{v:>11.3f}" for v in rep.values()))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[tuple[str, MetricReport]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header[1:]) != COLUMNS:
        raise ValueError(f"unexpected metric columns {header}")
    n = len(fields(MetricReport))
    return [(row[0], MetricReport(*(float(v) for v in row[1:1 + n]))) for row in reader if row]
