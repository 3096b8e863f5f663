"""The 22-joint kinematic tree and its text file format.

File layout (one record per line, ``#`` starts a comment)::

    ssdposer-skeleton version=1 joints=22 units=m up=+y
    joint name=pelvis parent=-1 offset=0.0,0.0,0.0
    joint name=left_hip parent=0 offset=0.07,-0.09,0.0
    ...

Offsets are rest-pose bone vectors in metres, expressed in the parent's frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

SKELETON_VERSION = 1

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)
NUM_JOINTS = len(JOINT_NAMES)

ROOT_JOINTS = (0,)
LOWER_JOINTS = (1, 2, 4, 5, 7, 8, 10, 11)
HAND_JOINTS = (20, 21)
UPPER_JOINTS = tuple(j for j in range(NUM_JOINTS) if j not in LOWER_JOINTS and j not in ROOT_JOINTS)

HEAD = 15
LEFT_WRIST = 20
RIGHT_WRIST = 21
TRACKER_JOINTS = (HEAD, LEFT_WRIST, RIGHT_WRIST)


class SkeletonFormatError(ValueError):
    """A skeleton file could not be parsed."""


@dataclass(frozen=True)
class Skeleton:
    parents: tuple[int, ...]
    offsets: np.ndarray
    names: tuple[str, ...] = JOINT_NAMES

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        n = len(self.parents)
        if offsets.shape != (n, 3):
            raise ValueError(f"offsets must be ({n}, 3), got {offsets.shape}")
        if len(self.names) != n:
            raise ValueError(f"{len(self.names)} names for {n} joints")
        if n == 0 or self.parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        validate_parents(self.parents)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=-1)


def validate_parents(parents) -> None:
    """Reject cyclic parent arrays and ones that are not topologically ordered."""
    n = len(parents)
    for j, p in enumerate(parents):
        if j == 0:
            continue
        if not 0 <= p < n:
            raise ValueError(f"joint {j} has parent {p} outside [0, {n})")
    for j in range(1, n):
        seen = {j}
        k = parents[j]
        while k != -1:
            if k in seen:
                raise ValueError(f"cyclic parent array: joint {j} reaches itself")
            seen.add(k)
            k = parents[k]
    for j in range(1, n):
        if parents[j] >= j:
            raise ValueError(f"parent array not topologically ordered at joint {j} (parent {parents[j]})")


def parse_skeleton(text: str) -> Skeleton:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("ssdposer-skeleton"):
        raise SkeletonFormatError("missing 'ssdposer-skeleton' header line")
    header = _fields(lines[0].split()[1:])
    version = int(header.get("version", -1))
    if version != SKELETON_VERSION:
        raise SkeletonFormatError(f"unsupported skeleton version {version}")
    names, parents, offsets = [], [], []
    for ln in lines[1:]:
        kind, *rest = ln.split()
        if kind != "joint":
            raise SkeletonFormatError(f"unexpected record {kind!r}")
        f = _fields(rest)
        try:
            names.append(f["name"])
            parents.append(int(f["parent"]))
            offsets.append([float(v) for v in f["offset"].split(",")])
        except (KeyError, ValueError) as exc:
            raise SkeletonFormatError(f"bad joint record {ln!r}: {exc}") from None
    if "joints" in header and int(header["joints"]) != len(names):
        raise SkeletonFormatError(f"header declares {header['joints']} joints, found {len(names)}")
    return Skeleton(tuple(parents), np.array(offsets), tuple(names))


def _fields(tokens) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise SkeletonFormatError(f"expected key=value, got {tok!r}")
        out[key] = value
    return out


def format_skeleton(skel: Skeleton) -> str:
    rows = [f"ssdposer-skeleton version={SKELETON_VERSION} joints={skel.num_joints} units=m up=+y"]
    for name, parent, off in zip(skel.names, skel.parents, skel.offsets):
        rows.append(f"joint name={name} parent={parent} offset={','.join(repr(float(v)) for v in off)}")
    return "\n".join(rows) + "\n"


def load_skeleton(path: str | Path) -> Skeleton:
    return parse_skeleton(Path(path).read_text())


def save_skeleton(skel: Skeleton, path: str | Path) -> None:
    Path(path).write_text(format_skeleton(skel))


def default_skeleton() -> Skeleton:
    text = resources.files("ssdposer.data").joinpath("humanoid_v1.skel").read_text()
    return parse_skeleton(text)
