"""Binary motion-sequence files (``.ssdm``).

Layout, all little-endian::

    offset  size        field
    0       4           magic b"SSDM"
    4       4  u32      version (1)
    8       4  u32      num_frames F
    12      4  f32      fps
    16      4  u32      num_joints J (22)
    20      F*J*6*4     local rotations, 6D, f32, frame-major
    ...     F*3*4       root translation in metres, f32

The file length is fully determined by the header; anything shorter or
longer is rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kinematics import PoseSequence
from .skeleton import NUM_JOINTS

MAGIC = b"SSDM"
VERSION = 1
_HEADER = struct.Struct("<4sIIfI")
HEADER_SIZE = _HEADER.size


class MotionFormatError(ValueError):
    """Base class for malformed motion files."""


class BadMagicError(MotionFormatError):
    pass


class VersionMismatchError(MotionFormatError):
    pass


class TruncatedFileError(MotionFormatError):
    pass


class TrailingDataError(MotionFormatError):
    pass


@dataclass
class MotionFile:
    version: int
    fps: float
    pose: PoseSequence

    @property
    def num_frames(self) -> int:
        return self.pose.num_frames


def payload_size(num_frames: int, num_joints: int = NUM_JOINTS) -> int:
    return 4 * num_frames * (num_joints * 6 + 3)


def encode_motion(pose: PoseSequence, fps: float) -> bytes:
    rot = np.ascontiguousarray(pose.rotations6d, dtype="<f4")
    trans = np.ascontiguousarray(pose.root_translation, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, pose.num_frames, float(fps), rot.shape[1])
    return header + rot.tobytes() + trans.tobytes()


def decode_motion(blob: bytes) -> MotionFile:
    if len(blob) < HEADER_SIZE:
        if not MAGIC.startswith(bytes(blob[:4])):
            raise BadMagicError(f"bad magic {bytes(blob[:4])!r}")
        raise TruncatedFileError(f"file has {len(blob)} bytes, header needs {HEADER_SIZE}")
    magic, version, frames, fps, joints = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"motion file version {version}, reader supports {VERSION}")
    if not (np.isfinite(fps) and fps > 0):
        raise MotionFormatError(f"invalid frame rate {fps!r}")
    if joints != NUM_JOINTS:
        raise MotionFormatError(f"file has {joints} joints, expected {NUM_JOINTS}")
    expected = HEADER_SIZE + payload_size(frames, joints)
    if len(blob) < expected:
        raise TruncatedFileError(f"payload truncated: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise TrailingDataError(f"{len(blob) - expected} unexpected trailing bytes")
    n_rot = frames * joints * 6
    rot = np.frombuffer(blob, dtype="<f4", count=n_rot, offset=HEADER_SIZE)
    trans = np.frombuffer(blob, dtype="<f4", count=frames * 3, offset=HEADER_SIZE + 4 * n_rot)
    if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
        raise MotionFormatError("payload contains non-finite values")
    pose = PoseSequence(rot.reshape(frames, joints, 6).astype(np.float32),
                        trans.reshape(frames, 3).astype(np.float32))
    return MotionFile(version=version, fps=float(fps), pose=pose)


def write_motion(path: str | Path, pose: PoseSequence, fps: float = 60.0) -> None:
    Path(path).write_bytes(encode_motion(pose, fps))


def read_motion(path: str | Path) -> MotionFile:
    return decode_motion(Path(path).read_bytes())


def read_header(path: str | Path) -> dict[str, object]:
    """Header fields only, for the ``dump`` command."""
    blob = Path(path).read_bytes()
    motion = decode_motion(blob)
    return {
        "magic": MAGIC.decode(),
        "version": motion.version,
        "num_frames": motion.num_frames,
        "fps": motion.fps,
        "num_joints": NUM_JOINTS,
        "bytes": len(blob),
    }
