"""Fixed-length training windows over a set of sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import PoseSequence


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSet:
    length: int
    stride: int
    windows: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)


def _length(seq) -> int:
    return seq.num_frames if isinstance(seq, PoseSequence) else int(seq)


def window_dataset(seqs: Sequence, T: int, stride: int = 1) -> WindowSet:
    """Every in-bounds (sequence, start) window of ``T`` frames.

    ``seqs`` may hold :class:`PoseSequence` objects or plain frame counts.
    """
    if stride < 1:
        raise WindowError(f"stride must be >= 1, got {stride}")
    if T < 1:
        raise WindowError(f"window length must be >= 1, got {T}")
    lengths = [_length(s) for s in seqs]
    if not lengths:
        raise WindowError("no sequences to window")
    if T > min(lengths):
        raise WindowError(f"window length {T} exceeds the shortest sequence ({min(lengths)} frames)")
    windows = tuple((i, start) for i, F in enumerate(lengths) for start in range(0, F - T + 1, stride))
    return WindowSet(T, stride, windows)


def tile_starts(num_frames: int, T: int) -> list[int]:
    """Window starts covering a sequence; the last window is aligned to the end."""
    if T > num_frames:
        raise WindowError(f"window length {T} exceeds sequence length {num_frames}")
    starts = list(range(0, num_frames - T + 1, T))
    if starts[-1] + T < num_frames:
        starts.append(num_frames - T)
    return starts


def gather(arrays: Sequence[np.ndarray], windows, T: int) -> np.ndarray:
    """Stack copies of ``arrays[seq][start:start+T]`` for each window."""
    return np.stack([arrays[i][s:s + T] for i, s in windows])
