"""Deterministic synthetic motion used in place of a mocap corpus.

Each joint's local rotation is an axis-angle vector whose three components
are sums of a few sinusoids below 3 Hz; the root wanders along a smoothed
random walk on the ground plane. Sequences get independent child seeds from
:class:`numpy.random.SeedSequence`, so generation order does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .kinematics import PoseSequence, axis_angle_to_matrix, matrix_to_rot6d
from .motion_io import read_motion, write_motion
from .skeleton import NUM_JOINTS

MAX_FREQUENCY_HZ = 3.0
MIN_FREQUENCY_HZ = 0.2
PELVIS_HEIGHT = 0.95

# relative swing per joint: the spine and neck move less than limbs
_JOINT_GAIN = np.array([
    0.3,                 # pelvis (global orientation wobble)
    1.0, 1.0, 0.3,       # hips, spine1
    1.0, 1.0, 0.3,       # knees, spine2
    0.6, 0.6, 0.3,       # ankles, spine3
    0.4, 0.4, 0.4,       # feet, neck
    0.4, 0.4, 0.5,       # collars, head
    1.0, 1.0, 1.0, 1.0,  # shoulders, elbows
    0.6, 0.6,            # wrists
])


@dataclass
class SynthConfig:
    seed: int = 0
    num_sequences: int = 8
    frames_per_sequence: int = 480
    fps: float = 60.0
    max_harmonics: int = 3
    amplitude_scale: float = 0.4
    root_speed_scale: float = 0.5

    def validate(self, min_frames: int = 1) -> None:
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be at least 1")
        if self.frames_per_sequence < max(min_frames, 1):
            raise ValueError(f"frames_per_sequence={self.frames_per_sequence} is shorter than {min_frames}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.max_harmonics < 1:
            raise ValueError("max_harmonics must be at least 1")
        if self.amplitude_scale < 0 or self.root_speed_scale < 0:
            raise ValueError("amplitude_scale and root_speed_scale must be non-negative")


def _sequence(cfg: SynthConfig, rng: np.random.Generator) -> PoseSequence:
    F = cfg.frames_per_sequence
    t = np.arange(F) / cfg.fps
    H = cfg.max_harmonics
    freq = rng.uniform(MIN_FREQUENCY_HZ, MAX_FREQUENCY_HZ, size=(NUM_JOINTS, 3, H))
    phase = rng.uniform(0, 2 * np.pi, size=(NUM_JOINTS, 3, H))
    # amplitude falls off with frequency, like natural movement spectra
    amp = rng.uniform(0.3, 1.0, size=(NUM_JOINTS, 3, H)) * (MIN_FREQUENCY_HZ / freq) ** 0.5 / H
    bias = rng.uniform(-0.3, 0.3, size=(NUM_JOINTS, 3))
    gain = cfg.amplitude_scale * _JOINT_GAIN[:, None]
    waves = np.sin(2 * np.pi * freq[None] * t[:, None, None, None] + phase[None])
    angles = gain[None] * ((amp[None] * waves).sum(axis=-1) + bias[None])

    # slow heading drift for the root, proportional to the motion amplitude
    turn = gaussian_filter1d(rng.standard_normal(F), sigma=cfg.fps)
    turn *= cfg.amplitude_scale / max(np.abs(turn).max(), 1e-9)
    angles[:, 0, 1] += np.cumsum(turn) / cfg.fps

    rot6d = matrix_to_rot6d(axis_angle_to_matrix(angles))

    vel = gaussian_filter1d(rng.standard_normal((F, 2)), sigma=cfg.fps / 2, axis=0)
    rms = np.sqrt((vel ** 2).sum(axis=-1).mean())
    vel *= cfg.root_speed_scale / max(rms, 1e-9)
    ground = np.cumsum(vel, axis=0) / cfg.fps
    bob = 0.02 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi))
    trans = np.stack([ground[:, 0], PELVIS_HEIGHT + bob, ground[:, 1]], axis=-1)
    return PoseSequence(rot6d.astype(np.float32), trans.astype(np.float32))


def generate_motion(cfg: SynthConfig) -> list[PoseSequence]:
    cfg.validate()
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.num_sequences)
    return [_sequence(cfg, np.random.default_rng(child)) for child in children]


def sequence_filename(index: int) -> str:
    return f"seq_{index:04d}.ssdm"


def write_dataset(directory: str | Path, seqs: list[PoseSequence], fps: float) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, pose in enumerate(seqs):
        path = directory / sequence_filename(i)
        write_motion(path, pose, fps)
        paths.append(path)
    return paths


def load_dataset(directory: str | Path) -> tuple[list[PoseSequence], float]:
    """All ``.ssdm`` files in a directory, sorted by name, and their common fps."""
    paths = sorted(Path(directory).glob("*.ssdm"))
    if not paths:
        raise FileNotFoundError(f"no .ssdm motion files in {directory}")
    files = [read_motion(p) for p in paths]
    rates = {f.fps for f in files}
    if len(rates) != 1:
        raise ValueError(f"mixed frame rates in {directory}: {sorted(rates)}")
    return [f.pose for f in files], rates.pop()


def split_indices(n: int, seed: int, test_fraction: float = 0.1) -> tuple[list[int], list[int]]:
    """Seeded shuffle of whole sequences into train and test index lists."""
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    if test_fraction > 0 and n > 1:
        n_test = max(n_test, 1)
    test = sorted(int(i) for i in order[:n_test])
    train = sorted(int(i) for i in order[n_test:])
    return train, test
