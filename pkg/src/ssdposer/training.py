"""Training loop, sequence-level inference and evaluation."""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import Checkpoint, model_checkpoint, save_checkpoint
from .kinematics import PoseSequence, build_tracker_input, joint_positions
from .losses import LossWeights, compute_loss
from .metrics import MetricReport, compute_metrics
from .model import ModelConfig, SSDPoser
from .nn import AdamState, NonFiniteError, Tensor, adam_step, clip_grad_norm, no_grad
from .skeleton import HEAD, Skeleton
from .windows import gather, tile_starts, window_dataset

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class RunConfig:
    # model
    T: int = 96
    E: int = 256
    I: int = 4
    heads: int = 8
    ffn_hidden: int = 0
    N_state: int = 64
    conv_k: int = 4
    # optimisation at desk scale
    batch_size: int = 16
    lr_initial: float = 3e-4
    lr_after_decay: float = 3e-5
    decay_at_iteration: int = 2000
    lr_schedule: str = "step"
    weight_decay: float = 1e-5
    grad_clip: float = 1.0
    max_iterations: int = 3000
    seed: int = 0
    # data and bookkeeping
    window_stride: int = 1
    test_fraction: float = 0.1
    log_interval: int = 50
    checkpoint_interval: int = 500
    data_dir: str = "data"
    checkpoint: str = "runs/model.ckpt"
    report_dir: str = "runs/report"

    def __post_init__(self) -> None:
        if self.lr_after_decay > self.lr_initial:
            raise ValueError("lr_after_decay must not exceed lr_initial")
        if self.lr_schedule not in ("step", "ramp"):
            raise ValueError(f"lr_schedule must be 'step' or 'ramp', got {self.lr_schedule!r}")
        paths = [Path(self.data_dir).resolve(), Path(self.checkpoint).resolve(), Path(self.report_dir).resolve()]
        if len(set(paths)) != len(paths):
            raise ValueError("data_dir, checkpoint and report_dir must be distinct paths")
        if self.batch_size < 1 or self.max_iterations < 0:
            raise ValueError("batch_size must be >= 1 and max_iterations >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(T=self.T, E=self.E, I=self.I, heads=self.heads, ffn_hidden=self.ffn_hidden,
                           N_state=self.N_state, conv_k=self.conv_k)

    def learning_rate(self, iteration: int) -> float:
        """Learning rate used for the update that produces ``iteration + 1``."""
        if self.lr_schedule == "step" or self.decay_at_iteration <= 0:
            return self.lr_initial if iteration < self.decay_at_iteration else self.lr_after_decay
        frac = min(iteration / self.decay_at_iteration, 1.0)
        return self.lr_initial + frac * (self.lr_after_decay - self.lr_initial)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


@dataclass
class LogRecord:
    iteration: int
    total: float
    l_rot: float
    l_pos: float
    l_ori: float
    lr: float
    grad_norm: float
    wall_time: float


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("training log iterations must strictly increase")
        self.records.append(rec)

    def to_csv(self) -> str:
        names = [f.name for f in fields(LogRecord)]
        rows = [",".join(names)]
        for r in self.records:
            rows.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in asdict(r).values()))
        return "\n".join(rows) + "\n"


@dataclass
class MotionDataset:
    """Per-sequence tracker inputs and targets, ready to be windowed."""

    poses: list[PoseSequence]
    inputs: list[np.ndarray]
    fps: float

    @classmethod
    def build(cls, poses: Sequence[PoseSequence], skel: Skeleton, fps: float) -> "MotionDataset":
        poses = list(poses)
        return cls(poses, [build_tracker_input(p, skel, fps).astype(np.float32) for p in poses], fps)

    def batch(self, windows, T: int):
        n = gather(self.inputs, windows, T)
        rot = gather([p.rotations6d for p in self.poses], windows, T)
        trans = gather([p.root_translation for p in self.poses], windows, T)
        return n, rot, trans


def worker_threads() -> int:
    """Prefetch workers allowed by ``SSDP_THREADS`` (default 1, 0 disables)."""
    raw = os.environ.get("SSDP_THREADS", "1")
    try:
        return max(0, int(raw))
    except ValueError:
        raise ValueError(f"SSDP_THREADS must be an integer, got {raw!r}") from None


class _Prefetcher:
    """Produces batches for iterations [start, stop) on a worker thread."""

    def __init__(self, make: Callable[[int], tuple], start: int, stop: int, depth: int = 2) -> None:
        self._q: queue.Queue = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(make, start, stop), daemon=True)
        self._thread.start()

    def _run(self, make, start, stop) -> None:
        for it in range(start, stop):
            if self._stop.is_set():
                return
            try:
                item = (it, make(it), None)
            except Exception as exc:  # handed to the consumer
                item = (it, None, exc)
            while not self._stop.is_set():
                try:
                    self._q.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue

    def get(self, iteration: int):
        it, batch, exc = self._q.get()
        if exc is not None:
            raise exc
        assert it == iteration
        return batch

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)


class Trainer:
    def __init__(self, run: RunConfig, dataset: MotionDataset, skel: Skeleton,
                 model: SSDPoser | None = None, adam: AdamState | None = None,
                 iteration: int = 0, weights: LossWeights = LossWeights()) -> None:
        self.run = run
        self.data = dataset
        self.skel = skel
        self.model = model if model is not None else SSDPoser(run.model_config(), seed=run.seed)
        self.adam = adam if adam is not None else AdamState.for_params(
            self.model.params, learning_rate=run.lr_initial, weight_decay=run.weight_decay)
        self.iteration = iteration
        self.weights = weights
        self.log = TrainingLog()
        self.windows = window_dataset(dataset.poses, run.T, run.window_stride)

    @classmethod
    def resume(cls, run: RunConfig, dataset: MotionDataset, skel: Skeleton, ckpt: Checkpoint) -> "Trainer":
        model = ckpt.build_model()
        adam = ckpt.adam or AdamState.for_params(model.params, learning_rate=run.lr_initial,
                                                 weight_decay=run.weight_decay)
        return cls(run, dataset, skel, model=model, adam=adam, iteration=ckpt.iteration)

    def batch_for(self, iteration: int):
        # batch choice depends only on (seed, iteration), so resuming is exact
        rng = np.random.default_rng([self.run.seed, iteration])
        picks = rng.integers(0, len(self.windows), size=self.run.batch_size)
        return self.data.batch([self.windows.windows[i] for i in picks], self.run.T)

    def step(self, batch) -> LogRecord:
        n, rot, trans = batch
        self.model.params.zero_grad()
        try:
            pred = self.model(Tensor(n))
            loss = compute_loss((pred, trans), (rot, trans), self.skel, self.weights)
            loss.total.backward()
        except NonFiniteError as exc:
            raise TrainingDivergedError(f"training diverged at iteration {self.iteration}: {exc}") from exc
        grads = self.model.params.grads()
        gnorm = clip_grad_norm(grads, self.run.grad_clip)
        lr = self.run.learning_rate(self.iteration)
        self.adam.learning_rate = lr
        adam_step(self.model.params, grads, self.adam)
        self.iteration += 1
        vals = loss.as_floats()
        return LogRecord(self.iteration, vals["total"], vals["l_rot"], vals["l_pos"], vals["l_ori"],
                         lr, gnorm, 0.0)

    def checkpoint(self) -> Checkpoint:
        return model_checkpoint(self.model, self.iteration, self.adam, {"seed": str(self.run.seed)})

    def train(self, until: int | None = None, checkpoint_path: str | Path | None = None,
              callback: Callable[["Trainer", LogRecord], bool] | None = None) -> TrainingLog:
        """Run until ``until`` (default ``max_iterations``) total iterations.

        ``callback`` is called after each logged record; returning True
        stops training early.
        """
        stop = self.run.max_iterations if until is None else until
        start_time = time.perf_counter()
        threads = worker_threads()
        prefetch = _Prefetcher(self.batch_for, self.iteration, stop) if threads and stop > self.iteration else None
        try:
            while self.iteration < stop:
                batch = prefetch.get(self.iteration) if prefetch else self.batch_for(self.iteration)
                rec = self.step(batch)
                rec.wall_time = time.perf_counter() - start_time
                done = self.iteration == stop
                if self.iteration % self.run.log_interval == 0 or done:
                    self.log.append(rec)
                    log.info("it %d loss %.5f rot %.5f pos %.5f ori %.5f lr %.1e",
                             rec.iteration, rec.total, rec.l_rot, rec.l_pos, rec.l_ori, rec.lr)
                    if callback is not None and callback(self, rec):
                        break
                if checkpoint_path and self.run.checkpoint_interval and \
                        self.iteration % self.run.checkpoint_interval == 0:
                    save_checkpoint(checkpoint_path, self.checkpoint())
        finally:
            if prefetch is not None:
                prefetch.close()
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.checkpoint())
        return self.log


# -- inference and evaluation ------------------------------------------------

def predict_rotations(model: SSDPoser, tracker: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Local 6D rotations (F, 22, 6) for a whole sequence of tracker frames.

    The sequence is covered by consecutive windows of the model's length;
    a final end-aligned window fills any remainder.
    """
    T = model.cfg.T
    F = tracker.shape[0]
    starts = tile_starts(F, T)
    out = np.empty((F, 22, 6), dtype=np.float64)
    with no_grad():
        for lo in range(0, len(starts), batch_size):
            chunk = starts[lo:lo + batch_size]
            pred = model(Tensor(np.stack([tracker[s:s + T] for s in chunk]))).data
            for s, p in zip(chunk, pred):
                out[s:s + T] = p
    return out


def head_aligned_translation(rot6d: np.ndarray, gt: PoseSequence, skel: Skeleton) -> np.ndarray:
    """Root translation placing the predicted head on the tracked head."""
    zero = PoseSequence(rot6d, np.zeros_like(gt.root_translation))
    head_rel = joint_positions(zero, skel)[:, HEAD]
    head_gt = joint_positions(gt, skel)[:, HEAD]
    return head_gt - head_rel


def predict_sequence(model: SSDPoser, gt: PoseSequence, skel: Skeleton, fps: float,
                     root: str = "gt", tracker: np.ndarray | None = None) -> PoseSequence:
    if tracker is None:
        tracker = build_tracker_input(gt, skel, fps).astype(np.float32)
    rot = predict_rotations(model, tracker)
    if root == "gt":
        trans = np.asarray(gt.root_translation, dtype=np.float64)
    elif root == "head":
        trans = head_aligned_translation(rot, gt, skel)
    else:
        raise ValueError(f"root mode must be 'gt' or 'head', got {root!r}")
    return PoseSequence(rot, trans)


def evaluate(model: SSDPoser | None, poses: Sequence[PoseSequence], skel: Skeleton, fps: float,
             root: str = "gt") -> list[MetricReport]:
    """Per-sequence metrics; ``model=None`` scores ground truth against itself."""
    reports = []
    for gt in poses:
        pred = gt if model is None else predict_sequence(model, gt, skel, fps, root)
        reports.append(compute_metrics(pred, gt, skel, fps))
    return reports


# -- non-neural reference ----------------------------------------------------

def fit_linear_baseline(dataset: MotionDataset, ridge: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame ridge regression from 54 tracker features to 132 rotation values."""
    X = np.concatenate(dataset.inputs).astype(np.float64)
    Y = np.concatenate([p.flat() for p in dataset.poses]).astype(np.float64)
    mu_x, mu_y = X.mean(0), Y.mean(0)
    Xc, Yc = X - mu_x, Y - mu_y
    W = np.linalg.solve(Xc.T @ Xc + ridge * len(X) * np.eye(X.shape[1]), Xc.T @ Yc)
    return W, mu_y - mu_x @ W


def evaluate_linear_baseline(dataset: MotionDataset, skel: Skeleton, W: np.ndarray,
                             b: np.ndarray) -> list[MetricReport]:
    reports = []
    for pose, n in zip(dataset.poses, dataset.inputs):
        rot = (n.astype(np.float64) @ W + b).reshape(-1, 22, 6)
        pred = PoseSequence(rot, np.asarray(pose.root_translation, dtype=np.float64))
        reports.append(compute_metrics(pred, pose, skel, dataset.fps))
    return reports
