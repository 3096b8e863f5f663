"""Command-line front end.

Subcommands: ``gen-data``, ``train``, ``eval``, ``infer``, ``bench-ssd``,
``params`` and ``dump``. Run options come from an optional ``--config``
file of ``key=value`` lines and individual ``--key value`` overrides.

Exit codes: 0 success, 1 user error (bad flags, missing or corrupt input),
2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DEFAULT_LENGTHS, PATHS, exponents, exponents_csv, run_benchmark, timings_csv
from .checkpoint import CheckpointError, MAGIC_LINE, decode_checkpoint, load_checkpoint, save_checkpoint
from .kinematics import PoseSequence, build_tracker_input
from .metrics import MetricReport, report_csv, report_table
from .model import SSDPoser
from .motion_io import MAGIC, MotionFormatError, read_header, read_motion, write_motion
from .nn import Tensor, no_grad
from .skeleton import SkeletonFormatError, default_skeleton, load_skeleton
from .synth import SynthConfig, generate_motion, load_dataset, split_indices, write_dataset
from .training import MotionDataset, RunConfig, Trainer, TrainingDivergedError, evaluate
from .windows import WindowError

log = logging.getLogger("ssdposer")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
USER_ERRORS = (ValueError, FileNotFoundError, IsADirectoryError, CheckpointError, MotionFormatError,
               SkeletonFormatError, WindowError, TrainingDivergedError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration -----------------------------------------------------------

def read_config_file(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{n}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(name: str, raw, kind: type):
    if kind is bool:
        return str(raw).lower() in ("1", "true", "yes")
    try:
        return kind(raw)
    except ValueError:
        raise ValueError(f"option {name}: cannot parse {raw!r} as {kind.__name__}") from None


def build_run_config(args: argparse.Namespace) -> RunConfig:
    types = RunConfig.field_types()
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(values) - set(types)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in types:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    return RunConfig(**{k: _coerce(k, v, types[k]) for k, v in values.items()})


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file of run options")
    group = p.add_argument_group("run options (override the config file)")
    for f in fields(RunConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*flags, dest=f.name, default=None, metavar=f.name.upper())


def _skeleton(args):
    return load_skeleton(args.skeleton) if getattr(args, "skeleton", None) else default_skeleton()


def _split(run: RunConfig, n: int, which: str) -> list[int]:
    train, test = split_indices(n, run.seed, run.test_fraction)
    return {"train": train, "test": test or train, "all": list(range(n))}[which]


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = SynthConfig(seed=args.seed, num_sequences=args.sequences, frames_per_sequence=args.frames,
                      fps=args.fps, max_harmonics=args.harmonics, amplitude_scale=args.amplitude,
                      root_speed_scale=args.root_speed)
    paths = write_dataset(args.out, generate_motion(cfg), cfg.fps)
    print(f"wrote {len(paths)} sequences of {cfg.frames_per_sequence} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_training_log

    run = build_run_config(args)
    skel = _skeleton(args)
    poses, fps = load_dataset(run.data_dir)
    train_idx = _split(run, len(poses), args.split)
    dataset = MotionDataset.build([poses[i] for i in train_idx], skel, fps)
    ckpt_path = Path(run.checkpoint)
    if args.resume and ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path, expect=run.model_config())
        trainer = Trainer.resume(run, dataset, skel, ckpt)
        log.info("resumed at iteration %d", trainer.iteration)
    else:
        trainer = Trainer(run, dataset, skel)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    log.info("training %d parameters on %d windows", trainer.model.count_parameters(), len(trainer.windows))
    if trainer.iteration >= run.max_iterations:
        save_checkpoint(ckpt_path, trainer.checkpoint())
    else:
        trainer.train(checkpoint_path=ckpt_path)
    report = Path(run.report_dir)
    report.mkdir(parents=True, exist_ok=True)
    (report / "training_log.csv").write_text(trainer.log.to_csv())
    if trainer.log.records:
        plot_training_log(trainer.log.records, report / "loss_curve.png")
        last = trainer.log.records[-1]
        print(f"iteration {last.iteration} loss {last.total:.6f}")
    print(f"checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .plotting import plot_metrics

    run = build_run_config(args)
    skel = _skeleton(args)
    data_dir = args.data or run.data_dir
    poses, fps = load_dataset(data_dir)
    idx = _split(run, len(poses), args.split)
    seqs = [poses[i] for i in idx]
    if args.ground_truth:
        model = None
    else:
        expect = run.model_config() if args.config or _has_model_override(args) else None
        model = load_checkpoint(args.checkpoint or run.checkpoint, expect=expect).build_model()
    reports = evaluate(model, seqs, skel, fps, root=args.root)
    rows = [(f"seq_{i:04d}", r) for i, r in zip(idx, reports)]
    rows.append(("mean", MetricReport.mean(reports)))
    out = Path(run.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report_csv(rows))
    (out / "metrics.txt").write_text(report_table(rows))
    plot_metrics(rows, out / "metrics.png")
    sys.stdout.write(report_table(rows))
    return EXIT_OK


def _has_model_override(args) -> bool:
    return any(getattr(args, name, None) is not None for name in ("T", "E", "I", "heads", "ffn_hidden",
                                                                  "N_state", "conv_k"))


def cmd_infer(args) -> int:
    skel = _skeleton(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    T = model.cfg.T
    motion = read_motion(args.input)
    if args.start < 0 or args.start + T > motion.num_frames:
        raise WindowError(f"window [{args.start}, {args.start + T}) does not fit in {motion.num_frames} frames")
    tracker = build_tracker_input(motion.pose, skel, motion.fps).astype(np.float32)
    with no_grad():
        rot = model(Tensor(tracker[None, args.start:args.start + T])).data[0]
    trans = motion.pose.root_translation[args.start:args.start + T]
    pred = PoseSequence(rot.astype(np.float32), np.asarray(trans, dtype=np.float32))
    write_motion(args.out, pred, motion.fps)
    print(f"wrote {T} predicted frames to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .plotting import plot_scaling

    lengths = [int(t) for t in args.lengths.split(",")]
    paths = args.paths.split(",")
    timings = run_benchmark(lengths, args.N, args.D, paths, args.chunk, args.repeats, args.seed)
    fits = exponents(timings)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "timings.csv").write_text(timings_csv(timings))
    (out / "exponents.csv").write_text(exponents_csv(fits))
    plot_scaling(timings, fits, out / "scaling.png")
    sys.stdout.write(timings_csv(timings))
    sys.stdout.write(exponents_csv(fits))
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = build_run_config(args).model_config()
    model = SSDPoser(cfg)
    print("component,parameters")
    for name, count in model.breakdown().items():
        print(f"{name},{count}")
    print(f"total,{model.count_parameters()}")
    return EXIT_OK


def cmd_dump(args) -> int:
    for path in args.files:
        head = Path(path).read_bytes()[:len(MAGIC_LINE)]
        print(f"# {path}")
        if head.startswith(MAGIC):
            for key, value in read_header(path).items():
                print(f"{key}={value}")
        elif head == MAGIC_LINE.encode():
            ckpt = decode_checkpoint(Path(path).read_bytes())
            print(f"kind=checkpoint\niteration={ckpt.iteration}")
            for key, value in ckpt.config.to_dict().items():
                print(f"config.{key}={value}")
            print(f"parameters={sum(int(v.size) for v in ckpt.params.values())}")
        else:
            raise MotionFormatError(f"{path}: unrecognised file type")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssdposer", description="Full-body pose estimation from three trackers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic motion dataset")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=8, help="number of sequences")
    p.add_argument("--frames", type=int, default=480, help="frames per sequence")
    p.add_argument("--fps", type=float, default=60.0, help="frame rate")
    p.add_argument("--harmonics", type=int, default=3, help="at most this many sinusoids per joint angle")
    p.add_argument("--amplitude", type=float, default=0.4, help="joint angle amplitude scale (rad)")
    p.add_argument("--root-speed", type=float, default=0.5, help="RMS root travel speed (m/s)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_run_options(p)
    p.add_argument("--skeleton", help="skeleton file (default: bundled humanoid)")
    p.add_argument("--split", choices=("train", "all"), default="train",
                   help="which sequences to train on (default: the train split)")
    p.add_argument("--resume", action="store_true", help="continue from an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _add_run_options(p)
    p.add_argument("--skeleton", help="skeleton file (default: bundled humanoid)")
    p.add_argument("--data", help="dataset directory (default: data_dir)")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--root", choices=("gt", "head"), default="gt",
                   help="root translation: ground truth, or aligned to the head tracker")
    p.add_argument("--ground-truth", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict one window from a motion file")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--input", required=True, help="motion file supplying the tracker signals")
    p.add_argument("--start", type=int, default=0, help="first frame of the window")
    p.add_argument("--out", required=True, help="motion file to write")
    p.add_argument("--skeleton", help="skeleton file (default: bundled humanoid)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench-ssd", help="time the SSD evaluation paths")
    p.add_argument("--lengths", default=",".join(str(t) for t in DEFAULT_LENGTHS),
                   help="comma-separated sequence lengths")
    p.add_argument("--N", type=int, default=16, help="state size")
    p.add_argument("--D", type=int, default=8, help="channels")
    p.add_argument("--paths", default=",".join(PATHS), help="comma-separated kernels to time")
    p.add_argument("--chunk", type=int, default=64, help="chunk length of the chunked kernel")
    p.add_argument("--repeats", type=int, default=5, help="timings per point, best kept")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="bench", help="directory for CSV and PNG output")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("params", help="count model parameters")
    _add_run_options(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("dump", help="print motion file or checkpoint headers")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
