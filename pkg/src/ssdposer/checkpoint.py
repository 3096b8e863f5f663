"""Model checkpoint container.

A checkpoint is a UTF-8 text header followed by raw little-endian float32
blobs::

    SSDPOSER-CHECKPOINT
    version=1
    config.T=96
    config.E=256
    ...                         (every ModelConfig field)
    iteration=1500
    adam.step=1500
    adam.learning_rate=0.0003
    ...
    tensor param/bfe.weight 54,256
    tensor param/bfe.bias 256
    ...
    tensor adam.m/bfe.weight 54,256
    ...
    end
    <blob for each tensor line, in order, float32 LE>

Scalar header values are written with ``repr`` so floats survive a round
trip exactly.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, SSDPoser
from .nn import AdamState

MAGIC_LINE = "SSDPOSER-CHECKPOINT"
VERSION = 1
_END = b"\nend\n"


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    iteration: int = 0
    adam: AdamState | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def build_model(self) -> SSDPoser:
        model = SSDPoser(self.config)
        model.params.load_state_dict(self.params)
        return model


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    lines = [MAGIC_LINE, f"version={VERSION}"]
    for key, value in ckpt.config.to_dict().items():
        lines.append(f"config.{key}={value}")
    lines.append(f"iteration={ckpt.iteration}")
    tensors: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    if ckpt.adam is not None:
        a = ckpt.adam
        for key in ("step", "learning_rate", "weight_decay", "beta1", "beta2", "eps"):
            lines.append(f"adam.{key}={getattr(a, key)!r}")
        tensors += [(f"adam.m/{k}", v) for k, v in a.m.items()]
        tensors += [(f"adam.v/{k}", v) for k, v in a.v.items()]
    for key, value in ckpt.meta.items():
        if "\n" in str(value) or "=" in key:
            raise CheckpointError(f"metadata {key!r} cannot be encoded on one line")
        lines.append(f"meta.{key}={value}")
    blobs = []
    for name, value in tensors:
        arr = np.ascontiguousarray(value, dtype="<f4")
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {shape}")
        blobs.append(arr.tobytes())
    header = "\n".join(lines).encode("utf-8") + _END
    return header + b"".join(blobs)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    first = blob[:len(MAGIC_LINE) + 1]
    if first != (MAGIC_LINE + "\n").encode():
        raise CheckpointMagicError("not a checkpoint file (bad magic line)")
    cut = blob.find(_END)
    if cut < 0:
        raise CheckpointTruncatedError("checkpoint header is not terminated")
    try:
        header = blob[:cut].decode("utf-8").split("\n")[1:]
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"undecodable checkpoint header: {exc}") from None
    values: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for line in header:
        if line.startswith("tensor "):
            try:
                _, name, shape = line.split(" ")
                dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            except ValueError:
                raise CheckpointError(f"bad tensor record {line!r}") from None
            tensors.append((name, dims))
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad header line {line!r}")
            values[key] = value
    if int(values.get("version", -1)) != VERSION:
        raise CheckpointVersionError(f"checkpoint version {values.get('version')}, reader supports {VERSION}")
    try:
        config = ModelConfig.from_dict({k[7:]: v for k, v in values.items() if k.startswith("config.")})
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid model config in checkpoint: {exc}") from None

    offset = cut + len(_END)
    expected = offset + sum(4 * int(np.prod(dims)) for _, dims in tensors)
    if len(blob) < expected:
        raise CheckpointTruncatedError(f"checkpoint payload truncated: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise CheckpointError(f"{len(blob) - expected} unexpected trailing bytes")
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, dims in tensors:
        count = int(np.prod(dims))
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)
        offset += 4 * count

    params = OrderedDict((k[6:], v) for k, v in arrays.items() if k.startswith("param/"))
    adam = None
    if "adam.step" in values:
        adam = AdamState(
            learning_rate=float(values["adam.learning_rate"]),
            weight_decay=float(values["adam.weight_decay"]),
            beta1=float(values["adam.beta1"]),
            beta2=float(values["adam.beta2"]),
            eps=float(values["adam.eps"]),
            step=int(values["adam.step"]),
            m=OrderedDict((k[7:], v) for k, v in arrays.items() if k.startswith("adam.m/")),
            v=OrderedDict((k[7:], v) for k, v in arrays.items() if k.startswith("adam.v/")),
        )
    meta = {k[5:]: v for k, v in values.items() if k.startswith("meta.")}
    return Checkpoint(config, params, int(values.get("iteration", 0)), adam, meta)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> Checkpoint:
    ckpt = decode_checkpoint(Path(path).read_bytes())
    if expect is not None and ckpt.config != expect:
        raise ConfigMismatchError(f"checkpoint config {ckpt.config} differs from requested {expect}")
    return ckpt


def model_checkpoint(model: SSDPoser, iteration: int = 0, adam: AdamState | None = None,
                     meta: dict[str, str] | None = None) -> Checkpoint:
    return Checkpoint(model.cfg, model.params.state_dict(), iteration, adam, dict(meta or {}))
