"""Central finite-difference checks of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor


@dataclass
class GradCheckResult:
    analytic: np.ndarray
    numeric: np.ndarray
    labels: list[str]

    @property
    def rel_error(self) -> float:
        """Norm-wise relative error of the sampled gradient entries."""
        denom = max(np.linalg.norm(self.analytic), np.linalg.norm(self.numeric), 1e-12)
        return float(np.linalg.norm(self.analytic - self.numeric) / denom)

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.analytic - self.numeric))) if self.analytic.size else 0.0


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor] | dict[str, Tensor],
                    samples: int | None = None, h: float = 1e-5,
                    rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare ``loss_fn``'s gradients against central differences.

    ``tensors`` are leaves the loss depends on (a dict labels entries by
    name). With ``samples`` set, that many entries are drawn uniformly from
    all leaves; otherwise every entry is checked.
    """
    named = list(tensors.items()) if isinstance(tensors, dict) else [(f"t{i}", t) for i, t in enumerate(tensors)]
    for _, t in named:
        t.grad = None
        t.requires_grad = True
    loss_fn().backward()
    analytic_all = [(name, t, t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in named]

    entries = [(k, idx) for k, (_, t) in enumerate(named) for idx in range(t.size)]
    if samples is not None and samples < len(entries):
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(entries), size=samples, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    analytic, numeric, labels = [], [], []
    for k, flat in entries:
        name, t, g = analytic_all[k]
        view = t.data.reshape(-1)
        original = view[flat]
        view[flat] = original + h
        plus = float(loss_fn().data)
        view[flat] = original - h
        minus = float(loss_fn().data)
        view[flat] = original
        analytic.append(float(g.reshape(-1)[flat]))
        numeric.append((plus - minus) / (2 * h))
        labels.append(f"{name}[{flat}]")
    return GradCheckResult(np.array(analytic), np.array(numeric), labels)
