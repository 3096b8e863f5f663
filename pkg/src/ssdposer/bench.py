"""Wall-clock scaling of the three SSD evaluation orders."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ssd import SsdInputs, ssd_chunked, ssd_dual, ssd_recurrent

DEFAULT_LENGTHS = (128, 256, 512, 1024, 2048, 4096)
PATHS = ("recurrent", "dual", "chunked")


@dataclass
class Timing:
    path: str
    T: int
    N: int
    D: int
    wall_time_ns: int


def random_inputs(T: int, N: int, D: int, rng: np.random.Generator,
                  dtype=np.float64) -> SsdInputs:
    """Decays in (0.5, 1) and unit-scale B, C, x."""
    A = rng.uniform(0.5, 1.0, size=T)
    B = rng.standard_normal((T, N)) / np.sqrt(N)
    C = rng.standard_normal((T, N)) / np.sqrt(N)
    x = rng.standard_normal((T, D))
    return SsdInputs(*(a.astype(dtype) for a in (A, B, C, x)))


def kernels(chunk: int) -> dict[str, Callable[[SsdInputs], np.ndarray]]:
    return {
        "recurrent": ssd_recurrent,
        "dual": ssd_dual,
        "chunked": lambda inp: ssd_chunked(inp, min(chunk, inp.T)),
    }


def guard_check(inputs: SsdInputs, chunk: int, rtol: float = 1e-10) -> float:
    """Run every path once and fail unless they agree; returns the worst rel. error."""
    outs = {name: fn(inputs) for name, fn in kernels(chunk).items()}
    ref = outs["recurrent"]
    scale = max(np.abs(ref).max(), 1e-300)
    worst = max(float(np.abs(outs[p] - ref).max() / scale) for p in PATHS)
    if worst > rtol:
        raise AssertionError(f"SSD paths disagree before timing (rel. err {worst:.3e})")
    return worst


def _time_once(fn, inputs: SsdInputs, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(inputs)
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best


def run_benchmark(lengths: Sequence[int] = DEFAULT_LENGTHS, N: int = 16, D: int = 8,
                  paths: Sequence[str] = PATHS, chunk: int = 64, repeats: int = 3,
                  seed: int = 0) -> list[Timing]:
    """Best-of-``repeats`` wall time per (path, T) after a guard check per T."""
    unknown = set(paths) - set(PATHS)
    if unknown:
        raise ValueError(f"unknown SSD paths {sorted(unknown)}; choose from {PATHS}")
    fns = kernels(chunk)
    rng = np.random.default_rng(seed)
    out = []
    for T in lengths:
        inputs = random_inputs(T, N, D, rng)
        guard_check(inputs, chunk)
        for p in paths:
            out.append(Timing(p, T, N, D, _time_once(fns[p], inputs, repeats)))
    return out


def fit_exponent(lengths: Sequence[int], times: Sequence[float]) -> float:
    """Slope of log(time) against log(T) by least squares."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def exponents(timings: Sequence[Timing]) -> dict[str, float]:
    fits = {}
    for p in dict.fromkeys(t.path for t in timings):
        rows = [t for t in timings if t.path == p]
        if len(rows) >= 2:
            fits[p] = fit_exponent([t.T for t in rows], [t.wall_time_ns for t in rows])
    return fits


def timings_csv(timings: Sequence[Timing]) -> str:
    lines = ["path,T,N,D,wall_time_ns"]
    lines += [f"{t.path},{t.T},{t.N},{t.D},{t.wall_time_ns}" for t in timings]
    return "\n".join(lines) + "\n"


def exponents_csv(fits: dict[str, float]) -> str:
    return "path,exponent\n" + "".join(f"{p},{e:.4f}\n" for p, e in fits.items())
