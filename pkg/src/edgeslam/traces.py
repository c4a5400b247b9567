"""Exogenous input processes: network traces, frame traces and link models.

Network traces are ordered ``(t, throughput, latency)`` samples in seconds and
bits/second.  The on-disk format is a CSV with header
``t,throughput_bps,latency_s``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Throughput floor applied to Gaussian draws (bits/second).
THROUGHPUT_FLOOR = 1e3
#: Latency floor applied to Gaussian draws (seconds).
LATENCY_FLOOR = 0.0

CSV_HEADER = ("t", "throughput_bps", "latency_s")
FRAME_CSV_HEADER = ("index", "raw_size_bytes")


class TraceFormatError(ValueError):
    """A trace file could not be parsed."""


class TraceValidationError(ValueError):
    """Trace contents violate the trace invariants."""


@dataclass(frozen=True)
class NetworkTrace:
    id: str
    t: np.ndarray
    throughput: np.ndarray
    latency: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        thr = np.asarray(self.throughput, dtype=float)
        lat = np.asarray(self.latency, dtype=float)
        if not (t.ndim == thr.ndim == lat.ndim == 1) or not (len(t) == len(thr) == len(lat)):
            raise TraceValidationError("t, throughput and latency must be 1-D and equally long")
        if len(t) == 0:
            raise TraceValidationError("trace has no samples")
        if np.any(np.diff(t) <= 0):
            i = int(np.argmax(np.diff(t) <= 0)) + 1
            raise TraceValidationError(f"timestamps not strictly increasing at sample {i}")
        if np.any(~np.isfinite(thr)) or np.any(thr <= 0):
            raise TraceValidationError("throughput must be finite and > 0")
        if np.any(~np.isfinite(lat)) or np.any(lat < 0):
            raise TraceValidationError("latency must be finite and >= 0")
        for name, arr in (("t", t), ("throughput", thr), ("latency", lat)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def samples(self) -> list[dict]:
        return [
            {"t": float(a), "throughput": float(b), "latency": float(c)}
            for a, b, c in zip(self.t, self.throughput, self.latency)
        ]

    def slice(self, start: int, stop: int, id: str | None = None) -> "NetworkTrace":
        return NetworkTrace(
            id=id or f"{self.id}[{start}:{stop}]",
            t=self.t[start:stop],
            throughput=self.throughput[start:stop],
            latency=self.latency[start:stop],
        )


@dataclass(frozen=True)
class FrameTrace:
    """Frame arrival process: ``fps`` and per-frame raw sizes in bytes."""

    id: str
    fps: float
    raw_size: np.ndarray
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        sizes = np.asarray(self.raw_size, dtype=float)
        if self.fps <= 0:
            raise TraceValidationError("fps must be > 0")
        if sizes.ndim != 1 or len(sizes) == 0:
            raise TraceValidationError("frame trace needs at least one frame")
        if np.any(sizes <= 0):
            raise TraceValidationError("raw_size must be > 0")
        idx = np.arange(len(sizes)) if self.index is None else np.asarray(self.index)
        if not np.array_equal(idx, np.arange(len(sizes))):
            raise TraceValidationError("frame indices must be contiguous from 0")
        sizes.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "raw_size", sizes)
        object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return len(self.raw_size)

    @property
    def frames(self) -> list[dict]:
        return [{"index": int(i), "raw_size": float(s)} for i, s in zip(self.index, self.raw_size)]


@dataclass(frozen=True)
class LinkModel:
    kind: str = "fixed"
    mean_throughput: float = 1e6
    mean_latency: float = 0.02
    std_throughput: float = 0.0
    std_latency: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed", "gaussian"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind == "fixed" and (self.std_throughput != 0 or self.std_latency != 0):
            raise ValueError("fixed links must have zero std")
        if self.mean_throughput <= 0 or self.mean_latency < 0:
            raise ValueError("link means must be physical")
        if self.std_throughput < 0 or self.std_latency < 0:
            raise ValueError("std must be >= 0")


def load_network_trace(path, format: str = "csv", id: str | None = None) -> NetworkTrace:
    """Read a ``t,throughput_bps,latency_s`` CSV into a :class:`NetworkTrace`."""
    if format != "csv":
        raise TraceFormatError(f"unsupported trace format {format!r}")
    path = os.fspath(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise TraceFormatError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TraceFormatError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                rows.append(tuple(float(c) for c in row))
            except ValueError:
                raise TraceFormatError(f"{path}: line {lineno}: non-numeric field in {row!r}") from None
    if len(rows) < 2:
        raise TraceValidationError(f"{path}: need at least 2 samples, got {len(rows)}")
    arr = np.array(rows)
    return NetworkTrace(
        id=id or os.path.splitext(os.path.basename(path))[0],
        t=arr[:, 0],
        throughput=arr[:, 1],
        latency=arr[:, 2],
    )


def save_network_trace(trace: NetworkTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for a, b, c in zip(trace.t, trace.throughput, trace.latency):
            w.writerow((repr(float(a)), repr(float(b)), repr(float(c))))


def save_frame_trace(trace: FrameTrace, path) -> None:
    """Write ``index,raw_size_bytes`` rows; fps is not stored and travels in the run manifest."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_CSV_HEADER)
        for i, s in zip(trace.index, trace.raw_size):
            w.writerow((int(i), repr(float(s))))


def load_frame_trace(path, fps: float, id: str | None = None) -> FrameTrace:
    path = os.fspath(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FRAME_CSV_HEADER:
            raise TraceFormatError(f"{path}: line 1: expected header {','.join(FRAME_CSV_HEADER)}")
        idx, sizes = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                idx.append(int(row[0]))
                sizes.append(float(row[1]))
            except (ValueError, IndexError):
                raise TraceFormatError(f"{path}: line {lineno}: malformed row {row!r}") from None
    return FrameTrace(id=id or os.path.splitext(os.path.basename(path))[0], fps=fps, raw_size=sizes, index=idx)


def _as_trace(samples) -> NetworkTrace:
    if isinstance(samples, NetworkTrace):
        return samples
    samples = list(samples)
    return NetworkTrace(
        id="samples",
        t=[s["t"] for s in samples],
        throughput=[s["throughput"] for s in samples],
        latency=[s["latency"] for s in samples],
    )


def partition_trace(samples, n_parts: int) -> list[NetworkTrace]:
    """Split samples into ``n_parts`` contiguous traces whose sizes differ by at most one.

    The first ``len % n_parts`` parts receive the extra sample.
    """
    trace = _as_trace(samples)
    n = len(trace)
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    if n_parts > n:
        raise ValueError(f"cannot split {n} samples into {n_parts} parts")
    base, extra = divmod(n, n_parts)
    parts, start = [], 0
    for i in range(n_parts):
        stop = start + base + (1 if i < extra else 0)
        parts.append(trace.slice(start, stop, id=f"{trace.id}-part{i:02d}"))
        start = stop
    return parts


def gen_link_trace(model: LinkModel, horizon: int, dt: float = 1.0, id: str | None = None) -> NetworkTrace:
    """Sample ``horizon`` link conditions from ``model`` (one sample per step of ``dt`` seconds)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    thr = np.full(horizon, float(model.mean_throughput))
    lat = np.full(horizon, float(model.mean_latency))
    if model.kind == "gaussian":
        rng = np.random.default_rng(model.seed)
        thr = thr + model.std_throughput * rng.standard_normal(horizon)
        lat = lat + model.std_latency * rng.standard_normal(horizon)
        thr = np.maximum(thr, THROUGHPUT_FLOOR)
        lat = np.maximum(lat, LATENCY_FLOOR)
    return NetworkTrace(
        id=id or f"{model.kind}-seed{model.seed}",
        t=np.arange(horizon) * dt,
        throughput=thr,
        latency=lat,
    )


def gen_congestion_trace(
    horizon: int,
    low_throughput: float = 1.5e5,
    high_throughput: float = 5e6,
    p_stay: float = 0.97,
    jitter: float = 0.15,
    mean_latency: float = 0.08,
    seed: int = 0,
    dt: float = 1.0,
    id: str | None = None,
) -> NetworkTrace:
    """Bursty two-state Markov trace standing in for measured cellular (HSDPA-like) data.

    The chain alternates between a low and a high mean throughput; within a
    state samples get multiplicative log-normal jitter.  Latency moves inversely
    with throughput.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    state = np.empty(horizon, dtype=int)
    s = int(rng.integers(2))
    flips = rng.random(horizon) > p_stay
    for i in range(horizon):
        if flips[i]:
            s = 1 - s
        state[i] = s
    mean = np.where(state == 1, high_throughput, low_throughput)
    thr = mean * np.exp(jitter * rng.standard_normal(horizon) - 0.5 * jitter**2)
    thr = np.maximum(thr, THROUGHPUT_FLOOR)
    lat = mean_latency * (high_throughput / mean) ** 0.5 * np.exp(0.1 * rng.standard_normal(horizon))
    return NetworkTrace(id=id or f"congestion-seed{seed}", t=np.arange(horizon) * dt, throughput=thr, latency=lat)


def gen_frame_trace(
    n_frames: int,
    fps: float = 30.0,
    mean_size: float = 20000.0,
    rel_std: float = 0.2,
    seed: int = 0,
    id: str | None = None,
) -> FrameTrace:
    """Synthetic frame arrivals: raw sizes Normal(mean, rel_std*mean) clipped to 10% of the mean."""
    rng = np.random.default_rng(seed)
    sizes = mean_size * (1.0 + rel_std * rng.standard_normal(n_frames))
    sizes = np.maximum(sizes, 0.1 * mean_size)
    return FrameTrace(id=id or f"frames-seed{seed}", fps=fps, raw_size=sizes)


def concat(parts: Iterable[NetworkTrace]) -> NetworkTrace:
    parts = list(parts)
    return NetworkTrace(
        id=parts[0].id.split("-part")[0],
        t=np.concatenate([p.t for p in parts]),
        throughput=np.concatenate([p.throughput for p in parts]),
        latency=np.concatenate([p.latency for p in parts]),
    )


def train_test_split(parts: Sequence[NetworkTrace], n_train: int):
    """First ``n_train`` parts for training, the rest held out (16 -> 10/6, 12 -> 10/2)."""
    return list(parts[:n_train]), list(parts[n_train:])
