"""Generate the input processes that drive both learning problems.

A bursty congestion trace is cut into 16 contiguous pieces, 10 for training
and 6 held out; a Gaussian link trace and a frame trace are drawn alongside.
Everything round-trips through the CSV format the CLI writes.
"""
import tempfile
from pathlib import Path

import numpy as np

from edgeslam.traces import (
    LinkModel,
    concat,
    gen_congestion_trace,
    gen_frame_trace,
    gen_link_trace,
    load_network_trace,
    partition_trace,
    save_network_trace,
    train_test_split,
)

full = gen_congestion_trace(9000, seed=0)
parts = partition_trace(full, 16)
train, test = train_test_split(parts, 10)
print(f"congestion trace: {len(full)} samples, mean {full.throughput.mean() / 1e6:.2f} Mbit/s")
print(f"partition sizes: {sorted({len(p) for p in parts})}, train {len(train)} / test {len(test)}")
assert np.array_equal(concat(parts).throughput, full.throughput)

link = gen_link_trace(LinkModel("gaussian", 20e6, 0.003, 3e6, 0.001, seed=1), 10000)
print(f"gaussian link: mean {link.throughput.mean() / 1e6:.2f} Mbit/s, min {link.throughput.min() / 1e6:.2f} Mbit/s")

frames = gen_frame_trace(563, mean_size=80000.0)
print(f"frame trace: {len(frames)} frames at {frames.fps:g} fps, mean {frames.raw_size.mean():.0f} bytes")

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "part00.csv"
    save_network_trace(parts[0], path)
    back = load_network_trace(path)
    print(f"CSV round trip of {parts[0].id}: {len(back)} samples, equal = {np.allclose(back.throughput, parts[0].throughput)}")
