"""Learn which image tiles carry FAST corners, online, while the scene changes.

Every fourth frame is labelled by the FAST detector and buffered; each full
buffer triggers one training pass of the tile classifier.  Accuracy is shown
per buffer cycle (16 frames); the scene structure is redrawn every 200 frames.
"""
import numpy as np

from edgeslam.tilesense import (
    FrameBuffer,
    TilePredictor,
    buffer_step,
    oracle_labels,
    partition_tiles,
    synthetic_stream,
    tile_accuracy,
)

buf, model = FrameBuffer(), TilePredictor(seed=0)
cycle = buf.capacity * buf.sample_interval
acc = []
for frame in synthetic_stream(600, drift_every=200, seed=0):
    grid = partition_tiles(frame.width, frame.height)
    step = buffer_step(buf, model, frame, grid)
    acc.append(tile_accuracy(step.report, oracle_labels(frame, grid)))

print(f"{grid.rows}x{grid.cols} tiles, buffer cycle {cycle} frames, {buf.passes} training passes")
for i, a in enumerate(np.array(acc[: len(acc) // cycle * cycle]).reshape(-1, cycle).mean(axis=1)):
    mark = "  <- scene redrawn" if any(k % 200 == 0 for k in range(max(1, i * cycle), (i + 1) * cycle)) else ""
    print(f"frames {i * cycle:3d}-{(i + 1) * cycle - 1:3d}: accuracy {a:.3f}{mark}")
