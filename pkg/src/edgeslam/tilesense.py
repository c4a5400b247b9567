"""Tile-importance prediction for video frames.

Frames are split into a ``rows x cols`` grid.  A tile is important when it
holds at least ``min_corners`` FAST corners.  A small classifier over per-tile
statistics predicts importance online: every ``sample_interval``-th frame is
sampled, predicted and labelled by the detector; non-sampled frames reuse the
last sampled prediction; once ``capacity`` sampled frames are buffered the
classifier takes one bounded training pass over them.
"""
from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .neural import Mlp, make_optimizer, softmax

DEFAULT_ROWS, DEFAULT_COLS = 9, 15

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("frame pixels must be a 2-D (height, width) array")
        if px.shape[0] < 16 or px.shape[1] < 16:
            raise ValueError(f"frame must be at least 16x16, got {px.shape[1]}x{px.shape[0]}")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixel intensities must lie in [0, 255]")
        px = px.astype(np.int16)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class TileGrid:
    rows: int
    cols: int
    row_edges: tuple
    col_edges: tuple

    @property
    def height(self) -> int:
        return self.row_edges[-1]

    @property
    def width(self) -> int:
        return self.col_edges[-1]

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def bounds(self) -> list[tuple[int, int, int, int]]:
        """Per-tile ``(y0, y1, x0, x1)`` half-open rectangles, row-major."""
        return [
            (self.row_edges[r], self.row_edges[r + 1], self.col_edges[c], self.col_edges[c + 1])
            for r in range(self.rows)
            for c in range(self.cols)
        ]

    def tile_of(self, x: int, y: int) -> tuple[int, int]:
        r = int(np.searchsorted(self.row_edges, y, side="right")) - 1
        c = int(np.searchsorted(self.col_edges, x, side="right")) - 1
        return r, c


@dataclass(frozen=True)
class TileReport:
    grid: TileGrid
    labels: np.ndarray
    source: str
    frame_index: int = 0
    probs: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != (self.grid.rows, self.grid.cols):
            raise ValueError(f"labels shape {lab.shape} does not match grid {self.grid.rows}x{self.grid.cols}")
        if self.source not in ("oracle", "predicted"):
            raise ValueError(f"unknown source {self.source!r}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def important_fraction(self) -> float:
        return float(self.labels.mean())


def _split(n: int, parts: int) -> tuple:
    base, rem = divmod(n, parts)
    sizes = [base] * (parts - rem) + [base + 1] * rem
    return tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)]))


def partition_tiles(width: int, height: int, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS) -> TileGrid:
    """Uniform grid; the division remainder adds one pixel to each of the last rows/cols."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if rows > height or cols > width:
        raise ValueError(f"cannot cut a {width}x{height} frame into {rows}x{cols} tiles")
    return TileGrid(rows, cols, _split(height, rows), _split(width, cols))


def fast_corners(frame: Frame, threshold: float = 20, arc_length: int = 9) -> np.ndarray:
    """FAST segment-test corners as an ``(n, 2)`` array of ``(x, y)``, row-major order.

    A pixel is a corner when at least ``arc_length`` contiguous circle pixels
    are all brighter than ``center + threshold`` or all darker than
    ``center - threshold``.  Pixels within 3 of the border are skipped.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    img = frame.pixels
    h, w = img.shape
    if h < 7 or w < 7:
        return np.zeros((0, 2), dtype=int)
    c = img[3:h - 3, 3:w - 3]
    ring = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] for dx, dy in CIRCLE])
    hits = np.zeros(c.shape, dtype=bool)
    for mask in (ring > c + threshold, ring < c - threshold):
        run = mask.copy()
        for k in range(1, arc_length):
            run &= np.roll(mask, -k, axis=0)
        hits |= run.any(axis=0)
    ys, xs = np.nonzero(hits)
    return np.stack([xs + 3, ys + 3], axis=1)


def corner_counts(frame: Frame, grid: TileGrid, threshold: float = 20, arc_length: int = 9) -> np.ndarray:
    pts = fast_corners(frame, threshold, arc_length)
    counts = np.zeros((grid.rows, grid.cols), dtype=int)
    if len(pts):
        r = np.searchsorted(grid.row_edges, pts[:, 1], side="right") - 1
        c = np.searchsorted(grid.col_edges, pts[:, 0], side="right") - 1
        np.add.at(counts, (r, c), 1)
    return counts


def oracle_labels(
    frame: Frame, grid: TileGrid, threshold: float = 20, arc_length: int = 9, min_corners: int = 1
) -> TileReport:
    counts = corner_counts(frame, grid, threshold, arc_length)
    return TileReport(grid, (counts >= min_corners).astype(np.int8), "oracle", frame.index)


# ---------------------------------------------------------------------------
# Per-tile features and the predictor
# ---------------------------------------------------------------------------

N_FEATURES = 5
SOBEL_EDGE_THRESHOLD = 80.0
# fixed scaling so that every feature is roughly O(1)
FEATURE_SCALE = np.array([255.0, 64.0, 32.0, 32.0, 1.0])


def _tile_means(arr: np.ndarray, grid: TileGrid) -> np.ndarray:
    sums = np.add.reduceat(np.add.reduceat(arr, grid.row_edges[:-1], axis=0), grid.col_edges[:-1], axis=1)
    areas = np.outer(np.diff(grid.row_edges), np.diff(grid.col_edges))
    return sums / areas


def tile_features(frame: Frame, grid: TileGrid) -> np.ndarray:
    """``(rows*cols, 5)`` features: mean, std, |dx|, |dy|, Sobel edge fraction."""
    if (frame.height, frame.width) != (grid.height, grid.width):
        raise ValueError("grid does not match frame size")
    img = frame.pixels.astype(float)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:] = np.abs(np.diff(img, axis=1))
    gy[1:, :] = np.abs(np.diff(img, axis=0))
    mag = np.hypot(ndimage.sobel(img, axis=1), ndimage.sobel(img, axis=0))
    mean = _tile_means(img, grid)
    var = np.maximum(_tile_means(img * img, grid) - mean**2, 0.0)
    feats = np.stack(
        [
            mean,
            np.sqrt(var),
            _tile_means(gx, grid),
            _tile_means(gy, grid),
            _tile_means((mag > SOBEL_EDGE_THRESHOLD).astype(float), grid),
        ],
        axis=-1,
    )
    return (feats / FEATURE_SCALE).reshape(-1, N_FEATURES)


class TilePredictor:
    """One-hidden-layer classifier with two output logits (unimportant, important).

    The output layer starts at zero, so a fresh model predicts exactly 0.5
    everywhere.
    """

    def __init__(self, hidden: int = 16, lr: float = 0.1, momentum: float = 0.9, optimizer: str = "sgd", seed: int = 0):
        self.net = Mlp([N_FEATURES, hidden, 2], head="softmax", rng=seed)
        self.net.zero_output_layer()
        kw = {"momentum": momentum} if optimizer == "sgd" else {}
        self.opt = make_optimizer(optimizer, self.net.params, lr, **kw)
        self.updates = 0

    def predict_proba(self, feats: np.ndarray) -> np.ndarray:
        return softmax(self.net.logits(feats))[:, 1]

    def loss(self, feats: np.ndarray, labels: np.ndarray) -> float:
        p = softmax(self.net.logits(feats))
        y = labels.astype(int).ravel()
        return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None))))

    def train_step(self, feats: np.ndarray, labels: np.ndarray) -> float:
        """One full-batch cross-entropy step; returns the loss before the step."""
        y = labels.astype(int).ravel()
        logits, acts = self.net.forward_cached(feats)
        p = softmax(logits)
        loss = float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-300, None))))
        g = p.copy()
        g[np.arange(len(y)), y] -= 1.0
        self.opt.step(self.net.backward(acts, g / len(y)))
        self.updates += 1
        return loss

    def train_pass(self, feats: np.ndarray, labels: np.ndarray, max_epochs: int = 5, min_loss: float = 0.05) -> list[float]:
        """Bounded pass: at most ``max_epochs`` steps, stopping once the loss is <= ``min_loss``."""
        losses = []
        for _ in range(max_epochs):
            loss = self.loss(feats, labels)
            losses.append(loss)
            if loss <= min_loss:
                break
            self.train_step(feats, labels)
        losses.append(self.loss(feats, labels))
        return losses


def predict_tiles(model: TilePredictor, frame: Frame, grid: TileGrid) -> TileReport:
    """Probability >= 0.5 is labelled important (ties favour importance)."""
    p = model.predict_proba(tile_features(frame, grid)).reshape(grid.rows, grid.cols)
    return TileReport(grid, (p >= 0.5).astype(np.int8), "predicted", frame.index, probs=p)


@dataclass
class FrameBuffer:
    capacity: int = 4
    sample_interval: int = 4
    max_epochs: int = 5
    min_loss: float = 0.05
    threshold: float = 20
    arc_length: int = 9
    min_corners: int = 1
    frames: list = field(default_factory=list)
    pending_labels: list = field(default_factory=list)
    last_report: TileReport | None = None
    last_index: int = -1
    passes: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1 or self.sample_interval < 1:
            raise ValueError("capacity and sample_interval must be >= 1")


@dataclass
class StepResult:
    report: TileReport
    sampled: bool
    oracle: TileReport | None = None
    trained: bool = False
    losses: list | None = None


def buffer_step(buf: FrameBuffer, model: TilePredictor, frame: Frame, grid: TileGrid | None = None) -> StepResult:
    """Advance the online workflow by one frame (the model is updated in place)."""
    if frame.index <= buf.last_index:
        raise ValueError(f"frame index {frame.index} does not follow {buf.last_index}")
    buf.last_index = frame.index
    grid = grid or partition_tiles(frame.width, frame.height)
    sampled = frame.index % buf.sample_interval == 0 or buf.last_report is None
    if not sampled:
        prev = buf.last_report
        return StepResult(TileReport(grid, prev.labels, "predicted", frame.index, probs=prev.probs), False)
    report = predict_tiles(model, frame, grid)
    buf.last_report = report
    oracle = oracle_labels(frame, grid, buf.threshold, buf.arc_length, buf.min_corners)
    buf.frames.append(frame)
    buf.pending_labels.append(oracle)
    res = StepResult(report, True, oracle)
    if len(buf.frames) >= buf.capacity:
        feats = np.concatenate([tile_features(f, grid) for f in buf.frames])
        labels = np.concatenate([o.labels.ravel() for o in buf.pending_labels])
        res.losses = model.train_pass(feats, labels, buf.max_epochs, buf.min_loss)
        res.trained = True
        buf.passes += 1
        buf.history.append(res.losses)
        buf.frames.clear()
        buf.pending_labels.clear()
    return res


def tile_accuracy(a: TileReport, b: TileReport) -> float:
    return float(np.mean(a.labels == b.labels))


# ---------------------------------------------------------------------------
# Frame sources
# ---------------------------------------------------------------------------


def synthetic_stream(
    n_frames: int,
    height: int = 72,
    width: int = 120,
    n_objects: int = 14,
    drift_every: int | None = None,
    motion: float = 0.0,
    noise: float = 2.0,
    contrast: tuple[float, float] = (60.0, 110.0),
    seed: int = 0,
):
    """Yield frames of small bright/dark squares on a smooth background.

    Object layout is redrawn every ``drift_every`` frames (never when None);
    ``motion`` moves every object by that many pixels per frame along a
    per-object direction; object contrast is drawn from ``contrast``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    background = 90 + 40 * np.sin(xx / width * np.pi) * np.cos(yy / height * np.pi / 2)

    def layout():
        objs = []
        for _ in range(n_objects):
            s = int(rng.integers(4, 8))
            objs.append(
                [
                    float(rng.uniform(4, width - s - 4)),
                    float(rng.uniform(4, height - s - 4)),
                    s,
                    float(rng.choice([-1, 1]) * rng.uniform(*contrast)),
                    float(rng.uniform(0, 2 * np.pi)),
                ]
            )
        return objs

    objs = layout()
    for i in range(n_frames):
        if drift_every and i > 0 and i % drift_every == 0:
            objs = layout()
        img = background + noise * rng.standard_normal((height, width))
        for o in objs:
            x, y, s, delta, ang = o
            xi, yi = int(round(x)), int(round(y))
            img[yi:yi + s, xi:xi + s] += delta
            if motion:
                o[0] = float(np.clip(x + motion * np.cos(ang), 4, width - s - 4))
                o[1] = float(np.clip(y + motion * np.sin(ang), 4, height - s - 4))
        yield Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8), index=i)


def read_pgm(path, index: int = 0) -> Frame:
    """Read a binary (P5) PGM with maxval <= 255."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pos += 1
    px = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return Frame(px, index=index)


def write_pgm(frame: Frame, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (frame.width, frame.height))
        fh.write(frame.pixels.astype(np.uint8).tobytes())


def load_frames_dir(path):
    """Yield PGM frames from a directory ordered by the number in each filename."""
    names = [n for n in os.listdir(path) if n.lower().endswith(".pgm")]

    def key(n):
        m = re.search(r"(\d+)", n)
        if m is None:
            raise ValueError(f"{n}: no numeric index in filename")
        return int(m.group(1))

    for i, n in enumerate(sorted(names, key=key)):
        yield read_pgm(os.path.join(path, n), index=i)


def write_reports_csv(reports, path) -> None:
    """Long-format export ``frame_index,row,col,label,source``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame_index", "row", "col", "label", "source"))
        for rep in reports:
            for r in range(rep.grid.rows):
                for c in range(rep.grid.cols):
                    w.writerow((rep.frame_index, r, c, int(rep.labels[r, c]), rep.source))
