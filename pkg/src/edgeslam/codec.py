"""Surrogate codec: compressed size, edge-side reconstruction and QoE.

Action indices map to ``<res, qp>`` pairs as ``index = 5 * res_rank + qp_rank``
with ``RESOLUTIONS`` and ``QPS`` ranked in the order listed below, so index 0 is
the identity configuration ``(1.0, 20)`` and index 24 the coarsest
``(0.6, 36)``.

Size model: a tile of raw size ``s`` encoded at ``<res, qp>`` costs
``s * res**2 * 2**(-(qp - 20) / 6)`` bytes (size halves every +6 QP, pixel
count scales with ``res**2``).  Important tiles use the chosen action and all
other tiles the floor configuration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .tilesense import Frame, TileGrid, TileReport

RESOLUTIONS = (1.0, 0.9, 0.8, 0.7, 0.6)
QPS = (20, 24, 28, 32, 36)
N_ACTIONS = len(RESOLUTIONS) * len(QPS)


@dataclass(frozen=True)
class ConfigAction:
    res: float
    qp: int

    def __post_init__(self):
        if self.res not in RESOLUTIONS:
            raise ValueError(f"res {self.res} not in {RESOLUTIONS}")
        if self.qp not in QPS:
            raise ValueError(f"qp {self.qp} not in {QPS}")

    @property
    def index(self) -> int:
        return 5 * RESOLUTIONS.index(self.res) + QPS.index(self.qp)

    @classmethod
    def from_index(cls, i: int) -> "ConfigAction":
        if not 0 <= i < N_ACTIONS:
            raise ValueError(f"action index {i} out of range")
        return cls(RESOLUTIONS[i // 5], QPS[i % 5])

    def normalized(self) -> tuple[float, float]:
        """``(res, qp)`` scaled to [0, 1] over their option ranges."""
        return (
            (self.res - RESOLUTIONS[-1]) / (RESOLUTIONS[0] - RESOLUTIONS[-1]),
            (self.qp - QPS[0]) / (QPS[-1] - QPS[0]),
        )


IDENTITY = ConfigAction(1.0, 20)
FLOOR = ConfigAction(0.6, 36)
ALL_ACTIONS = tuple(ConfigAction.from_index(i) for i in range(N_ACTIONS))


@dataclass(frozen=True)
class QoeWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("QoE weights must be >= 0")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")


def size_factor(action: ConfigAction) -> float:
    return action.res**2 * 2.0 ** (-(action.qp - 20) / 6.0)


def _check_floor(action: ConfigAction, floor: ConfigAction) -> None:
    if floor.qp < action.qp or floor.res > action.res:
        raise ValueError(f"floor {floor} must be at least as coarse as action {action}")


def data_size(
    frame_raw_size: float,
    importance: TileReport | np.ndarray,
    action: ConfigAction,
    floor_action: ConfigAction = FLOOR,
) -> float:
    """Compressed frame size in bytes under the tile-wise size model."""
    _check_floor(action, floor_action)
    labels = importance.labels if isinstance(importance, TileReport) else np.asarray(importance)
    n = labels.size
    n_imp = int(np.count_nonzero(labels))
    share = frame_raw_size / n
    return share * (n_imp * size_factor(action) + (n - n_imp) * size_factor(floor_action))


def slam_perf(predicted: TileReport | np.ndarray, oracle: TileReport | np.ndarray) -> float:
    """``1 - hamming(predicted, oracle) / tiles``."""
    a = predicted.labels if isinstance(predicted, TileReport) else np.asarray(predicted)
    b = oracle.labels if isinstance(oracle, TileReport) else np.asarray(oracle)
    if a.shape != b.shape:
        raise ValueError(f"report shapes differ: {a.shape} vs {b.shape}")
    return 1.0 - float(np.count_nonzero(a != b)) / a.size


def qoe(perf, sizes, bandwidths, weights: QoeWeights) -> float:
    """``alpha * sum(P) - beta * sum(8 * Q / B)`` with Q in bytes and B in bits/second."""
    perf = np.asarray(perf, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    bw = np.asarray(bandwidths, dtype=float)
    if not (perf.shape == sizes.shape == bw.shape):
        raise ValueError("perf, sizes and bandwidths must have equal lengths")
    if np.any(bw <= 0):
        raise ValueError("bandwidths must be > 0")
    return weights.alpha * float(perf.sum()) - weights.beta * float(np.sum(8.0 * sizes / bw))


def step_reward(perf: float, size: float, bandwidth: float, weights: QoeWeights) -> float:
    """Per-step share of the QoE: ``alpha * P - beta * 8 * Q / B``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    return weights.alpha * perf - weights.beta * 8.0 * size / bandwidth


# ---------------------------------------------------------------------------
# Edge-side reconstruction surrogate
# ---------------------------------------------------------------------------


def qstep(qp: int) -> float:
    """H.264-style quantiser step: doubles every 6 QP, 1.0 at QP 4."""
    return 2.0 ** ((qp - 4) / 6.0)


def degrade(pixels: np.ndarray, action: ConfigAction, window: int = 7) -> np.ndarray:
    """Approximate decode(encode(pixels)) at one configuration.

    Resolution loss is a bilinear downscale by ``res`` and upscale back;
    quantisation is a dead zone of one quantiser step applied to the detail
    around a ``window``-wide local mean.
    """
    img = pixels.astype(float)
    h, w = img.shape
    if action.res < 1.0:
        small = ndimage.zoom(img, action.res, order=1, grid_mode=True, mode="nearest")
        img = ndimage.zoom(
            small, (h / small.shape[0], w / small.shape[1]), order=1, grid_mode=True, mode="nearest"
        )
    base = ndimage.uniform_filter(img, window, mode="nearest")
    detail = img - base
    dz = qstep(action.qp)
    detail = np.sign(detail) * np.maximum(np.abs(detail) - dz, 0.0)
    return np.clip(base + detail, 0, 255)


def reconstruct(
    frame: Frame,
    importance: TileReport | np.ndarray,
    action: ConfigAction,
    floor_action: ConfigAction = FLOOR,
    grid: TileGrid | None = None,
) -> Frame:
    """Frame as seen at the edge: important tiles at ``action``, the rest at the floor."""
    _check_floor(action, floor_action)
    if isinstance(importance, TileReport):
        grid, labels = importance.grid, importance.labels
    else:
        labels = np.asarray(importance)
    if grid is None:
        raise ValueError("grid required when importance is a bare array")
    mask = np.repeat(np.repeat(labels.astype(bool), np.diff(grid.row_edges), axis=0), np.diff(grid.col_edges), axis=1)
    hi = degrade(frame.pixels, action)
    lo = hi if action == floor_action else degrade(frame.pixels, floor_action)
    out = np.where(mask, hi, lo)
    return Frame(np.rint(out).astype(np.uint8), index=frame.index)
