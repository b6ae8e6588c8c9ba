"""Pneumonia ratio, per-lung split and 0-8 extent scoring."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import VoxelMask

CSV_FIELDS = (
    "patient_id", "time", "ratio_total", "ratio_left", "ratio_right",
    "level_left", "level_right", "total_score",
)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SeverityRecord:
    ratio_total: float
    ratio_left: float
    ratio_right: float
    level_left: int
    level_right: int
    total_score: int
    negative: bool = False

    def __post_init__(self):
        if self.total_score != self.level_left + self.level_right:
            raise ValueError("total score must equal the sum of lung levels")

    @classmethod
    def zero(cls, negative: bool = False) -> SeverityRecord:
        return cls(0.0, 0.0, 0.0, 0, 0, 0, negative)

    def row(self, patient_id: str, time: int) -> dict:
        return {
            "patient_id": patient_id,
            "time": time,
            "ratio_total": format_ratio(self.ratio_total),
            "ratio_left": format_ratio(self.ratio_left),
            "ratio_right": format_ratio(self.ratio_right),
            "level_left": self.level_left,
            "level_right": self.level_right,
            "total_score": self.total_score,
        }


def format_ratio(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def records_to_csv(rows: list[dict], extra_fields: tuple[str, ...] = ()) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS + extra_fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _masks(lesion, lungs):
    lesion = np.asarray(lesion, dtype=bool)
    lungs = np.asarray(lungs, dtype=bool)
    if lesion.shape != lungs.shape:
        raise ValueError(f"lesion {lesion.shape} and lung {lungs.shape} masks differ in shape")
    return lesion, lungs


def pneumonia_ratio(lesion, lungs) -> float:
    """Percentage of the lung area covered by lesion pixels inside the lungs."""
    lesion, lungs = _masks(lesion, lungs)
    n_lungs = int(lungs.sum())
    if n_lungs == 0:
        raise ValueError("lung mask is empty")
    return 100.0 * int(np.sum(lesion & lungs)) / n_lungs


def split_lungs(lungs) -> tuple[np.ndarray, np.ndarray]:
    """Split into image-left and image-right lung masks.

    The two largest 8-connected components are ordered by centroid column;
    any smaller fragments join whichever side their centroid is nearer. A
    single component is cut at its centroid column.
    """
    lungs = np.asarray(lungs, dtype=bool)
    if not lungs.any():
        raise ValueError("lung mask is empty")
    labels, n = ndimage.label(lungs, structure=_EIGHT_CONNECTED)
    cols = np.arange(lungs.shape[1])[None, :]
    if n == 1:
        cx = float(np.mean(np.nonzero(lungs)[1]))
        left = lungs & (cols < cx)
        return left, lungs & ~left
    index = np.arange(1, n + 1)
    sizes = ndimage.sum_labels(lungs, labels, index)
    centroids = np.array([c[1] for c in ndimage.center_of_mass(lungs, labels, index)])
    big = index[np.argsort(-sizes, kind="stable")[:2]]
    a, b = sorted(big, key=lambda k: centroids[k - 1])
    cut = 0.5 * (centroids[a - 1] + centroids[b - 1])
    left_ids = [k for k in index if k == a or (k != b and centroids[k - 1] < cut)]
    left = np.isin(labels, left_ids)
    return left, lungs & ~left


def bin_extent(ratio: float) -> int:
    """0 none, 1 below 25%, 2 for [25, 50), 3 for [50, 75), 4 from 75%."""
    if not 0.0 <= ratio <= 100.0:
        raise ValueError(f"ratio {ratio} outside [0, 100]")
    if ratio == 0.0:
        return 0
    if ratio < 25.0:
        return 1
    if ratio < 50.0:
        return 2
    if ratio < 75.0:
        return 3
    return 4


def score_image(lesion, lungs) -> SeverityRecord:
    lesion, lungs = _masks(lesion, lungs)
    left, right = split_lungs(lungs)
    ratio_left = pneumonia_ratio(lesion, left) if left.any() else 0.0
    ratio_right = pneumonia_ratio(lesion, right) if right.any() else 0.0
    level_left, level_right = bin_extent(ratio_left), bin_extent(ratio_right)
    return SeverityRecord(
        pneumonia_ratio(lesion, lungs), ratio_left, ratio_right,
        level_left, level_right, level_left + level_right,
    )


def volume_ratio(lesion: VoxelMask, lungs: VoxelMask) -> float:
    """3-D analogue of the pneumonia ratio, by voxel count."""
    lesion.check_matches(lungs)
    n = lungs.count()
    if n == 0:
        raise ValueError("lung mask is empty")
    return 100.0 * int(np.sum(lesion.bits & lungs.bits)) / n
