"""Longitudinal severity profiles and CXR-vs-CT trend agreement."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .metrics import pearson_r
from .severity import format_ratio

POOLED_ID = "__pooled__"
PROFILE_FIELDS = ("patient_id", "time", "ratio_2d", "ratio_3d", "label_2d", "label_3d", "agree")
SUMMARY_FIELDS = ("patient_id", "n_points", "n_steps", "agreement", "pearson_r")


class ProfileError(ValueError):
    pass


def trend_labels(values: Sequence[float]) -> list[int]:
    """1 where the next value over the current one exceeds 1, else 0.

    A step up from exactly zero counts as an increase; zero to zero does not.
    """
    if len(values) < 2:
        raise ValueError("need at least two time points")
    if any(v < 0 for v in values):
        raise ValueError("ratios must be non-negative")
    labels = []
    for prev, cur in zip(values, values[1:]):
        if prev == 0:
            labels.append(1 if cur > 0 else 0)
        else:
            labels.append(1 if cur / prev > 1 else 0)
    return labels


def agreement_accuracy(a: Sequence[int], b: Sequence[int]) -> float:
    if len(a) != len(b):
        raise ValueError("label lists differ in length")
    if not a:
        raise ValueError("no labels to compare")
    return sum(x == y for x, y in zip(a, b)) / len(a)


@dataclass(frozen=True)
class TimePoint:
    time: int
    ratio_2d: float | None
    ratio_3d: float | None


@dataclass
class PatientSeries:
    patient_id: str
    points: list[TimePoint] = field(default_factory=list)

    def __post_init__(self):
        times = [p.time for p in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ProfileError(f"{self.patient_id}: time indices must be strictly increasing")
        for p in self.points:
            if p.ratio_2d is None and p.ratio_3d is None:
                raise ProfileError(f"{self.patient_id} t={p.time}: no ratio present")

    def paired(self, ct_floor: float | None = None) -> list[TimePoint]:
        """Points carrying both ratios (and a CT ratio at or above ``ct_floor``)."""
        return [
            p for p in self.points
            if p.ratio_2d is not None and p.ratio_3d is not None
            and (ct_floor is None or p.ratio_3d >= ct_floor)
        ]

    def trend_agreement(self, ct_floor: float | None = None):
        """(labels_2d, labels_3d, accuracy); accuracy is None with fewer than two paired points."""
        pts = self.paired(ct_floor)
        if len(pts) < 2:
            return [], [], None
        l2 = trend_labels([p.ratio_2d for p in pts])
        l3 = trend_labels([p.ratio_3d for p in pts])
        return l2, l3, agreement_accuracy(l2, l3)


def _parse_ratio(text) -> float | None:
    if text is None or str(text).strip() == "":
        return None
    value = float(text)
    if not math.isfinite(value) or not 0.0 <= value <= 100.0:
        raise ValueError(f"ratio {text!r} outside [0, 100]")
    return value


def build_profiles(rows: Iterable[dict], ratio_2d_field: str = "ratio_total") -> list[PatientSeries]:
    """Group score rows by patient and order them by time index."""
    grouped: dict[str, dict[int, TimePoint]] = {}
    for n, row in enumerate(rows, 1):
        try:
            pid = str(row["patient_id"]).strip()
            time = int(row["time"])
            point = TimePoint(time, _parse_ratio(row.get(ratio_2d_field)), _parse_ratio(row.get("ratio_3d")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProfileError(f"row {n}: cannot parse ({exc})") from exc
        if not pid:
            raise ProfileError(f"row {n}: empty patient_id")
        points = grouped.setdefault(pid, {})
        if time in points:
            raise ProfileError(f"duplicate entry for patient {pid!r} at time {time}")
        points[time] = point
    return [PatientSeries(pid, [pts[t] for t in sorted(pts)]) for pid, pts in sorted(grouped.items())]


def read_score_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


def profile_rows(series: Sequence[PatientSeries], ct_floor: float | None = None) -> list[dict]:
    rows = []
    for s in series:
        pts = s.paired(ct_floor)
        l2, l3, _ = s.trend_agreement(ct_floor)
        step = {p.time: (a, b) for p, a, b in zip(pts[1:], l2, l3)}
        for p in s.points:
            a, b = step.get(p.time, (None, None))
            rows.append({
                "patient_id": s.patient_id,
                "time": p.time,
                "ratio_2d": format_ratio(p.ratio_2d),
                "ratio_3d": format_ratio(p.ratio_3d),
                "label_2d": "" if a is None else a,
                "label_3d": "" if b is None else b,
                "agree": "" if a is None else int(a == b),
            })
    return rows


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def summarize(series: Sequence[PatientSeries], ct_floor: float | None = None) -> list[dict]:
    """Per-patient agreement plus one pooled row (step-weighted accuracy, Pearson r over paired points)."""
    rows = []
    agree = steps = 0
    xs, ys = [], []
    for s in series:
        pts = s.paired(ct_floor)
        l2, l3, acc = s.trend_agreement(ct_floor)
        agree += sum(a == b for a, b in zip(l2, l3))
        steps += len(l2)
        x = [p.ratio_2d for p in pts]
        y = [p.ratio_3d for p in pts]
        xs += x
        ys += y
        rows.append({
            "patient_id": s.patient_id,
            "n_points": len(s.points),
            "n_steps": len(l2),
            "agreement": _fmt(acc),
            "pearson_r": _fmt(_safe_pearson(x, y)),
        })
    rows.append({
        "patient_id": POOLED_ID,
        "n_points": sum(len(s.points) for s in series),
        "n_steps": steps,
        "agreement": _fmt(agree / steps if steps else None),
        "pearson_r": _fmt(_safe_pearson(xs, ys)),
    })
    return rows


def _safe_pearson(x, y) -> float | None:
    try:
        return pearson_r(x, y)
    except ValueError:
        return None


def rows_to_csv(rows: list[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
