"""Stage composition shared by the CLI and the end-to-end checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import materials, projector
from .mapalgebra import resize_map, stack_max, threshold_mask
from .projector import AttenuationTable, DetectorGeometry, Radiograph, Spectrum
from .severity import SeverityRecord, score_image, volume_ratio
from .volume import CtVolume, PhantomSpec, VoxelMask, generate_phantom

# Mask projections: a pixel belongs to a 2-D region when its ray crosses more
# than this much (mm) of the 3-D region; avoids grazing-corner slivers.
MIN_CHORD_MM = 1e-6

LUNG, LESION = 1, 2


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DrrSettings:
    air_max: float = materials.AIR_MAX_HU
    bone_min: float = materials.BONE_MIN_HU
    scatter: bool = False
    scatter_fraction: float = 0.10
    scatter_sigma: float = 50.0
    noise: bool = False
    seed: int = 0
    threads: int = 1


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # re-raised with the stage name attached
        raise StageError(name, exc) from exc


def render_drr(
    volume: CtVolume,
    det: DetectorGeometry,
    spectrum: Spectrum,
    att: AttenuationTable,
    settings: DrrSettings | None = None,
) -> tuple[Radiograph, np.ndarray]:
    """decompose -> chest mask -> apply -> project -> scatter -> noise -> 8-bit."""
    s = settings or DrrSettings()
    masks = _stage("decompose", materials.decompose, volume, s.air_max, s.bone_min)
    chest = _stage("chest_mask", materials.chest_mask, masks)
    body = _stage("apply_chest_mask", materials.apply_chest_mask, volume, chest)
    body_masks = _stage("decompose", materials.decompose, body, s.air_max, s.bone_min)
    image = _stage("project", projector.project, body_masks, body, det, spectrum, att, threads=s.threads)
    if s.scatter:
        scatter = _stage("scatter", projector.estimate_scatter, image, s.scatter_fraction, s.scatter_sigma)
        image = Radiograph(image.values + scatter.values, det)
    if s.noise:
        image = _stage("noise", projector.add_noise, image, spectrum, s.seed, threads=s.threads)
    return image, _stage("postprocess", projector.postprocess, image)


def project_region_masks(
    volume: CtVolume, lungs: VoxelMask, lesion: VoxelMask, det: DetectorGeometry, threads: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """2-D (lesion, lungs) masks: detector pixels whose ray crosses the 3-D region."""
    lungs.check_matches(volume)
    lesion.check_matches(volume)
    labels = np.zeros(lungs.bits.shape, dtype=np.uint8)
    labels[lungs.bits] = LUNG
    labels[lesion.bits & lungs.bits] = LESION
    mm = projector.project_labels(labels, 3, volume, det, threads=threads)
    lesion2d = mm[..., LESION] > MIN_CHORD_MM
    lungs2d = (mm[..., LUNG] + mm[..., LESION]) > MIN_CHORD_MM
    return lesion2d, lungs2d


def lesion_from_heatmaps(stack: np.ndarray, shape: tuple[int, int], threshold: float) -> np.ndarray:
    """Binary lesion mask from the max over a heatmap stack, resized to ``shape`` (h, w)."""
    fused = stack_max(stack)
    h, w = shape
    if fused.shape != (h, w):
        fused = resize_map(fused, w, h)
    return threshold_mask(np.clip(fused, 0.0, 1.0), threshold)


def gated_score(lesion: np.ndarray, lungs: np.ndarray, detection_score: float | None,
                detection_threshold: float) -> SeverityRecord:
    """Score an image unless its detection score falls below the gate."""
    if detection_score is not None and detection_score < detection_threshold:
        return SeverityRecord.zero(negative=True)
    return score_image(lesion, lungs)


@dataclass
class DualityPoint:
    time: int
    record: SeverityRecord
    ratio_3d: float
    image8: np.ndarray


def duality_series(
    spec: PhantomSpec,
    det: DetectorGeometry,
    spectrum: Spectrum,
    att: AttenuationTable,
    settings: DrrSettings | None = None,
) -> list[DualityPoint]:
    """Render every time point of a phantom and score it in 2-D (projected) and 3-D."""
    settings = settings or DrrSettings()
    out = []
    for t in range(spec.time_points):
        volume, lungs, lesion = generate_phantom(spec, t)
        _, image8 = render_drr(volume, det, spectrum, att, settings)
        lesion2d, lungs2d = project_region_masks(volume, lungs, lesion, det, threads=settings.threads)
        out.append(DualityPoint(t, score_image(lesion2d, lungs2d), volume_ratio(lesion, lungs), image8))
    return out
