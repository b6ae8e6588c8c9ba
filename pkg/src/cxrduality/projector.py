"""Radiograph synthesis from labelled CT volumes with a polychromatic beam model."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _core
from .mapalgebra import separable_blur
from .materials import MATERIALS, MaterialMasks
from .volume import CtVolume

DEFAULT_SDD_MM = 1800.0
DEFAULT_SAD_MM = 1500.0
BRIGHT_MEAN = 220
BRIGHT_GAMMA = 0.2


# --------------------------------------------------------------------------
# configuration tables
# --------------------------------------------------------------------------


def _read_tsv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    header = lines[0].split("\t")
    rows = [ln.split("\t") for ln in lines[1:]]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"{path}: row {row} does not match header {header}")
    return header, rows


def _data_file(name: str):
    return resources.files("cxrduality") / "data" / name


@dataclass(frozen=True)
class Spectrum:
    """Expected photons per detector pixel in each energy bin (keV)."""

    energies: np.ndarray
    photons: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        n = np.asarray(self.photons, dtype=np.float64)
        if e.shape != n.shape or e.ndim != 1 or e.size == 0:
            raise ValueError("energies and photons must be equal-length 1-D sequences")
        if np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise ValueError("energies must be positive and strictly increasing")
        if np.any(n < 0) or n.sum() <= 0:
            raise ValueError("photon counts must be >= 0 with a positive total")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "photons", n)

    @property
    def total_photons(self) -> float:
        return float(self.photons.sum())

    @property
    def unattenuated(self) -> float:
        """Energy-weighted signal of a pixel seeing the bare beam."""
        return float(np.dot(self.photons, self.energies))

    @classmethod
    def monoenergetic(cls, energy: float, photons: float = 1e5) -> Spectrum:
        return cls(np.array([energy]), np.array([photons]))

    @classmethod
    def load(cls, path=None) -> Spectrum:
        path = path or _data_file("spectrum_120kV_4.3mmAl.tsv")
        _, rows = _read_tsv(path)
        return cls(np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))

    def scaled(self, total: float) -> Spectrum:
        return Spectrum(self.energies, self.photons * (total / self.total_photons))


@dataclass(frozen=True)
class AttenuationTable:
    """Mass attenuation coefficients (cm^2/g) and densities (g/cm^3) per material."""

    energies: np.ndarray
    mu_rho: dict
    density: dict

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        if np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise ValueError("table energies must be positive and strictly increasing")
        mu = {}
        for m in MATERIALS:
            if m not in self.mu_rho or m not in self.density:
                raise ValueError(f"attenuation table lacks material {m!r}")
            col = np.asarray(self.mu_rho[m], dtype=np.float64)
            if col.shape != e.shape or np.any(col <= 0):
                raise ValueError(f"coefficients for {m!r} must be positive, one per energy")
            if self.density[m] < 0:
                raise ValueError(f"density for {m!r} must be >= 0")
            mu[m] = col
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "mu_rho", mu)
        object.__setattr__(self, "density", {m: float(self.density[m]) for m in MATERIALS})

    def mass_attenuation(self, material: str, energies) -> np.ndarray:
        """Log-linear interpolation: ln(mu/rho) is linear in energy between table rows."""
        energies = np.atleast_1d(np.asarray(energies, dtype=np.float64))
        lo, hi = self.energies[0], self.energies[-1]
        if np.any(energies < lo) or np.any(energies > hi):
            raise ValueError(f"energies {energies} outside attenuation table range [{lo}, {hi}] keV")
        if self.energies.size == 1:
            return np.full(energies.shape, self.mu_rho[material][0])
        return np.exp(np.interp(energies, self.energies, np.log(self.mu_rho[material])))

    def linear_attenuation(self, energies) -> np.ndarray:
        """(3, n_energies) array of mu in 1/cm, rows in MATERIALS order."""
        return np.stack([self.mass_attenuation(m, energies) * self.density[m] for m in MATERIALS])

    @classmethod
    def load(cls, mu_path=None, density_path=None) -> AttenuationTable:
        header, rows = _read_tsv(mu_path or _data_file("mu_rho_nist.tsv"))
        energies = np.array([float(r[0]) for r in rows])
        mu = {name: np.array([float(r[i]) for r in rows]) for i, name in enumerate(header) if i > 0}
        _, drows = _read_tsv(density_path or _data_file("densities.tsv"))
        return cls(energies, mu, {r[0]: float(r[1]) for r in drows})

    @classmethod
    def constant(cls, energies: Sequence[float], linear: dict) -> AttenuationTable:
        """Energy-independent table with unit densities: mu/rho equals the given 1/cm values.

        A material given 0 gets density 0 (a vacuum stand-in).
        """
        mu, rho = {}, {}
        for m in MATERIALS:
            value = float(linear.get(m, 0.0))
            mu[m] = np.full(len(energies), value if value > 0 else 1.0)
            rho[m] = 1.0 if value > 0 else 0.0
        return cls(np.asarray(energies, dtype=np.float64), mu, rho)


@dataclass(frozen=True)
class DetectorGeometry:
    width: int = 1024
    height: int = 1024
    pixel_mm: float = 0.168
    mode: str = "cone"
    sdd_mm: float = DEFAULT_SDD_MM
    sad_mm: float = DEFAULT_SAD_MM
    view: str = "PA"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("detector must have at least one pixel")
        if self.pixel_mm <= 0:
            raise ValueError("pixel size must be positive")
        if self.mode not in ("parallel", "cone"):
            raise ValueError(f"unknown projection mode {self.mode!r}")
        if self.view not in ("PA", "AP"):
            raise ValueError(f"unknown view {self.view!r}")
        if self.mode == "cone" and not 0 < self.sad_mm < self.sdd_mm:
            raise ValueError("cone geometry needs 0 < SAD < SDD")

    def with_view(self, view: str) -> DetectorGeometry:
        return DetectorGeometry(self.width, self.height, self.pixel_mm, self.mode, self.sdd_mm, self.sad_mm, view)

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Beam direction, detector column axis, detector row axis (world xyz).

        PA beams travel posterior -> anterior (-y) and put the patient's right
        on the image left. Columns are up x beam, so AP (+y) comes out as the
        raw mirror image of PA. Rows run head to feet.
        """
        beam = np.array([0.0, -1.0, 0.0]) if self.view == "PA" else np.array([0.0, 1.0, 0.0])
        up = np.array([0.0, 0.0, 1.0])
        return beam, np.cross(up, beam), -up


@dataclass
class Radiograph:
    values: np.ndarray
    geometry: DetectorGeometry = field(default_factory=DetectorGeometry)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.geometry.height, self.geometry.width):
            raise ValueError("radiograph shape does not match detector geometry")
        if np.any(self.values < 0):
            raise ValueError("radiograph intensities must be non-negative")

    @property
    def width(self) -> int:
        return self.geometry.width

    @property
    def height(self) -> int:
        return self.geometry.height


# --------------------------------------------------------------------------
# ray casting
# --------------------------------------------------------------------------


def aabb_chord(lo, hi, origin, direction, tmin=0.0, tmax=math.inf) -> float:
    """Length (same units as inputs) of the ray segment inside the box."""
    t0, t1 = tmin, tmax
    for a in range(3):
        if direction[a] == 0.0:
            if origin[a] < lo[a] or origin[a] > hi[a]:
                return 0.0
            continue
        ta = (lo[a] - origin[a]) / direction[a]
        tb = (hi[a] - origin[a]) / direction[a]
        t0 = max(t0, min(ta, tb))
        t1 = min(t1, max(ta, tb))
    return max(0.0, t1 - t0)


def _to_index_space(volume, starts, dirs):
    sp = np.asarray(volume.spacing)
    lo = np.asarray(volume.origin) - 0.5 * sp
    return np.ascontiguousarray((starts - lo) / sp), np.ascontiguousarray(dirs / sp)


def trace_labels(
    labels: np.ndarray,
    nlabels: int,
    volume,
    starts: np.ndarray,
    dirs: np.ndarray,
    tmax: np.ndarray,
    threads: int = 1,
    kernel=None,
) -> np.ndarray:
    """Path length (mm) per label for each ray; rows of the result match rays.

    ``volume`` supplies ``spacing`` and ``origin``; ``labels`` is a uint8
    ``[z, y, x]`` array. Output is identical for any thread count: each ray is
    written by exactly one worker.
    """
    kernel = kernel or _core.trace_rays
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    p, d = _to_index_space(volume, np.asarray(starts, dtype=np.float64), np.asarray(dirs, dtype=np.float64))
    tmax = np.ascontiguousarray(tmax, dtype=np.float64)
    n = p.shape[0]
    out = np.zeros((n, nlabels))
    threads = max(1, int(threads))
    if threads == 1 or n < 2 * threads:
        kernel(labels, nlabels, p, d, tmax, out)
        return out
    bounds = np.linspace(0, n, 4 * threads + 1).astype(int)

    def work(i):
        lo, hi = bounds[i], bounds[i + 1]
        if hi > lo:
            kernel(labels, nlabels, p[lo:hi], d[lo:hi], tmax[lo:hi], out[lo:hi])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(len(bounds) - 1)))
    return out


def trace_ray(masks: MaterialMasks, volume, origin, direction) -> tuple[float, float, float]:
    """Per-material path lengths (cm) along one ray (air, soft, bone)."""
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if not math.isclose(norm, 1.0, rel_tol=1e-9):
        raise ValueError("ray direction must be a unit vector")
    lengths = trace_labels(
        masks.labels(), 3, volume,
        np.asarray(origin, dtype=np.float64)[None], direction[None], np.array([np.inf]),
    )[0]
    return tuple(float(x) / 10.0 for x in lengths)


def detector_rays(volume, det: DetectorGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray origin and unit direction per pixel (row-major), plus the segment length in mm."""
    sp = np.asarray(volume.spacing)
    lo = np.asarray(volume.origin) - 0.5 * sp
    hi = lo + np.asarray(volume.dims) * sp
    center = 0.5 * (lo + hi)
    beam, col_axis, row_axis = det.axes()
    cols = (np.arange(det.width) - 0.5 * (det.width - 1)) * det.pixel_mm
    rows = (np.arange(det.height) - 0.5 * (det.height - 1)) * det.pixel_mm
    offsets = (rows[:, None, None] * row_axis + cols[None, :, None] * col_axis).reshape(-1, 3)
    n = offsets.shape[0]
    if det.mode == "parallel":
        reach = 0.5 * float(np.linalg.norm(hi - lo)) + 1.0
        starts = center + offsets - reach * beam
        dirs = np.broadcast_to(beam, (n, 3)).copy()
        tmax = np.full(n, 2.0 * reach)
    else:
        source = center - det.sad_mm * beam
        pixels = center + (det.sdd_mm - det.sad_mm) * beam + offsets
        delta = pixels - source
        tmax = np.linalg.norm(delta, axis=1)
        dirs = delta / tmax[:, None]
        starts = np.broadcast_to(source, (n, 3)).copy()
    return starts, dirs, tmax


def material_path_lengths(masks: MaterialMasks, volume, det: DetectorGeometry, threads: int = 1) -> np.ndarray:
    """(height, width, 3) per-material path lengths in cm."""
    starts, dirs, tmax = detector_rays(volume, det)
    mm = trace_labels(masks.labels(), 3, volume, starts, dirs, tmax, threads=threads)
    return (mm / 10.0).reshape(det.height, det.width, 3)


def project_labels(label_volume: np.ndarray, nlabels: int, volume, det: DetectorGeometry, threads: int = 1):
    """Path length (mm) through each label, per detector pixel: (height, width, nlabels)."""
    starts, dirs, tmax = detector_rays(volume, det)
    mm = trace_labels(label_volume, nlabels, volume, starts, dirs, tmax, threads=threads)
    return mm.reshape(det.height, det.width, nlabels)


def attenuate(lengths_cm: np.ndarray, spectrum: Spectrum, att: AttenuationTable) -> np.ndarray:
    """Energy-weighted transmitted signal for per-material path lengths (..., 3)."""
    mu = att.linear_attenuation(spectrum.energies)
    depth = lengths_cm @ mu
    return np.exp(-depth) @ (spectrum.photons * spectrum.energies)


def project(
    masks: MaterialMasks,
    volume: CtVolume,
    det: DetectorGeometry,
    spectrum: Spectrum,
    att: AttenuationTable,
    threads: int = 1,
) -> Radiograph:
    """Noiseless, scatter-free polychromatic DRR."""
    att.mass_attenuation(MATERIALS[0], spectrum.energies)  # range check before tracing
    lengths = material_path_lengths(masks, volume, det, threads=threads)
    return Radiograph(attenuate(lengths, spectrum, att), det)


# --------------------------------------------------------------------------
# detector effects and display conversion
# --------------------------------------------------------------------------


def estimate_scatter(primary: Radiograph, fraction: float = 0.10, sigma_px: float = 50.0) -> Radiograph:
    """Scatter as a blurred fraction of the primary image, zero beyond the detector edge."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("scatter fraction must lie in [0, 1)")
    if sigma_px < 1:
        raise ValueError("scatter kernel width must be >= 1 pixel")
    if fraction == 0.0:
        return Radiograph(np.zeros_like(primary.values), primary.geometry)
    blurred = separable_blur(primary.values, sigma_px, mode="constant")
    return Radiograph(np.maximum(fraction * blurred, 0.0), primary.geometry)


def _row_generator(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(row,))))


def add_noise(img: Radiograph, spectrum: Spectrum, seed: int, threads: int = 1) -> Radiograph:
    """Poisson quantum noise.

    The signal is converted to an expected photon count (transmittance times
    the spectrum total), drawn, and scaled back. Each detector row has its own
    counter-based stream keyed by (seed, row), so results do not depend on
    ``threads``.
    """
    values = img.values
    if np.any(values < 0):
        raise ValueError("cannot add noise to negative intensities")
    scale = spectrum.total_photons / spectrum.unattenuated
    expected = values * scale
    out = np.empty_like(values)

    def work(row):
        out[row] = _row_generator(seed, row).poisson(expected[row])

    rows = range(values.shape[0])
    if threads <= 1:
        for row in rows:
            work(row)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, rows))
    return Radiograph(out / scale, img.geometry)


def invert_to_8bit(values: np.ndarray) -> np.ndarray:
    """Invert a min-max scaled image to 8 bits so dense matter is bright. Constant input maps to 128."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(values.shape, 128, dtype=np.uint8)
    scaled = (values - lo) / (hi - lo)
    return np.round(255.0 * (1.0 - scaled)).astype(np.uint8)


def gamma_if_bright(img8: np.ndarray, threshold: float = BRIGHT_MEAN, gamma: float = BRIGHT_GAMMA) -> np.ndarray:
    if img8.mean() <= threshold:
        return img8
    return np.round(255.0 * (img8 / 255.0) ** gamma).astype(np.uint8)


def postprocess(img: Radiograph | np.ndarray) -> np.ndarray:
    values = img.values if isinstance(img, Radiograph) else np.asarray(img)
    if np.any(values < 0):
        raise ValueError("post-processing expects non-negative intensities")
    return gamma_if_bright(invert_to_8bit(values))
