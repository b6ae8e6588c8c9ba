"""CT volume container, raw+sidecar file I/O and synthetic chest phantoms.

Arrays are stored numpy-style as ``values[z, y, x]`` so that the flattened
C-order buffer is x-fastest, matching the on-disk layout. ``dims`` is always
reported as ``(nx, ny, nz)``.

World frame: x runs patient right -> left across the image, y runs
anterior -> posterior, z runs feet -> head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

AIR_HU = -1000
HU_MIN, HU_MAX = -32768, 32767


class VolumeFormatError(ValueError):
    """Raised when a raw/sidecar pair is missing or malformed."""


def _triple(values, cast=float) -> tuple:
    values = tuple(cast(v) for v in values)
    if len(values) != 3:
        raise ValueError(f"expected 3 components, got {len(values)}")
    return values


@dataclass(frozen=True)
class CtVolume:
    """Hounsfield-unit samples on a regular grid.

    ``origin`` is the world position (mm) of the centre of voxel (0, 0, 0).
    """

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"values must be a non-empty 3-D array, got shape {values.shape}")
        spacing = _triple(self.spacing)
        if any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        values = np.ascontiguousarray(values, dtype=np.int16)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", _triple(self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return nx, ny, nz

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box (mm, xyz) enclosing every voxel."""
        sp = np.asarray(self.spacing)
        lo = np.asarray(self.origin) - 0.5 * sp
        return lo, lo + np.asarray(self.dims) * sp

    def center(self) -> np.ndarray:
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def voxel_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable world coordinates (z, y, x ordering of axes)."""
        nx, ny, nz = self.dims
        x = self.origin[0] + np.arange(nx) * self.spacing[0]
        y = self.origin[1] + np.arange(ny) * self.spacing[1]
        z = self.origin[2] + np.arange(nz) * self.spacing[2]
        return z[:, None, None], y[None, :, None], x[None, None, :]

    def __eq__(self, other):
        if not isinstance(other, CtVolume):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.origin == other.origin
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class VoxelMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits) != 0)
        if bits.ndim != 3:
            raise ValueError("mask must be 3-D")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.bits.shape
        return nx, ny, nz

    def count(self) -> int:
        return int(self.bits.sum())

    def check_matches(self, volume: CtVolume | VoxelMask) -> None:
        if self.dims != volume.dims:
            raise ValueError(f"mask dims {self.dims} do not match {volume.dims}")

    def __eq__(self, other):
        if not isinstance(other, VoxelMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


# --------------------------------------------------------------------------
# raw + sidecar I/O
# --------------------------------------------------------------------------

_DTYPES = {"int16le": np.dtype("<i2"), "uint8": np.dtype("u1"), "float32le": np.dtype("<f4")}


def write_meta(path: Path, entries: dict) -> None:
    lines = []
    for key, value in entries.items():
        if isinstance(value, (tuple, list)):
            value = " ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path: Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise VolumeFormatError(f"missing sidecar {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise VolumeFormatError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _stem(path) -> Path:
    """Strip a trailing .raw/.meta so either file (or the bare stem) can be passed."""
    path = Path(path)
    if path.suffix in (".raw", ".meta"):
        path = Path(str(path)[: -len(path.suffix)])
    return path


def _save_grid(array: np.ndarray, stem: Path, dtype: str, spacing, origin) -> None:
    nz, ny, nx = array.shape
    Path(f"{stem}.raw").write_bytes(
        np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes()
    )
    write_meta(
        Path(f"{stem}.meta"),
        {"dims": (nx, ny, nz), "spacing_mm": tuple(spacing), "origin_mm": tuple(origin), "dtype": dtype},
    )


def _load_grid(stem: Path, expect_dtype: str):
    meta = read_meta(Path(f"{stem}.meta"))
    try:
        dims = _triple(meta["dims"].split(), int)
        spacing = _triple(meta["spacing_mm"].split())
        origin = _triple(meta.get("origin_mm", "0 0 0").split())
        dtype = meta.get("dtype", expect_dtype)
    except (KeyError, ValueError) as exc:
        raise VolumeFormatError(f"bad sidecar for {stem}: {exc}") from exc
    if dtype != expect_dtype:
        raise VolumeFormatError(f"{stem}: dtype {dtype!r}, expected {expect_dtype!r}")
    if any(d < 1 for d in dims):
        raise VolumeFormatError(f"{stem}: dims must be >= 1, got {dims}")
    if any(s <= 0 for s in spacing):
        raise VolumeFormatError(f"{stem}: non-positive spacing {spacing}")
    raw = Path(f"{stem}.raw")
    if not raw.exists():
        raise VolumeFormatError(f"missing raw payload {raw}")
    payload = raw.read_bytes()
    nx, ny, nz = dims
    itemsize = _DTYPES[dtype].itemsize
    if len(payload) != nx * ny * nz * itemsize:
        raise VolumeFormatError(
            f"{raw}: {len(payload) // itemsize} samples on disk, metadata declares {nx * ny * nz}"
        )
    array = np.frombuffer(payload, dtype=_DTYPES[dtype]).reshape(nz, ny, nx)
    return array, spacing, origin


def save_volume(v: CtVolume, path) -> None:
    """Write ``<path>.raw`` (int16 LE, x-fastest) and ``<path>.meta``."""
    _save_grid(v.values, _stem(path), "int16le", v.spacing, v.origin)


def load_volume(path) -> CtVolume:
    values, spacing, origin = _load_grid(_stem(path), "int16le")
    return CtVolume(values.astype(np.int16), spacing, origin)


def _mask_stem(path) -> Path:
    path = _stem(path)
    if path.suffix != ".mask":
        path = Path(f"{path}.mask")
    return path


def save_mask(m: VoxelMask, path, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    """Write ``<path>.mask.raw`` (uint8 0/1) with the volume sidecar schema."""
    _save_grid(m.bits.astype(np.uint8), _mask_stem(path), "uint8", spacing, origin)


def load_mask(path) -> VoxelMask:
    bits, _, _ = _load_grid(_mask_stem(path), "uint8")
    if bits.max(initial=0) > 1:
        raise VolumeFormatError(f"{path}: mask values must be 0/1")
    return VoxelMask(bits)


# --------------------------------------------------------------------------
# phantoms
# --------------------------------------------------------------------------


@dataclass
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    hu: int

    def contains(self, z, y, x) -> np.ndarray:
        cx, cy, cz = self.center
        ax, ay, az = self.semi_axes
        return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2 <= 1.0

    def contains_point(self, p, scale: float = 1.0) -> bool:
        return sum(((p[i] - self.center[i]) / (self.semi_axes[i] * scale)) ** 2 for i in range(3)) <= 1.0


@dataclass
class Cylinder:
    """Finite cylinder along a world axis (0=x, 1=y, 2=z)."""

    center: tuple[float, float, float]
    radius: float
    half_length: float
    hu: int
    axis: int = 2

    def contains(self, z, y, x) -> np.ndarray:
        coords = (x - self.center[0], y - self.center[1], z - self.center[2])
        a = self.axis
        u, w = (coords[i] for i in range(3) if i != a)
        return (u**2 + w**2 <= self.radius**2) & (np.abs(coords[a]) <= self.half_length)


@dataclass
class Lesion:
    center: tuple[float, float, float]
    radius: float
    hu: int = -100
    growth: float = 1.0

    def radius_at(self, t: int) -> float:
        return self.radius * self.growth**t

    def contains(self, z, y, x, t: int) -> np.ndarray:
        cx, cy, cz = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= self.radius_at(t) ** 2


@dataclass
class Slab:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    hu: int = 40

    def contains(self, z, y, x) -> np.ndarray:
        return (
            (x >= self.lo[0]) & (x <= self.hi[0])
            & (y >= self.lo[1]) & (y <= self.hi[1])
            & (z >= self.lo[2]) & (z <= self.hi[2])
        )


@dataclass
class PhantomSpec:
    """Geometric description of a longitudinal chest phantom (all lengths in mm)."""

    body: Ellipsoid
    lungs: tuple[Ellipsoid, Ellipsoid]
    bones: list = field(default_factory=list)
    lesions: list[Lesion] = field(default_factory=list)
    bed: Slab | None = None
    time_points: int = 1
    dims: tuple[int, int, int] = (128, 128, 128)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] | None = None

    def grid_origin(self) -> tuple[float, float, float]:
        """Voxel (0,0,0) centre; by default the grid is centred on the world origin."""
        if self.origin is not None:
            return tuple(self.origin)
        return tuple(-0.5 * (n - 1) * s for n, s in zip(self.dims, self.spacing))

    def validate(self) -> None:
        if self.time_points < 1:
            raise ValueError("time_points must be >= 1")
        if len(self.lungs) != 2:
            raise ValueError("exactly two lung ellipsoids are required")
        if any(n < 1 for n in self.dims) or any(s <= 0 for s in self.spacing):
            raise ValueError("invalid grid dims/spacing")
        for lung in self.lungs:
            if not _ellipsoid_inside(lung, self.body):
                raise ValueError(f"lung ellipsoid {lung.center} not inside body")
        for lesion in self.lesions:
            if lesion.growth <= 0:
                raise ValueError("lesion growth factor must be > 0")
            if lesion.radius <= 0:
                raise ValueError("lesion radius must be > 0")
            if not any(lung.contains_point(lesion.center) for lung in self.lungs):
                raise ValueError(f"lesion centre {lesion.center} not inside a lung")

    def to_dict(self) -> dict:
        def shape(obj):
            return {k: (list(v) if isinstance(v, tuple) else v) for k, v in obj.__dict__.items()}

        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "origin": None if self.origin is None else list(self.origin),
            "time_points": self.time_points,
            "body": shape(self.body),
            "lungs": [shape(lung) for lung in self.lungs],
            "bones": [dict(shape(b), kind=type(b).__name__.lower()) for b in self.bones],
            "lesions": [shape(les) for les in self.lesions],
            "bed": None if self.bed is None else shape(self.bed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> PhantomSpec:
        def ell(e):
            return Ellipsoid(_triple(e["center"]), _triple(e["semi_axes"]), int(e["hu"]))

        bones = []
        for b in d.get("bones", []):
            b = dict(b)
            kind = b.pop("kind", "cylinder")
            if kind == "ellipsoid":
                bones.append(ell(b))
            elif kind == "cylinder":
                bones.append(
                    Cylinder(_triple(b["center"]), float(b["radius"]), float(b["half_length"]),
                             int(b["hu"]), int(b.get("axis", 2)))
                )
            else:
                raise ValueError(f"unknown bone kind {kind!r}")
        bed = d.get("bed")
        spec = cls(
            body=ell(d["body"]),
            lungs=tuple(ell(x) for x in d["lungs"]),
            bones=bones,
            lesions=[
                Lesion(_triple(x["center"]), float(x["radius"]), int(x.get("hu", -100)),
                       float(x.get("growth", 1.0)))
                for x in d.get("lesions", [])
            ],
            bed=None if bed is None else Slab(_triple(bed["lo"]), _triple(bed["hi"]), int(bed.get("hu", 40))),
            time_points=int(d.get("time_points", 1)),
            dims=_triple(d.get("dims", (128, 128, 128)), int),
            spacing=_triple(d.get("spacing", (1.0, 1.0, 1.0))),
            origin=None if d.get("origin") is None else _triple(d["origin"]),
        )
        spec.validate()
        return spec

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> PhantomSpec:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"invalid phantom spec {path}: {exc}") from exc


def _ellipsoid_inside(inner: Ellipsoid, outer: Ellipsoid, n: int = 24) -> bool:
    """Sample the inner surface on a lat/long grid and test containment."""
    for i in range(n + 1):
        theta = math.pi * i / n
        for j in range(2 * n):
            phi = math.pi * j / n
            p = (
                inner.center[0] + inner.semi_axes[0] * math.sin(theta) * math.cos(phi),
                inner.center[1] + inner.semi_axes[1] * math.sin(theta) * math.sin(phi),
                inner.center[2] + inner.semi_axes[2] * math.cos(theta),
            )
            if not outer.contains_point(p):
                return False
    return True


def generate_phantom(spec: PhantomSpec, t: int) -> tuple[CtVolume, VoxelMask, VoxelMask]:
    """Voxelize ``spec`` at time index ``t``.

    A voxel takes a shape's HU iff its centre is inside the shape. Paint
    order (later wins): air, bed, body, bones, lungs, lesions.
    """
    spec.validate()
    if not 0 <= t < spec.time_points:
        raise ValueError(f"time index {t} outside [0, {spec.time_points})")
    nx, ny, nz = spec.dims
    ox, oy, oz = spec.grid_origin()
    sx, sy, sz = spec.spacing
    z = (oz + np.arange(nz) * sz)[:, None, None]
    y = (oy + np.arange(ny) * sy)[None, :, None]
    x = (ox + np.arange(nx) * sx)[None, None, :]
    shape = (nz, ny, nx)

    hu = np.full(shape, AIR_HU, dtype=np.int16)
    if spec.bed is not None:
        hu[np.broadcast_to(spec.bed.contains(z, y, x), shape)] = spec.bed.hu
    hu[np.broadcast_to(spec.body.contains(z, y, x), shape)] = spec.body.hu
    for bone in spec.bones:
        hu[np.broadcast_to(bone.contains(z, y, x), shape)] = bone.hu
    lungs = np.zeros(shape, dtype=bool)
    for lung in spec.lungs:
        inside = np.broadcast_to(lung.contains(z, y, x), shape)
        hu[inside] = lung.hu
        lungs |= inside
    lesion = np.zeros(shape, dtype=bool)
    for les in spec.lesions:
        inside = np.broadcast_to(les.contains(z, y, x, t), shape)
        hu[inside] = les.hu
        lesion |= inside
    lesion &= lungs
    volume = CtVolume(hu, spec.spacing, spec.grid_origin())
    return volume, VoxelMask(lungs), VoxelMask(lesion)


def default_chest_spec(
    dims: Sequence[int] = (128, 128, 128),
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    lesions: Sequence[Lesion] = (),
    time_points: int = 4,
    with_bed: bool = False,
) -> PhantomSpec:
    """A torso-like phantom scaled to fill ~80% of the grid extent."""
    ext = [n * s for n, s in zip(dims, spacing)]
    hx, hy, hz = (0.5 * e for e in ext)
    body = Ellipsoid((0.0, 0.0, 0.0), (0.8 * hx, 0.55 * hy, 0.85 * hz), 40)
    lung_axes = (0.28 * hx, 0.36 * hy, 0.62 * hz)
    lungs = (
        Ellipsoid((-0.38 * hx, -0.02 * hy, 0.05 * hz), lung_axes, -800),
        Ellipsoid((0.38 * hx, -0.02 * hy, 0.05 * hz), lung_axes, -800),
    )
    bones = [
        Cylinder((0.0, 0.3 * hy, 0.0), 0.06 * hx, 0.5 * hz, 700, axis=2),
        Cylinder((0.0, -0.38 * hy, 0.05 * hz), 0.04 * hx, 0.35 * hz, 700, axis=2),
    ]
    bed = None
    if with_bed:
        bed = Slab((-0.9 * hx, 0.6 * hy, -0.95 * hz), (0.9 * hx, 0.75 * hy, 0.95 * hz), 40)
    spec = PhantomSpec(
        body=body, lungs=lungs, bones=bones, lesions=list(lesions), bed=bed,
        time_points=time_points, dims=tuple(dims), spacing=tuple(spacing),
    )
    spec.validate()
    return spec
