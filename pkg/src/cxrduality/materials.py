"""Air / soft-tissue / bone decomposition and chest body-part isolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import AIR_HU, CtVolume, VoxelMask

AIR_MAX_HU = -500
BONE_MIN_HU = 300

AIR, SOFT, BONE = 0, 1, 2
MATERIALS = ("air", "soft", "bone")

_FACE_CONNECTED = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class MaterialMasks:
    air: VoxelMask
    soft: VoxelMask
    bone: VoxelMask

    def __post_init__(self):
        if not (self.air.dims == self.soft.dims == self.bone.dims):
            raise ValueError("material masks differ in dims")

    @property
    def dims(self):
        return self.air.dims

    def labels(self) -> np.ndarray:
        """uint8 label volume (AIR/SOFT/BONE) in ``[z, y, x]`` layout."""
        out = np.zeros(self.air.bits.shape, dtype=np.uint8)
        out[self.soft.bits] = SOFT
        out[self.bone.bits] = BONE
        return out

    def is_partition(self) -> bool:
        total = self.air.bits.astype(np.int8) + self.soft.bits + self.bone.bits
        return bool(np.all(total == 1))


def decompose(v: CtVolume, air_max: float = AIR_MAX_HU, bone_min: float = BONE_MIN_HU) -> MaterialMasks:
    """Split voxels into air (HU <= air_max), bone (HU >= bone_min) and soft tissue."""
    if not air_max < bone_min:
        raise ValueError(f"air_max ({air_max}) must be below bone_min ({bone_min})")
    hu = v.values
    air = hu <= air_max
    bone = hu >= bone_min
    return MaterialMasks(VoxelMask(air), VoxelMask(~air & ~bone), VoxelMask(bone))


def fill_holes(bits: np.ndarray) -> np.ndarray:
    """Fill everything not reachable from the volume boundary through the complement.

    Flooding uses 6-connectivity, so enclosed cavities are filled in 3-D rather
    than slice by slice.
    """
    return ndimage.binary_fill_holes(bits, structure=_FACE_CONNECTED)


def largest_component(bits: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(bits, structure=_FACE_CONNECTED)
    if n <= 1:
        return bits.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def chest_mask(m: MaterialMasks) -> VoxelMask:
    """Body region with lung cavities filled and detached objects (bed) dropped."""
    body = ~m.air.bits | m.soft.bits | m.bone.bits
    if not body.any():
        return VoxelMask(body)
    filled = fill_holes(body)
    return VoxelMask(largest_component(filled))


def apply_chest_mask(v: CtVolume, chest: VoxelMask) -> CtVolume:
    chest.check_matches(v)
    values = np.where(chest.bits, v.values, np.int16(AIR_HU))
    return CtVolume(values, v.spacing, v.origin)
