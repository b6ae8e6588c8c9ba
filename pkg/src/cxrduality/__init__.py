"""Synthetic radiographs from CT phantoms, pneumonia severity scoring and CT/CXR trend agreement."""

from ._core import BACKEND
from .mapalgebra import BBox
from .materials import MaterialMasks, chest_mask, decompose
from .projector import AttenuationTable, DetectorGeometry, Radiograph, Spectrum, project
from .severity import SeverityRecord, score_image
from .volume import CtVolume, PhantomSpec, VoxelMask, generate_phantom, load_volume, save_volume

__all__ = [
    "BACKEND",
    "AttenuationTable",
    "BBox",
    "CtVolume",
    "DetectorGeometry",
    "MaterialMasks",
    "PhantomSpec",
    "Radiograph",
    "SeverityRecord",
    "Spectrum",
    "VoxelMask",
    "chest_mask",
    "decompose",
    "generate_phantom",
    "load_volume",
    "project",
    "save_volume",
    "score_image",
]
__version__ = "0.1.0"
