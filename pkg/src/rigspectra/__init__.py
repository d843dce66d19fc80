"""Skeleton and skinning transfer through spectral mesh representations.

The pipeline: build truncated Laplace-Beltrami bases on a rigged source
mesh and an un-rigged target, estimate a functional map from a few
landmark pairs, fit a localized joint regressor on the source, express it
on the spectral basis, and push it through the map to obtain the target
skeleton (optionally with skinning weights and LBS playback).
"""

__version__ = "0.1.0"

from .mesh import TriMesh, LandmarkSet, load_mesh, save_mesh, rigid_transform
from .spectral import CotanOperator, SpectralBasis, assemble_cotan, eigenbasis
from .fmap import FunctionalMap, PointToPointMap
from .regressor import Skeleton, SkinWeights, SpatialRegressor, SpectralRegressor
from .skinning import Pose, JointTransforms, rodrigues, forward_kinematics, lbs_deform
from .transfer import TransferResult

__all__ = [
    "TriMesh", "LandmarkSet", "load_mesh", "save_mesh", "rigid_transform",
    "CotanOperator", "SpectralBasis", "assemble_cotan", "eigenbasis",
    "FunctionalMap", "PointToPointMap",
    "Skeleton", "SkinWeights", "SpatialRegressor", "SpectralRegressor",
    "Pose", "JointTransforms", "rodrigues", "forward_kinematics", "lbs_deform",
    "TransferResult",
    "__version__",
]
