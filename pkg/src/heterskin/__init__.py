"""Skin weight prediction for rigged characters: voxel distance fields, a
heterogeneous mesh/skeleton graph network, and a skinning evaluation lab."""

from .rigcore import Mesh, Rig, Skeleton, WeightRows, load_rig, save_rig

__all__ = ["Mesh", "Rig", "Skeleton", "WeightRows", "load_rig", "save_rig"]
__version__ = "0.1.0"
