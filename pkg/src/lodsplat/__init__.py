"""Software tile renderer and benchmark harness for hierarchical LoD Gaussian-splat scenes."""

from .builder import (SyntheticSceneSpec, TreeBuildConfig, ancestor_chain, build_tree,
                      generate_synthetic_scene, roots_only_tree)
from .io import SceneFormatError, load_scene, save_scene
from .lod_filter import FilterConfig, FilterResult, filter_oracle, filter_parallel, filter_serial
from .metrics import (CalibrationError, CalibrationReport, calibrate, instrumented_render, psnr,
                      redundancy_histogram, ssim)
from .projection import Projected2D, ProjectedBatch, project, project_batch
from .raster import (THREE_SIGMA, RenderOutput, ShrinkMode, TileGrid, alpha_blend, bin_to_tiles,
                     effective_radius, render, shrink_radius, sort_pairs)
from .scene import ROOT, Camera, GaussianNode, LoDTree, validate_tree

__all__ = [
    "ROOT", "Camera", "GaussianNode", "LoDTree", "validate_tree",
    "SceneFormatError", "load_scene", "save_scene",
    "SyntheticSceneSpec", "TreeBuildConfig", "ancestor_chain", "build_tree", "generate_synthetic_scene",
    "roots_only_tree",
    "Projected2D", "ProjectedBatch", "project", "project_batch",
    "FilterConfig", "FilterResult", "filter_oracle", "filter_parallel", "filter_serial",
    "THREE_SIGMA", "RenderOutput", "ShrinkMode", "TileGrid", "alpha_blend", "bin_to_tiles",
    "effective_radius", "render", "shrink_radius", "sort_pairs",
    "CalibrationError", "CalibrationReport", "calibrate", "instrumented_render", "psnr",
    "redundancy_histogram", "ssim",
]
