from .camera import Camera, look_at
from .project import SplatPrimitive, preprocess, project_3d, scene_tensors, slice_project_4d
from .render import (RenderOptions, RenderOutput, composite, density_map, rasterize,
                     reference_render)

__all__ = [
    "Camera", "look_at", "SplatPrimitive", "preprocess", "project_3d", "scene_tensors",
    "slice_project_4d", "RenderOptions", "RenderOutput", "composite", "density_map",
    "rasterize", "reference_render",
]
