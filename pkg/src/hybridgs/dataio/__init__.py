from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import InitPoints, MultiViewDataset, camera_extent, load_dataset, save_dataset
from .init import init_scene
from .synthetic import SynthSpec, generate_synthetic

__all__ = [
    "load_checkpoint", "save_checkpoint", "InitPoints", "MultiViewDataset", "camera_extent",
    "load_dataset", "save_dataset", "init_scene", "SynthSpec", "generate_synthetic",
]
