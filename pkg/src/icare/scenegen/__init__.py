"""Synthetic intersection scenes with rule-based importance labels."""
from icare.scenegen.dataset import Dataset, generate_dataset, split_of
from icare.scenegen.generate import SceneConfig, generate_scene, scene_rng
from icare.scenegen.oracle import OracleConfig, importance_oracle, perturb_annotations
from icare.scenegen.raster import CHANNELS, RASTER_SIZE, Raster, rasterize
from icare.scenegen.world import EgoState, RoadUser, Scene, ego_path_ground_truth, unroll_path

__all__ = [
    "CHANNELS", "Dataset", "EgoState", "OracleConfig", "RASTER_SIZE", "Raster", "RoadUser", "Scene",
    "SceneConfig", "ego_path_ground_truth", "generate_dataset", "generate_scene", "importance_oracle",
    "perturb_annotations", "rasterize", "scene_rng", "split_of", "unroll_path",
]
