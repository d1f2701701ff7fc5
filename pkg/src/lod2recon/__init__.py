"""LoD-2 building reconstruction from an orthophoto and a digital surface model."""
from .config import Config, validate_config
from .errors import ReconstructionError
from .geodata_io import GeoTransform, RoadNetwork, Scene, load_scene, save_scene
from .pipeline import run_pipeline

__all__ = ["Config", "GeoTransform", "ReconstructionError", "RoadNetwork", "Scene",
           "load_scene", "run_pipeline", "save_scene", "validate_config"]
__version__ = "0.1.0"
