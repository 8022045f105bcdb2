"""Camera-LiDAR semantic grid mapping with vectorization and chamfer-AP evaluation."""

from .association import PointCloud, SemanticMask, SemanticPointCloud, associate, association_coverage
from .evaluation import EvalConfig, EvalReport, EvalSample, ap_class, ap_single, chamfer, evaluate, transfer_ratio
from .geometry import Camera, CameraIntrinsics, Pose, RigidTransform, SensorRig, compose, invert
from .grid import ConfusionMatrix, GridMapConfig, IntensityPrior, ProbGrid, SemanticMap, crop_ego, update_cell
from .matching import instance_match, point_cost
from .vector import MapClass, MapInstance, Polyline, VectorMap, equivalent_orderings, resample
from .vectorizer import VectorizerConfig, register_vectorizer, vectorize

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "SemanticMask", "SemanticPointCloud", "associate", "association_coverage",
    "EvalConfig", "EvalReport", "EvalSample", "ap_class", "ap_single", "chamfer", "evaluate", "transfer_ratio",
    "Camera", "CameraIntrinsics", "Pose", "RigidTransform", "SensorRig", "compose", "invert",
    "ConfusionMatrix", "GridMapConfig", "IntensityPrior", "ProbGrid", "SemanticMap", "crop_ego", "update_cell",
    "instance_match", "point_cost",
    "MapClass", "MapInstance", "Polyline", "VectorMap", "equivalent_orderings", "resample",
    "VectorizerConfig", "register_vectorizer", "vectorize",
]
