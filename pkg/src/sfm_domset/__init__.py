"""Shrink an SfM model to a dominating set of its reference images.

Images are linked in a directed localizability graph (image ``u`` can localize
image ``v`` using only ``u``'s points); a small dominating set of that graph
keeps coverage while cutting the points a query has to be matched against.
"""

__version__ = "0.1.0"

from .correspondence import MatchSet, NoiseConfig, QueryView, make_provider
from .domgraph import (
    DominatingSet,
    LocalizabilityGraph,
    best_dominating_set,
    build_graph,
    exact_min_dominating_set,
    greedy_dominating_set,
    is_dominating,
    random_baselines,
)
from .evaluation import EvalReport, compare, evaluate
from .geometry import EstimatorConfig, PoseEstimate, ransac_pnp, refine_pose, solve_pnp_linear
from .model import Bbox3, CameraIntrinsics, Point3D, Pose, RefImage, SfmModel, filter_by_dominating_set
from .model_io import load_model, load_native, load_reconstruction_text, save_native
from .synth import Scene, SynthConfig, generate_scene

__all__ = [
    "Bbox3", "CameraIntrinsics", "DominatingSet", "EstimatorConfig", "EvalReport", "LocalizabilityGraph",
    "MatchSet", "NoiseConfig", "Point3D", "Pose", "PoseEstimate", "QueryView", "RefImage", "Scene", "SfmModel",
    "SynthConfig", "best_dominating_set", "build_graph", "compare", "evaluate", "exact_min_dominating_set",
    "filter_by_dominating_set", "generate_scene", "greedy_dominating_set", "is_dominating", "load_model",
    "load_native", "load_reconstruction_text", "make_provider", "random_baselines", "ransac_pnp", "refine_pose",
    "save_native", "solve_pnp_linear",
]
