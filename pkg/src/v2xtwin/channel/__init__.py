"""Deterministic ray-based channel prediction."""

from .antenna import ISOTROPIC, AntennaPattern
from .bias import BiasTracker, apply_bias_correction
from .detail import DEFAULT_RAY_CAP, PRESETS, DetailIndexConfig, DetailIndexError, detail_index
from .em import fresnel_reflection, knife_edge_coefficient, pec_reflection, slab_transmission
from .links import ChannelRealization, LinkPrediction, predict_links, realize_link, write_paths_csv
from .paths import (
    Interaction,
    PropagationPath,
    Tap,
    build_cir,
    eval_path_gain,
    eval_path_matrix,
    rms_delay_spread,
    rssi_from_paths,
)
from .sbr import shoot_and_bounce

__all__ = [
    "AntennaPattern", "BiasTracker", "ChannelRealization", "DEFAULT_RAY_CAP", "DetailIndexConfig",
    "DetailIndexError", "ISOTROPIC", "Interaction", "LinkPrediction", "PRESETS", "PropagationPath",
    "Tap", "apply_bias_correction", "build_cir", "detail_index", "eval_path_gain",
    "eval_path_matrix", "fresnel_reflection", "knife_edge_coefficient", "pec_reflection",
    "predict_links", "realize_link", "rms_delay_spread", "rssi_from_paths", "shoot_and_bounce",
    "slab_transmission", "write_paths_csv",
]
