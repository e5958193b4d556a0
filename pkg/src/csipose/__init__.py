"""WiFi CSI to 3D human pose: preprocessing, spectral graph regression,
metrics, and a reproducible training harness."""

from .dataset import (CsiSample, DatasetIndex, SplitSpec, SplitStrategy,
                      ingest_raw_tree, load_mmfi, make_split, materialize)
from .metrics import (MetricsReport, evaluate_poses, mpjpe, pa_mpjpe, pck,
                      per_joint_mpjpe, procrustes_align)
from .model import (ActivationTrace, ModelConfig, PoseNet, aggregate_gap,
                    cheb_gconv, desk_model_config, mhsa, param_count,
                    tiny_model_config)
from .preprocess import (PhaseCalibration, RawCsiFrame, normalize_sample,
                         preprocess_window)
from .skeleton import (DEFAULT_EDGES, JOINT_NAMES, N_JOINTS, ChebBasis,
                       SkeletonGraph, build_skeleton, cheb_basis)
from .synth import SynthConfig, synth_dataset
from .training import (TrainConfig, TrainHistory, desk_train_config, evaluate,
                       grad_check, lr_at, mse_loss, train)

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "ChebBasis", "CsiSample", "DatasetIndex", "DEFAULT_EDGES",
    "JOINT_NAMES", "MetricsReport", "ModelConfig", "N_JOINTS", "PhaseCalibration",
    "PoseNet", "RawCsiFrame", "SkeletonGraph", "SplitSpec", "SplitStrategy",
    "SynthConfig", "TrainConfig", "TrainHistory", "aggregate_gap",
    "build_skeleton", "cheb_basis", "cheb_gconv", "desk_model_config",
    "desk_train_config", "evaluate", "evaluate_poses", "grad_check",
    "ingest_raw_tree", "load_mmfi", "lr_at", "make_split", "materialize",
    "mhsa", "mpjpe", "mse_loss", "normalize_sample", "pa_mpjpe", "param_count",
    "pck", "per_joint_mpjpe", "preprocess_window", "procrustes_align",
    "synth_dataset", "tiny_model_config", "train",
]
