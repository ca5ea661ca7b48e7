"""Human activity recognition from synthetic video with factored dynamic Bayesian networks.

Pipeline: render labeled scenes (:mod:`dpnhar.scene`), difference frames into
per-ROI 8-component descriptors (:mod:`dpnhar.features`), fit one sequence
model per (class, ROI) with a factored phase/motion DBN (:mod:`dpnhar.dbn`)
or a flat Gaussian HMM baseline (:mod:`dpnhar.hmm`), and fuse the four ROI
posteriors by plurality vote (:mod:`dpnhar.fusion`).
"""
from .dataset import DatasetManifest, load_manifest, synth_dataset
from .dbn import DbnConfig, DbnParams, FactoredDBN, dbn_em_fit, dbn_forward, dbn_forward_backward, dbn_init
from .exceptions import DpnharError, IoError, NumericalFailure, ValidationError
from .experiment import (
    ExperimentConfig,
    FeatureConfig,
    FeatureDataset,
    Metrics,
    emit_figure_data,
    evaluate,
    make_splits,
    run_noise_experiment,
    train_bank,
)
from .features import (
    BoundingBox,
    FeatureSequence,
    RoiFeatureExtractor,
    RoiKind,
    detect_body_box,
    extract_component_features,
    extract_sequence_features,
    foreground_mask,
    partition_rois,
)
from .fusion import (
    ActivityClassifier,
    Decision,
    FusionConfig,
    ModelBank,
    PosteriorVector,
    class_posteriors,
    classify_sequence,
    component_vote,
    posterior_trajectory,
    subsample_window,
)
from .hmm import GaussianHMM, HmmConfig, HmmParams, hmm_em_fit, hmm_forward, hmm_init
from .pca import FusedPCA, PcaModel, pca_fit, pca_project
from .persistence import load_bank, save_bank
from .scene import ActivityClass, FrameSequence, GroundTruth, NoiseConfig, SceneConfig, add_noise, synth_sequence

__version__ = "0.1.0"

__all__ = [
    "ActivityClass", "ActivityClassifier", "BoundingBox", "DatasetManifest", "DbnConfig", "DbnParams",
    "Decision", "DpnharError", "ExperimentConfig", "FactoredDBN", "FeatureConfig", "FeatureDataset",
    "FeatureSequence", "FrameSequence", "FusedPCA", "FusionConfig", "GaussianHMM", "GroundTruth",
    "HmmConfig", "HmmParams", "IoError", "Metrics", "ModelBank", "NoiseConfig", "NumericalFailure",
    "PcaModel", "PosteriorVector", "RoiFeatureExtractor", "RoiKind", "SceneConfig", "ValidationError",
    "add_noise", "class_posteriors", "classify_sequence", "component_vote", "dbn_em_fit", "dbn_forward",
    "dbn_forward_backward", "dbn_init", "detect_body_box", "emit_figure_data", "evaluate",
    "extract_component_features", "extract_sequence_features", "foreground_mask", "hmm_em_fit",
    "hmm_forward", "hmm_init", "load_bank", "load_manifest", "make_splits", "partition_rois", "pca_fit",
    "pca_project", "posterior_trajectory", "run_noise_experiment", "save_bank", "subsample_window",
    "synth_dataset", "synth_sequence", "train_bank",
]
