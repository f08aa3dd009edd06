"""Failure-mode diagnostics for training-run telemetry.

The package ingests serialized run telemetry (feature matrices, per-checkpoint
logits, weight snapshots, activation/gradient maps, image tiles) and computes
cue-sensitivity profiles, per-sample hardness, memorization tendency,
intrinsic-dimension estimates, representation similarity, uncertainty
calibration and saliency concordance. Every analysis is a deterministic
function of (telemetry, parameters, seed).
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    RundiagError,
    TelemetryError,
)
from .telemetry import (
    LoadedRun,
    RunManifest,
    correctness_matrix,
    load_run,
    read_tensor,
    standardize,
    write_tensor,
)
from .perturb import (
    FrequencyBand,
    SensitivityProfile,
    apply_manipulation,
    channel_jitter,
    gaussian_blur,
    grid_shuffle,
    js_divergence,
    manipulation_names,
    octave_bands,
    sensitivity_profile,
    suppress_band,
)
from .hardness import (
    HardnessProfile,
    aum,
    composite,
    el2n,
    forgetting_score,
    learning_speed,
    prediction_depth,
    prototypicality,
    vog,
)
from .memorization import FoldPair, mem_score, mt_hard, select_hard_subset
from .geometry import (
    IDEstimate,
    NeighborIndex,
    id_2nn,
    id_lpca,
    id_mle,
    pca_channel_reduce,
    twonn_fit,
)
from .similarity import (
    cka,
    cohens_kappa,
    intra_cka_matrix,
    kernel_total_variation,
    weight_displacement,
)
from .uncertainty import (
    EUScore,
    TrainStats,
    alignment_score,
    abstention_curve,
    auprc,
    auroc,
    classification_metrics,
    energy,
    eu_scores,
    fit_train_stats,
    smooth_ece,
)
from .saliency import (
    SaliencyMap,
    concordance_score,
    dataset_concordance,
    gradcam_pp,
)
from . import synth
