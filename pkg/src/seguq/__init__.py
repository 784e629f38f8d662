"""Voxel-wise uncertainty maps for binary segmentation and their reliability."""

from .calibration import (
    CalibrationClass,
    CalibrationReport,
    ReliabilityBins,
    bin_predictions,
    classify_subject_calibration,
    ece,
    ece_exact,
    merge_bins,
    signed_gap,
)
from .error_analysis import (
    ConfusionCounts,
    CorrectionOutcome,
    UncertainConfusion,
    apply_fn_addition,
    apply_fp_removal,
    bnf,
    confusion,
    dice,
    fn_addition_benefit,
    fp_removal_benefit,
    sweep_thresholds,
    uncertain_confusion,
    uncertainty_error_overlap,
)
from .measures import (
    derive_method_outputs,
    mean_probability,
    normalize_subjectwise,
    normalize_variance_global,
    normalized_entropy,
    uncertainty_to_confidence,
)
from .synth import Curve, SynthConfig, generate_masking_pair, generate_sample_stack, generate_subject
from .tensor_io import (
    DatasetManifest,
    ManifestError,
    TensorFormatError,
    ValidationError,
    load_manifest,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"
