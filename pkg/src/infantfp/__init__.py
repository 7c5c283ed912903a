"""Infant fingerprint recognition toolkit.

Minutiae hot-spot maps, classical minutiae extraction, growth-compensation
aging, minutiae/texture matching with weighted score fusion, a synthetic
longitudinal data generator, and an evaluation harness.
"""

from .core import (
    FusionWeights,
    Gender,
    GrayImage,
    Minutia,
    MinutiaeMap,
    MinutiaeSet,
    ScoreBundle,
    Template,
    Thumb,
    ValidationError,
)
from .minmap import MinmapParams, angle_difference, decode_minutiae_map, encode_minutiae_map
from .aging import AgingPolicy, age_image, age_minutiae_set, downscale_for_external, select_scale_factor
from .extract import ExtractParams, OrientationField, extract_from_image
from .match import (
    ExternalMatcher,
    MatchParams,
    NormalizationBounds,
    RankedCandidate,
    SubjectRecord,
    authenticate,
    fallback_embedding,
    fuse_scores,
    gender_gate,
    minutiae_match,
    multi_sample_fuse,
    normalize_scores,
    search,
    texture_match,
)
from .evaluate import EvalParams, build_protocol, calibrate_weights, cmc, eer, tar_at_far
from .iptf import load_template, read_template, save_template, write_template
from .synth import ImpressionParams, MasterFinger, PatternClass, build_benchmark, generate_master, render_impression

__version__ = "0.1.0"
