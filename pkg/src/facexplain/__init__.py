"""Model-agnostic, perturbation-based explanations for face-verification scores."""

from .concepts import borda_fuse, extract_concepts, kernel_shap, part_importance
from .embedding import (
    CacheEmbedder,
    Embedder,
    Embedding,
    OnnxEmbedder,
    SyntheticEmbedder,
    cosine_similarity,
    load_embedder,
)
from .errors import FaceXplainError, InputError
from .evaluation import PatchRect, PipelineConfig, cut_and_paste, masking_sensitivity, patch_test
from .geometry import (
    CANONICAL_REGIONS,
    LandmarkSet,
    RegionMaskSet,
    build_region_masks,
    default_region_specs,
    load_landmarks,
    load_region_specs,
    pair_weights,
)
from .perturbation import (
    ContributionTable,
    Explanation,
    MaskingStrategy,
    SimilarityMap,
    explain_pair,
    greedy_removal,
    single_removal,
)

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_REGIONS", "CacheEmbedder", "ContributionTable", "Embedder", "Embedding", "Explanation",
    "FaceXplainError", "InputError", "LandmarkSet", "MaskingStrategy", "OnnxEmbedder", "PatchRect",
    "PipelineConfig", "RegionMaskSet", "SimilarityMap", "SyntheticEmbedder", "borda_fuse",
    "build_region_masks", "cosine_similarity", "cut_and_paste", "default_region_specs", "explain_pair",
    "extract_concepts", "greedy_removal", "kernel_shap", "load_embedder", "load_landmarks",
    "load_region_specs", "masking_sensitivity", "pair_weights", "part_importance", "patch_test",
    "single_removal",
]
