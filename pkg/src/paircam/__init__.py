"""paircam: paired attribution maps and metrics for similarity vision models."""

from .cam import baseline_grad_cam, deep_similarity, gradient_interaction, interaction_cam, joint_activation, upsample_normalize
from .data import generate_corpus, load_or_generate_corpus, shape_image
from .inversion import InversionConfig, alpha_norm, invert_features, tv_regularizer
from .methods import ExplainOptions, bench_methods, evaluate_pairs, list_methods, make_explainer
from .metrics import (
    EvaluationCurve,
    InsertionDeletionResult,
    SanityTrace,
    SensitivityResult,
    auc,
    average_drop,
    insertion_deletion_curve,
    max_sensitivity,
    pixel_ranking,
    sanity_check,
)
from .model import (
    EmbeddingBundle,
    SimilarityModel,
    build_toy_model,
    load_checkpoint,
    save_checkpoint,
    similarity,
)
from .occlusion import MaskSample, OcclusionConfig, conditional_occlusion, pairwise_occlusion, sample_occlusion_mask
from .report import pearson, read_tensor, summarize, write_tensor
from .saliency import averaged_transforms, input_x_gradient, postprocess_map, smooth_grad
from .train import ToyTrainConfig, contrastive_margin, train_toy_contrastive
from .transforms import (
    InterpolationSchedule,
    TransformSchedule,
    apply_transform,
    augment_pair,
    interpolation_schedule,
    make_strength_schedule,
)
from .types import ExplanationPair, ImagePair

__version__ = "0.1.0"
