"""Spatially aware multi-head attention over bounding-box graphs.

A small numpy stack: a reverse-mode autodiff tensor core, a typed
spatial-relation graph over boxes, per-head attention bias masks derived
from that graph, a trainable multimodal transformer with a pointer-copy
decoder, answer metrics, and a seeded synthetic-scene harness for
ablation experiments.
"""

from .autodiff import (NEG_INF, Parameter, Tensor, backward, bce_with_logits,
                       gradient_check, layer_norm, masked_softmax, zero_grads)
from .geometry import (INVERSE, RELATION_NAMES, BoundingBox, RelationType,
                       SpatialGraph, build_graph, classify_pair, randomize_graph,
                       reverse_graph)
from .harness import (SPATIAL_PREPOSITIONS, ExperimentSpec, ablation_grid,
                      evaluate, filter_spatial_questions, run_experiment,
                      train_model)
from .masks import (AttentionBias, HeadAssignment, ModalityLayout,
                    assign_head_relations, build_bias, mask_density, top_k_filter)
from .metrics import EvalRecord, anls, edit_distance, vqa_accuracy
from .model import (DecodeState, Model, ModelConfig, TokenBatch, beam_search,
                    parse_structure)
from .optim import adam_step, clip_grads, learning_rate
from .synth import (SceneParams, SyntheticScene, Vocabulary, generate_dataset,
                    read_dataset, write_dataset)

__all__ = [
    "NEG_INF", "Parameter", "Tensor", "backward", "bce_with_logits",
    "gradient_check", "layer_norm", "masked_softmax", "zero_grads",
    "INVERSE", "RELATION_NAMES", "BoundingBox", "RelationType", "SpatialGraph",
    "build_graph", "classify_pair", "randomize_graph", "reverse_graph",
    "SPATIAL_PREPOSITIONS", "ExperimentSpec", "ablation_grid", "evaluate",
    "filter_spatial_questions", "run_experiment", "train_model",
    "AttentionBias", "HeadAssignment", "ModalityLayout", "assign_head_relations",
    "build_bias", "mask_density", "top_k_filter",
    "EvalRecord", "anls", "edit_distance", "vqa_accuracy",
    "DecodeState", "Model", "ModelConfig", "TokenBatch", "beam_search",
    "parse_structure",
    "adam_step", "clip_grads", "learning_rate",
    "SceneParams", "SyntheticScene", "Vocabulary", "generate_dataset",
    "read_dataset", "write_dataset",
]
