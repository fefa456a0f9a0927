"""Grounding of parsed instructions into annotations and behaviors."""

from .corpus import LabeledExample, generate_corpus, load_corpus, save_corpus
from .model import (
    Annotation,
    Behavior,
    GroundingContext,
    GroundingModel,
    Instance,
    packaged_corpus_path,
    packaged_model_path,
)
from .spaces import AnnotationSpace, Vocabulary, annotation_candidates
from .train import assignment_features, train_grounding

__all__ = [
    "Annotation",
    "AnnotationSpace",
    "Behavior",
    "GroundingContext",
    "GroundingModel",
    "Instance",
    "LabeledExample",
    "Vocabulary",
    "annotation_candidates",
    "assignment_features",
    "generate_corpus",
    "load_corpus",
    "packaged_corpus_path",
    "packaged_model_path",
    "save_corpus",
    "train_grounding",
]
