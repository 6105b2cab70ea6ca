from posematch.data.annotations import (
    AnnotationError,
    CategoryDef,
    DatasetSplit,
    InstanceAnnotation,
    load_annotations,
    load_split,
    save_annotations,
    save_split,
)
from posematch.data.episodes import Episode, SamplingError, sample_episode
from posematch.data.preprocess import PreprocessError, ProcessedSample, preprocess
from posematch.data.synthetic import SHAPE_FAMILIES, generate_synthetic

__all__ = [
    "AnnotationError",
    "CategoryDef",
    "DatasetSplit",
    "InstanceAnnotation",
    "load_annotations",
    "load_split",
    "save_annotations",
    "save_split",
    "Episode",
    "SamplingError",
    "sample_episode",
    "PreprocessError",
    "ProcessedSample",
    "preprocess",
    "SHAPE_FAMILIES",
    "generate_synthetic",
]
