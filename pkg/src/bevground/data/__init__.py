from bevground.data.schema import (
    CATEGORIES,
    VIEWPOINTS,
    GroundingSample,
    SplitManifest,
    load_points,
    read_samples,
    save_points,
    sector_of,
    write_samples,
)
from bevground.data.preprocess import label_attribute, preprocess
from bevground.data.synth import SynthConfig, synth_corpus
from bevground.data.stats import corpus_stats

__all__ = [
    "CATEGORIES",
    "VIEWPOINTS",
    "GroundingSample",
    "SplitManifest",
    "SynthConfig",
    "corpus_stats",
    "label_attribute",
    "load_points",
    "preprocess",
    "read_samples",
    "save_points",
    "sector_of",
    "synth_corpus",
    "write_samples",
]
