"""Situation-aware facial emotion recognition toolkit.

Three parallel feature streams (face geometry + deep features, scene
background, place category) feed a two-layer fusion classifier over seven
basic emotions, alongside tooling for ablation studies, explanation
generation, synthetic mask occlusion, and consensus-based dataset curation.
"""

from .config import PipelineConfig
from .labels import EmotionLabel, IRRELEVANT, NUM_CLASSES
from .manifest import DatasetManifest, SampleRecord, load_manifest, save_manifest

__all__ = [
    "PipelineConfig",
    "EmotionLabel",
    "IRRELEVANT",
    "NUM_CLASSES",
    "DatasetManifest",
    "SampleRecord",
    "load_manifest",
    "save_manifest",
]

__version__ = "0.1.0"
