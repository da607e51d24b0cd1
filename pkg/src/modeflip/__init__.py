"""modeflip: universal acoustic prepend attacks that override the task
setting of multi-task speech models, plus the evaluation and analysis suite
for measuring them."""

__version__ = "0.1.0"

from .adapter import ModelAdapter, TaskTag, TokenSequence, load_adapter
from .attack import (
    PRESETS,
    AttackConfig,
    TargetSet,
    TrainingTrace,
    generate_targets,
    train_universal_segment,
)
from .audio import (
    AdversarialSegment,
    Waveform,
    load_segment,
    load_wav,
    prepend,
    project_linf,
    save_segment,
    save_wav,
)
from .manifest import ManifestEntry, load_manifest, load_utterances, save_manifest, split
from .synth import SyntheticSpec, ToyExample, generate_synthetic_dataset, write_dataset
from .toymodel import ToyAdapter, ToyModelConfig, load_checkpoint, save_checkpoint, train_toy_model

__all__ = [
    "AdversarialSegment",
    "AttackConfig",
    "ManifestEntry",
    "ModelAdapter",
    "PRESETS",
    "SyntheticSpec",
    "TargetSet",
    "TaskTag",
    "TokenSequence",
    "ToyAdapter",
    "ToyExample",
    "ToyModelConfig",
    "TrainingTrace",
    "Waveform",
    "generate_synthetic_dataset",
    "generate_targets",
    "load_adapter",
    "load_checkpoint",
    "load_manifest",
    "load_segment",
    "load_utterances",
    "load_wav",
    "prepend",
    "project_linf",
    "save_checkpoint",
    "save_manifest",
    "save_segment",
    "save_wav",
    "split",
    "train_toy_model",
    "train_universal_segment",
    "write_dataset",
]
