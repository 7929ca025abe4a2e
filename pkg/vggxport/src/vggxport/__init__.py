"""vggxport: one-shot converter from torchvision-style VGG-19 checkpoints
to the histotex binary weight format, plus reference-activation fixtures."""

__version__ = "0.1.0"

from .exporter import (
    CheckpointError,
    MissingLayerError,
    ShapeAnomalyError,
    emit_fixture,
    export_weights,
    load_checkpoint,
    reference_activations,
)
