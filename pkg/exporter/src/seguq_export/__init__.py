"""Bridge from segmentation models to the seguq evaluation formats."""

from .export import ExportError, ExportJob, export_dataset, export_subject, write_manifest
from .models import (
    ToyAleatoricSegmenter,
    ToyErrorPredictor,
    ToyLogitSegmenter,
    ToySegmenter,
    load_model,
)
from .tensorfmt import read_tensor, write_tensor

__version__ = "0.1.0"
