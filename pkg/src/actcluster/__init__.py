"""Unsupervised clustering of wearable-sensor activity data via pseudo-label
training with graded label filtering, UMAP reduction, and HMM clustering."""

from .data import (DatasetSpec, SensorRecording, WindowSet, generate_synthetic,
                   load_canonical, make_windows)
from .pipeline import (PipelineConfig, RunRecord, evaluate, run_baseline,
                       run_outer_loop)

__version__ = "0.1.0"

__all__ = [
    "DatasetSpec", "SensorRecording", "WindowSet", "generate_synthetic",
    "load_canonical", "make_windows", "PipelineConfig", "RunRecord",
    "evaluate", "run_baseline", "run_outer_loop", "__version__",
]
