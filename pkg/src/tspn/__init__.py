"""Temporal span proposals for video visual relation detection.

Trajectory-pair relationness scoring, joint predicate x temporal-sector
prediction, a segment-based baseline, the detection / tagging evaluation
protocol, a proposal cost model and a synthetic benchmark generator, on a
small numpy autograd kernel.
"""
from .data import BBox, RelationInstance, Trajectory, VideoAnnotation, load_annotations, \
    save_annotations
from .model import TSPNConfig, predict, train

__version__ = "0.1.0"

__all__ = ["BBox", "RelationInstance", "Trajectory", "VideoAnnotation", "load_annotations",
           "save_annotations", "TSPNConfig", "predict", "train"]
