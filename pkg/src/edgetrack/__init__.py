"""Multiple object tracking for embedded cameras.

An adaptive background-subtraction detector finds moving blobs, single-object
trackers follow them, and a small state machine decides when tracks start and
stop. See :mod:`edgetrack.pipeline` for the per-frame loop.
"""
from .core import BoundingBox, FrameDims, area, border_distance, clamp_to_frame, iou
from .errors import EdgeTrackError

__all__ = ["BoundingBox", "FrameDims", "EdgeTrackError", "area", "border_distance", "clamp_to_frame", "iou"]
__version__ = "0.1.0"
