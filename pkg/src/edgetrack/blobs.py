"""Connected-component blobs and the detection gates.

A blob becomes a detection only if its pixel count lies in
``[min_area, max_area]`` and its box keeps ``border_margin`` pixels from every
frame edge, so objects still entering the scene are not handed to the tracker.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BoundingBox, FrameDims, border_distance
from .errors import InvalidConfig

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class BlobConfig:
    min_area: int = 100
    max_area: int = 28800
    border_margin: int = 8
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.min_area <= self.max_area:
            raise InvalidConfig("need 0 < min_area <= max_area")
        if self.border_margin < 0:
            raise InvalidConfig("border_margin must be >= 0")
        if self.connectivity not in _STRUCTURES:
            raise InvalidConfig("connectivity must be 4 or 8")


@dataclass(frozen=True)
class Component:
    box: BoundingBox
    pixel_count: int
    ys: np.ndarray
    xs: np.ndarray

    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.ys.tolist(), self.xs.tolist()))


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    pixel_count: int
    frame_index: int = 0


def label_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Maximal connected foreground regions, in scan order of their first pixel."""
    if connectivity not in _STRUCTURES:
        raise InvalidConfig("connectivity must be 4 or 8")
    labels, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURES[connectivity])
    comps = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == k)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        box = BoundingBox(sl[1].start, sl[0].start, sl[1].stop - sl[1].start, sl[0].stop - sl[0].start)
        comps.append(Component(box, int(ys.size), ys, xs))
    return comps


def extract_detections(mask: np.ndarray, config: BlobConfig, frame_index: int = 0) -> list[Detection]:
    dims = FrameDims(mask.shape[1], mask.shape[0])
    dets = [
        Detection(c.box, c.pixel_count, frame_index)
        for c in label_components(mask, config.connectivity)
        if config.min_area <= c.pixel_count <= config.max_area
        and border_distance(c.box, dims) >= config.border_margin
    ]
    dets.sort(key=lambda d: (d.box.y, d.box.x))
    return dets
