"""Single-object box trackers.

Two kinds share one interface. The correlation fallback keeps a 64x64
nearest-neighbor template of the target and searches every integer
displacement of the box inside a context region (the box scaled about its
center) for the best normalized cross-correlation. The learned kind feeds a
previous-frame target crop and a current-frame search crop to a regression
model that returns the box corners inside the search crop.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import signal

from .core import BoundingBox, FrameDims, clamp_to_frame, scale_box, within_frame
from .errors import BoxTooSmall, DegenerateSearchRegion, InvalidConfig, ModelLoadFailure, OutOfFrame

TEMPLATE_SIZE = (64, 64)
MIN_BOX_SIDE = 4
DEFAULT_CONTEXT = 2.0
DEFAULT_MODEL_INPUT = 227


class RegressionModel(Protocol):
    """Pure inference: two square uint8 patches in, four reals out.

    The output is ``(x1, y1, x2, y2)`` in pixel units of the search patch as
    fed to the model (``input_size`` square).
    """

    input_size: int

    def predict(self, target: np.ndarray, search: np.ndarray) -> Sequence[float]: ...


@dataclass(frozen=True)
class TrackerKind:
    name: str = "fallback"
    model_path: str | None = None
    input_size: int = DEFAULT_MODEL_INPUT
    model: RegressionModel | None = field(default=None, compare=False, repr=False)

    @classmethod
    def parse(cls, text: str, input_size: int = DEFAULT_MODEL_INPUT) -> TrackerKind:
        """``fallback`` or ``model:<path>``."""
        if text == "fallback":
            return cls()
        if text.startswith("model:") and len(text) > 6:
            return cls("learned_regressor", text[6:], input_size)
        raise InvalidConfig(f"tracker must be 'fallback' or 'model:<path>', got {text!r}")

    @classmethod
    def learned(cls, model: RegressionModel) -> TrackerKind:
        return cls("learned_regressor", None, model.input_size, model)

    @property
    def is_learned(self) -> bool:
        return self.name == "learned_regressor"

    def spec(self) -> str:
        return f"model:{self.model_path}" if self.is_learned else "fallback"


@dataclass
class TrackerState:
    template: np.ndarray
    last_box: BoundingBox
    context_factor: float = DEFAULT_CONTEXT
    kind: TrackerKind = field(default_factory=TrackerKind)
    last_score: float = 1.0


def _luma(frame) -> np.ndarray:
    return frame.luma if hasattr(frame, "luma") else np.asarray(frame)


def _dims(plane: np.ndarray) -> FrameDims:
    return FrameDims(plane.shape[1], plane.shape[0])


def _sample_index(n_out: int, n_in: int) -> np.ndarray:
    """Nearest-neighbor source index for each output cell (pixel centers)."""
    return ((2 * np.arange(n_out) + 1) * n_in) // (2 * n_out)


def crop_patch(frame, box: BoundingBox, context_factor: float, out_size: tuple[int, int]) -> np.ndarray:
    """Context-scaled, frame-clamped region resampled to ``out_size`` = (w, h)."""
    plane = _luma(frame)
    region = clamp_to_frame(scale_box(box, context_factor), _dims(plane))
    out_w, out_h = out_size
    rows = region.y + _sample_index(out_h, region.h)
    cols = region.x + _sample_index(out_w, region.w)
    return plane[np.ix_(rows, cols)]


# -- learned regressor ---------------------------------------------------------


class TorchScriptRegressor:
    """Adapter for a TorchScript module mapping two (1,1,S,S) float tensors to (1,4)."""

    def __init__(self, path, input_size: int = DEFAULT_MODEL_INPUT):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadFailure("torch is required to load TorchScript models") from exc
        try:
            self._module = torch.jit.load(str(path), map_location="cpu").eval()
        except Exception as exc:  # torch raises assorted types for bad files
            raise ModelLoadFailure(f"cannot load model {path}: {exc}") from exc
        self._torch = torch
        self.input_size = input_size

    def predict(self, target, search):
        torch = self._torch

        def tensor(a):
            return torch.from_numpy(np.asarray(a, dtype=np.float32))[None, None]

        with torch.no_grad():
            out = self._module(tensor(target), tensor(search))
        return [float(v) for v in out.reshape(-1)[:4]]


@functools.lru_cache(maxsize=8)
def load_regressor(path: str, input_size: int = DEFAULT_MODEL_INPUT) -> RegressionModel:
    p = Path(path)
    if not p.is_file():
        raise ModelLoadFailure(f"model file {p} not found")
    try:
        with open(p, "rb"):
            pass
    except OSError as exc:
        raise ModelLoadFailure(f"model file {p} unreadable: {exc}") from exc
    return TorchScriptRegressor(p, input_size)


def _resolve_model(kind: TrackerKind) -> RegressionModel:
    if kind.model is not None:
        return kind.model
    if not kind.model_path:
        raise ModelLoadFailure("learned tracker selected without a model path")
    return load_regressor(kind.model_path, kind.input_size)


# -- NCC search ----------------------------------------------------------------


def _int_correlate(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # inputs are integer-valued; exact below 2**53, so rounding recovers the
    # exact sums whichever backend scipy picks
    out = signal.correlate(image, kernel, mode="valid", method="auto")
    return np.rint(out).astype(np.int64)


def ncc_scores(template: np.ndarray, search: np.ndarray, box_w: int, box_h: int) -> np.ndarray:
    """NCC of ``template`` against every ``box_w x box_h`` window of ``search``.

    Each window is compared as if nearest-neighbor resampled to the template
    size. Entry ``[dy, dx]`` scores the window whose top-left is ``(dx, dy)``.
    Windows or templates with zero variance score 0.
    """
    th, tw = template.shape
    rows = _sample_index(th, box_h)
    cols = _sample_index(tw, box_w)
    # fold the resampling into box-sized kernels:
    #   sum_ij T[i,j] F[rows_i, cols_j] = sum_rc K[r,c] F[r,c]
    a = np.zeros((box_h, th), dtype=np.int64)
    a[rows, np.arange(th)] = 1
    b = np.zeros((box_w, tw), dtype=np.int64)
    b[cols, np.arange(tw)] = 1
    t = template.astype(np.int64)
    k = a @ t @ b.T
    wgt = np.outer(a.sum(axis=1), b.sum(axis=1))
    f = search.astype(np.float64)

    n = th * tw
    s_t = int(t.sum())
    s_tt = int((t * t).sum())
    s_tf = _int_correlate(f, k.astype(np.float64))
    s_f = _int_correlate(f, wgt.astype(np.float64))
    s_ff = _int_correlate(f * f, wgt.astype(np.float64))

    num = n * s_tf - s_t * s_f
    var_t = n * s_tt - s_t * s_t
    var_f = n * s_ff - s_f * s_f
    scores = np.zeros(num.shape, dtype=np.float64)
    ok = var_f > 0
    if var_t > 0 and ok.any():
        scores[ok] = num[ok] / (np.sqrt(float(var_t)) * np.sqrt(var_f[ok].astype(np.float64)))
    return scores


def best_displacement(scores: np.ndarray, origin_x: int, origin_y: int) -> tuple[int, int, float]:
    """Argmax with ties broken by displacement magnitude, then scan order.

    ``origin_*`` is the window offset (inside the score grid) of zero displacement.
    """
    top = scores.max()
    ys, xs = np.nonzero(scores == top)
    dx = xs - origin_x
    dy = ys - origin_y
    order = np.lexsort((xs, ys, dx * dx + dy * dy))
    i = order[0]
    return int(dx[i]), int(dy[i]), float(top)


def tracker_init(frame, box: BoundingBox, kind: TrackerKind | None = None,
                 context_factor: float = DEFAULT_CONTEXT) -> TrackerState:
    kind = kind or TrackerKind()
    plane = _luma(frame)
    if box.w < MIN_BOX_SIDE or box.h < MIN_BOX_SIDE:
        raise BoxTooSmall(f"box {box.to_list()} smaller than {MIN_BOX_SIDE}x{MIN_BOX_SIDE}")
    if not within_frame(box, _dims(plane)):
        raise InvalidConfig(f"box {box.to_list()} not inside frame")
    if kind.is_learned:
        model = _resolve_model(kind)
        size = (model.input_size, model.input_size)
        template = crop_patch(plane, box, context_factor, size)
    else:
        template = crop_patch(plane, box, 1.0, TEMPLATE_SIZE)
    return TrackerState(template, box, context_factor, kind)


def search_region(box: BoundingBox, context_factor: float, dims: FrameDims) -> BoundingBox:
    return clamp_to_frame(scale_box(box, context_factor), dims)


def tracker_step(state: TrackerState, frame) -> BoundingBox:
    plane = _luma(frame)
    dims = _dims(plane)
    box = state.last_box
    try:
        region = search_region(box, state.context_factor, dims)
    except OutOfFrame as exc:
        raise DegenerateSearchRegion(str(exc)) from exc
    if state.kind.is_learned:
        new_box = _learned_step(state, plane, region, dims)
    else:
        if region.w < box.w or region.h < box.h:
            raise DegenerateSearchRegion(f"search region {region.to_list()} smaller than box {box.to_list()}")
        search = plane[region.y:region.y2, region.x:region.x2]
        scores = ncc_scores(state.template, search, box.w, box.h)
        dx, dy, score = best_displacement(scores, box.x - region.x, box.y - region.y)
        new_box = box.translate(dx, dy)
        state.template = crop_patch(plane, new_box, 1.0, TEMPLATE_SIZE)
        state.last_score = score
    state.last_box = new_box
    return new_box


def _learned_step(state: TrackerState, plane, region: BoundingBox, dims: FrameDims) -> BoundingBox:
    model = _resolve_model(state.kind)
    s = model.input_size
    search = crop_patch(plane, state.last_box, state.context_factor, (s, s))
    x1, y1, x2, y2 = (float(v) for v in model.predict(state.template, search))
    sx = region.w / s
    sy = region.h / s
    fx1 = int(round(region.x + x1 * sx))
    fy1 = int(round(region.y + y1 * sy))
    fx2 = int(round(region.x + x2 * sx))
    fy2 = int(round(region.y + y2 * sy))
    fx2 = max(fx2, fx1 + 1)
    fy2 = max(fy2, fy1 + 1)
    try:
        new_box = clamp_to_frame(BoundingBox.from_corners(fx1, fy1, fx2, fy2), dims)
    except OutOfFrame as exc:
        raise DegenerateSearchRegion(f"model returned box outside frame: {exc}") from exc
    state.template = crop_patch(plane, new_box, state.context_factor, (s, s))
    return new_box
