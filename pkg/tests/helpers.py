"""Independent oracles and synthetic scenes shared by the test modules.

The oracles deliberately avoid the code paths they check: pixel-set
enumeration for overlaps, breadth-first flood fill for labeling, a scalar
pure-Python re-implementation of the background model, and a per-window
float NCC.
"""
from __future__ import annotations

import math
import random
from collections import deque

import numpy as np

from edgetrack.blobs import Detection
from edgetrack.core import BoundingBox
from edgetrack.videoio import Frame


# -- geometry ------------------------------------------------------------------


def box_cells(b: BoundingBox) -> set[tuple[int, int]]:
    return {(x, y) for x in range(b.x, b.x + b.w) for y in range(b.y, b.y + b.h)}


def brute_iou(a: BoundingBox, b: BoundingBox) -> float:
    ca, cb = box_cells(a), box_cells(b)
    inter = len(ca & cb)
    union = len(ca | cb)
    return inter / union if union else 0.0


# -- labeling --------------------------------------------------------------------


def flood_fill_components(mask: np.ndarray, connectivity: int) -> list[frozenset]:
    h, w = mask.shape
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            q = deque([(y, x)])
            seen[y, x] = True
            pix = []
            while q:
                cy, cx = q.popleft()
                pix.append((cy, cx))
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        q.append((ny, nx))
            comps.append(frozenset(pix))
    return comps


# -- NCC -------------------------------------------------------------------------


def nn_index(n_out: int, n_in: int) -> list[int]:
    return [int(math.floor((i + 0.5) * n_in / n_out)) for i in range(n_out)]


def ncc_oracle(template: np.ndarray, frame: np.ndarray, box: BoundingBox) -> float:
    th, tw = template.shape
    rows = [box.y + r for r in nn_index(th, box.h)]
    cols = [box.x + c for c in nn_index(tw, box.w)]
    window = frame[np.ix_(rows, cols)].astype(np.float64)
    t = template.astype(np.float64)
    t = t - t.mean()
    window = window - window.mean()
    den = math.sqrt((t * t).sum() * (window * window).sum())
    return float((t * window).sum() / den) if den > 0 else 0.0


# -- background model reference simulation ------------------------------------

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def reference_pbas(frames, cfg, rng: random.Random):
    """Scalar, sequential re-implementation of the background model.

    ``frames`` is a list of 2-D integer lists; frame 0 initializes the model.
    Yields ``(fg, R)`` per subsequent frame, ``fg`` a 2-D list of bools.
    """
    first = frames[0]
    h, w = len(first), len(first[0])
    n = cfg.n_samples
    bank = [[[min(255, max(0, first[y][x] + rng.randint(-10, 10))) for _ in range(n)] for x in range(w)] for y in range(h)]
    R = [[cfg.r_init] * w for _ in range(h)]
    T = [[cfg.t_init] * w for _ in range(h)]
    D = [[0.0] * w for _ in range(h)]
    for img in frames[1:]:
        fg = [[False] * w for _ in range(h)]
        dmin = [[0] * w for _ in range(h)]
        for y in range(h):
            for x in range(w):
                v = img[y][x]
                dists = [abs(s - v) for s in bank[y][x]]
                fg[y][x] = sum(1 for d in dists if d < R[y][x]) < cfg.min_matches
                dmin[y][x] = min(dists)
        for y in range(h):
            for x in range(w):
                if fg[y][x]:
                    continue
                if rng.random() < 1.0 / T[y][x]:
                    bank[y][x][rng.randrange(n)] = img[y][x]
                if rng.random() < 1.0 / T[y][x]:
                    dy, dx = rng.choice(_NEIGHBORS)
                    qy, qx = y + dy, x + dx
                    if 0 <= qy < h and 0 <= qx < w:
                        bank[qy][qx][rng.randrange(n)] = img[qy][qx]
        for y in range(h):
            for x in range(w):
                D[y][x] = (1 - 1 / n) * D[y][x] + dmin[y][x] / n
                if R[y][x] > D[y][x] * cfg.r_scale:
                    R[y][x] *= 1 - cfg.r_adapt
                else:
                    R[y][x] *= 1 + cfg.r_adapt
                R[y][x] = min(cfg.r_upper, max(cfg.r_lower, R[y][x]))
                step = 1 / max(D[y][x], 1.0)
                T[y][x] += cfg.t_inc * step if fg[y][x] else -cfg.t_dec * step
                T[y][x] = min(cfg.t_upper, max(cfg.t_lower, T[y][x]))
        yield fg, R


def step_scene(size: int, patch: tuple[int, int, int, int], before: int, after: int, warm: int, held: int):
    """Constant frames, then a rectangular step change held for ``held`` frames."""
    px, py, pw, ph = patch
    frames = []
    for t in range(1 + warm + held):
        img = [[before] * size for _ in range(size)]
        if t > warm:
            for y in range(py, py + ph):
                for x in range(px, px + pw):
                    img[y][x] = after
        frames.append(img)
    return frames


def absorption_times(fg_stream, patch, warm: int, horizon: int) -> list[int]:
    """Frames after the step until each patch pixel is first classified background."""
    px, py, pw, ph = patch
    first = {}
    for k, fg in enumerate(fg_stream, start=1):
        if k <= warm:
            continue
        for y in range(py, py + ph):
            for x in range(px, px + pw):
                if (y, x) not in first and not fg[y][x]:
                    first[(y, x)] = k - warm
    return [first.get((y, x), horizon) for y in range(py, py + ph) for x in range(px, px + pw)]


# -- scenes ----------------------------------------------------------------------


def textured_background(h=240, w=320, seed=0, lo=20, hi=81):
    return np.random.default_rng(seed).integers(lo, hi, size=(h, w), dtype=np.uint8)


def textured_patch(size, seed=1, lo=170, hi=251):
    return np.random.default_rng(seed).integers(lo, hi, size=(size, size), dtype=np.uint8)


def paste(img: np.ndarray, tex: np.ndarray, x: int, y: int) -> None:
    """Paste ``tex`` with top-left (x, y), clipping at the frame edges."""
    h, w = img.shape
    th, tw = tex.shape
    x1, y1 = max(x, 0), max(y, 0)
    x2, y2 = min(x + tw, w), min(y + th, h)
    if x2 > x1 and y2 > y1:
        img[y1:y2, x1:x2] = tex[y1 - y:y2 - y, x1 - x:x2 - x]


def crossing_position(t: int, enter: int, leave: int, size: int, width: int = 320) -> int:
    """Left edge x of a square entering at the left on ``enter`` and gone by ``leave``."""
    travel = width + size
    return -size + round((t - enter) * travel / (leave - enter))


def render(bg: np.ndarray, objects, index: int) -> Frame:
    """``objects`` is a list of ``(texture, x, y)``."""
    img = bg.copy()
    for tex, x, y in objects:
        paste(img, tex, x, y)
    return Frame.from_array(img, index)


def det(x, y, w, h, frame_index=0, pixel_count=None) -> Detection:
    return Detection(BoundingBox(x, y, w, h), w * h if pixel_count is None else pixel_count, frame_index)


def crossing_sequence(total=180, enter=30, leave=150, size=32, y=104, seed=0, n_objects=1, spacing=70):
    """Frames of textured squares crossing left to right.

    With ``n_objects`` > 1 the squares enter together in separate lanes.
    """
    bg = textured_background(seed=seed)
    texs = [textured_patch(size, seed=seed + 1 + i) for i in range(n_objects)]
    lanes = [y + (i - (n_objects - 1) / 2) * spacing for i in range(n_objects)]
    frames = []
    for t in range(1, total + 1):
        objs = []
        if enter <= t < leave:
            x = crossing_position(t, enter, leave, size, bg.shape[1])
            objs = [(tex, x, int(ly)) for tex, ly in zip(texs, lanes)]
        img = bg.copy()
        for tex, ox, oy in objs:
            paste(img, tex, ox, oy)
        frames.append(img)
    return frames
