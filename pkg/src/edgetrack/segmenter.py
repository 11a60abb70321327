"""Pixel-based adaptive background subtraction.

Each pixel keeps a bank of ``n_samples`` background intensities, a decision
threshold ``R`` and an update period ``T``. A pixel is background when at least
``min_matches`` samples lie strictly within ``R`` of its intensity. Background
pixels refresh their own bank and diffuse into a random 8-neighbor's bank,
each with probability ``1/T``. ``R`` follows the running average of the minimal
sample distance, ``T`` grows on foreground and shrinks on background.

All randomness is drawn from Philox keyed by ``(seed, stream, frame_index)``
with a fixed number of raw words per pixel, so the draws a pixel sees depend
only on its index and never on evaluation order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FrameDims
from .errors import DimsMismatch, InvalidConfig, IoFailure, MalformedImage

INIT_NOISE = 10

_STREAM_INIT = 1
_STREAM_UPDATE = 2

# row-major 8-neighborhood, indexed by the 3-bit neighbor draw
NEIGHBOR_OFFSETS = np.array(
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)], dtype=np.int64
)

_SNAPSHOT_MAGIC = b"PBAS"
_SNAPSHOT_HEADER = struct.Struct("<4sIIIIQQ")


@dataclass(frozen=True)
class SegmenterConfig:
    n_samples: int = 20
    min_matches: int = 2
    r_init: float = 18.0
    r_lower: float = 18.0
    r_upper: float = 255.0
    r_scale: float = 5.0
    r_adapt: float = 0.05
    t_init: float = 18.0
    t_lower: float = 2.0
    t_upper: float = 200.0
    t_inc: float = 1.0
    t_dec: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.n_samples > 255:
            raise InvalidConfig(f"n_samples must be in [1, 255], got {self.n_samples}")
        if not 1 <= self.min_matches <= self.n_samples:
            raise InvalidConfig(f"min_matches must be in [1, n_samples], got {self.min_matches}")
        if not self.r_lower <= self.r_init <= self.r_upper:
            raise InvalidConfig("need r_lower <= r_init <= r_upper")
        if not 0 < self.t_lower <= self.t_init <= self.t_upper:
            raise InvalidConfig("need 0 < t_lower <= t_init <= t_upper")
        if self.r_lower <= 0 or self.r_scale <= 0 or not 0 <= self.r_adapt < 1:
            raise InvalidConfig("r_lower and r_scale must be positive, r_adapt in [0, 1)")
        if self.t_inc < 0 or self.t_dec < 0:
            raise InvalidConfig("t_inc and t_dec must be non-negative")
        if not 0 <= self.rng_seed < 2**64:
            raise InvalidConfig("rng_seed must fit in 64 bits")


def _raw_words(seed: int, stream: int, frame_index: int, count: int) -> np.ndarray:
    key = seed | (((stream << 56) | (frame_index & ((1 << 56) - 1))) << 64)
    return np.random.Philox(key=key).random_raw(count)


@dataclass
class UpdateStats:
    self_updates: int = 0
    neighbor_updates: int = 0


class Segmenter:
    """Per-pixel background model; ``samples`` is ``(n_samples, height, width)``."""

    def __init__(self, dims: FrameDims, config: SegmenterConfig, samples: np.ndarray,
                 r: np.ndarray, t: np.ndarray, dmin_avg: np.ndarray):
        self.dims = dims
        self.config = config
        self.samples = samples
        self.R = r
        self.T = t
        self.dmin_avg = dmin_avg
        self.last_stats = UpdateStats()

    @classmethod
    def from_frame(cls, luma: np.ndarray, config: SegmenterConfig) -> Segmenter:
        luma = np.asarray(luma, dtype=np.uint8)
        dims = FrameDims(luma.shape[1], luma.shape[0])
        n = config.n_samples
        raw = _raw_words(config.rng_seed, _STREAM_INIT, 0, dims.pixels * n).reshape(dims.pixels, n)
        # hi 32 bits -> uniform integer in [-INIT_NOISE, INIT_NOISE]
        noise = ((raw >> np.uint64(32)) * np.uint64(2 * INIT_NOISE + 1)) >> np.uint64(32)
        noise = noise.astype(np.int16) - INIT_NOISE
        base = luma.reshape(-1).astype(np.int16)[:, None]
        bank = np.clip(base + noise, 0, 255).astype(np.uint8)
        samples = np.ascontiguousarray(bank.T.reshape(n, *dims.shape))
        shape = dims.shape
        return cls(
            dims, config, samples,
            np.full(shape, config.r_init), np.full(shape, config.t_init), np.zeros(shape),
        )

    def _check(self, luma: np.ndarray) -> np.ndarray:
        if luma.shape != self.dims.shape:
            raise DimsMismatch(f"frame {luma.shape[::-1]} vs model {self.dims.width}x{self.dims.height}")
        return luma.astype(np.int16)

    def _distances(self, intensity: np.ndarray) -> np.ndarray:
        return np.abs(self.samples.astype(np.int16) - intensity)

    def segment(self, luma: np.ndarray) -> np.ndarray:
        """Boolean foreground mask; does not touch the model."""
        dist = self._distances(self._check(luma))
        return self._classify(dist)

    def _classify(self, dist: np.ndarray) -> np.ndarray:
        close = (dist < self.R).sum(axis=0, dtype=np.int32)
        return close < self.config.min_matches

    def update(self, luma: np.ndarray, mask: np.ndarray, frame_index: int, dist: np.ndarray | None = None) -> UpdateStats:
        cfg = self.config
        intensity = self._check(luma)
        if mask.shape != self.dims.shape:
            raise DimsMismatch("mask dims differ from model dims")
        if dist is None:
            dist = self._distances(intensity)
        d_min = dist.min(axis=0).astype(np.float64)

        h, w = self.dims.shape
        npx = h * w
        n = np.uint64(cfg.n_samples)
        raw = _raw_words(cfg.rng_seed, _STREAM_UPDATE, frame_index, 2 * npx).reshape(npx, 2)
        lo32 = np.uint64(0xFFFFFFFF)
        s32 = np.uint64(32)
        s16 = np.uint64(16)
        background = ~mask.reshape(-1)
        # a draw fires with probability 1/T:  u < 1/T  <=>  u32 * T < 2^32
        threshold = self.T.reshape(-1)
        fire_self = background & ((raw[:, 0] >> s32).astype(np.float64) * threshold < 2.0**32)
        slot_self = (((raw[:, 0] & lo32) * n) >> s32).astype(np.intp)
        fire_nb = background & ((raw[:, 1] >> s32).astype(np.float64) * threshold < 2.0**32)
        nb_choice = (((raw[:, 1] & np.uint64(0xFFFF)) * np.uint64(8)) >> s16).astype(np.intp)
        slot_nb = ((((raw[:, 1] >> s16) & np.uint64(0xFFFF)) * n) >> s16).astype(np.intp)

        flat_samples = self.samples.reshape(cfg.n_samples, npx)
        flat_int = luma.reshape(-1)

        p = np.flatnonzero(fire_self)
        flat_samples[slot_self[p], p] = flat_int[p]

        p = np.flatnonzero(fire_nb)
        off = NEIGHBOR_OFFSETS[nb_choice[p]]
        qy = p // w + off[:, 0]
        qx = p % w + off[:, 1]
        inside = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
        q = qy[inside] * w + qx[inside]
        # every write into bank q stores I(q), so colliding writes agree
        flat_samples[slot_nb[p[inside]], q] = flat_int[q]

        self.dmin_avg *= 1.0 - 1.0 / cfg.n_samples
        self.dmin_avg += d_min / cfg.n_samples
        shrink = self.R > self.dmin_avg * cfg.r_scale
        self.R = np.where(shrink, self.R * (1.0 - cfg.r_adapt), self.R * (1.0 + cfg.r_adapt))
        np.clip(self.R, cfg.r_lower, cfg.r_upper, out=self.R)
        step = 1.0 / np.maximum(self.dmin_avg, 1.0)
        self.T = np.where(mask, self.T + cfg.t_inc * step, self.T - cfg.t_dec * step)
        np.clip(self.T, cfg.t_lower, cfg.t_upper, out=self.T)

        self.last_stats = UpdateStats(int(fire_self.sum()), int(inside.sum()))
        return self.last_stats

    def apply(self, luma: np.ndarray, frame_index: int) -> np.ndarray:
        """Classify then update, sharing the distance computation."""
        intensity = self._check(luma)
        dist = self._distances(intensity)
        mask = self._classify(dist)
        self.update(luma, mask, frame_index, dist)
        return mask

    def set_params(self, config: SegmenterConfig) -> None:
        if not isinstance(config, SegmenterConfig):
            raise InvalidConfig("expected a SegmenterConfig")
        if config.n_samples != self.config.n_samples:
            raise InvalidConfig("n_samples cannot change on a live model")
        self.config = config
        np.clip(self.R, config.r_lower, config.r_upper, out=self.R)
        np.clip(self.T, config.t_lower, config.t_upper, out=self.T)

    def copy(self) -> Segmenter:
        return Segmenter(self.dims, self.config, self.samples.copy(), self.R.copy(), self.T.copy(), self.dmin_avg.copy())

    # -- snapshot dump ---------------------------------------------------------
    # Layout (little endian): magic "PBAS", u32 version, u32 width, u32 height,
    # u32 n_samples, u64 rng_seed, u64 reserved; then per pixel (row-major) its
    # n_samples bytes; then R, T and dmin_avg as f64 planes (row-major).

    def export_snapshot(self, path) -> None:
        cfg = self.config
        header = _SNAPSHOT_HEADER.pack(_SNAPSHOT_MAGIC, 1, self.dims.width, self.dims.height, cfg.n_samples, cfg.rng_seed, 0)
        bank = np.ascontiguousarray(self.samples.reshape(cfg.n_samples, -1).T)
        body = b"".join(
            [bank.tobytes()] + [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (self.R, self.T, self.dmin_avg)]
        )
        try:
            Path(path).write_bytes(header + body)
        except OSError as exc:
            raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc

    @classmethod
    def load_snapshot(cls, path, config: SegmenterConfig | None = None) -> Segmenter:
        data = Path(path).read_bytes()
        if len(data) < _SNAPSHOT_HEADER.size:
            raise MalformedImage(path, "snapshot header truncated")
        magic, version, width, height, n, seed, _ = _SNAPSHOT_HEADER.unpack_from(data)
        if magic != _SNAPSHOT_MAGIC or version != 1:
            raise MalformedImage(path, "not a segmenter snapshot")
        dims = FrameDims(width, height)
        npx = dims.pixels
        off = _SNAPSHOT_HEADER.size
        if len(data) != off + npx * n + 3 * 8 * npx:
            raise MalformedImage(path, "snapshot size mismatch")
        bank = np.frombuffer(data, np.uint8, npx * n, off).reshape(npx, n)
        off += npx * n
        planes = []
        for _ in range(3):
            planes.append(np.frombuffer(data, "<f8", npx, off).astype(np.float64).reshape(dims.shape))
            off += 8 * npx
        if config is None:
            config = SegmenterConfig(n_samples=n, rng_seed=seed)
        samples = np.ascontiguousarray(bank.T.reshape(n, *dims.shape))
        return cls(dims, config, samples, *planes)


def init_model(first_frame, config: SegmenterConfig) -> Segmenter:
    luma = first_frame.luma if hasattr(first_frame, "luma") else first_frame
    return Segmenter.from_frame(luma, config)


def segment(state: Segmenter, frame) -> np.ndarray:
    return state.segment(frame.luma if hasattr(frame, "luma") else frame)


def update_model(state: Segmenter, frame, mask: np.ndarray, frame_index: int | None = None) -> UpdateStats:
    if hasattr(frame, "luma"):
        luma, idx = frame.luma, frame.index
    else:
        luma, idx = frame, 0
    return state.update(luma, mask, idx if frame_index is None else frame_index)


def set_params(state: Segmenter, config: SegmenterConfig) -> None:
    state.set_params(config)
