"""Per-frame orchestration: capture, segment, extract, manage, emit.

Only one input frame is ever held. With ``drop_to_latest`` a replayed file is
treated as a live camera running at its nominal frame rate: frames that
arrive while the previous one is still being processed are discarded and
counted instead of queued.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .blobs import BlobConfig, extract_detections
from .errors import EdgeTrackError, InvalidConfig, IoFailure, SinkFailure, SourceFailure
from .segmenter import Segmenter, SegmenterConfig
from .track_manager import FrameRecord, ManagerConfig, TrackManager
from .tracker import DEFAULT_CONTEXT, DEFAULT_MODEL_INPUT, TrackerKind
from .videoio import Frame, FrameSource, OutputSink, SinkConfig, open_source

log = logging.getLogger(__name__)

STAGES = ("segment", "blobs", "track", "manage", "emit")
DROP_POLICIES = ("auto", "process_every", "drop_to_latest")


@dataclass(frozen=True)
class TrackerConfig:
    kind: str = "fallback"
    context_factor: float = DEFAULT_CONTEXT
    input_size: int = DEFAULT_MODEL_INPUT

    def __post_init__(self):
        TrackerKind.parse(self.kind)
        if self.context_factor < 1.0:
            raise InvalidConfig("context_factor must be >= 1")

    def tracker_kind(self) -> TrackerKind:
        return TrackerKind.parse(self.kind, self.input_size)


@dataclass(frozen=True)
class PipelineConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    blobs: BlobConfig = field(default_factory=BlobConfig)
    manager: ManagerConfig = field(default_factory=ManagerConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    source: str | None = None
    out: str | None = None
    drop_policy: str = "auto"
    fps: float = 10.0
    write_masks: bool = True
    write_annotated: bool = True
    write_log: bool = True

    def __post_init__(self):
        if self.drop_policy not in DROP_POLICIES:
            raise InvalidConfig(f"drop_policy must be one of {DROP_POLICIES}")
        if self.fps <= 0:
            raise InvalidConfig("fps must be positive")

    def sink_config(self) -> SinkConfig:
        return SinkConfig(self.out, self.write_masks, self.write_annotated, self.write_log)


@dataclass
class RunSummary:
    frames_processed: int = 0
    frames_dropped: int = 0
    frames_failed: int = 0
    tracks_created: int = 0
    tracks_terminated: int = 0
    elapsed_s: float = 0.0
    mean_fps: float = 0.0
    max_buffered_frames: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class LatestFrameGate:
    """Hands out only the newest frame that has "arrived" by wall-clock time.

    Arrival is frame timestamp relative to the first read; for live sources the
    camera already delivers its latest frame, so every read passes through.
    """

    def __init__(self, source: FrameSource, drop_to_latest: bool, clock=time.monotonic_ns, sleep=time.sleep):
        self.source = source
        self.drop_to_latest = drop_to_latest and not source.is_live
        self.dropped = 0
        self.held = 0
        self.high_water = 0
        self._clock = clock
        self._sleep = sleep
        self._t0: int | None = None
        self._pending: Frame | None = None

    def _hold(self, delta: int) -> None:
        self.held += delta
        self.high_water = max(self.high_water, self.held)

    def acquire(self) -> Frame | None:
        if not self.drop_to_latest:
            frame = self.source.read()
            if frame is not None:
                self._hold(1)
            return frame
        frame = self._pending if self._pending is not None else self.source.read()
        self._pending = None
        if frame is None:
            return None
        if self._t0 is None:
            self._t0 = self._clock() - frame.timestamp
        wait = frame.timestamp - (self._clock() - self._t0)
        if wait > 0:
            self._sleep(wait / 1e9)
        self._hold(1)
        now = self._clock() - self._t0
        while True:
            nxt = self.source.read()
            if nxt is None:
                break
            if nxt.timestamp > now:
                # not arrived yet: a live camera would not have produced it
                self._pending = nxt
                break
            self.dropped += 1
            frame = nxt
        return frame

    def release(self) -> None:
        self._hold(-1)


class Pipeline:
    def __init__(self, config: PipelineConfig, sink: OutputSink | None = None,
                 on_frame: Callable[[Frame, FrameRecord], None] | None = None):
        self.config = config
        self.sink = sink if sink is not None else OutputSink(config.sink_config())
        self.segmenter: Segmenter | None = None
        self.manager = TrackManager(config.manager, config.tracker.tracker_kind(), config.tracker.context_factor)
        self.on_frame = on_frame
        self.frames_processed = 0
        self.frames_failed = 0
        self.last_mask: np.ndarray | None = None

    def process_frame(self, frame: Frame) -> FrameRecord:
        timings = dict.fromkeys(STAGES, 0)
        t0 = time.perf_counter_ns()
        try:
            if self.segmenter is None:
                self.segmenter = Segmenter.from_frame(frame.luma, self.config.segmenter)
                mask = np.zeros(frame.dims.shape, dtype=bool)
            else:
                mask = self.segmenter.apply(frame.luma, frame.index)
            t1 = time.perf_counter_ns()
            detections = extract_detections(mask, self.config.blobs, frame.index)
            t2 = time.perf_counter_ns()
            record = self.manager.step(frame, detections)
        except (EdgeTrackError, ValueError) as exc:
            if isinstance(exc, IoFailure):
                raise
            log.warning("frame %d skipped: %s", frame.index, exc)
            self.frames_failed += 1
            record = FrameRecord(frame.index, errors=[str(exc)])
            record.stage_timings = timings
            return record
        timings["segment"] = t1 - t0
        timings["blobs"] = t2 - t1
        timings.update(record.stage_timings)
        te = time.perf_counter_ns()
        try:
            self.sink.write(frame, mask, record.live_tracks, record.detections, record.events)
        except IoFailure as exc:
            raise SinkFailure(str(exc)) from exc
        timings["emit"] = time.perf_counter_ns() - te
        record.stage_timings = timings
        self.last_mask = mask
        self.frames_processed += 1
        if self.on_frame is not None:
            self.on_frame(frame, record)
        return record

    def run(self, source: FrameSource | None = None, records: list | None = None) -> RunSummary:
        """Drive ``source`` to exhaustion; optionally collect every FrameRecord."""
        owns = source is None
        if source is None:
            if not self.config.source:
                raise SourceFailure("no source configured")
            try:
                source = open_source(self.config.source, self.config.fps)
            except IoFailure as exc:
                raise SourceFailure(str(exc)) from exc
        policy = self.config.drop_policy
        if policy == "auto":
            policy = "drop_to_latest" if source.is_live else "process_every"
        gate = LatestFrameGate(source, policy == "drop_to_latest")
        summary = RunSummary()
        start = time.perf_counter()
        try:
            while True:
                try:
                    frame = gate.acquire()
                except IoFailure as exc:
                    raise SourceFailure(str(exc)) from exc
                if frame is None:
                    break
                try:
                    record = self.process_frame(frame)
                finally:
                    gate.release()
                if records is not None:
                    records.append(record)
        finally:
            if owns:
                source.close()
            self.sink.close()
        elapsed = time.perf_counter() - start
        summary.frames_processed = self.frames_processed
        summary.frames_failed = self.frames_failed
        summary.frames_dropped = gate.dropped
        summary.tracks_created = self.manager.created_total
        summary.tracks_terminated = self.manager.terminated_total
        summary.elapsed_s = elapsed
        summary.mean_fps = self.frames_processed / elapsed if elapsed > 0 else 0.0
        summary.max_buffered_frames = gate.high_water
        return summary


def run(config: PipelineConfig, source: FrameSource | None = None) -> RunSummary:
    return Pipeline(config).run(source)
