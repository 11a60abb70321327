"""Track lifecycle: advance, stop at the edges, pick a candidate, confirm, init.

One call to :meth:`TrackManager.step` runs the per-frame loop in this order:

1. if there are live tracks, step each tracker and terminate those whose new
   box comes within ``edge_stop_margin`` of a frame edge;
2. rank the current detections by how well they overlap the previous
   frame's detections (best IoU against them), least matched first;
3. take the first ranked detection that overlaps no live track box by
   ``new_object_iou_threshold`` or more and start one tracker on it;
4. keep the current detections for the next frame.

At most one track is created per frame; further newcomers are picked up on
the following frames.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

from .blobs import Detection
from .core import BoundingBox, FrameDims, border_distance, iou
from .errors import EdgeTrackError, InvalidConfig, ModelLoadFailure
from .tracker import DEFAULT_CONTEXT, TrackerKind, TrackerState, tracker_init, tracker_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManagerConfig:
    edge_stop_margin: int = 4
    new_object_iou_threshold: float = 0.3
    # when the least-matched detection is already tracked, try the next one;
    # off = only the single least-matched detection is ever considered
    candidate_fallthrough: bool = True

    def __post_init__(self):
        if self.edge_stop_margin < 0:
            raise InvalidConfig("edge_stop_margin must be >= 0")
        if not 0.0 <= self.new_object_iou_threshold <= 1.0:
            raise InvalidConfig("new_object_iou_threshold must be in [0, 1]")


@dataclass
class Track:
    id: int
    state: TrackerState
    box: BoundingBox
    born_frame: int
    status: str = "live"


@dataclass(frozen=True)
class TrackEvent:
    kind: str  # "create" | "terminate"
    track_id: int
    frame: int
    reason: str = ""


@dataclass
class FrameRecord:
    frame_index: int
    detections: list[Detection] = field(default_factory=list)
    live_tracks: list[tuple[int, BoundingBox]] = field(default_factory=list)
    events: list[TrackEvent] = field(default_factory=list)
    stage_timings: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def created(self) -> list[int]:
        return [e.track_id for e in self.events if e.kind == "create"]

    @property
    def terminated(self) -> list[int]:
        return [e.track_id for e in self.events if e.kind == "terminate"]


def match_score(d: Detection, previous: Sequence[Detection]) -> float:
    """Best IoU of ``d`` against the previous frame's detections (0 if none)."""
    return max((iou(d.box, p.box) for p in previous), default=0.0)


def rank_candidates(current: Sequence[Detection], previous: Sequence[Detection]) -> list[Detection]:
    """Current detections, least matched first.

    Ties go to the larger blob, then to the earlier (y, x) position.
    """
    return sorted(current, key=lambda d: (match_score(d, previous), -d.pixel_count, d.box.y, d.box.x))


def select_candidate(current: Sequence[Detection], previous: Sequence[Detection]) -> Detection | None:
    ranked = rank_candidates(current, previous)
    return ranked[0] if ranked else None


def is_new_object(candidate: Detection, tracks: Sequence[Track], threshold: float) -> bool:
    best = max((iou(candidate.box, t.box) for t in tracks), default=0.0)
    return best < threshold


class TrackManager:
    def __init__(self, config: ManagerConfig | None = None, tracker_kind: TrackerKind | None = None,
                 context_factor: float = DEFAULT_CONTEXT):
        self.config = config or ManagerConfig()
        self.tracker_kind = tracker_kind or TrackerKind()
        self.context_factor = context_factor
        self.tracks: list[Track] = []
        self.previous_detections: list[Detection] = []
        self.next_id = 1
        self.last_frame_index: int | None = None
        self.created_total = 0
        self.terminated_total = 0

    def live_boxes(self) -> list[tuple[int, BoundingBox]]:
        return [(t.id, t.box) for t in self.tracks]

    def advance_tracks(self, frame) -> list[TrackEvent]:
        events = []
        if not self.tracks:
            return events
        luma = frame.luma
        dims = FrameDims(luma.shape[1], luma.shape[0])
        survivors = []
        for track in sorted(self.tracks, key=lambda t: t.id):
            try:
                track.box = tracker_step(track.state, luma)
            except EdgeTrackError as exc:
                log.debug("track %d failed at frame %d: %s", track.id, frame.index, exc)
                track.status = "terminated"
                events.append(TrackEvent("terminate", track.id, frame.index, "tracker_failure"))
                continue
            if border_distance(track.box, dims) < self.config.edge_stop_margin:
                track.status = "terminated"
                events.append(TrackEvent("terminate", track.id, frame.index, "edge"))
                continue
            survivors.append(track)
        self.tracks = survivors
        self.terminated_total += len(events)
        return events

    def step(self, frame, detections: Sequence[Detection]) -> FrameRecord:
        if self.last_frame_index is not None and frame.index <= self.last_frame_index:
            raise InvalidConfig(f"frame index {frame.index} does not follow {self.last_frame_index}")
        self.last_frame_index = frame.index
        detections = list(detections)
        record = FrameRecord(frame.index, detections)

        t0 = time.perf_counter_ns()
        if self.tracks:
            record.events.extend(self.advance_tracks(frame))
        t1 = time.perf_counter_ns()

        ranked = rank_candidates(detections, self.previous_detections)
        if not self.config.candidate_fallthrough:
            ranked = ranked[:1]
        for candidate in ranked:
            if is_new_object(candidate, self.tracks, self.config.new_object_iou_threshold):
                self._init_track(frame, candidate, record)
                break
        self.previous_detections = detections
        record.live_tracks = self.live_boxes()
        t2 = time.perf_counter_ns()

        record.stage_timings["track"] = t1 - t0
        record.stage_timings["manage"] = t2 - t1
        return record

    def _init_track(self, frame, candidate: Detection, record: FrameRecord) -> None:
        try:
            state = tracker_init(frame.luma, candidate.box, self.tracker_kind, self.context_factor)
        except ModelLoadFailure:
            raise
        except EdgeTrackError as exc:
            record.errors.append(f"init failed for {candidate.box.to_list()}: {exc}")
            return
        track = Track(self.next_id, state, candidate.box, frame.index)
        self.next_id += 1
        self.tracks.append(track)
        self.created_total += 1
        record.events.append(TrackEvent("create", track.id, frame.index))
