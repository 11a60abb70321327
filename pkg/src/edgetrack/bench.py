"""Throughput sweep: frame rate against the number of tracked objects.

Sequences are synthetic and deterministic: textured rectangles bouncing in
separate lanes over a static noise background, appearing one every
``entry_period`` frames so the one-creation-per-frame rule admits them all.
Each sweep point replays its sequence frame by frame (no drops), discards the
entry phase plus a warm-up, and reports timing statistics over the rest.
By default all points run in one interleaved loop, one frame each per round.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BoundingBox, FrameDims
from .errors import InvalidConfig, IoFailure
from .pipeline import Pipeline, PipelineConfig
from .videoio import open_image_sequence, write_pgm

log = logging.getLogger(__name__)

CSV_COLUMNS = ("n_objects", "fps", "mean_ms", "p50_ms", "p99_ms", "frames", "power_mw")
MIN_MEASURED_FRAMES = 300
WARMUP_FRAMES = 50
ENTRY_PERIOD = 30

# Frame rate (fps) for 1..6 tracked objects measured on a Jetson TX2, kept
# only as an overlay for comparison plots; not reproducible on other hardware.
REFERENCE_FPS = {
    "normal": {
        "Max-N": (10.9, 8.6, 6.8, 5.4, 4.7, 3.9),
        "Max-Q": (7.2, 5.1, 4.8, 3.9, 3.3, 2.9),
        "Max-P Core-All": (8.6, 6.5, 5.5, 4.5, 3.7, 3.2),
        "Max-P ARM": (10.4, 8.1, 6.2, 5.3, 4.5, 3.7),
        "Max-P Denver": (6.7, 5.6, 4.7, 4.3, 3.8, 3.4),
    },
    "full_clocks": {
        "Max-N": (16.2, 9.5, 7.4, 6.1, 5.2, 4.5),
        "Max-Q": (9.3, 6.7, 5.3, 4.3, 3.7, 3.2),
        "Max-P Core-All": (13.1, 8.2, 6.4, 5.2, 4.4, 3.9),
        "Max-P ARM": (12.5, 8.8, 6.8, 5.5, 4.7, 4.1),
        "Max-P Denver": (9.0, 7.2, 5.8, 5.1, 4.2, 3.8),
    },
}


@dataclass(frozen=True)
class BenchConfig:
    objects: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    frames: int = MIN_MEASURED_FRAMES
    warmup: int = WARMUP_FRAMES
    object_size: int = 32
    speed: int = 3
    seed: int = 0
    power_sensor: str | None = None
    power_interval: float = 1.0
    sequences: str | None = None
    interleave: bool = True

    def __post_init__(self):
        if any(n < 1 for n in self.objects):
            raise InvalidConfig("object counts must be >= 1")
        if self.frames < 1 or self.warmup < 0:
            raise InvalidConfig("frames must be >= 1 and warmup >= 0")
        if self.object_size < 8 or self.speed < 0:
            raise InvalidConfig("object_size must be >= 8 and speed >= 0")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    n_objects: int
    frame_count: int
    object_size: int = 32
    speed: int = 3
    dims: FrameDims = FrameDims()
    seed: int = 0
    entry_period: int = ENTRY_PERIOD
    margin: int = 12

    def __post_init__(self):
        if self.n_objects < 1 or self.frame_count < 1:
            raise InvalidConfig("scene needs n_objects >= 1 and frame_count >= 1")
        cw, ch = self.cell_size()
        if cw < self.object_size + 2 or ch < self.object_size + 2:
            raise InvalidConfig(f"{self.n_objects} objects of {self.object_size}px do not fit in {self.dims.width}x{self.dims.height}")

    def grid(self) -> tuple[int, int]:
        cols = max(1, math.ceil(self.n_objects / 3))
        rows = math.ceil(self.n_objects / cols)
        return cols, rows

    def cell_size(self) -> tuple[int, int]:
        cols, rows = self.grid()
        return ((self.dims.width - 2 * self.margin) // cols, (self.dims.height - 2 * self.margin) // rows)

    def appear_frame(self, i: int) -> int:
        return self.entry_period * (i + 1)


def _bounce(start: int, lo: int, hi: int, step: int) -> int:
    """Position after ``step`` unit moves from ``start`` reflecting inside [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return lo
    p = (start - lo + step) % (2 * span)
    return lo + (p if p <= span else 2 * span - p)


def object_box(spec: SyntheticSceneSpec, i: int, frame: int) -> BoundingBox | None:
    """Box of object ``i`` on 1-based ``frame``; ``None`` before it appears."""
    t = frame - spec.appear_frame(i)
    if t < 0:
        return None
    cols, _ = spec.grid()
    cw, ch = spec.cell_size()
    cx = spec.margin + (i % cols) * cw
    cy = spec.margin + (i // cols) * ch
    s = spec.object_size
    x = _bounce(cx + 1, cx + 1, cx + cw - s - 1, spec.speed * t)
    y = _bounce(cy + (ch - s) // 2, cy + 1, cy + ch - s - 1, (spec.speed // 3) * t)
    return BoundingBox(x, y, s, s)


def render_scene(spec: SyntheticSceneSpec):
    """Yield ``(frame_number, luma)`` for the whole sequence."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.dims.shape
    background = rng.integers(20, 81, size=(h, w), dtype=np.uint8)
    s = spec.object_size
    textures = [rng.integers(170, 251, size=(s, s), dtype=np.uint8) for _ in range(spec.n_objects)]
    for frame in range(1, spec.frame_count + 1):
        img = background.copy()
        for i, tex in enumerate(textures):
            box = object_box(spec, i, frame)
            if box is not None:
                img[box.y:box.y2, box.x:box.x2] = tex
        yield frame, img


def generate_sequence(spec: SyntheticSceneSpec, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        meta = asdict(spec)
        meta["dims"] = [spec.dims.width, spec.dims.height]
        meta["appear_frames"] = [spec.appear_frame(i) for i in range(spec.n_objects)]
        (out / "scene.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write sequence to {out}: {exc}") from exc
    for frame, img in render_scene(spec):
        write_pgm(out / f"frame_{frame:06d}.pgm", img)
    return out


# -- power -----------------------------------------------------------------------


def sample_power(path_spec) -> float | None:
    """Instantaneous milliwatts from a sensor file, or ``None`` if unavailable."""
    if not path_spec:
        return None
    try:
        text = Path(path_spec).read_text().split()
        return float(text[0])
    except (OSError, ValueError, IndexError):
        return None


class PowerSampler:
    """Samples a power sensor file every ``interval`` seconds on a thread."""

    def __init__(self, path_spec, interval: float = 1.0):
        self.path_spec = path_spec
        self.interval = interval
        self.samples: list[float] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def sample_once(self) -> None:
        value = sample_power(self.path_spec)
        if value is not None:
            self.samples.append(value)

    def _loop(self):
        while True:
            self.sample_once()
            if self._stop.wait(self.interval):
                break

    def start(self):
        if self.path_spec and self._thread is None:
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()
        return self

    def stop(self):
        if self._thread is not None:
            self._stop.set()
            self._thread.join()
            self._thread = None

    def mean(self) -> float | None:
        return sum(self.samples) / len(self.samples) if self.samples else None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# -- measurement -----------------------------------------------------------------


@dataclass
class BenchRecord:
    n_objects: int
    fps: float
    mean_frame_ms: float
    p50_ms: float
    p99_ms: float
    frames: int
    power_mw: float | None = None

    def csv_row(self) -> list[str]:
        return [
            str(self.n_objects), f"{self.fps:.4f}", f"{self.mean_frame_ms:.4f}", f"{self.p50_ms:.4f}",
            f"{self.p99_ms:.4f}", str(self.frames), "" if self.power_mw is None else f"{self.power_mw:.1f}",
        ]


def summarize(n_objects: int, frame_ns: Sequence[int], power_mw: float | None = None) -> BenchRecord:
    ms = np.asarray(frame_ns, dtype=np.float64) / 1e6
    mean = float(ms.mean())
    return BenchRecord(
        n_objects, 1000.0 / mean, mean,
        float(np.percentile(ms, 50)), float(np.percentile(ms, 99)), int(ms.size), power_mw,
    )


def lead_in(n_objects: int, entry_period: int = ENTRY_PERIOD) -> int:
    """Frames until the last object has appeared and settled."""
    return entry_period * n_objects + 10


_measure_lock = threading.Lock()


class _SweepPoint:
    """One sequence replayed frame by frame through its own pipeline."""

    def __init__(self, config: PipelineConfig, n: int, out: Path, bench: BenchConfig, seq_dir):
        self.n = n
        self.lead_in = lead_in(n)
        self.skip = self.lead_in + bench.warmup
        seq = Path(seq_dir) / f"n{n}" if seq_dir else None
        if seq is None or not seq.is_dir():
            spec = SyntheticSceneSpec(n, self.skip + bench.frames, bench.object_size, bench.speed, seed=bench.seed)
            seq = generate_sequence(spec, out / "sequences" / f"n{n}")
        self.seq = seq
        cfg = replace(
            config, drop_policy="process_every", source=str(seq), out=str(out / "runs" / f"n{n}"),
            write_masks=False, write_annotated=False,
        )
        self.pipe = Pipeline(cfg)
        self.source = open_image_sequence(seq)
        self.frame_ns: list[int] = []
        self.lines: list[str] = []
        self.done = False

    def step(self) -> bool:
        """Process the next frame; False once the sequence is exhausted."""
        frame = self.source.read()
        if frame is None:
            self.done = True
            return False
        measured = frame.index > self.skip
        t0 = time.perf_counter_ns()
        record = self.pipe.process_frame(frame)
        dt = time.perf_counter_ns() - t0
        if measured:
            self.frame_ns.append(dt)
        self.lines.append(json.dumps({
            "n_objects": self.n, "frame": frame.index, "frame_ns": dt, "measured": measured,
            "live_tracks": len(record.live_tracks), "stages": record.stage_timings,
        }))
        return True

    def prime(self) -> None:
        """Run the entry phase, during which the objects appear."""
        while self.source.position < self.lead_in and self.step():
            pass

    def finish(self, dump, power_mw: float | None = None) -> BenchRecord:
        self.source.close()
        self.pipe.sink.close()
        dump.write("\n".join(self.lines) + "\n")
        if not self.frame_ns:
            raise InvalidConfig(f"sequence {self.seq} too short: no frames after the {self.skip}-frame lead-in")
        created = self.pipe.manager.created_total
        if created != self.n:
            log.warning("n=%d: %d tracks created during the run", self.n, created)
        return summarize(self.n, self.frame_ns, power_mw)


def measure(config: PipelineConfig, n_objects_list: Sequence[int], out_dir, bench: BenchConfig | None = None,
            seq_dir=None) -> list[BenchRecord]:
    """Run the sweep, writing ``bench.csv`` and ``timings.jsonl`` to ``out_dir``.

    With ``bench.interleave`` the sweep points advance one frame each in
    turn, so slow drifts in machine speed load every point equally. A power
    sensor needs each point measured on its own, so it forces sequential runs.
    """
    bench = bench or BenchConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if bench.frames < MIN_MEASURED_FRAMES:
        log.warning("measuring %d frames, below the %d-frame protocol minimum", bench.frames, MIN_MEASURED_FRAMES)
    if not _measure_lock.acquire(blocking=False):
        raise InvalidConfig("another measurement is already running")
    try:
        with open(out / "timings.jsonl", "w", encoding="utf-8") as dump:
            if bench.interleave and not bench.power_sensor:
                records = _measure_interleaved(config, n_objects_list, out, bench, seq_dir, dump)
            else:
                records = [_measure_one(config, n, out, bench, seq_dir, dump) for n in n_objects_list]
    finally:
        _measure_lock.release()
    write_csv(out / "bench.csv", records, _metadata(bench))
    return records


def _measure_one(config: PipelineConfig, n: int, out: Path, bench: BenchConfig, seq_dir, dump) -> BenchRecord:
    point = _SweepPoint(config, n, out, bench, seq_dir)
    point.prime()
    sampler = PowerSampler(bench.power_sensor, bench.power_interval)
    while True:
        if point.source.position >= point.skip:
            sampler.start()
        if not point.step():
            break
    sampler.stop()
    return point.finish(dump, sampler.mean())


def _measure_interleaved(config: PipelineConfig, n_list: Sequence[int], out: Path, bench: BenchConfig,
                         seq_dir, dump) -> list[BenchRecord]:
    points = [_SweepPoint(config, n, out, bench, seq_dir) for n in n_list]
    for p in points:
        p.prime()
    live = list(points)
    while live:
        live = [p for p in live if p.step()]
    return [p.finish(dump) for p in points]


def _metadata(bench: BenchConfig) -> list[str]:
    ref = REFERENCE_FPS["normal"]["Max-N"]
    return [
        "edgetrack throughput sweep",
        f"scene: synthetic {bench.object_size}px textured objects, speed {bench.speed}px/frame, seed {bench.seed}, "
        f"one new object every {ENTRY_PERIOD} frames",
        f"protocol: process every frame, lead-in {ENTRY_PERIOD}*n+10 frames and {bench.warmup} warm-up frames discarded, "
        f"{bench.frames} frames measured",
        "reference Jetson TX2 Max-N fps (n=1..6): " + " ".join(str(v) for v in ref),
    ]


def write_csv(path, records: Sequence[BenchRecord], metadata: Sequence[str] = ()) -> None:
    buf = io.StringIO()
    for line in metadata:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.csv_row())
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> list[dict[str, str]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def plot_comparison(csv_path, png_path, mode: str = "normal") -> None:
    """Measured fps next to the reference Jetson curves (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(csv_path)
    fig, (ax_ref, ax_meas) = plt.subplots(1, 2, figsize=(10, 4))
    for label, values in REFERENCE_FPS[mode].items():
        ax_ref.plot(range(1, len(values) + 1), values, marker="o", linestyle="--", label=label)
    ax_ref.set_title(f"reference Jetson TX2 ({mode})")
    ax_meas.plot([int(r["n_objects"]) for r in rows], [float(r["fps"]) for r in rows], marker="s", color="k")
    ax_meas.set_title("this machine")
    for ax in (ax_ref, ax_meas):
        ax.set_xlabel("Number of tracked objects")
        ax.set_ylabel("Frame rate (fps)")
        ax.set_ylim(bottom=0)
    ax_ref.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
