"""Frame acquisition and result emission.

Readers cover binary PGM/PPM image sequences and YUV4MPEG2 files; live
cameras plug in through :class:`CallableSource`. :class:`OutputSink` writes
foreground masks, annotated frames and the JSON Lines track log.
"""
from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .core import BoundingBox, FrameDims
from .errors import (
    IoFailure,
    MalformedImage,
    NoFramesFound,
    TruncatedStream,
    UnsupportedChroma,
)

DEFAULT_PATTERN = r"^\D*(\d+)\.(pgm|ppm)$"
DEFAULT_FPS = 10.0

# Distinct saturated outline colors; never gray, so they cannot collide with luma.
PALETTE = (
    (255, 0, 0),
    (0, 255, 0),
    (0, 0, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 128, 0),
    (128, 0, 255),
    (0, 128, 255),
    (255, 0, 128),
    (128, 255, 0),
    (0, 255, 128),
)


@dataclass(frozen=True)
class Frame:
    dims: FrameDims
    luma: np.ndarray
    index: int
    timestamp: int = 0
    color: np.ndarray | None = None

    def __post_init__(self):
        if self.luma.shape != self.dims.shape or self.luma.dtype != np.uint8:
            raise ValueError(f"luma must be uint8 {self.dims.shape}, got {self.luma.dtype} {self.luma.shape}")
        if self.color is not None and self.color.shape != (*self.dims.shape, 3):
            raise ValueError("color plane must be (height, width, 3)")
        self.luma.flags.writeable = False
        if self.color is not None:
            self.color.flags.writeable = False

    @classmethod
    def from_array(cls, luma, index, timestamp=0, color=None) -> Frame:
        luma = np.ascontiguousarray(luma, dtype=np.uint8)
        dims = FrameDims(luma.shape[1], luma.shape[0])
        if color is not None:
            color = np.ascontiguousarray(color, dtype=np.uint8)
        return cls(dims, luma, index, timestamp, color)


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """Integer BT.601 luma: (77 R + 150 G + 29 B) >> 8."""
    rgb = rgb.astype(np.uint32)
    y = (77 * rgb[..., 0] + 150 * rgb[..., 1] + 29 * rgb[..., 2]) >> 8
    return y.astype(np.uint8)


# -- PNM ---------------------------------------------------------------------

_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_header(data: bytes, path):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise MalformedImage(path, "truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into a uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    tokens, offset = _pnm_header(data, path)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MalformedImage(path, f"unsupported magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise MalformedImage(path, "non-numeric header field") from None
    if width < 1 or height < 1:
        raise MalformedImage(path, "empty raster")
    if not 0 < maxval < 256:
        raise MalformedImage(path, f"maxval {maxval} not 8-bit")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise MalformedImage(path, "truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def write_pgm(path, plane: np.ndarray) -> None:
    plane = np.ascontiguousarray(plane, dtype=np.uint8)
    h, w = plane.shape
    _write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + plane.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    _write_bytes(path, b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- sources -----------------------------------------------------------------


class FrameSource:
    """Single-consumer frame stream.

    ``read()`` returns the next :class:`Frame`, or ``None`` once the stream has
    ended; every call after the end keeps returning ``None``.
    """

    nominal_fps: float = DEFAULT_FPS
    is_live: bool = False

    def read(self) -> Frame | None:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __iter__(self) -> Iterator[Frame]:
        while True:
            frame = self.read()
            if frame is None:
                return
            yield frame

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ImageSequenceSource(FrameSource):
    def __init__(self, files: Sequence[tuple[int, Path]], fps: float = DEFAULT_FPS):
        self._files = list(files)
        self._pos = 0
        self._dims: FrameDims | None = None
        self.nominal_fps = fps

    def __len__(self):
        return len(self._files)

    @property
    def position(self) -> int:
        """Number of frames read so far."""
        return self._pos

    def read(self) -> Frame | None:
        if self._pos >= len(self._files):
            return None
        index, path = self._files[self._pos]
        self._pos += 1
        arr = read_pnm(path)
        color = None
        if arr.ndim == 3:
            color = arr
            luma = rgb_to_luma(arr)
        else:
            luma = arr
        dims = FrameDims(luma.shape[1], luma.shape[0])
        if self._dims is None:
            self._dims = dims
        elif dims != self._dims:
            self._pos = len(self._files)
            raise MalformedImage(path, f"size {dims.width}x{dims.height} differs from {self._dims.width}x{self._dims.height}")
        ts = int(round((self._pos - 1) * 1e9 / self.nominal_fps))
        return Frame(dims, luma, index, ts, color)


def open_image_sequence(dir_path, pattern: str = DEFAULT_PATTERN, fps: float = DEFAULT_FPS) -> ImageSequenceSource:
    """Open a directory of numbered PGM/PPM files, ordered by their number.

    ``pattern`` is a regular expression whose first group captures the frame
    number from the file name.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise NoFramesFound(f"{root} is not a directory")
    rx = re.compile(pattern)
    found = []
    for p in root.iterdir():
        m = rx.match(p.name)
        if m and p.is_file():
            found.append((int(m.group(1)), p))
    if not found:
        raise NoFramesFound(f"no frames matching {pattern!r} in {root}")
    found.sort()
    return ImageSequenceSource(found, fps)


_Y4M_CHROMA = {
    "420": 2, "420jpeg": 2, "420paldv": 2, "420mpeg2": 2, "mono": 0,
}


class Y4MSource(FrameSource):
    def __init__(self, path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "rb")
        except OSError as exc:
            raise IoFailure(f"cannot open {self.path}: {exc}") from exc
        header = self._fh.readline()
        if not header.startswith(b"YUV4MPEG2"):
            self._fh.close()
            raise MalformedImage(self.path, "missing YUV4MPEG2 signature")
        width = height = None
        chroma = "420jpeg"
        fps = DEFAULT_FPS
        for tok in header.split()[1:]:
            tag, val = chr(tok[0]), tok[1:].decode("ascii", "replace")
            if tag == "W":
                width = int(val)
            elif tag == "H":
                height = int(val)
            elif tag == "F":
                num, _, den = val.partition(":")
                fps = int(num) / int(den or 1)
            elif tag == "C":
                chroma = val
        if width is None or height is None:
            self._fh.close()
            raise MalformedImage(self.path, "header lacks W/H")
        if chroma not in _Y4M_CHROMA:
            self._fh.close()
            raise UnsupportedChroma(f"{self.path}: chroma {chroma!r} not supported")
        self.dims = FrameDims(width, height)
        self.chroma = chroma
        self.nominal_fps = fps
        cw, ch = (width + 1) // 2, (height + 1) // 2
        self._chroma_bytes = 2 * cw * ch if _Y4M_CHROMA[chroma] else 0
        self._count = 0
        self._done = False

    def read(self) -> Frame | None:
        if self._done:
            return None
        line = self._fh.readline()
        if not line:
            self._finish()
            return None
        if not line.startswith(b"FRAME"):
            self._finish()
            raise TruncatedStream(f"{self.path}: expected FRAME marker")
        ysize = self.dims.pixels
        data = self._fh.read(ysize + self._chroma_bytes)
        if len(data) != ysize + self._chroma_bytes:
            self._finish()
            raise TruncatedStream(f"{self.path}: stream ends inside frame {self._count + 1}")
        luma = np.frombuffer(data[:ysize], dtype=np.uint8).reshape(self.dims.shape).copy()
        self._count += 1
        ts = int(round((self._count - 1) * 1e9 / self.nominal_fps))
        return Frame(self.dims, luma, self._count, ts)

    def _finish(self):
        self._done = True
        self._fh.close()

    def close(self):
        if not self._done:
            self._finish()


def open_y4m(path) -> Y4MSource:
    return Y4MSource(path)


def write_y4m(path, planes: Sequence[np.ndarray], fps: int = 10) -> None:
    """Write monochrome luma planes as a ``Cmono`` YUV4MPEG2 stream."""
    h, w = planes[0].shape
    with open(path, "wb") as fh:
        fh.write(b"YUV4MPEG2 W%d H%d F%d:1 Ip A1:1 Cmono\n" % (w, h, fps))
        for plane in planes:
            fh.write(b"FRAME\n")
            fh.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())


class ArraySource(FrameSource):
    """In-memory replay of 2-D luma (or HxWx3 RGB) arrays, indexed from 1."""

    def __init__(self, planes: Sequence[np.ndarray], fps: float = DEFAULT_FPS):
        self._planes = list(planes)
        self._pos = 0
        self.nominal_fps = fps

    def __len__(self):
        return len(self._planes)

    def read(self) -> Frame | None:
        if self._pos >= len(self._planes):
            return None
        arr = np.asarray(self._planes[self._pos])
        self._pos += 1
        ts = int(round((self._pos - 1) * 1e9 / self.nominal_fps))
        if arr.ndim == 3:
            return Frame.from_array(rgb_to_luma(arr), self._pos, ts, arr)
        return Frame.from_array(arr, self._pos, ts)


class CallableSource(FrameSource):
    """Live-source slot: wraps a ``grab() -> ndarray | None`` camera callable.

    ``grab`` must return the camera's most recent frame (2-D luma or 3-D RGB)
    or ``None`` when no frame arrived within ``timeout`` seconds; ``None``
    after the timeout ends the stream.
    """

    is_live = True

    def __init__(self, grab: Callable[[float], np.ndarray | None], timeout: float = 1.0, fps: float = DEFAULT_FPS):
        self._grab = grab
        self.timeout = timeout
        self.nominal_fps = fps
        self._index = 0
        self._t0 = None
        self._done = False

    def read(self) -> Frame | None:
        if self._done:
            return None
        arr = self._grab(self.timeout)
        if arr is None:
            self._done = True
            return None
        now = time.monotonic_ns()
        if self._t0 is None:
            self._t0 = now
        self._index += 1
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 3:
            return Frame.from_array(rgb_to_luma(arr), self._index, now - self._t0, arr)
        return Frame.from_array(arr, self._index, now - self._t0)


def open_source(spec, fps: float | None = None) -> FrameSource:
    """Open a directory of PNM frames or a ``.y4m`` file."""
    path = Path(spec)
    if path.is_dir():
        return open_image_sequence(path, fps=fps or DEFAULT_FPS)
    if path.suffix.lower() == ".y4m":
        return open_y4m(path)
    if not path.exists():
        raise NoFramesFound(f"source {path} does not exist")
    raise NoFramesFound(f"source {path} is neither a frame directory nor a .y4m file")


# -- outputs -----------------------------------------------------------------


@dataclass
class SinkConfig:
    out_dir: str | None = None
    write_masks: bool = True
    write_annotated: bool = True
    write_log: bool = True
    log_name: str = "tracks.jsonl"


def outline_color(track_id: int) -> tuple[int, int, int]:
    return PALETTE[(track_id - 1) % len(PALETTE)]


def annotate(frame: Frame, tracks) -> np.ndarray:
    """RGB copy of ``frame`` with a 1-px outline per ``(id, box)`` track."""
    if frame.color is not None:
        img = frame.color.copy()
    else:
        img = np.repeat(frame.luma[:, :, None], 3, axis=2)
    for tid, box in tracks:
        c = outline_color(tid)
        x1, y1 = max(box.x, 0), max(box.y, 0)
        x2, y2 = min(box.x2, frame.dims.width) - 1, min(box.y2, frame.dims.height) - 1
        if x2 < x1 or y2 < y1:
            continue
        img[y1, x1:x2 + 1] = c
        img[y2, x1:x2 + 1] = c
        img[y1:y2 + 1, x1] = c
        img[y1:y2 + 1, x2] = c
    return img


def frame_log_record(index: int, tracks, detections) -> dict:
    return {
        "frame": index,
        "tracks": [{"id": tid, "box": box.to_list()} for tid, box in sorted(tracks, key=lambda t: t[0])],
        "detections": [d.to_list() if isinstance(d, BoundingBox) else d.box.to_list() for d in detections],
    }


class OutputSink:
    """Writes masks, annotated frames and the JSON Lines track log."""

    def __init__(self, config: SinkConfig):
        self.config = config
        self.frames_logged = 0
        self._log = None
        if config.out_dir is None:
            return
        root = Path(config.out_dir)
        try:
            root.mkdir(parents=True, exist_ok=True)
            if config.write_masks:
                (root / "masks").mkdir(exist_ok=True)
            if config.write_annotated:
                (root / "annotated").mkdir(exist_ok=True)
            if config.write_log:
                self._log = open(root / config.log_name, "w", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot prepare output directory {root}: {exc}") from exc
        self.root = root

    def write(self, frame: Frame, mask: np.ndarray, tracks, detections=(), events=()) -> None:
        """Emit one frame; ``tracks`` is an iterable of ``(id, BoundingBox)``."""
        if mask.shape != frame.dims.shape:
            raise ValueError("mask dims differ from frame dims")
        if self.config.out_dir is None:
            self.frames_logged += 1
            return
        tracks = list(tracks)
        name = f"{frame.index:06d}"
        if self.config.write_masks:
            write_pgm(self.root / "masks" / f"mask_{name}.pgm", np.where(mask, 255, 0).astype(np.uint8))
        if self.config.write_annotated:
            write_ppm(self.root / "annotated" / f"frame_{name}.ppm", annotate(frame, tracks))
        if self._log is not None:
            lines = [json.dumps(frame_log_record(frame.index, tracks, detections))]
            lines.extend(json.dumps({"event": e.kind, "id": e.track_id, "frame": e.frame}) for e in events)
            try:
                self._log.write("\n".join(lines) + "\n")
                self._log.flush()
            except OSError as exc:
                raise IoFailure(f"cannot append to track log: {exc}") from exc
        self.frames_logged += 1

    def close(self) -> None:
        if self._log is not None:
            self._log.close()
            self._log = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_outputs(frame: Frame, mask: np.ndarray, tracks, sink: OutputSink, detections=(), events=()) -> None:
    sink.write(frame, mask, tracks, detections, events)
