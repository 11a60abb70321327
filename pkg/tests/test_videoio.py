import json

import numpy as np
import pytest

from edgetrack.core import BoundingBox
from edgetrack.errors import IoFailure, MalformedImage, NoFramesFound, TruncatedStream, UnsupportedChroma
from edgetrack.track_manager import TrackEvent
from edgetrack.videoio import (
    PALETTE,
    CallableSource,
    Frame,
    OutputSink,
    SinkConfig,
    open_image_sequence,
    open_source,
    open_y4m,
    read_pnm,
    rgb_to_luma,
    write_outputs,
    write_pgm,
    write_ppm,
    write_y4m,
)


def _seq(tmp_path, count=10, shape=(24, 32)):
    rng = np.random.default_rng(0)
    planes = []
    for i in range(1, count + 1):
        p = rng.integers(0, 256, size=shape, dtype=np.uint8)
        planes.append(p)
        write_pgm(tmp_path / f"frame_{i:06d}.pgm", p)
    return planes


def test_image_sequence_enumeration(tmp_path):
    planes = _seq(tmp_path)
    frames = list(open_image_sequence(tmp_path))
    assert [f.index for f in frames] == list(range(1, 11))
    for f, p in zip(frames, planes):
        assert np.array_equal(f.luma, p)
        assert f.color is None


def test_numeric_not_lexicographic_order(tmp_path):
    for i in (9, 10, 100):
        write_pgm(tmp_path / f"f{i}.pgm", np.full((4, 4), i % 256, np.uint8))
    assert [f.index for f in open_image_sequence(tmp_path)] == [9, 10, 100]


def test_source_determinism(tmp_path):
    _seq(tmp_path, 5)
    a = [(f.index, f.luma.tobytes()) for f in open_image_sequence(tmp_path)]
    b = [(f.index, f.luma.tobytes()) for f in open_image_sequence(tmp_path)]
    assert a == b


def test_pgm_roundtrip_byte_identical(tmp_path):
    plane = np.arange(256, dtype=np.uint8).reshape(16, 16)
    write_pgm(tmp_path / "a.pgm", plane)
    assert read_pnm(tmp_path / "a.pgm").tobytes() == plane.tobytes()


def test_pnm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x07\x09")
    assert read_pnm(tmp_path / "c.pgm").tolist() == [[7, 9]]


def test_mixed_sizes_raise_malformed(tmp_path):
    write_pgm(tmp_path / "frame_000001.pgm", np.zeros((4, 4), np.uint8))
    write_pgm(tmp_path / "frame_000002.pgm", np.zeros((4, 5), np.uint8))
    src = open_image_sequence(tmp_path)
    assert src.read().index == 1
    with pytest.raises(MalformedImage) as info:
        src.read()
    assert info.value.path.name == "frame_000002.pgm"
    assert src.read() is None


def test_no_frames(tmp_path):
    with pytest.raises(NoFramesFound):
        open_image_sequence(tmp_path)
    with pytest.raises(NoFramesFound):
        open_source(tmp_path / "missing")


def test_truncated_raster_is_malformed(tmp_path):
    (tmp_path / "frame_1.pgm").write_bytes(b"P5 4 4 255\n" + b"\x00" * 5)
    with pytest.raises(MalformedImage):
        list(open_image_sequence(tmp_path))


def test_sixteen_bit_rejected(tmp_path):
    (tmp_path / "frame_1.pgm").write_bytes(b"P5 1 1 65535\n\x00\x00")
    with pytest.raises(MalformedImage):
        list(open_image_sequence(tmp_path))


def test_ppm_luma_formula(tmp_path):
    rgb = np.array([[[255, 255, 255], [255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]]], np.uint8)
    write_ppm(tmp_path / "frame_1.ppm", rgb)
    f = open_image_sequence(tmp_path).read()
    expected = [(77 * r + 150 * g + 29 * b) >> 8 for r, g, b in rgb[0].tolist()]
    assert f.luma[0].tolist() == expected
    assert expected[0] == 255
    assert np.array_equal(f.color, rgb)
    assert rgb_to_luma(rgb)[0, 0] == 255


def test_frame_immutable():
    f = Frame.from_array(np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        f.luma[0, 0] = 1


def test_y4m_header_and_frames(tmp_path):
    planes = [np.full((240, 320), i, np.uint8) for i in range(3)]
    with open(tmp_path / "a.y4m", "wb") as fh:
        fh.write(b"YUV4MPEG2 W320 H240 F10:1 Ip A1:1 C420jpeg\n")
        for p in planes:
            fh.write(b"FRAME\n" + p.tobytes() + bytes(2 * 160 * 120))
    src = open_y4m(tmp_path / "a.y4m")
    assert (src.dims.width, src.dims.height) == (320, 240)
    assert src.nominal_fps == 10.0
    frames = list(src)
    assert [f.index for f in frames] == [1, 2, 3]
    assert all(np.array_equal(f.luma, p) for f, p in zip(frames, planes))
    assert src.read() is None


def test_y4m_mono(tmp_path):
    write_y4m(tmp_path / "m.y4m", [np.full((6, 8), 9, np.uint8)] * 2)
    frames = list(open_source(tmp_path / "m.y4m"))
    assert len(frames) == 2 and frames[0].color is None and frames[0].luma[0, 0] == 9


def test_y4m_truncated(tmp_path):
    with open(tmp_path / "t.y4m", "wb") as fh:
        fh.write(b"YUV4MPEG2 W8 H6 F10:1 Cmono\nFRAME\n" + bytes(48) + b"FRAME\n" + bytes(10))
    src = open_y4m(tmp_path / "t.y4m")
    assert src.read() is not None
    with pytest.raises(TruncatedStream):
        src.read()
    assert src.read() is None


def test_y4m_unsupported_chroma(tmp_path):
    (tmp_path / "c.y4m").write_bytes(b"YUV4MPEG2 W8 H6 F10:1 C444\n")
    with pytest.raises(UnsupportedChroma):
        open_y4m(tmp_path / "c.y4m")


def test_callable_source_end_is_sticky():
    shots = [np.zeros((4, 4), np.uint8), np.ones((4, 4, 3), np.uint8) * 200]
    src = CallableSource(lambda timeout: shots.pop(0) if shots else None)
    a, b = src.read(), src.read()
    assert (a.index, b.index) == (1, 2)
    assert b.color is not None and b.luma[0, 0] == 200
    assert src.read() is None and src.read() is None


def _frame(shape=(40, 60)):
    return Frame.from_array(np.full(shape, 50, np.uint8), 7)


def test_outputs_empty_tracks(tmp_path):
    f = _frame()
    with OutputSink(SinkConfig(str(tmp_path))) as sink:
        write_outputs(f, np.zeros(f.dims.shape, bool), [], sink)
    line = json.loads((tmp_path / "tracks.jsonl").read_text())
    assert line == {"frame": 7, "tracks": [], "detections": []}
    mask = read_pnm(tmp_path / "masks" / "mask_000007.pgm")
    assert not mask.any()


def test_outputs_mask_values(tmp_path):
    f = _frame()
    m = np.zeros(f.dims.shape, bool)
    m[3:5, 4:9] = True
    with OutputSink(SinkConfig(str(tmp_path))) as sink:
        sink.write(f, m, [])
    out = read_pnm(tmp_path / "masks" / "mask_000007.pgm")
    assert set(np.unique(out)) == {0, 255}
    assert np.array_equal(out == 255, m)


def test_outputs_two_tracks(tmp_path):
    f = _frame()
    tracks = [(5, BoundingBox(30, 10, 12, 8)), (2, BoundingBox(4, 4, 10, 10))]
    events = [TrackEvent("create", 5, 7)]
    with OutputSink(SinkConfig(str(tmp_path))) as sink:
        sink.write(f, np.zeros(f.dims.shape, bool), tracks, [BoundingBox(1, 2, 3, 4)], events)
    lines = [json.loads(x) for x in (tmp_path / "tracks.jsonl").read_text().splitlines()]
    assert [t["id"] for t in lines[0]["tracks"]] == [2, 5]
    assert lines[0]["detections"] == [[1, 2, 3, 4]]
    assert lines[1] == {"event": "create", "id": 5, "frame": 7}
    img = read_pnm(tmp_path / "annotated" / "frame_000007.ppm")
    colors = {tuple(c) for c in img.reshape(-1, 3).tolist() if len(set(c)) > 1}
    assert colors == {PALETTE[1], PALETTE[4]}
    # outline only: box interior keeps the frame value
    assert tuple(img[8, 8]) == (50, 50, 50)
    assert tuple(img[4, 4]) == PALETTE[1]


def test_sink_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        OutputSink(SinkConfig(str(blocker / "sub")))
