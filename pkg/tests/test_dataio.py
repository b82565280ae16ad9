import numpy as np
import pytest

from taclang import dataio
from taclang.core import ContactState, DEFAULT_EXTENT, MarkerFrame, rest_grid


def test_frame_round_trip(tmp_path, rng):
    grid = rest_grid()
    deformed = grid + rng.normal(0, 0.3, grid.shape)
    frame = MarkerFrame(grid, deformed, DEFAULT_EXTENT)
    path = tmp_path / "s.fgt"
    dataio.write_frame(path, frame)
    loaded = dataio.read_frame(path)
    # storage is 32-bit; round trip is exact at f32 resolution
    assert np.allclose(loaded.deformed, frame.deformed, atol=1e-5)
    assert loaded.sensor_extent == frame.sensor_extent
    # loading twice is bit-identical
    again = dataio.read_frame(path)
    assert np.array_equal(loaded.deformed, again.deformed)


def test_frame_header_layout(tmp_path, rest_frame):
    path = tmp_path / "s.fgt"
    dataio.write_frame(path, rest_frame)
    raw = path.read_bytes()
    assert raw[:4] == b"FGT1"
    assert len(raw) == 4 + 8 + 12 + 2 * 529 * 3 * 4


def test_read_frame_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.fgt"
    path.write_bytes(b"NOPE" + b"\x00" * 100)
    with pytest.raises(ValueError, match="magic"):
        dataio.read_frame(path)


def test_read_frame_rejects_truncation(tmp_path, rest_frame):
    path = tmp_path / "s.fgt"
    dataio.write_frame(path, rest_frame)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        dataio.read_frame(path)


def test_state_dict_round_trip():
    state = ContactState(1.5, 0.2, centroid=(0.3, 0.4), principal_axis_deg=12.0,
                         slide_deg=None, twist="none", shape="edge", texture="bumpy")
    d = dataio.state_to_dict(state)
    assert d["slide_deg"] is None
    assert dataio.state_from_dict(d) == state


def test_load_corpus_missing_labels(tmp_path):
    with pytest.raises(FileNotFoundError):
        dataio.load_corpus(tmp_path)


def test_load_corpus_sorted_by_id(small_noiseless_corpus):
    corpus_dir, _ = small_noiseless_corpus
    entries = dataio.load_corpus(corpus_dir)
    ids = [e[0] for e in entries]
    assert ids == sorted(ids)
