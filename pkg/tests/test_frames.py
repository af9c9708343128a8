import json
import sys
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_frames, write_frame_dir
from touchreplay.errors import IngestError
from touchreplay.frames import (FrameStore, load_frames, normalize_manifest,
                                normalize_rate, read_manifest,
                                resample_indices, run_decoder)
from touchreplay.types import FRAME_MS, Frame

FRAME_MS_EXACT = Fraction(1000, 30)


# -- independent resampling oracle --------------------------------------------

def resample_oracle(timestamps):
    """Nearest-timestamp slot assignment in exact rational arithmetic."""
    ts = [Fraction(t) for t in timestamps]
    t0 = ts[0]
    rel = [t - t0 for t in ts]
    duration = rel[-1]
    x = duration / FRAME_MS_EXACT
    half_down = -((-2 * x + 1) // 2)  # ceil(x - 1/2)
    n_slots = max(1, int(half_down) + 1)
    picks = []
    for k in range(n_slots):
        slot = k * FRAME_MS_EXACT
        best, best_d = 0, abs(rel[0] - slot)
        for i, t in enumerate(rel[1:], start=1):
            d = abs(t - slot)
            if d < best_d:
                best, best_d = i, d
        picks.append(best)
    return picks


def test_load_constant_rate(tmp_path):
    manifest = write_frame_dir(tmp_path, flat_frames(90), fps=30.0)
    frames, meta = load_frames(manifest)
    assert len(frames) == 90
    assert meta.width == 32 and meta.height == 24
    for i, f in enumerate(frames):
        assert f.index == i
        assert f.timestamp_ms == pytest.approx(i * FRAME_MS, abs=0.5)


def test_missing_frame_reports_index(tmp_path):
    manifest = write_frame_dir(tmp_path, flat_frames(50), fps=30.0)
    (tmp_path / "frame_00042.png").unlink()
    store = FrameStore(manifest)
    with pytest.raises(IngestError, match="42"):
        list(store)


def test_dimension_mismatch(tmp_path):
    frames = flat_frames(5)
    frames[3] = np.zeros((10, 10, 3), dtype=np.uint8)
    from PIL import Image
    manifest = write_frame_dir(tmp_path, flat_frames(5), fps=30.0)
    Image.fromarray(frames[3]).save(tmp_path / "frame_00003.png")
    with pytest.raises(IngestError, match="frame 3"):
        load_frames(manifest)


def test_too_short(tmp_path):
    manifest = write_frame_dir(tmp_path, flat_frames(2), fps=30.0)
    with pytest.raises(IngestError, match="too short"):
        load_frames(manifest)


def test_normalize_identity_at_30fps():
    frames = [Frame(i, i * FRAME_MS, np.full((4, 4, 3), i, np.uint8))
              for i in range(20)]
    out = normalize_rate(frames)
    assert len(out) == 20
    for i, f in enumerate(out):
        assert f.pixels is frames[i].pixels  # byte-identical reuse
        assert f.timestamp_ms == pytest.approx(i * FRAME_MS, abs=0.5)


def test_normalize_60fps_keeps_every_second_frame(tmp_path):
    manifest = write_frame_dir(tmp_path, flat_frames(60), fps=60.0)
    store = FrameStore(manifest)
    picks = resample_indices(store.timestamps_ms)
    assert picks == resample_oracle([Fraction(i * 1000, 60)
                                     for i in range(60)])
    assert len(picks) == 30
    assert picks == list(range(0, 60, 2))


def test_normalize_variable_rate_example():
    ts = [0.0, 20.0, 45.0, 70.0, 95.0]
    picks = resample_indices(ts)
    assert picks == [0, 2, 3, 4]
    assert picks == resample_oracle(ts)


def test_normalize_15fps_duplicates():
    n = 8
    ts = [i * 1000.0 / 15 for i in range(n)]
    picks = resample_indices(ts)
    assert picks == resample_oracle([Fraction(i * 1000, 15)
                                     for i in range(n)])
    counts = [picks.count(i) for i in range(n)]
    assert counts[:-1] == [2] * (n - 1) and counts[-1] == 1


def test_normalize_rejects_non_monotonic():
    frames = [Frame(i, 0.0, np.zeros((2, 2, 3), np.uint8)) for i in range(3)]
    with pytest.raises(IngestError, match="monotonic"):
        normalize_rate(frames, [0.0, 50.0, 40.0])


@given(st.lists(st.integers(0, 80), min_size=2, max_size=40))
@settings(max_examples=120)
def test_resample_matches_exact_oracle(gaps):
    # integer-ms timestamps, like real container metadata
    ts = [0]
    for g in gaps:
        ts.append(ts[-1] + g)
    assert resample_indices([float(t) for t in ts]) == resample_oracle(ts)


@given(st.lists(st.integers(1, 80), min_size=2, max_size=30))
@settings(max_examples=80)
def test_resample_idempotent(gaps):
    ts = [0]
    for g in gaps:
        ts.append(ts[-1] + g)
    frames = [Frame(i, float(t), np.full((2, 2, 3), i % 251, np.uint8))
              for i, t in enumerate(ts)]
    once = normalize_rate(frames)
    twice = normalize_rate(once)
    assert len(once) == len(twice)
    assert all(a.pixels is b.pixels for a, b in zip(once, twice))


@given(st.lists(st.integers(1, 80), min_size=2, max_size=30))
@settings(max_examples=80)
def test_resample_slot_deviation_bound(gaps):
    ts = [0.0]
    for g in gaps:
        ts.append(ts[-1] + g)
    picks = resample_indices(ts)
    median_gap = float(np.median(np.diff(ts)))
    for k, src in enumerate(picks):
        assert abs(ts[src] - k * FRAME_MS) <= median_gap / 2 + 1e-6


@given(st.lists(st.integers(1, 80), min_size=2, max_size=30))
@settings(max_examples=80)
def test_resample_count_formula(gaps):
    ts = [0]
    for g in gaps:
        ts.append(ts[-1] + g)
    picks = resample_indices([float(t) for t in ts])
    x = Fraction(ts[-1] - ts[0]) / FRAME_MS_EXACT
    half_down = -((-2 * x + 1) // 2)
    assert len(picks) == max(1, int(half_down) + 1)


def test_normalize_manifest_relinks_paths(tmp_path):
    manifest = write_frame_dir(tmp_path, flat_frames(6), fps=60.0)
    doc = read_manifest(manifest)
    norm = normalize_manifest(doc)
    assert norm["fps"] == 30.0
    assert norm["frames"] == [doc["frames"][i]
                              for i in resample_indices([i * 1000 / 60
                                                         for i in range(6)])]


def test_run_decoder_contract(tmp_path):
    out = tmp_path / "decoded"
    helper = tmp_path / "fake_decoder.py"
    helper.write_text(
        "import json, sys\n"
        "from pathlib import Path\n"
        "import numpy as np\n"
        "from PIL import Image\n"
        "video, out_dir, fps = sys.argv[1], Path(sys.argv[2]), float(sys.argv[3])\n"
        "names = []\n"
        "for i in range(4):\n"
        "    name = f'f{i}.png'\n"
        "    Image.fromarray(np.full((6, 8, 3), i, np.uint8)).save(out_dir / name)\n"
        "    names.append(name)\n"
        "(out_dir / 'meta.json').write_text(json.dumps(\n"
        "    {'width': 8, 'height': 6, 'fps': fps, 'frames': names}))\n")
    manifest = run_decoder(
        f"{sys.executable} {helper} {{video}} {{out_dir}} {{fps}}",
        "input.mp4", out)
    frames, meta = load_frames(manifest)
    assert len(frames) == 4 and meta.fps == 30.0


def test_run_decoder_failure(tmp_path):
    with pytest.raises(IngestError, match="status 3"):
        run_decoder(f"{sys.executable} -c 'raise SystemExit(3)'",
                    "v.mp4", tmp_path / "o")
