import numpy as np
import pytest

from litetok.data import (
    MOTIFS, SyntheticVideoSpec, adjacent_frame_correlation, generate_synthetic_video,
    generate_videos, load_corpus,
)
from litetok.errors import ConfigError


@pytest.mark.parametrize("motif", MOTIFS)
def test_shape_range_dtype(motif):
    spec = SyntheticVideoSpec(num_videos=3, frames=8, px=16, motif=motif)
    videos = generate_videos(spec)
    assert len(videos) == 3
    for v in videos:
        assert v.shape == (8, 16, 16, 3) and v.dtype == np.float32
        assert v.min() >= 0 and v.max() <= 1


@pytest.mark.parametrize("motif", ["moving_square", "translating_gradient"])
def test_no_motion_gives_static_frames(motif):
    v = generate_videos(SyntheticVideoSpec(num_videos=2, frames=6, motif=motif, motion_px_per_frame=0))[0]
    assert all(np.array_equal(v[0], v[f]) for f in range(6))


def test_same_seed_bit_identical(tmp_path):
    spec = SyntheticVideoSpec(num_videos=3, frames=8, px=16, seed=11)
    a = load_corpus(generate_synthetic_video(spec, tmp_path / "a").parent)
    b = load_corpus(generate_synthetic_video(spec, tmp_path / "b").parent)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.videos, b.videos))
    assert a.native_fps == spec.native_fps
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.videos, generate_videos(spec)))


def test_different_seed_differs():
    a = generate_videos(SyntheticVideoSpec(num_videos=1, seed=1))[0]
    b = generate_videos(SyntheticVideoSpec(num_videos=1, seed=2))[0]
    assert not np.array_equal(a, b)


def test_manifest_lists_files(tmp_path):
    manifest = generate_synthetic_video(SyntheticVideoSpec(num_videos=2, frames=4, px=8), tmp_path)
    lines = manifest.read_text().splitlines()
    assert "file = video_0000.ltf 4x8x8x3" in lines
    assert "motif = moving_square" in lines


def test_default_corpus_is_temporally_redundant():
    # the desk corpus: moving square, 2 px/frame, 32 px
    videos = generate_videos(SyntheticVideoSpec())
    corr = [adjacent_frame_correlation(v) for v in videos]
    assert np.mean(corr) > 0.9


def test_correlation_falls_with_motion():
    corr = [np.mean([adjacent_frame_correlation(v) for v in
                     generate_videos(SyntheticVideoSpec(num_videos=8, motif="translating_gradient",
                                                        motion_px_per_frame=m))])
            for m in (0.5, 2.0, 6.0)]
    assert corr[0] > corr[1] > corr[2]


def test_invalid_spec():
    with pytest.raises(ConfigError):
        SyntheticVideoSpec(motif="spiral")
    with pytest.raises(ConfigError):
        SyntheticVideoSpec(frames=0)
    with pytest.raises(ConfigError):
        SyntheticVideoSpec(motion_px_per_frame=-1)
