import numpy as np
import pytest

from unisign.errors import EmptyClipError, IndexOutOfRangeError, MalformedFileError
from unisign.pose import (
    GROUP_BODY,
    GROUP_FACE,
    GROUP_LH,
    GROUP_RH,
    GroupSpec,
    PoseSequence,
    canonical_group_specs,
    group_and_normalize,
    load_pose_sequence,
    save_pose_file,
)

from conftest import random_pose_frames


class TestLoadPoseSequence:
    def test_shape_passthrough(self, tmp_path):
        save_pose_file(tmp_path / "clip.npy", random_pose_frames(10))
        seq = load_pose_sequence(tmp_path / "clip.npy")
        assert seq.num_frames == 10
        assert seq.frames.shape == (10, 133, 3)
        assert seq.clip_id == "clip"

    def test_wrong_width_rejected(self, tmp_path):
        arr = np.zeros((10, 120, 3), dtype=np.float32)
        np.save(tmp_path / "bad.npy", arr)
        with pytest.raises(MalformedFileError):
            load_pose_sequence(tmp_path / "bad.npy")

    def test_nan_rejected(self, tmp_path):
        arr = random_pose_frames(10)
        arr[3, 7, 0] = np.nan
        np.save(tmp_path / "nan.npy", arr)
        with pytest.raises(MalformedFileError):
            load_pose_sequence(tmp_path / "nan.npy")

    def test_empty_clip_rejected(self, tmp_path):
        np.save(tmp_path / "empty.npy", np.zeros((0, 133, 3), dtype=np.float32))
        with pytest.raises(EmptyClipError):
            load_pose_sequence(tmp_path / "empty.npy")

    def test_confidence_out_of_range_rejected(self, tmp_path):
        arr = random_pose_frames(4)
        arr[0, 0, 2] = 1.5
        np.save(tmp_path / "conf.npy", arr)
        with pytest.raises(MalformedFileError):
            load_pose_sequence(tmp_path / "conf.npy")


class TestGroupSpecs:
    def test_canonical_node_counts(self):
        specs = canonical_group_specs()
        counts = {gid: s.node_count for gid, s in specs.items()}
        assert counts == {GROUP_LH: 21, GROUP_RH: 21, GROUP_BODY: 9, GROUP_FACE: 18}
        assert sum(counts.values()) == 69

    def test_canonical_indices(self):
        specs = canonical_group_specs()
        assert specs[GROUP_LH].indices == tuple(range(92, 113))
        assert specs[GROUP_RH].indices == tuple(range(113, 134))
        assert specs[GROUP_BODY].indices == (1, 4, 5, 6, 7, 8, 9, 10, 11)
        assert specs[GROUP_FACE].indices == (
            24, 26, 28, 30, 32, 34, 36, 38, 40, 54,
            84, 85, 86, 87, 88, 89, 90, 91,
        )

    def test_roots(self):
        specs = canonical_group_specs()
        assert specs[GROUP_LH].root_index == 92
        assert specs[GROUP_RH].root_index == 113
        assert specs[GROUP_FACE].root_index == 54
        assert specs[GROUP_BODY].root_index is None

    def test_out_of_range_index_rejected(self):
        with pytest.raises(IndexOutOfRangeError):
            GroupSpec("bad", (1, 134))


class TestGroupAndNormalize:
    def test_node_counts_on_clip(self, rng):
        seq = PoseSequence(frames=random_pose_frames(3, rng))
        grouped = group_and_normalize(seq)
        shapes = {g: grouped.coords[g].shape for g in grouped.coords}
        assert shapes[GROUP_LH] == (3, 21, 2)
        assert shapes[GROUP_RH] == (3, 21, 2)
        assert shapes[GROUP_BODY] == (3, 9, 2)
        assert shapes[GROUP_FACE] == (3, 18, 2)

    def test_root_subtraction_collapses_identical_hand(self, rng):
        frames = random_pose_frames(2, rng)
        frames[0, 91:112, :2] = frames[0, 91, :2]  # all left-hand points on the root
        seq = PoseSequence(frames=frames)
        grouped = group_and_normalize(seq)
        assert np.allclose(grouped.coords[GROUP_LH][0], 0.0)

    def test_root_is_origin_every_frame(self, grouped_clip):
        specs = canonical_group_specs()
        for gid in (GROUP_LH, GROUP_RH, GROUP_FACE):
            root = specs[gid].root_local
            assert np.allclose(grouped_clip.coords[gid][:, root, :], 0.0)

    def test_translation_invariance(self, rng):
        frames = random_pose_frames(5, rng)
        shifted = frames.copy()
        shifted[:, :, 0] += 5.0
        shifted[:, :, 1] += 7.0
        a = group_and_normalize(PoseSequence(frames=frames))
        b = group_and_normalize(PoseSequence(frames=shifted))
        for gid in (GROUP_LH, GROUP_RH, GROUP_FACE):
            assert np.allclose(a.coords[gid], b.coords[gid], atol=1e-6)
        assert np.allclose(
            b.coords[GROUP_BODY] - a.coords[GROUP_BODY],
            np.array([5.0, 7.0], dtype=np.float32),
            atol=1e-5,
        )

    def test_body_passes_through(self, rng):
        frames = random_pose_frames(4, rng)
        grouped = group_and_normalize(PoseSequence(frames=frames))
        assert np.array_equal(grouped.coords[GROUP_BODY], grouped.raw_coords[GROUP_BODY])

    def test_confidences_untouched(self, rng):
        frames = random_pose_frames(4, rng)
        grouped = group_and_normalize(PoseSequence(frames=frames))
        specs = canonical_group_specs()
        for gid, spec in specs.items():
            assert np.array_equal(
                grouped.confidences[gid], frames[:, spec.zero_based, 2]
            )

    def test_idempotent_on_body(self, rng):
        frames = random_pose_frames(4, rng)
        once = group_and_normalize(PoseSequence(frames=frames))
        again = group_and_normalize(PoseSequence(frames=frames))
        assert np.array_equal(once.coords[GROUP_BODY], again.coords[GROUP_BODY])

    def test_coord_scale_divides(self, rng):
        frames = random_pose_frames(4, rng)
        plain = group_and_normalize(PoseSequence(frames=frames))
        scaled = group_and_normalize(PoseSequence(frames=frames), coord_scale=640.0)
        for gid in plain.coords:
            assert np.allclose(scaled.coords[gid], plain.coords[gid] / 640.0, atol=1e-6)
            # raw coordinates keep the pixel frame either way
            assert np.array_equal(scaled.raw_coords[gid], plain.raw_coords[gid])
