import json

import pytest

from unisign.curation import (
    ClipRecord,
    CropGeometry,
    TranscriptSegmenterInput,
    apply_filters,
    corpus_stats,
    load_crop_geometry,
    read_manifest,
    read_transcript,
    records_from_segments,
    segment,
    text_length,
    write_manifest,
)
from unisign.errors import EmptyCorpusError, MalformedFileError


def make_record(clip_id="c0", frame_count=100, split="train", **kw):
    defaults = dict(
        clip_id=clip_id,
        media="prog.mp4",
        frame_start=0,
        frame_end=frame_count,
        keypoint_path=f"{clip_id}.npy",
        text="一二三",
        duration_s=frame_count / 25.0,
        frame_count=frame_count,
        split=split,
    )
    defaults.update(kw)
    return ClipRecord(**defaults)


class TestSegment:
    def test_three_marks_three_clips(self):
        inp = TranscriptSegmenterInput(
            program_id="p1",
            utterances=(("A。", 0.0, 3.0), ("B？", 3.0, 7.0), ("C！", 7.0, 9.0)),
        )
        assert segment(inp) == [("A。", 0.0, 3.0), ("B？", 3.0, 7.0), ("C！", 7.0, 9.0)]

    def test_units_accumulate_until_mark(self):
        inp = TranscriptSegmenterInput(
            program_id="p1",
            utterances=(("A", 0.0, 1.0), ("B。", 1.0, 3.0), ("C！", 3.0, 5.0)),
        )
        assert segment(inp) == [("AB。", 0.0, 3.0), ("C！", 3.0, 5.0)]

    def test_no_marks_single_clip(self, caplog):
        inp = TranscriptSegmenterInput(
            program_id="p1", utterances=(("A", 0.0, 2.0), ("B", 2.0, 4.0))
        )
        with caplog.at_level("WARNING"):
            clips = segment(inp)
        assert clips == [("AB", 0.0, 4.0)]
        assert "no sentence-final marks" in caplog.text

    def test_mark_set_override(self):
        inp = TranscriptSegmenterInput(
            program_id="p1",
            utterances=(("hello.", 0.0, 1.0), ("bye.", 1.0, 2.0)),
            marks=(".",),
        )
        assert segment(inp) == [("hello.", 0.0, 1.0), ("bye.", 1.0, 2.0)]

    def test_clip_starts_at_previous_mark_not_utterance(self):
        # silence gap between 3.0 and 4.0 belongs to the second clip
        inp = TranscriptSegmenterInput(
            program_id="p1", utterances=(("A。", 0.0, 3.0), ("B。", 4.0, 6.0))
        )
        assert segment(inp) == [("A。", 0.0, 3.0), ("B。", 3.0, 6.0)]

    def test_partition_tiles_time_range(self):
        inp = TranscriptSegmenterInput(
            program_id="p1",
            utterances=tuple((f"u{i}。", float(i), float(i + 1)) for i in range(10)),
        )
        clips = segment(inp)
        for (_, _, end_a), (_, start_b, _) in zip(clips, clips[1:]):
            assert end_a == start_b
        assert clips[0][1] == 0.0 and clips[-1][2] == 10.0

    def test_trailing_units_dropped_with_warning(self, caplog):
        inp = TranscriptSegmenterInput(
            program_id="p1", utterances=(("A。", 0.0, 3.0), ("tail", 3.0, 5.0))
        )
        with caplog.at_level("WARNING"):
            clips = segment(inp)
        assert clips == [("A。", 0.0, 3.0)]
        assert "trailing" in caplog.text

    def test_bad_timestamps_rejected(self):
        with pytest.raises(MalformedFileError):
            TranscriptSegmenterInput(
                program_id="p", utterances=(("A", 3.0, 2.0),)
            )


class TestRecords:
    def test_frame_arithmetic(self):
        recs = records_from_segments(
            "p1", [("A。", 0.0, 4.0)], media="p1.mp4", keypoint_dir="kp", frame_rate=25.0
        )
        assert recs[0].clip_id == "p1_00000"
        assert recs[0].frame_start == 0
        assert recs[0].frame_end == 100
        assert recs[0].frame_count == 100
        assert recs[0].duration_s == pytest.approx(4.0)

    def test_crop_geometry_attached(self):
        geo = CropGeometry(0.25, 0.1, 0.75, 0.9)
        recs = records_from_segments(
            "p1", [("A。", 0.0, 1.0)], media="m", keypoint_dir="k", crop_box=geo
        )
        assert recs[0].crop_box == (0.25, 0.1, 0.75, 0.9)

    def test_bad_geometry_rejected(self):
        with pytest.raises(MalformedFileError):
            CropGeometry(0.5, 0.0, 0.4, 1.0)


class TestApplyFilters:
    def test_strict_512_boundary(self):
        kept = apply_filters([make_record("a", 511), make_record("b", 512)])
        assert [r.clip_id for r in kept] == ["a"]

    def test_dev_kept_with_flag(self):
        recs = [make_record("a", 512, split="dev")]
        kept = apply_filters(recs)
        assert kept[0].needs_truncation is True
        assert recs[0].needs_truncation is False  # input untouched

    def test_contents_never_mutated(self):
        recs = [make_record("a", 100), make_record("b", 600)]
        snapshot = [r.to_dict() for r in recs]
        apply_filters(recs)
        assert [r.to_dict() for r in recs] == snapshot

    def test_empty_input(self):
        assert apply_filters([]) == []


class TestCorpusStats:
    def test_mean_duration(self):
        recs = [make_record("a", 100), make_record("b", 150)]
        stats = corpus_stats(recs)
        assert stats["mean_duration_s"] == pytest.approx((4.0 + 6.0) / 2)

    def test_mean_text_length_chars(self):
        recs = [make_record("a", 10, text="ab"), make_record("b", 10, text="abcd")]
        stats = corpus_stats(recs, text_unit="char")
        assert stats["mean_text_length"] == pytest.approx(3.0)

    def test_word_unit(self):
        assert text_length("one two three", "word") == 3
        assert text_length("one two three", "char") == 11

    def test_vocab_and_count(self):
        recs = [make_record("a", 10, text="你好"), make_record("b", 10, text="好吗")]
        stats = corpus_stats(recs)
        assert stats["clip_count"] == 2
        assert stats["vocab_size"] == 3

    def test_empty_rejected(self):
        with pytest.raises(EmptyCorpusError):
            corpus_stats([])


class TestManifestRoundtrip:
    def test_write_read_structural_equality(self, tmp_path):
        recs = [
            make_record("b", 100, glosses=["g1", "g2"], label="book"),
            make_record("a", 50, crop_box=(0.1, 0.2, 0.9, 0.8)),
        ]
        path = tmp_path / "manifest.jsonl"
        write_manifest(path, recs)
        back = read_manifest(path)
        assert back == sorted(recs, key=lambda r: r.clip_id)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "m.jsonl"
        d = make_record("a").to_dict()
        d["surprise"] = 1
        path.write_text(json.dumps(d) + "\n")
        with pytest.raises(MalformedFileError):
            read_manifest(path)

    def test_utf8_text_preserved(self, tmp_path):
        rec = make_record("a", text="今天真冷。")
        path = tmp_path / "m.jsonl"
        write_manifest(path, [rec])
        assert "今天真冷。" in path.read_text(encoding="utf-8")
        assert read_manifest(path)[0].text == "今天真冷。"

    def test_meta_line_carries_config_hash(self, tmp_path):
        from unisign.curation import manifest_meta

        path = tmp_path / "m.jsonl"
        write_manifest(path, [make_record("a")], config_hash="cafe01")
        first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        assert first == {"record": "meta", "config_hash": "cafe01"}
        assert manifest_meta(path)["config_hash"] == "cafe01"
        assert len(read_manifest(path)) == 1  # meta line is not a record


class TestTranscriptIO:
    def test_read_transcript(self, tmp_path):
        path = tmp_path / "prog.jsonl"
        lines = [
            {"text": "A。", "start_s": 0.0, "end_s": 3.0},
            {"text": "B！", "start_s": 3.0, "end_s": 5.0},
        ]
        path.write_text("\n".join(json.dumps(l, ensure_ascii=False) for l in lines))
        inp = read_transcript(path)
        assert inp.program_id == "prog"
        assert len(inp.utterances) == 2

    def test_geometry_file(self, tmp_path):
        path = tmp_path / "geometry.json"
        path.write_text(json.dumps({"prog": [0.2, 0.0, 0.8, 1.0]}))
        geo = load_crop_geometry(path)
        assert geo["prog"].as_tuple() == (0.2, 0.0, 0.8, 1.0)
