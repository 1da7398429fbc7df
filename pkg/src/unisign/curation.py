"""Corpus curation: transcript-driven clip segmentation, length filtering,
manifests and corpus statistics.

Programs arrive as timestamped transcript units (text, start_s, end_s), the
granularity an ASR pass provides. Clips are cut at sentence-final
punctuation: each clip's text ends with its mark, and its time range runs
from the previous mark's timestamp to this mark's. Station-specific
relative crop boxes remove studio background before any pixel work.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import EmptyCorpusError, MalformedFileError

logger = logging.getLogger(__name__)

DEFAULT_MARKS = ("。", "？", "！")  # 。 ？ ！
MAX_TRAIN_FRAMES = 512


@dataclass(frozen=True)
class TranscriptSegmenterInput:
    program_id: str
    utterances: Tuple[Tuple[str, float, float], ...]
    marks: Tuple[str, ...] = DEFAULT_MARKS

    def __post_init__(self):
        object.__setattr__(
            self,
            "utterances",
            tuple((str(t), float(s), float(e)) for t, s, e in self.utterances),
        )
        last = None
        for text, start, end in self.utterances:
            if not text:
                raise MalformedFileError("transcript units must carry text")
            if end < start or (last is not None and start < last):
                raise MalformedFileError("transcript timestamps must be non-decreasing")
            last = start


@dataclass(frozen=True)
class CropGeometry:
    """Relative (0..1) crop box keeping only the signer region."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise MalformedFileError(f"invalid relative crop box {self}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class ClipRecord:
    clip_id: str
    media: str
    frame_start: int
    frame_end: int
    keypoint_path: str
    text: str
    glosses: Optional[List[str]] = None
    label: Optional[str] = None
    duration_s: float = 0.0
    frame_count: int = 0
    split: str = "train"
    crop_box: Optional[Tuple[float, float, float, float]] = None
    needs_truncation: bool = False

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["crop_box"] is not None:
            d["crop_box"] = list(d["crop_box"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClipRecord":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise MalformedFileError(f"manifest record has unknown fields {sorted(unknown)}")
        d = dict(d)
        if d.get("crop_box") is not None:
            d["crop_box"] = tuple(d["crop_box"])
        if d.get("glosses") is not None:
            d["glosses"] = list(d["glosses"])
        return cls(**d)


def segment(inp: TranscriptSegmenterInput) -> List[Tuple[str, float, float]]:
    """Split the utterance stream at sentence-final punctuation timestamps.

    A boundary falls after every unit whose text ends with one of the marks;
    units are atomic (the transcript's timing granularity), so marks inside
    a unit do not split it. When no unit ends with a mark the whole program
    becomes a single clip, with a warning. Trailing units after the last
    mark carry no sentence end and are dropped, with a warning.
    """
    units = inp.utterances
    if not units:
        return []
    clips: List[Tuple[str, float, float]] = []
    boundary = units[0][1]
    pieces: List[str] = []
    for text, start, end in units:
        pieces.append(text)
        if text.rstrip() and text.rstrip()[-1] in inp.marks:
            clips.append(("".join(pieces), boundary, end))
            boundary = end
            pieces = []
    if not clips:
        logger.warning(
            "program %s has no sentence-final marks; emitting one clip", inp.program_id
        )
        return [("".join(pieces), units[0][1], units[-1][2])]
    if pieces:
        logger.warning(
            "program %s: dropping %d trailing unit(s) after the last mark",
            inp.program_id,
            len(pieces),
        )
    return clips


def records_from_segments(
    program_id: str,
    segments: Sequence[Tuple[str, float, float]],
    media: str,
    keypoint_dir: str,
    frame_rate: float = 25.0,
    split: str = "train",
    crop_box: Optional[CropGeometry] = None,
) -> List[ClipRecord]:
    """Bind segmented (text, start, end) spans into manifest records."""
    records = []
    for i, (text, start, end) in enumerate(segments):
        clip_id = f"{program_id}_{i:05d}"
        frame_start = int(round(start * frame_rate))
        frame_end = int(round(end * frame_rate))
        records.append(
            ClipRecord(
                clip_id=clip_id,
                media=media,
                frame_start=frame_start,
                frame_end=frame_end,
                keypoint_path=str(Path(keypoint_dir) / f"{clip_id}.npy"),
                text=text,
                duration_s=end - start,
                frame_count=int(round((end - start) * frame_rate)),
                split=split,
                crop_box=crop_box.as_tuple() if crop_box else None,
            )
        )
    return records


def apply_filters(
    records: Sequence[ClipRecord], max_frames: int = MAX_TRAIN_FRAMES
) -> List[ClipRecord]:
    """Drop over-length training clips; flag over-length dev/test clips.

    The training cut is strict: frame_count must be < max_frames to stay.
    Input records are never modified; flagged records are copies.
    """
    kept: List[ClipRecord] = []
    dropped = 0
    for rec in records:
        if rec.frame_count < max_frames:
            kept.append(rec)
        elif rec.split == "train":
            dropped += 1
        else:
            kept.append(dataclasses.replace(rec, needs_truncation=True))
    logger.info(
        "length filter: kept %d records, dropped %d train clips at >= %d frames",
        len(kept),
        dropped,
        max_frames,
    )
    return kept


def text_length(text: str, unit: str = "char") -> int:
    if unit == "char":
        return sum(1 for ch in text if not ch.isspace())
    if unit == "word":
        return len(text.split())
    raise ValueError(f"unknown text unit {unit!r}")


def corpus_stats(
    records: Sequence[ClipRecord], text_unit: str = "char", bins: int = 20
) -> dict:
    """Clip count, duration/text-length means and histograms, vocabulary size."""
    if not records:
        raise EmptyCorpusError("no records to summarize")
    durations = [r.duration_s for r in records]
    lengths = [text_length(r.text, text_unit) for r in records]
    vocab = set()
    for r in records:
        if text_unit == "char":
            vocab.update(ch for ch in r.text if not ch.isspace())
        else:
            vocab.update(r.text.split())
    return {
        "clip_count": len(records),
        "mean_duration_s": sum(durations) / len(durations),
        "mean_text_length": sum(lengths) / len(lengths),
        "text_unit": text_unit,
        "vocab_size": len(vocab),
        "duration_histogram": _histogram(durations, bins),
        "text_length_histogram": _histogram([float(v) for v in lengths], bins),
    }


def _histogram(values: List[float], bins: int) -> dict:
    lo, hi = min(values), max(values)
    if hi == lo:
        return {"edges": [lo, hi], "counts": [len(values)]}
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        idx = min(int((v - lo) / width), bins - 1)
        counts[idx] += 1
    edges = [lo + i * width for i in range(bins + 1)]
    return {"edges": edges, "counts": counts}


def write_manifest(
    path, records: Sequence[ClipRecord], config_hash: str = ""
) -> None:
    """Line-delimited UTF-8 records with stable field order, sorted by id.

    The first line is a meta record carrying the hash of the configuration
    that produced the manifest.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: r.clip_id)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "meta", "config_hash": config_hash}) + "\n")
        for rec in ordered:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def read_manifest(path) -> List[ClipRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
                if payload.get("record") == "meta":
                    continue
                records.append(ClipRecord.from_dict(payload))
            except (json.JSONDecodeError, TypeError) as exc:
                raise MalformedFileError(f"{path}:{line_no}: bad manifest line: {exc}") from exc
    return records


def manifest_meta(path) -> dict:
    """The manifest's leading meta record ({} for headerless files)."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            payload = json.loads(line)
            return payload if payload.get("record") == "meta" else {}
    return {}


def read_transcript(path, program_id: Optional[str] = None) -> TranscriptSegmenterInput:
    """Transcript file: one JSON record per line with text/start_s/end_s."""
    units = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                units.append((d["text"], float(d["start_s"]), float(d["end_s"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedFileError(f"{path}:{line_no}: bad transcript line: {exc}") from exc
    return TranscriptSegmenterInput(
        program_id=program_id or Path(path).stem, utterances=tuple(units)
    )


def load_crop_geometry(path) -> Dict[str, CropGeometry]:
    """Geometry config: JSON object mapping program_id -> [x0, y0, x1, y1]."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {pid: CropGeometry(*box) for pid, box in data.items()}
