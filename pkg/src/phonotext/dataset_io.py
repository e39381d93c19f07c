"""Dataset entry format, OCR sidecar, and report serialization.

The dataset file is a JSON array of entries::

    {
      "image_id": "<unique id>",
      "file_name": "<image>.jpg",
      "captions": [{"id": 1, "caption": "..."}, ...]
    }

OCR output travels in a line-delimited sidecar keyed by image_id, one JSON
object per line::

    {"image_id": "...", "text": "...", "cx": 0.5, "cy": 0.5, "w": 0.1,
     "h": 0.05, "confidence": 0.93,
     "recognition": [...], "detection": [...]}       # optional vectors

Absolute pixel boxes are accepted when the record carries image_width and
image_height; they are normalized on ingestion. Reports are emitted as
delimited text (TSV) or a JSON document with deterministic field order and
6-significant-digit numbers, so identical inputs produce byte-identical
files.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fusion import BoundingBox

__all__ = [
    "Caption",
    "OcrToken",
    "ImageRecord",
    "ParseError",
    "DuplicateImageId",
    "CaptionCountViolation",
    "load_dataset",
    "save_dataset",
    "load_ocr_sidecar",
    "Report",
    "ReportTable",
    "save_report",
    "format_number",
]

MAX_CAPTIONS = 5


class ParseError(ValueError):
    pass


class DuplicateImageId(ParseError):
    pass


class CaptionCountViolation(ParseError):
    pass


@dataclass(frozen=True)
class Caption:
    id: int
    caption: str


@dataclass(frozen=True)
class OcrToken:
    text: str
    bbox: BoundingBox
    confidence: float
    recognition: tuple[float, ...] | None = None
    detection: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ParseError(f"confidence {self.confidence} outside [0, 1] for token {self.text!r}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    file_name: str
    captions: tuple[Caption, ...]
    ocr_tokens: tuple[OcrToken, ...] = ()


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise ParseError(f"{where}: missing field {key!r}")
    return entry[key]


def _parse_entry(entry: dict, index: int, strict: bool) -> ImageRecord:
    where = f"entry {index}"
    if not isinstance(entry, dict):
        raise ParseError(f"{where}: expected an object")
    image_id = str(_require(entry, "image_id", where))
    file_name = str(_require(entry, "file_name", where))
    raw_captions = _require(entry, "captions", where)
    if not isinstance(raw_captions, list):
        raise ParseError(f"{where} ({image_id}): captions must be a list")
    captions = []
    for ci, raw in enumerate(raw_captions):
        cwhere = f"{where} ({image_id}), caption {ci}"
        if not isinstance(raw, dict):
            raise ParseError(f"{cwhere}: expected an object")
        captions.append(Caption(id=int(_require(raw, "id", cwhere)), caption=str(_require(raw, "caption", cwhere))))
    if strict:
        ids = [c.id for c in captions]
        if not captions:
            raise CaptionCountViolation(f"{where} ({image_id}): no captions")
        if len(captions) > MAX_CAPTIONS or ids != list(range(1, len(captions) + 1)):
            raise CaptionCountViolation(
                f"{where} ({image_id}): caption ids must be 1..N with N <= {MAX_CAPTIONS}, got {ids}"
            )
    elif not captions:
        print(f"warning: {where} ({image_id}) has no captions", file=sys.stderr)
    return ImageRecord(image_id=image_id, file_name=file_name, captions=tuple(captions))


def _parse_sidecar_line(raw: dict, where: str) -> tuple[str, OcrToken]:
    image_id = str(_require(raw, "image_id", where))
    text = str(_require(raw, "text", where))
    cx, cy = float(_require(raw, "cx", where)), float(_require(raw, "cy", where))
    w, h = float(_require(raw, "w", where)), float(_require(raw, "h", where))
    if "image_width" in raw or "image_height" in raw:
        iw = float(_require(raw, "image_width", where))
        ih = float(_require(raw, "image_height", where))
        if iw <= 0 or ih <= 0:
            raise ParseError(f"{where}: non-positive image dimensions")
        cx, w = cx / iw, w / iw
        cy, h = cy / ih, h / ih
    try:
        bbox = BoundingBox(cx, cy, w, h)
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    rec = raw.get("recognition")
    det = raw.get("detection")
    token = OcrToken(
        text=text,
        bbox=bbox,
        confidence=float(_require(raw, "confidence", where)),
        recognition=tuple(float(x) for x in rec) if rec is not None else None,
        detection=tuple(float(x) for x in det) if det is not None else None,
    )
    return image_id, token


def load_ocr_sidecar(path: str | Path) -> dict[str, list[OcrToken]]:
    """Line-delimited OCR records grouped by image_id."""
    tokens: dict[str, list[OcrToken]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid JSON ({exc})") from exc
            image_id, token = _parse_sidecar_line(raw, where)
            tokens.setdefault(image_id, []).append(token)
    return tokens


def load_dataset(path: str | Path, ocr_path: str | Path | None = None, strict: bool = False) -> list[ImageRecord]:
    """Load a dataset file, merging the OCR sidecar when given."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list):
        raise ParseError(f"{path}: expected a JSON array of entries")
    records = [_parse_entry(entry, i, strict) for i, entry in enumerate(raw)]
    seen: set[str] = set()
    for record in records:
        if record.image_id in seen:
            raise DuplicateImageId(f"duplicate image_id {record.image_id!r}")
        seen.add(record.image_id)
    if ocr_path is not None:
        sidecar = load_ocr_sidecar(ocr_path)
        records = [
            ImageRecord(
                image_id=r.image_id,
                file_name=r.file_name,
                captions=r.captions,
                ocr_tokens=tuple(sidecar.get(r.image_id, ())),
            )
            for r in records
        ]
    return records


def save_dataset(records, path: str | Path) -> None:
    """Write records back in the dataset entry format (captions only; OCR
    lives in the sidecar)."""
    payload = [
        {
            "image_id": r.image_id,
            "file_name": r.file_name,
            "captions": [{"id": c.id, "caption": c.caption} for c in r.captions],
        }
        for r in records
    ]
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def save_ocr_sidecar(records, path: str | Path) -> None:
    lines = []
    for r in records:
        for t in r.ocr_tokens:
            obj = {
                "image_id": r.image_id,
                "text": t.text,
                "cx": t.bbox.cx,
                "cy": t.bbox.cy,
                "w": t.bbox.w,
                "h": t.bbox.h,
                "confidence": t.confidence,
            }
            if t.recognition is not None:
                obj["recognition"] = list(t.recognition)
            if t.detection is not None:
                obj["detection"] = list(t.detection)
            lines.append(json.dumps(obj, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# reports

def format_number(value) -> str:
    """Fixed 6-significant-digit rendering for report cells."""
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


@dataclass
class ReportTable:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"table {self.name}: expected {len(self.columns)} cells, got {len(values)}")
        self.rows.append(list(values))

    def to_delimited(self, sep: str = "\t") -> str:
        out = [sep.join(self.columns)]
        out.extend(sep.join(format_number(v) for v in row) for row in self.rows)
        return "\n".join(out) + "\n"

    def to_aligned(self) -> str:
        cells = [self.columns] + [[format_number(v) for v in row] for row in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in cells]
        return "\n".join(lines) + "\n"

    def to_document(self) -> dict:
        def cell(v):
            if isinstance(v, (bool, np.bool_)):
                return bool(v)
            if isinstance(v, (int, np.integer)):
                return int(v)
            if isinstance(v, (float, np.floating)):
                return float(format_number(v))
            return str(v)

        return {
            "name": self.name,
            "columns": self.columns,
            "rows": [[cell(v) for v in row] for row in self.rows],
        }


@dataclass
class Report:
    title: str
    tables: list[ReportTable] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def table(self, name: str, columns: list[str]) -> ReportTable:
        t = ReportTable(name=name, columns=columns)
        self.tables.append(t)
        return t

    def render(self, fmt: str = "table") -> str:
        if fmt == "document":
            doc = {
                "title": self.title,
                "notes": self.notes,
                "tables": [t.to_document() for t in self.tables],
            }
            return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=False) + "\n"
        chunks = []
        for t in self.tables:
            header = f"# {t.name}\n"
            body = t.to_delimited() if fmt == "delimited" else t.to_aligned()
            chunks.append(header + body)
        if self.notes:
            chunks.append("# notes\n" + "\n".join(self.notes) + "\n")
        return "\n".join(chunks)


def save_report(report: Report, path: str | Path, fmt: str = "delimited") -> None:
    """Serialize a report deterministically; same input, same bytes."""
    try:
        Path(path).write_text(report.render(fmt), encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot write report to {path}: {exc}") from exc
