"""Shared domain types and the one-JSON-object-per-line record formats."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    """Raised for malformed manifest or store records."""


class Category(str, enum.Enum):
    ANIMAL = "animal"
    HUMAN = "human"
    OBJECT = "object"
    SCENE = "scene"
    SATELLITE = "satellite"
    DOCUMENT = "document"
    FACE_MANIPULATION = "face_manipulation"

    @classmethod
    def parse(cls, value: str) -> "Category":
        try:
            return cls(value)
        except ValueError:
            legal = ", ".join(c.value for c in cls)
            raise ManifestError(
                f"invalid category {value!r}; expected one of: {legal}"
            ) from None


class Authenticity(str, enum.Enum):
    REAL = "real"
    FAKE = "fake"

    @classmethod
    def parse(cls, value: str) -> "Authenticity":
        try:
            return cls(value)
        except ValueError:
            raise ManifestError(
                f"invalid authenticity {value!r}; expected 'real' or 'fake'"
            ) from None

    def verdict_sentence(self) -> str:
        return f"This is a {self.value} image."


class Verdict(str, enum.Enum):
    REAL = "real"
    FAKE = "fake"
    UNPARSEABLE = "unparseable"


class BundleStatus(str, enum.Enum):
    PENDING = "pending"
    COMPLETE = "complete"
    FAILED = "failed"


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


_MANIFEST_KEYS = ("id", "image_path", "authenticity", "category", "source", "hard_sample")


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    authenticity: Authenticity
    category: Category | None = None
    source: str = ""
    hard_sample: bool = False
    extra: Mapping[str, Any] = field(default_factory=dict, compare=True, hash=False)

    def with_category(self, category: Category) -> "ImageRecord":
        return ImageRecord(
            self.id, self.image_path, self.authenticity, category,
            self.source, self.hard_sample, dict(self.extra),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "image_path": self.image_path,
            "authenticity": self.authenticity.value,
        }
        if self.category is not None:
            out["category"] = self.category.value
        if self.source:
            out["source"] = self.source
        if self.hard_sample:
            out["hard_sample"] = True
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class CandidateAnnotation:
    annotator_id: str
    text: str
    verdict_ok: bool

    def __post_init__(self):
        if self.verdict_ok and not self.text:
            raise ValueError("candidate with verdict_ok=True must carry text")


@dataclass(frozen=True)
class AggregatedAnnotation:
    text: str
    aggregator_id: str


@dataclass(frozen=True)
class AnnotationBundle:
    record_id: str
    candidates: tuple[CandidateAnnotation, ...] = ()
    aggregated: AggregatedAnnotation | None = None
    status: BundleStatus = BundleStatus.PENDING
    failure_reason: str | None = None

    def __post_init__(self):
        if self.status is BundleStatus.COMPLETE:
            if self.aggregated is None:
                raise ValueError("complete bundle requires an aggregated annotation")
            if sum(c.verdict_ok for c in self.candidates) < 2:
                raise ValueError("complete bundle requires at least 2 agreeing candidates")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "record_id": self.record_id,
            "status": self.status.value,
            "candidates": [
                {"annotator_id": c.annotator_id, "text": c.text, "verdict_ok": c.verdict_ok}
                for c in self.candidates
            ],
        }
        if self.aggregated is not None:
            out["aggregated"] = {
                "aggregator_id": self.aggregated.aggregator_id,
                "text": self.aggregated.text,
            }
        if self.failure_reason is not None:
            out["failure_reason"] = self.failure_reason
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "AnnotationBundle":
        agg = obj.get("aggregated")
        return cls(
            record_id=obj["record_id"],
            candidates=tuple(
                CandidateAnnotation(c["annotator_id"], c["text"], bool(c["verdict_ok"]))
                for c in obj.get("candidates", [])
            ),
            aggregated=AggregatedAnnotation(agg["text"], agg["aggregator_id"]) if agg else None,
            status=BundleStatus(obj["status"]),
            failure_reason=obj.get("failure_reason"),
        )


@dataclass(frozen=True)
class QAPair:
    record_id: str
    image_path: str
    question: str
    answer: str
    split: Split
    category: Category
    authenticity: Authenticity

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "image_path": self.image_path,
            "question": self.question,
            "answer": self.answer,
            "split": self.split.value,
            "category": self.category.value,
            "authenticity": self.authenticity.value,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "QAPair":
        return cls(
            record_id=obj["record_id"],
            image_path=obj["image_path"],
            question=obj["question"],
            answer=obj["answer"],
            split=Split(obj["split"]),
            category=Category.parse(obj["category"]),
            authenticity=Authenticity.parse(obj["authenticity"]),
        )


@dataclass(frozen=True)
class EvalPrediction:
    record_id: str
    raw_response: str
    parsed_verdict: Verdict
    explanation: str
    score: float | None = None
    failure_reason: str | None = None

    def __post_init__(self):
        if self.parsed_verdict is Verdict.UNPARSEABLE and self.explanation != self.raw_response:
            raise ValueError("unparseable prediction must keep the raw response as explanation")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class MetricReport:
    """Detection and explanation scores for one evaluation run.

    Rates are stored as fractions in [0, 1]; rendering multiplies by 100.
    ``rouge_l`` and ``css`` are ``None`` when no reference answers were scored.
    """

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unparseable: int = 0
    acc: float = 0.0
    f1: float = 0.0
    auc: float | None = None
    rouge_l: float | None = None
    css: float | None = None
    per_category: dict[str, "MetricReport"] = field(default_factory=dict)
    perturbation_tag: str | None = None
    model: str | None = None
    records_digest: str | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.unparseable

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "model": self.model,
            "perturbation_tag": self.perturbation_tag,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "unparseable": self.unparseable,
            "acc": self.acc,
            "f1": self.f1,
            "auc": self.auc,
            "rouge_l": self.rouge_l,
            "css": self.css,
            "records_digest": self.records_digest,
        }
        if self.per_category:
            out["per_category"] = {k: v.to_dict() for k, v in sorted(self.per_category.items())}
        return out

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "MetricReport":
        return cls(
            tp=obj["tp"], fp=obj["fp"], tn=obj["tn"], fn=obj["fn"],
            unparseable=obj["unparseable"], acc=obj["acc"], f1=obj["f1"],
            auc=obj.get("auc"), rouge_l=obj.get("rouge_l"), css=obj.get("css"),
            per_category={
                k: cls.from_dict(v) for k, v in (obj.get("per_category") or {}).items()
            },
            perturbation_tag=obj.get("perturbation_tag"),
            model=obj.get("model"),
            records_digest=obj.get("records_digest"),
        )


def records_digest(record_ids: Iterable[str]) -> str:
    """Order-independent digest of a set of record ids."""
    h = hashlib.sha256()
    for rid in sorted(record_ids):
        h.update(rid.encode("utf-8") + b"\n")
    return h.hexdigest()


# -- line-oriented IO ---------------------------------------------------------


def dumps_line(obj: Mapping[str, Any]) -> str:
    """Serialize one record deterministically (sorted keys, no trailing spaces)."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc


def write_jsonl(path: str | Path, rows: Iterable[Mapping[str, Any]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row) + "\n")
            n += 1
    return n


def parse_manifest(line: str | Mapping[str, Any]) -> ImageRecord:
    """Parse and validate one manifest line.

    Keys outside the documented schema are kept in ``ImageRecord.extra``
    so that writing the record back reproduces them.
    """
    if isinstance(line, str):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc.msg}") from exc
    else:
        obj = dict(line)
    if not isinstance(obj, dict):
        raise ManifestError("manifest record must be a JSON object")

    for key in ("id", "image_path", "authenticity"):
        if key not in obj:
            raise ManifestError(f"missing field: {key}")
    for key in ("id", "image_path"):
        if not isinstance(obj[key], str) or not obj[key]:
            raise ManifestError(f"field {key} must be a non-empty string")

    category = obj.get("category")
    source = obj.get("source", "")
    hard = obj.get("hard_sample", False)
    if source is None:
        source = ""
    if not isinstance(source, str):
        raise ManifestError("field source must be a string")
    if not isinstance(hard, bool):
        raise ManifestError("field hard_sample must be a boolean")

    return ImageRecord(
        id=obj["id"],
        image_path=obj["image_path"],
        authenticity=Authenticity.parse(obj["authenticity"]),
        category=Category.parse(category) if category is not None else None,
        source=source,
        hard_sample=hard,
        extra={k: v for k, v in obj.items() if k not in _MANIFEST_KEYS},
    )


def load_manifest(path: str | Path) -> list[ImageRecord]:
    records: list[ImageRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_manifest(line)
            except ManifestError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if rec.id in seen:
                raise ManifestError(
                    f"{path}: duplicate id {rec.id!r} on lines {seen[rec.id]} and {lineno}"
                )
            seen[rec.id] = lineno
            records.append(rec)

    tallies = manifest_tallies(records)
    logger.info(
        "loaded %d records from %s; by category %s; by authenticity %s",
        len(records), path, tallies["category"], tallies["authenticity"],
    )
    return records


def manifest_tallies(records: Iterable[ImageRecord]) -> dict[str, dict[str, int]]:
    cat: Counter[str] = Counter()
    auth: Counter[str] = Counter()
    for r in records:
        cat[r.category.value if r.category else "uncategorized"] += 1
        auth[r.authenticity.value] += 1
    return {"category": dict(sorted(cat.items())), "authenticity": dict(sorted(auth.items()))}


def write_manifest(path: str | Path, records: Iterable[ImageRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in records))


def load_bundles(path: str | Path) -> list[AnnotationBundle]:
    return [AnnotationBundle.from_dict(obj) for _, obj in iter_jsonl(path)]


def load_qa_pairs(path: str | Path) -> list[QAPair]:
    return [QAPair.from_dict(obj) for _, obj in iter_jsonl(path)]
