"""Category assignment, real/fake balancing, stratified splitting and QA export."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .datamodel import (
    AnnotationBundle, Authenticity, BundleStatus, Category, ImageRecord, QAPair,
    Split, load_bundles, load_manifest, write_jsonl,
)
from .gateway import EndpointConfig, Gateway, ImagePart, user_message
from .prompts import eval_prompt

logger = logging.getLogger(__name__)

OPEN_SET = (Category.ANIMAL, Category.OBJECT, Category.HUMAN, Category.SCENE)
CLASSIFIER_PROMPT = (
    "Classify the main subject of this image. "
    "Answer with exactly one word from this list: animal, object, human, scene."
)
DEFAULT_TEST_FRACTION = 0.05


class CategorizationError(ValueError):
    def __init__(self, message: str, reply: str | None = None):
        self.reply = reply
        super().__init__(message)


def categorize(record: ImageRecord, classifier: EndpointConfig | None = None,
               gateway: Gateway | None = None, force: bool = False) -> Category:
    """Return the record's category, asking ``classifier`` only when needed."""
    if record.category is not None and not force:
        return record.category
    if classifier is None:
        raise CategorizationError(f"record {record.id} has no category and no classifier is configured")
    gateway = gateway or Gateway()
    reply = gateway.chat(classifier, user_message(ImagePart(record.image_path), CLASSIFIER_PROMPT))
    words = set(re.findall(r"[a-z]+", reply.lower()))
    hits = [c for c in OPEN_SET if c.value in words]
    if len(hits) != 1:
        raise CategorizationError(f"unclassifiable: classifier replied {reply!r}", reply)
    return hits[0]


def _cell_rng(seed: int, *key: str) -> np.random.Generator:
    h = hashlib.sha256(("\x00".join((str(seed),) + key)).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def _cells(records: Iterable[ImageRecord]) -> dict[tuple[Category, Authenticity], list[int]]:
    cells: dict[tuple[Category, Authenticity], list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        if r.category is None:
            raise ValueError(f"record {r.id} has no category")
        cells[(r.category, r.authenticity)].append(i)
    return cells


def _cell_key(cell: tuple[Category, Authenticity]) -> tuple[str, str]:
    return cell[0].value, cell[1].value


def balance(records: Sequence[ImageRecord], fake_to_real_ratio: float = 1.0,
            seed: int = 0) -> list[ImageRecord]:
    """Subsample the majority class per category to reach ``fake_to_real_ratio``.

    Excess records are discarded, never duplicated. Kept records retain their
    input order.
    """
    if fake_to_real_ratio <= 0:
        raise ValueError("fake_to_real_ratio must be positive")
    cells = _cells(records)
    keep: list[int] = []
    for cat in sorted({c for c, _ in cells}, key=lambda c: c.value):
        fakes = cells.get((cat, Authenticity.FAKE), [])
        reals = cells.get((cat, Authenticity.REAL), [])
        if not fakes or not reals:
            logger.warning("category %s has only one class; dropping %d records",
                           cat.value, len(fakes) + len(reals))
            continue
        want_fake = min(len(fakes), math.floor(fake_to_real_ratio * len(reals) + 0.5))
        want_real = min(len(reals), math.floor(want_fake / fake_to_real_ratio + 0.5))
        for idx, want, auth in ((fakes, want_fake, "fake"), (reals, want_real, "real")):
            if want < len(idx):
                chosen = _cell_rng(seed, "balance", cat.value, auth).choice(len(idx), size=want, replace=False)
                keep.extend(idx[j] for j in chosen)
            else:
                keep.extend(idx)
    return [records[i] for i in sorted(keep)]


def split(records: Sequence[ImageRecord], test_fraction: float = DEFAULT_TEST_FRACTION,
          seed: int = 0) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Stratified train/test split over (category, authenticity) cells.

    The test size is ``round(N * test_fraction)``; it is apportioned to cells
    by largest remainder, so each cell is within one record of its exact share.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    cells = _cells(records)
    keys = sorted(cells, key=_cell_key)
    total_test = math.floor(len(records) * test_fraction + 0.5)
    exact = {k: len(cells[k]) * test_fraction for k in keys}
    quota = {k: math.floor(exact[k]) for k in keys}
    leftover = total_test - sum(quota.values())
    by_remainder = sorted(keys, key=lambda k: (-(exact[k] - quota[k]), _cell_key(k)))
    for k in by_remainder[:leftover]:
        quota[k] += 1
    test_idx: set[int] = set()
    for k in keys:
        idx = cells[k]
        if len(idx) * test_fraction < 1:
            logger.warning("cell %s/%s has %d records; too small to stratify reliably",
                           k[0].value, k[1].value, len(idx))
        perm = _cell_rng(seed, "split", *_cell_key(k)).permutation(len(idx))
        test_idx.update(idx[j] for j in perm[:quota[k]])
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def balance_and_split(records: Sequence[ImageRecord], fake_to_real_ratio: float = 1.0,
                      test_fraction: float = DEFAULT_TEST_FRACTION, seed: int = 0):
    auths = {r.authenticity for r in records}
    if auths != {Authenticity.REAL, Authenticity.FAKE}:
        raise ValueError("both real and fake records are required")
    kept = balance(records, fake_to_real_ratio, seed)
    if not kept:
        raise ValueError("no category has both real and fake records")
    return split(kept, test_fraction, seed)


@dataclass
class BuildSummary:
    exported: int = 0
    skipped: int = 0
    skip_reasons: dict[str, str] = field(default_factory=dict)
    train: int = 0
    test: int = 0

    def to_dict(self) -> dict:
        return {"exported": self.exported, "skipped": self.skipped, "train": self.train,
                "test": self.test, "skip_reasons": dict(sorted(self.skip_reasons.items()))}


def build_qa_pairs(bundles: Iterable[AnnotationBundle], split_assignment: Mapping[str, Split],
                   records: Mapping[str, ImageRecord],
                   summary: BuildSummary | None = None) -> Iterator[QAPair]:
    """Yield one QA pair per complete bundle that has a split assignment.

    The answer is the aggregated caption verbatim. Incomplete or unknown
    bundles are skipped and recorded in ``summary``.
    """
    summary = summary if summary is not None else BuildSummary()
    question = eval_prompt()
    for b in bundles:
        if b.record_id not in split_assignment:
            continue
        rec = records.get(b.record_id)
        reason = None
        if rec is None:
            reason = "no manifest record"
        elif b.status is not BundleStatus.COMPLETE or b.aggregated is None:
            reason = f"bundle {b.status.value}: {b.failure_reason or 'no aggregated caption'}"
        if reason:
            logger.info("skipping %s: %s", b.record_id, reason)
            summary.skipped += 1
            summary.skip_reasons[b.record_id] = reason
            continue
        sp = split_assignment[b.record_id]
        summary.exported += 1
        if sp is Split.TEST:
            summary.test += 1
        else:
            summary.train += 1
        yield QAPair(rec.id, rec.image_path, question, b.aggregated.text, sp,
                     rec.category, rec.authenticity)


def build_dataset(manifest_path, annotations_path, out_path, fake_to_real_ratio: float = 1.0,
                  test_fraction: float = DEFAULT_TEST_FRACTION, seed: int = 0) -> BuildSummary:
    """Balance and split the annotated records, then export the QA dataset file."""
    records = load_manifest(manifest_path)
    by_id = {r.id: r for r in records}
    bundles = {b.record_id: b for b in load_bundles(annotations_path)}
    summary = BuildSummary()
    eligible = []
    for r in records:
        b = bundles.get(r.id)
        if b is None or b.status is not BundleStatus.COMPLETE:
            summary.skipped += 1
            summary.skip_reasons[r.id] = "no annotation" if b is None else f"bundle {b.status.value}"
            continue
        eligible.append(r)
    train, test = balance_and_split(eligible, fake_to_real_ratio, test_fraction, seed)
    assignment = {r.id: Split.TRAIN for r in train}
    assignment.update({r.id: Split.TEST for r in test})
    ordered = [bundles[r.id] for r in records if r.id in assignment]
    pairs = list(build_qa_pairs(ordered, assignment, by_id, summary))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_path, (p.to_dict() for p in pairs))
    logger.info("dataset written to %s: %s", out_path, summary.to_dict())
    return summary
