"""Multi-annotator caption generation, aggregation and a resumable run loop."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .datamodel import (
    AggregatedAnnotation, AnnotationBundle, BundleStatus, CandidateAnnotation,
    ImageRecord, dumps_line, load_manifest,
)
from .gateway import EndpointConfig, Gateway, GatewayError, ImageReadError
from .prompts import (
    PromptCatalog, default_catalog, render_aggregation_request, render_annotation_request,
)

logger = logging.getLogger(__name__)

VERDICT_WINDOW = 40
MIN_CANDIDATES = 2


class RecordFailed(RuntimeError):
    def __init__(self, reason: str, candidates: Sequence[CandidateAnnotation] = ()):
        self.reason = reason
        self.candidates = tuple(candidates)
        super().__init__(reason)


def verdict_matches(text: str, record: ImageRecord) -> bool:
    head = text.lstrip().lstrip('"').lower()[:VERDICT_WINDOW]
    return f"this is a {record.authenticity.value} image" in head


@dataclass
class AnnotationContext:
    """Everything a record needs besides itself; shared by worker threads."""

    gateway: Gateway
    annotators: Sequence[EndpointConfig]
    aggregator: EndpointConfig
    catalog: PromptCatalog = field(default_factory=default_catalog)
    errors: Counter = field(default_factory=Counter)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def count_error(self, name: str) -> None:
        with self._lock:
            self.errors[name] += 1


def annotate_record(record: ImageRecord, annotators: Sequence[EndpointConfig],
                    gateway: Gateway, catalog: PromptCatalog | None = None,
                    on_error: Callable[[str], None] | None = None) -> list[CandidateAnnotation]:
    """Ask every annotator for a caption; failed annotators are simply absent.

    Raises:
        ImageReadError: the record's image cannot be read.
        RecordFailed: no annotator produced a response.
    """
    if record.category is None:
        raise ValueError(f"record {record.id} has no category")
    if not annotators:
        raise ValueError("no annotators configured")
    catalog = catalog or default_catalog()
    template = catalog.select_prompt(record.category, record.authenticity, record.hard_sample)
    messages = render_annotation_request(template, record)
    out = []
    for ep in annotators:
        try:
            text = gateway.chat(ep, messages)
        except GatewayError as exc:
            logger.warning("record %s: annotator %s failed: %s", record.id, ep.name, exc)
            if on_error:
                on_error(ep.name)
            continue
        out.append(CandidateAnnotation(ep.name, text.strip(), verdict_matches(text, record)))
    if not out:
        raise RecordFailed("all annotators failed")
    return out


def aggregate_record(record: ImageRecord, candidates: Sequence[CandidateAnnotation],
                     aggregator: EndpointConfig, gateway: Gateway,
                     catalog: PromptCatalog | None = None) -> AggregatedAnnotation:
    """Merge agreeing candidates into one caption and validate its opening sentence."""
    catalog = catalog or default_catalog()
    agreeing = [c for c in candidates if c.verdict_ok]
    if len(agreeing) < MIN_CANDIDATES:
        raise RecordFailed(f"only {len(agreeing)} candidate(s) agree with the ground truth", candidates)
    expected = record.authenticity.verdict_sentence()
    messages = render_aggregation_request(agreeing, catalog.instruction)
    for attempt in range(2):
        try:
            text = gateway.chat(aggregator, messages)
        except GatewayError as exc:
            raise RecordFailed(f"aggregator failed: {exc}", candidates) from exc
        text = text.strip().strip('"').strip()
        if text.startswith(expected):
            return AggregatedAnnotation(text, aggregator.name)
        logger.info("record %s: aggregation lacks opening %r (attempt %d)", record.id, expected, attempt + 1)
        complaint = (f"Your previous answer did not begin with the exact sentence \"{expected}\". "
                     f"Answer again and begin with exactly that sentence.")
        msg = messages[0]
        messages = (type(msg)(msg.role, msg.parts + (complaint,)),)
    raise RecordFailed("aggregation format violation", candidates)


def process_record(record: ImageRecord, ctx: AnnotationContext) -> AnnotationBundle:
    """Annotate, drop contradicting candidates, retry failing annotators once, aggregate."""
    try:
        cands = annotate_record(record, ctx.annotators, ctx.gateway, ctx.catalog, ctx.count_error)
        if sum(c.verdict_ok for c in cands) < MIN_CANDIDATES:
            good = {c.annotator_id for c in cands if c.verdict_ok}
            retry = [ep for ep in ctx.annotators if ep.name not in good]
            logger.info("record %s: retrying annotators %s", record.id, [e.name for e in retry])
            try:
                again = annotate_record(record, retry, ctx.gateway, ctx.catalog, ctx.count_error)
            except RecordFailed:
                again = []
            by_name = {c.annotator_id: c for c in cands}
            by_name.update({c.annotator_id: c for c in again})
            cands = [by_name[ep.name] for ep in ctx.annotators if ep.name in by_name]
        agg = aggregate_record(record, cands, ctx.aggregator, ctx.gateway, ctx.catalog)
        return AnnotationBundle(record.id, tuple(cands), agg, BundleStatus.COMPLETE)
    except ImageReadError as exc:
        return AnnotationBundle(record.id, (), None, BundleStatus.FAILED, f"I/O error: {exc}")
    except RecordFailed as exc:
        return AnnotationBundle(record.id, exc.candidates, None, BundleStatus.FAILED, exc.reason)


# -- journal ------------------------------------------------------------------


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return "unreadable"


def input_digest(record: ImageRecord, ctx: AnnotationContext) -> str:
    """Digest of everything that determines a record's annotation."""
    payload = {
        "record": record.to_dict(),
        "image": _file_digest(record.image_path),
        "annotators": [ep.identity() for ep in ctx.annotators],
        "aggregator": ctx.aggregator.identity(),
        "prompts": ctx.catalog.digests,
        "hard_sample_prompts": dict(ctx.catalog.hard_sample_prompts),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class Journal:
    """Append-only status log next to the annotation store."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def completed(self) -> dict[str, tuple[str, AnnotationBundle]]:
        done: dict[str, tuple[str, AnnotationBundle]] = {}
        if not self.path.exists():
            return done
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                try:
                    entry = json.loads(line)
                except ValueError:
                    # a torn final line from an interrupted write
                    continue
                bundle = AnnotationBundle.from_dict(entry["bundle"])
                if bundle.status is BundleStatus.COMPLETE:
                    done[entry["record_id"]] = (entry["digest"], bundle)
                else:
                    done.pop(entry["record_id"], None)
        return done

    def append(self, digest: str, bundle: AnnotationBundle) -> None:
        line = dumps_line({"record_id": bundle.record_id, "digest": digest,
                           "status": bundle.status.value, "bundle": bundle.to_dict()})
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())


@dataclass
class PipelineSummary:
    complete: int = 0
    failed: int = 0
    skipped: int = 0
    annotator_errors: dict[str, int] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"complete": self.complete, "failed": self.failed, "skipped": self.skipped,
                "annotator_errors": dict(sorted(self.annotator_errors.items())),
                "failures": dict(sorted(self.failures.items()))}


def journal_path(out_path: str | Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".journal")


def run_annotation(manifest_path, annotators: Sequence[EndpointConfig], aggregator: EndpointConfig,
                   out_path, gateway: Gateway | None = None, catalog: PromptCatalog | None = None,
                   workers: int = 4,
                   on_record_done: Callable[[AnnotationBundle], None] | None = None) -> PipelineSummary:
    """Annotate every manifest record and write the store in manifest order.

    Completed records found in the journal (with an unchanged input digest)
    are reused without any network traffic. ``on_record_done`` is called
    after each record is journaled; raising from it aborts the run, leaving
    the journal ready for a resume.

    In the returned summary ``complete`` and ``failed`` describe the written
    store; ``skipped`` counts the complete records taken from the journal.
    """
    records = load_manifest(manifest_path)
    missing = [r.id for r in records if r.category is None]
    if missing:
        raise ValueError(f"records lack a category (run categorize first): {missing[:5]}")
    gateway = gateway or Gateway()
    ctx = AnnotationContext(gateway, list(annotators), aggregator, catalog or default_catalog())
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    journal = Journal(journal_path(out_path))
    done = journal.completed()

    summary = PipelineSummary()
    results: dict[str, AnnotationBundle] = {}
    todo = []
    for rec in records:
        digest = input_digest(rec, ctx)
        prev = done.get(rec.id)
        if prev is not None and prev[0] == digest:
            results[rec.id] = prev[1]
            summary.skipped += 1
        else:
            todo.append((rec, digest))
    logger.info("annotation: %d records, %d already complete", len(records), summary.skipped)

    def work(item):
        rec, digest = item
        bundle = process_record(rec, ctx)
        journal.append(digest, bundle)
        return bundle

    if workers <= 1:
        for item in todo:
            bundle = work(item)
            results[bundle.record_id] = bundle
            if on_record_done:
                on_record_done(bundle)
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        try:
            for bundle in pool.map(work, todo):
                results[bundle.record_id] = bundle
                if on_record_done:
                    on_record_done(bundle)
        finally:
            # on interruption, drop queued records; in-flight ones still journal
            pool.shutdown(wait=True, cancel_futures=True)

    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            b = results[rec.id]
            fh.write(dumps_line(b.to_dict()) + "\n")
            if b.status is BundleStatus.COMPLETE:
                summary.complete += 1
            else:
                summary.failed += 1
                summary.failures[rec.id] = b.failure_reason or "unknown"
    os.replace(tmp, out_path)
    summary.annotator_errors = dict(ctx.errors)
    logger.info("annotation finished: %s", summary.to_dict())
    return summary
