"""Evaluation of a chat model: question, parse, score, slice, stress-test."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .datamodel import (
    EvalPrediction, MetricReport, QAPair, Split, Verdict,
    dumps_line, iter_jsonl, load_qa_pairs, records_digest,
)
from .gateway import (
    EndpointConfig, Gateway, GatewayError, ImagePart, ImageReadError, RequestJournal,
    chat_body, user_message,
)
from .metrics import auc, detection_metrics, explanation_score, make_prediction, parse_verdict
from .perturbations import PerturbationSpec, apply, load_rgb, save_rgb, suite

logger = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.20


class EvaluationAborted(RuntimeError):
    pass


class DigestMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Response:
    record_id: str
    raw_response: str
    failure_reason: str | None = None

    def to_dict(self, **extra) -> dict:
        out = {"record_id": self.record_id, "raw_response": self.raw_response,
               "failure_reason": self.failure_reason}
        out.update(extra)
        return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_test_rows(dataset_path) -> list[QAPair]:
    rows = [r for r in load_qa_pairs(dataset_path) if r.split is Split.TEST]
    if not rows:
        raise ValueError(f"{dataset_path} has no rows with split=test")
    return rows


def query_model(model: EndpointConfig, rows: Sequence[QAPair], gateway: Gateway,
                journal: RequestJournal | None = None, workers: int = 4,
                image_paths: dict[str, str] | None = None) -> list[Response]:
    """Send the standardized question with each row's image; results follow row order.

    Only the image and the question go into a request; nothing from the row's
    labels or reference answer does.
    """
    from .prompts import eval_prompt

    question = eval_prompt()

    def ask(row: QAPair) -> Response:
        path = (image_paths or {}).get(row.record_id, row.image_path)
        messages = user_message(ImagePart(path), question)
        try:
            text = gateway.chat(model, messages)
        except (GatewayError, ImageReadError) as exc:
            logger.warning("record %s: %s", row.record_id, exc)
            return Response(row.record_id, "", str(exc))
        if journal is not None:
            journal.record(model.name, "chat", chat_body(model, messages), text)
        return Response(row.record_id, text)

    if workers <= 1:
        return [ask(r) for r in rows]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(ask, rows))


def _explanation_text(answer: str) -> str:
    verdict, expl = parse_verdict(answer)
    return expl if verdict is not Verdict.UNPARSEABLE else answer


def _report(preds: Sequence[EvalPrediction], rows: Sequence[QAPair],
            embedder: Callable | None) -> MetricReport:
    acc, f1, conf = detection_metrics([(p, r.authenticity) for p, r in zip(preds, rows)])
    rep = MetricReport(conf.tp, conf.fp, conf.tn, conf.fn, conf.unparseable, acc, f1)
    scored = [(p.score, r.authenticity) for p, r in zip(preds, rows) if p.score is not None]
    if len(scored) == len(rows) and len({a for _, a in scored}) == 2:
        rep.auc = auc(scored)
    pairs = [(p.explanation, _explanation_text(r.answer)) for p, r in zip(preds, rows) if r.answer]
    if pairs:
        rep.rouge_l, rep.css = explanation_score(pairs, embedder)
    rep.records_digest = records_digest(r.record_id for r in rows)
    return rep


def score(rows: Sequence[QAPair], responses: Sequence[Response],
          embedder: Callable[[list[str]], list] | None = None,
          model: str | None = None, perturbation_tag: str | None = None) -> MetricReport:
    """Overall and per-category metrics from persisted responses (no model traffic)."""
    by_id = {r.record_id: r for r in responses}
    missing = [row.record_id for row in rows if row.record_id not in by_id]
    if missing:
        raise ValueError(f"no response for records {missing[:5]}")
    preds = [make_prediction(row.record_id, by_id[row.record_id].raw_response,
                             failure_reason=by_id[row.record_id].failure_reason) for row in rows]
    report = _report(preds, rows, embedder)
    groups: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        groups.setdefault(row.category.value, []).append(i)
    for cat, idx in sorted(groups.items()):
        report.per_category[cat] = _report([preds[i] for i in idx], [rows[i] for i in idx], embedder)
    report.model = model
    report.perturbation_tag = perturbation_tag
    return report


def write_responses(path, responses: Iterable[Response], **extra) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in responses:
            fh.write(dumps_line(r.to_dict(**extra)) + "\n")


def read_responses(path) -> tuple[list[Response], dict]:
    responses, meta = [], {}
    for _, obj in iter_jsonl(path):
        responses.append(Response(obj["record_id"], obj["raw_response"], obj.get("failure_reason")))
        for k in ("dataset_digest", "model", "perturbation_tag", "run_digest"):
            if k in obj:
                meta.setdefault(k, obj[k])
    return responses, meta


def _check_failures(responses: Sequence[Response], label: str) -> None:
    failed = sum(r.failure_reason is not None for r in responses)
    if responses and failed / len(responses) > MAX_FAILURE_RATE:
        reasons = sorted({r.failure_reason for r in responses if r.failure_reason})
        raise EvaluationAborted(
            f"{label}: {failed}/{len(responses)} requests failed (limit {MAX_FAILURE_RATE:.0%}); "
            f"reasons: {reasons[:3]}"
        )


def evaluate(model: EndpointConfig, dataset_path, embedder: EndpointConfig | None = None,
             gateway: Gateway | None = None, out_dir=None, workers: int = 4,
             perturbation_tag: str | None = None, image_paths: dict[str, str] | None = None,
             run_digest: str | None = None) -> MetricReport:
    """Evaluate ``model`` on the test split of a QA dataset.

    Raw responses go to ``out_dir/responses.jsonl`` (tagged with the dataset
    digest) so the run can be rescored offline; request bodies, with images
    reduced to digests, go to ``out_dir/requests.jsonl``.
    """
    gateway = gateway or Gateway()
    rows = load_test_rows(dataset_path)
    ds_digest = file_digest(dataset_path)
    journal = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        req_path = out_dir / "requests.jsonl"
        req_path.unlink(missing_ok=True)
        journal = RequestJournal(req_path)
    responses = query_model(model, rows, gateway, journal, workers, image_paths)
    if out_dir is not None:
        extra = {"dataset_digest": ds_digest, "model": model.name, "perturbation_tag": perturbation_tag}
        if run_digest:
            extra["run_digest"] = run_digest
        write_responses(out_dir / "responses.jsonl", responses, **extra)
    _check_failures(responses, model.name)
    emb = gateway.embedder(embedder) if embedder is not None else None
    return score(rows, responses, emb, model.name, perturbation_tag)


def rescore(responses_path, dataset_path, embedder: EndpointConfig | None = None,
            gateway: Gateway | None = None) -> MetricReport:
    responses, meta = read_responses(responses_path)
    want = meta.get("dataset_digest")
    have = file_digest(dataset_path)
    if want is not None and want != have:
        raise DigestMismatch(f"responses were produced for dataset {want[:12]}, not {have[:12]}")
    rows = load_test_rows(dataset_path)
    emb = None
    if embedder is not None:
        emb = (gateway or Gateway()).embedder(embedder)
    return score(rows, responses, emb, meta.get("model"), meta.get("perturbation_tag"))


def evaluate_robustness(model: EndpointConfig, dataset_path, seed: int = 0,
                        embedder: EndpointConfig | None = None, gateway: Gateway | None = None,
                        out_dir=None, workers: int = 4,
                        specs: Sequence[PerturbationSpec] | None = None,
                        run_digest: str | None = None) -> list[MetricReport]:
    """One report per perturbation (suite order), the unmodified baseline last."""
    import tempfile

    gateway = gateway or Gateway()
    rows = load_test_rows(dataset_path)
    specs = list(specs) if specs is not None else suite()
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        base = Path(tmp.name)
    else:
        base = Path(out_dir)
    reports = []
    try:
        for spec in specs:
            sub = base / spec.slug
            paths = None
            if spec.kind != "identity":
                img_dir = sub / "images"
                img_dir.mkdir(parents=True, exist_ok=True)
                paths = {}
                for row in rows:
                    out = img_dir / (hashlib.sha1(row.record_id.encode()).hexdigest()[:16] + ".png")
                    save_rgb(apply(load_rgb(row.image_path), spec, seed, row.record_id), out)
                    paths[row.record_id] = str(out)
            rep = evaluate(model, dataset_path, embedder, gateway,
                           sub if out_dir is not None else None, workers,
                           perturbation_tag=spec.tag, image_paths=paths, run_digest=run_digest)
            reports.append(rep)
    finally:
        if tmp is not None:
            tmp.cleanup()
    return reports


# -- reports ------------------------------------------------------------------


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.1f}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: " | ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in rows])


def render_report(reports: Sequence[MetricReport]) -> tuple[str, dict]:
    """Human-readable table (percentages, one decimal) and the machine document."""
    if not reports:
        raise ValueError("nothing to render")
    show_auc = any(r.auc is not None for r in reports)
    header = ["Model", "Perturbation", "Acc", "F1"] + (["AUC"] if show_auc else []) + ["ROUGE_L", "CSS"]
    rows = []
    for r in reports:
        cells = [r.model or "-", r.perturbation_tag or "-", _pct(r.acc), _pct(r.f1)]
        if show_auc:
            cells.append(_pct(r.auc))
        cells += [_pct(r.rouge_l), _pct(r.css)]
        rows.append(cells)
    machine = {"reports": [r.to_dict() for r in reports]}
    return _table(header, rows), machine


def render_category_table(report: MetricReport) -> str:
    header = ["Category", "N", "Acc", "F1", "ROUGE_L", "CSS"]
    rows = [[cat, str(rep.total), _pct(rep.acc), _pct(rep.f1), _pct(rep.rouge_l), _pct(rep.css)]
            for cat, rep in sorted(report.per_category.items())]
    rows.append(["overall", str(report.total), _pct(report.acc), _pct(report.f1),
                 _pct(report.rouge_l), _pct(report.css)])
    return _table(header, rows)


def write_report(reports: Sequence[MetricReport], out_dir, name: str = "report",
                 metadata: dict | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, machine = render_report(reports)
    if metadata:
        machine["run"] = metadata
    jpath = out_dir / f"{name}.json"
    tpath = out_dir / f"{name}.txt"
    jpath.write_text(json.dumps(machine, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    parts = [text]
    for r in reports:
        if r.per_category:
            title = " / ".join(x for x in (r.model, r.perturbation_tag) if x) or "report"
            parts.append(f"\n{title}\n{render_category_table(r)}")
    tpath.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return jpath, tpath


def load_report(path) -> list[MetricReport]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [MetricReport.from_dict(d) for d in data["reports"]]
