"""Linear probe on frozen image features.

A logistic-regression head is fit from scratch on standardized features with
full-batch gradient descent. Scores are probabilities of *fake*, so the output
plugs straight into :func:`fakeforge.metrics.detection_metrics` and
:func:`fakeforge.metrics.auc`.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .datamodel import Authenticity, EvalPrediction, ImageRecord, MetricReport, Verdict

logger = logging.getLogger(__name__)


class ProbeError(ValueError):
    pass


class DivergedError(ProbeError):
    pass


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: list[Authenticity]
    record_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ProbeError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if not (len(self.labels) == len(self.record_ids) == self.values.shape[0]):
            raise ProbeError("rows, labels and record_ids must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ProbeError("feature matrix contains non-finite values")
        self.labels = [Authenticity(x) for x in self.labels]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def targets(self) -> np.ndarray:
        return np.array([lab is Authenticity.FAKE for lab in self.labels], dtype=np.float64)


@dataclass
class ProbeHyper:
    learning_rate: float = 0.1
    iterations: int = 500
    l2: float = 1e-4


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    final_loss: float = float("nan")
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def decision(self, x: np.ndarray) -> np.ndarray:
        return self.standardize(x) @ self.weights + self.bias


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def loss_and_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, l2: float):
    """L2-regularized mean binary cross-entropy and its gradient.

    The penalty is ``l2 / 2 * ||w||^2``; the bias is not penalized.
    Returns ``(loss, grad_w, grad_b)``.
    """
    z = x @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = expit(z) - y
    grad_w = x.T @ r / len(y) + l2 * w
    grad_b = float(r.mean())
    return loss, grad_w, grad_b


def train(features: FeatureMatrix, hyper: ProbeHyper | None = None) -> ProbeModel:
    hyper = hyper or ProbeHyper()
    if features.rows < 2:
        raise ProbeError("need at least 2 rows to train")
    y = features.targets()
    if y.min() == y.max():
        raise ProbeError("training data must contain both real and fake samples")

    mean, std = standardization(features.values)
    x = (features.values - mean) / std
    w = np.zeros(features.dim)
    b = 0.0
    history = []
    prev = np.inf
    for _ in range(hyper.iterations):
        loss, gw, gb = loss_and_grad(w, b, x, y, hyper.l2)
        if not np.isfinite(loss) or loss > prev + 1e-12 * max(1.0, abs(prev)):
            raise DivergedError(
                f"training diverged (loss {loss:.6g} after {prev:.6g}); "
                f"try a learning rate below {hyper.learning_rate}"
            )
        history.append(loss)
        prev = loss
        w = w - hyper.learning_rate * gw
        b = b - hyper.learning_rate * gb
    final, _, _ = loss_and_grad(w, b, x, y, hyper.l2)
    if not np.isfinite(final):
        raise DivergedError("training diverged; try a smaller learning rate")
    history.append(final)
    logger.info("probe trained: dim=%d rows=%d final loss %.6f", features.dim, features.rows, final)
    return ProbeModel(w, b, mean, std, final, history)


def predict(model: ProbeModel, features: FeatureMatrix | np.ndarray) -> list[tuple[float, Authenticity]]:
    x = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.dim:
        raise ProbeError(f"feature dimension {x.shape[1]} does not match model dimension {model.dim}")
    scores = expit(model.decision(x))
    return [(float(s), Authenticity.FAKE if s >= 0.5 else Authenticity.REAL) for s in scores]


def to_predictions(record_ids: Sequence[str], preds) -> list[EvalPrediction]:
    """Wrap probe outputs as predictions; the raw response is the verdict word."""
    out = []
    for rid, (score, verdict) in zip(record_ids, preds):
        v = Verdict(verdict.value)
        out.append(EvalPrediction(rid, v.value, v, "", score))
    return out


# -- feature extraction -------------------------------------------------------


class FeatureExtractionError(RuntimeError):
    def __init__(self, failed: dict[str, str]):
        self.failed = failed
        super().__init__("feature extraction failed for: " + ", ".join(sorted(failed)))


class FeatureCache:
    """One ``.npy`` file per (image digest, encoder) plus an append-only index."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.jsonl"

    @staticmethod
    def key(image_bytes: bytes, encoder_model: str) -> str:
        h = hashlib.sha256(image_bytes)
        h.update(b"\x00" + encoder_model.encode())
        return h.hexdigest()

    def get(self, key: str) -> np.ndarray | None:
        p = self.root / f"{key}.npy"
        return np.load(p) if p.exists() else None

    def put(self, key: str, vector: np.ndarray, record_id: str, encoder_model: str) -> None:
        np.save(self.root / f"{key}.npy", np.asarray(vector, dtype=np.float64))
        with open(self.index_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "record_id": record_id, "encoder": encoder_model,
                                 "dim": int(len(vector))}, sort_keys=True) + "\n")


def extract_features(records: Sequence[ImageRecord], encoder, cache_dir, gateway,
                     batch_size: int = 16) -> FeatureMatrix:
    """Embed every record's image with ``encoder``; rows follow ``records`` order."""
    from .gateway import GatewayError, ImagePart

    cache = FeatureCache(cache_dir)
    rows: list[np.ndarray | None] = [None] * len(records)
    keys: list[str | None] = [None] * len(records)
    failed: dict[str, str] = {}
    todo = []
    for i, rec in enumerate(records):
        try:
            data = Path(rec.image_path).read_bytes()
        except OSError as exc:
            failed[rec.id] = f"unreadable image: {exc}"
            continue
        keys[i] = cache.key(data, encoder.model_name)
        hit = cache.get(keys[i])
        if hit is not None:
            rows[i] = hit
        else:
            todo.append(i)

    for start in range(0, len(todo), batch_size):
        chunk = todo[start:start + batch_size]
        try:
            vectors = gateway.embed(encoder, [ImagePart(records[i].image_path) for i in chunk],
                                    extra={"pooling": "mean"})
        except (GatewayError, OSError) as exc:
            for i in chunk:
                failed[records[i].id] = str(exc)
            continue
        for i, vec in zip(chunk, vectors):
            rows[i] = np.asarray(vec, dtype=np.float64)
            cache.put(keys[i], rows[i], records[i].id, encoder.model_name)

    if failed:
        raise FeatureExtractionError(failed)
    dims = {len(r) for r in rows}
    if len(dims) > 1:
        raise ProbeError(f"encoder returned inconsistent dimensions {sorted(dims)}")
    values = np.vstack(rows) if rows else np.zeros((0, 0))
    return FeatureMatrix(values, [r.authenticity for r in records], [r.id for r in records])


# -- paradigm comparison ------------------------------------------------------


@dataclass
class ComparisonTable:
    rows: list[tuple[str, MetricReport]]

    def render(self) -> str:
        show_auc = any(rep.auc is not None for _, rep in self.rows)
        header = ["Method", "Acc", "F1"] + (["AUC"] if show_auc else [])
        lines = [header]
        for name, rep in self.rows:
            cells = [name, f"{100 * rep.acc:.1f}", f"{100 * rep.f1:.1f}"]
            if show_auc:
                cells.append("-" if rep.auc is None else f"{100 * rep.auc:.1f}")
            lines.append(cells)
        widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
        return "\n".join(
            " | ".join(c.ljust(w) if j == 0 else c.rjust(w) for j, (c, w) in enumerate(zip(r, widths)))
            for r in lines
        )

    def to_dict(self) -> dict:
        return {"rows": [{"method": n, "acc": r.acc, "f1": r.f1, "auc": r.auc} for n, r in self.rows]}


def compare_paradigms(probe_report: MetricReport, chat_model_report: MetricReport,
                      probe_name: str = "Frozen backbone + linear probe",
                      chat_name: str | None = None) -> ComparisonTable:
    if probe_report.records_digest != chat_model_report.records_digest:
        raise ProbeError("reports cover different test records (split mismatch)")
    chat_name = chat_name or chat_model_report.model or "Chat model (explanatory VQA)"
    return ComparisonTable([(probe_name, probe_report), (chat_name, chat_model_report)])


def probe_report(model: ProbeModel, features: FeatureMatrix, name: str = "linear-probe") -> MetricReport:
    """Detection metrics and AUC for the probe on ``features``."""
    from .metrics import auc, detection_metrics
    from .datamodel import records_digest

    preds = to_predictions(features.record_ids, predict(model, features))
    acc, f1, c = detection_metrics(list(zip(preds, features.labels)))
    rep = MetricReport(c.tp, c.fp, c.tn, c.fn, c.unparseable, acc, f1, model=name)
    if len(set(features.labels)) == 2:
        rep.auc = auc([(p.score, lab) for p, lab in zip(preds, features.labels)])
    rep.records_digest = records_digest(features.record_ids)
    return rep
