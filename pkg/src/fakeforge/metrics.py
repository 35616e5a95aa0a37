"""Verdict parsing, detection metrics and explanation metrics."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datamodel import Authenticity, EvalPrediction, Verdict

_VERDICT_RE = re.compile(r"this\s+is\s+an?\s+(real|fake)\s+image", re.IGNORECASE)
_WORD_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_FIRST_SENTENCE = re.compile(r"^(.*?)(?:[.!?](?:\s|$)|\n|$)", re.DOTALL)

_KEYWORDS = {
    "real": Verdict.REAL,
    "fake": Verdict.FAKE,
    "synthetic": Verdict.FAKE,
    "generated": Verdict.FAKE,
    "ai-generated": Verdict.FAKE,
}

SCAN_CHARS = 200


def parse_verdict(raw: str) -> tuple[Verdict, str]:
    """Extract the real/fake verdict and the explanation from a model reply.

    The canonical verdict sentence is searched in the first 200 characters.
    When absent, a keyword rule over the first sentence is tried. Anything
    else is unparseable and the explanation is the raw reply.
    """
    head = raw[:SCAN_CHARS]
    hits = list(_VERDICT_RE.finditer(head))
    kinds = {m.group(1).lower() for m in hits}
    if len(kinds) == 1:
        m = hits[0]
        verdict = Verdict(m.group(1).lower())
        rest = raw[m.end():].lstrip(" \t.!?,;:\"'")
        return verdict, rest.strip().rstrip('"').strip()
    if len(kinds) > 1:
        return Verdict.UNPARSEABLE, raw

    first = _FIRST_SENTENCE.match(raw.strip()).group(1).lower()
    found = {_KEYWORDS[w] for w in _WORD_RE.findall(first) if w in _KEYWORDS}
    if len(found) == 1:
        return found.pop(), raw.strip()
    return Verdict.UNPARSEABLE, raw


def make_prediction(record_id: str, raw: str, score: float | None = None,
                    failure_reason: str | None = None) -> EvalPrediction:
    verdict, explanation = parse_verdict(raw)
    return EvalPrediction(record_id, raw, verdict, explanation, score, failure_reason)


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unparseable: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.unparseable


def _label(x) -> Authenticity:
    return x if isinstance(x, Authenticity) else Authenticity(x)


def detection_metrics(preds: Sequence[tuple[EvalPrediction | Verdict, Authenticity]]):
    """Return ``(acc, f1, confusion)`` with fake as the positive class.

    An unparseable prediction is wrong for accuracy. In the confusion matrix it
    is tallied separately, and for F1 it counts as a real (negative)
    prediction, so an unparseable fake adds to ``fn``.
    """
    if not preds:
        raise ValueError("detection_metrics needs at least one prediction")
    tp = fp = tn = fn = unp = 0
    unp_fake = 0
    for pred, truth in preds:
        verdict = pred.parsed_verdict if isinstance(pred, EvalPrediction) else Verdict(pred)
        truth = _label(truth)
        if verdict is Verdict.UNPARSEABLE:
            unp += 1
            unp_fake += truth is Authenticity.FAKE
        elif verdict is Verdict.FAKE:
            if truth is Authenticity.FAKE:
                tp += 1
            else:
                fp += 1
        else:
            if truth is Authenticity.REAL:
                tn += 1
            else:
                fn += 1
    total = tp + fp + tn + fn + unp
    acc = (tp + tn) / total
    denom = 2 * tp + fp + fn + unp_fake
    f1 = 2 * tp / denom if denom else 0.0
    return acc, f1, Confusion(tp, fp, tn, fn, unp)


def auc(scores: Sequence[tuple[float, Authenticity]]) -> float:
    """ROC AUC via the Mann-Whitney U statistic (ties count one half)."""
    s = np.asarray([float(x) for x, _ in scores], dtype=float)
    y = np.asarray([_label(t) is Authenticity.FAKE for _, t in scores], dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both fake and real samples")
    # average ranks handle ties
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: str, reference: str) -> float:
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    if not hyp or not ref:
        return 0.0
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


def css(hyp_embedding, ref_embedding) -> float:
    """Cosine similarity clamped to [0, 1]."""
    a = np.asarray(hyp_embedding, dtype=float)
    b = np.asarray(ref_embedding, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"embedding dimensions differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("css is undefined for a zero-norm embedding")
    if np.array_equal(a, b):
        return 1.0
    cos = float(a @ b / (na * nb))
    return min(1.0, max(0.0, cos))


def explanation_score(pairs: Sequence[tuple[str, str]],
                      embedder: Callable[[list[str]], list] | None = None):
    """Mean ROUGE-L and mean CSS over (hypothesis, reference) text pairs.

    ``embedder`` maps a list of strings to one vector each. Without it the
    CSS component is ``None``.
    """
    if not pairs:
        raise ValueError("explanation_score needs at least one pair")
    rl = [rouge_l(h, r) for h, r in pairs]
    mean_css = None
    if embedder is not None:
        # empty strings are not embeddable; they score 0 unless both are empty
        texts = sorted({t for pair in pairs for t in pair if t})
        vectors = dict(zip(texts, embedder(texts))) if texts else {}
        vals = []
        for h, r in pairs:
            if not h or not r:
                vals.append(1.0 if h == r else 0.0)
            else:
                vals.append(css(vectors[h], vectors[r]))
        mean_css = math.fsum(vals) / len(vals)
    return math.fsum(rl) / len(rl), mean_css
