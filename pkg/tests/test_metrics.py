import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fakeforge.datamodel import Authenticity, Verdict
from fakeforge.metrics import (
    auc, css, detection_metrics, explanation_score, lcs_length, make_prediction,
    parse_verdict, rouge_l, tokenize,
)

from oracles import auc_pairwise, confusion_by_hand, cosine, lcs_recursive, rouge_l_oracle, tokens

F, R = Authenticity.FAKE, Authenticity.REAL


# -- parse_verdict --------------------------------------------------------------


def test_parse_canonical():
    v, e = parse_verdict("This is a fake image. The fur texture blends unnaturally.")
    assert v is Verdict.FAKE
    assert e == "The fur texture blends unnaturally."


def test_parse_case_insensitive():
    v, e = parse_verdict("this is a REAL image, because the shadows agree.")
    assert v is Verdict.REAL
    assert e == "because the shadows agree."


def test_parse_refusal():
    raw = "I cannot determine authenticity."
    assert parse_verdict(raw) == (Verdict.UNPARSEABLE, raw)


def test_parse_conflicting_sentences_unparseable():
    raw = "This is a real image. Actually, this is a fake image."
    assert parse_verdict(raw)[0] is Verdict.UNPARSEABLE


def test_parse_keyword_fallback():
    assert parse_verdict("Fake. Look at the hands.")[0] is Verdict.FAKE
    assert parse_verdict("It appears AI-generated. Odd teeth.")[0] is Verdict.FAKE
    assert parse_verdict("Real photo of a street.")[0] is Verdict.REAL
    # both kinds in the first sentence: no decision
    assert parse_verdict("Real or fake, hard to say.")[0] is Verdict.UNPARSEABLE


def test_verdict_beyond_scan_window_ignored():
    raw = "Hmm. " + "x " * 150 + "This is a fake image."
    assert parse_verdict(raw)[0] is Verdict.UNPARSEABLE


def test_make_prediction_unparseable_keeps_raw():
    p = make_prediction("r", "no idea")
    assert p.parsed_verdict is Verdict.UNPARSEABLE and p.explanation == "no idea"


# -- detection metrics ------------------------------------------------------------


def test_all_correct():
    preds = [(Verdict.FAKE, F)] * 10 + [(Verdict.REAL, R)] * 10
    acc, f1, c = detection_metrics(preds)
    assert (acc, f1) == (1.0, 1.0)
    assert (c.tp, c.tn) == (10, 10)


def test_hand_confusion_example():
    preds = ([(Verdict.FAKE, F)] * 3 + [(Verdict.FAKE, R)] * 1
             + [(Verdict.REAL, F)] * 2 + [(Verdict.REAL, R)] * 4)
    acc, f1, c = detection_metrics(preds)
    assert (c.tp, c.fp, c.fn, c.tn) == (3, 1, 2, 4)
    assert acc == pytest.approx(0.7)
    assert f1 == pytest.approx(6 / 9)


def test_all_unparseable():
    preds = [(Verdict.UNPARSEABLE, F), (Verdict.UNPARSEABLE, R)] * 3
    acc, f1, c = detection_metrics(preds)
    assert acc == 0.0 and f1 == 0.0
    assert c.unparseable == c.total == 6


def test_unparseable_fake_is_a_missed_fake():
    # tp=1 plus one unparseable fake: recall 1/2, precision 1 -> f1 2/3
    acc, f1, _ = detection_metrics([(Verdict.FAKE, F), (Verdict.UNPARSEABLE, F)])
    assert acc == 0.5
    assert f1 == pytest.approx(2 / 3)


def test_empty_predictions_rejected():
    with pytest.raises(ValueError):
        detection_metrics([])


def random_prediction_set(rng: random.Random):
    n = rng.randint(1, 40)
    return [(rng.choice(["fake", "real", "unparseable"]), rng.choice(["fake", "real"])) for _ in range(n)]


def check_against_hand_counts(pairs):
    counts, acc_o, f1_o = confusion_by_hand(pairs)
    acc, f1, c = detection_metrics([(Verdict(p), Authenticity(t)) for p, t in pairs])
    assert (c.tp, c.fp, c.tn, c.fn, c.unparseable) == (
        counts["tp"], counts["fp"], counts["tn"], counts["fn"], counts["unp"])
    assert acc == pytest.approx(acc_o, abs=1e-12)
    assert f1 == pytest.approx(f1_o, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_detection_metrics_oracle(seed):
    check_against_hand_counts(random_prediction_set(random.Random(seed)))


# -- auc ----------------------------------------------------------------------------


def test_auc_examples():
    assert auc([(0.9, F), (0.8, F), (0.1, R), (0.2, R)]) == 1.0
    assert auc([(0.5, F), (0.5, R), (0.5, F)]) == 0.5
    assert auc([(0.9, F), (0.6, F), (0.7, R), (0.2, R)]) == 0.75


def test_auc_needs_both_classes():
    with pytest.raises(ValueError):
        auc([(0.1, F), (0.2, F)])


def random_score_set(rng: np.random.Generator):
    n_f, n_r = rng.integers(1, 30, size=2)
    # coarse grid so ties happen often
    f = np.round(rng.random(n_f), 1).tolist()
    r = np.round(rng.random(n_r), 1).tolist()
    return f, r


@pytest.mark.parametrize("seed", range(50))
def test_auc_oracle(seed):
    f, r = random_score_set(np.random.default_rng(seed))
    got = auc([(s, F) for s in f] + [(s, R) for s in r])
    assert abs(got - auc_pairwise(f, r)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=30)
       .filter(lambda xs: len({b for _, b in xs}) == 2))
def test_auc_invariant_under_monotone_transform(items):
    base = [(float(s), F if b else R) for s, b in items]
    warped = [(math.exp(s / 3.0) + 7.0, a) for s, a in base]
    assert auc(base) == pytest.approx(auc(warped), abs=1e-12)
    flipped = [(-s, a) for s, a in base]
    assert auc(base) + auc(flipped) == pytest.approx(1.0, abs=1e-12)


# -- rouge_l --------------------------------------------------------------------------


def test_rouge_examples():
    assert rouge_l("the cat sat", "the cat sat") == 1.0
    assert rouge_l("alpha beta", "gamma delta") == 0.0
    assert rouge_l("the cat ran", "the cat sat") == pytest.approx(2 / 3)
    assert rouge_l("", "x") == 0.0


def test_tokenizer_lowercases_and_splits_punctuation():
    assert tokenize("The Cat's hat, 2x-zoom!") == ["the", "cat", "s", "hat", "2x", "zoom"]
    assert tokenize("The Cat's hat, 2x-zoom!") == tokens("The Cat's hat, 2x-zoom!")


VOCAB = list("abcdef")


def random_token_pair(rng: random.Random):
    a = [rng.choice(VOCAB) for _ in range(rng.randint(0, 12))]
    b = [rng.choice(VOCAB) for _ in range(rng.randint(0, 12))]
    return a, b


def test_rouge_oracle_200_pairs():
    rng = random.Random(1234)
    for _ in range(200):
        a, b = random_token_pair(rng)
        assert lcs_length(a, b) == lcs_recursive(a, b)
        assert rouge_l(" ".join(a), " ".join(b)) == rouge_l_oracle(a, b)


@given(st.lists(st.sampled_from(VOCAB), max_size=12), st.lists(st.sampled_from(VOCAB), max_size=12))
def test_rouge_symmetric_and_bounded(a, b):
    x, y = " ".join(a), " ".join(b)
    assert rouge_l(x, y) == pytest.approx(rouge_l(y, x))
    assert 0.0 <= rouge_l(x, y) <= 1.0


# -- css ------------------------------------------------------------------------------


def test_css_examples():
    assert css([0.3, 0.4], [0.3, 0.4]) == 1.0
    assert css([1, 0], [0, 1]) == 0.0
    w = [1 / math.sqrt(2), 1 / math.sqrt(2)]
    assert css([1, 0], w) == pytest.approx(1 / math.sqrt(2))
    assert css([1, 0], w) == pytest.approx(cosine([1, 0], w))


def test_css_clamps_negative():
    assert css([1, 0], [-1, 0]) == 0.0


def test_css_errors():
    with pytest.raises(ValueError):
        css([1, 0], [1, 0, 0])
    with pytest.raises(ValueError):
        css([0, 0], [1, 0])


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3)
       .filter(lambda v: sum(x * x for x in v) > 1e-6))
def test_css_self_similarity_is_one(v):
    assert css(v, list(v)) == 1.0


# -- explanation_score ------------------------------------------------------------------


def toy_embedder(texts):
    out = []
    for t in texts:
        v = np.zeros(8)
        v[0] = 1.0
        for tok in tokenize(t):
            v[1 + hash(tok) % 7] += 1.0
        out.append(v.tolist())
    return out


def test_explanation_all_equal():
    pairs = [("a b c", "a b c"), ("d e", "d e")]
    assert explanation_score(pairs, toy_embedder) == (1.0, 1.0)


def test_explanation_mean():
    r, c = explanation_score([("a b", "a b"), ("c", "d")])
    assert r == 0.5 and c is None


def test_explanation_matches_per_pair_oracles():
    rng = random.Random(5)
    pairs = []
    for _ in range(10):
        a, b = random_token_pair(rng)
        pairs.append((" ".join(a) or "z", " ".join(b) or "y"))
    r, c = explanation_score(pairs, toy_embedder)
    want_r = math.fsum(rouge_l_oracle(tokens(h), tokens(x)) for h, x in pairs) / len(pairs)
    vec = dict(zip([t for p in pairs for t in p], toy_embedder([t for p in pairs for t in p])))
    want_c = math.fsum(max(0.0, min(1.0, cosine(vec[h], vec[x]))) for h, x in pairs) / len(pairs)
    assert r == pytest.approx(want_r, abs=1e-12)
    assert c == pytest.approx(want_c, abs=1e-12)


def test_explanation_empty_sides():
    _, c = explanation_score([("", "x"), ("", "")], toy_embedder)
    assert c == 0.5
