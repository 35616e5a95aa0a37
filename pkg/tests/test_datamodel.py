import json

import pytest
from hypothesis import given, strategies as st

from fakeforge.datamodel import (
    AggregatedAnnotation, AnnotationBundle, Authenticity, BundleStatus, CandidateAnnotation,
    Category, EvalPrediction, ImageRecord, ManifestError, MetricReport, QAPair, Split, Verdict,
    load_manifest, manifest_tallies, parse_manifest, records_digest, write_manifest,
)


def _line(**kw):
    base = {"id": "img_001", "image_path": "a.png", "authenticity": "fake", "category": "satellite"}
    base.update(kw)
    return json.dumps({k: v for k, v in base.items() if v is not None})


def test_parse_manifest_maps_fields():
    rec = parse_manifest(_line())
    assert rec.authenticity is Authenticity.FAKE
    assert rec.category is Category.SATELLITE
    assert rec.hard_sample is False


def test_missing_authenticity():
    with pytest.raises(ManifestError, match="missing field: authenticity"):
        parse_manifest(_line(authenticity=None))


def test_bad_category_lists_legal_names():
    with pytest.raises(ManifestError) as err:
        parse_manifest(_line(category="Face M"))
    msg = str(err.value)
    for cat in Category:
        assert cat.value in msg


def test_category_optional_and_unknown_keys_kept():
    rec = parse_manifest(_line(category=None, camera="x100"))
    assert rec.category is None
    assert rec.extra == {"camera": "x100"}
    assert rec.to_dict()["camera"] == "x100"


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_manifest_tallies(tmp_path):
    cats = ["animal", "animal", "object", "human", "scene", "satellite", "document",
            "face_manipulation", "object", "scene"]
    auths = ["fake", "real"] * 5
    lines = [_line(id=f"img_{i}", category=c, authenticity=a) for i, (c, a) in enumerate(zip(cats, auths))]
    recs = load_manifest(_write(tmp_path / "m.jsonl", lines))
    assert len(recs) == 10
    t = manifest_tallies(recs)
    assert t["authenticity"] == {"fake": 5, "real": 5}
    assert t["category"]["animal"] == 2 and t["category"]["object"] == 2
    assert sum(t["category"].values()) == 10
    assert len([c for c, n in t["category"].items() if n]) == 7


def test_duplicate_id(tmp_path):
    p = _write(tmp_path / "m.jsonl", [_line(), _line(category="animal")])
    with pytest.raises(ManifestError, match="img_001"):
        load_manifest(p)


def test_manifest_round_trip(tmp_path):
    recs = [
        ImageRecord("a", "x/a.png", Authenticity.FAKE, Category.ANIMAL, "sd", True, {"k": 1}),
        ImageRecord("b", "x/b.png", Authenticity.REAL, None),
    ]
    p = tmp_path / "m.jsonl"
    write_manifest(p, recs)
    assert load_manifest(p) == recs


@given(st.sampled_from(list(Category)))
def test_category_serialization_bijective(cat):
    assert Category.parse(cat.value) is cat


@given(st.sampled_from(list(Authenticity)))
def test_authenticity_serialization_bijective(auth):
    assert Authenticity.parse(auth.value) is auth


def test_verdict_sentence():
    assert Authenticity.FAKE.verdict_sentence() == "This is a fake image."
    assert Authenticity.REAL.verdict_sentence() == "This is a real image."


def test_complete_bundle_invariants():
    good = CandidateAnnotation("a", "This is a fake image. x", True)
    bad = CandidateAnnotation("b", "This is a real image. y", False)
    agg = AggregatedAnnotation("This is a fake image. x", "agg")
    with pytest.raises(ValueError):
        AnnotationBundle("r", (good, bad), agg, BundleStatus.COMPLETE)
    with pytest.raises(ValueError):
        AnnotationBundle("r", (good, good), None, BundleStatus.COMPLETE)
    b = AnnotationBundle("r", (good, good, bad), agg, BundleStatus.COMPLETE)
    assert AnnotationBundle.from_dict(b.to_dict()) == b


def test_qapair_round_trip():
    q = QAPair("r", "p.png", "Does the image look real/fake?", "This is a real image.",
               Split.TEST, Category.DOCUMENT, Authenticity.REAL)
    assert QAPair.from_dict(q.to_dict()) == q


def test_eval_prediction_invariants():
    with pytest.raises(ValueError):
        EvalPrediction("r", "raw", Verdict.UNPARSEABLE, "other")
    with pytest.raises(ValueError):
        EvalPrediction("r", "raw", Verdict.FAKE, "", score=1.5)
    EvalPrediction("r", "raw", Verdict.UNPARSEABLE, "raw")


def test_metric_report_round_trip():
    sub = MetricReport(1, 0, 1, 0, 0, 1.0, 1.0)
    rep = MetricReport(3, 1, 4, 2, 0, 0.7, 6 / 9, 0.8, 0.5, 0.6, {"animal": sub}, "JPEG 70", "m", "d")
    assert MetricReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep
    assert rep.total == 10


def test_records_digest_order_independent():
    assert records_digest(["a", "b"]) == records_digest(["b", "a"])
    assert records_digest(["a"]) != records_digest(["a", "b"])
