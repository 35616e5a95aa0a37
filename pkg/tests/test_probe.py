import numpy as np
import pytest
from PIL import Image

from fakeforge.datamodel import Authenticity, Category, ImageRecord, MetricReport
from fakeforge.metrics import auc, detection_metrics
from fakeforge.mock import hash_embedder
from fakeforge.probe import (
    DivergedError, FeatureExtractionError, FeatureMatrix, ProbeError, ProbeHyper,
    ProbeModel, compare_paradigms, extract_features, loss_and_grad, predict, probe_report,
    to_predictions, train,
)

F, R = Authenticity.FAKE, Authenticity.REAL


def blobs(n=200, seed=0, margin=6.0, spread=0.5):
    """Two 2-D Gaussian blobs; the line x0 + x1 = 0 separates them by construction."""
    rng = np.random.default_rng(seed)
    half = n // 2
    centre = np.array([margin / 2, margin / 2])
    fake = centre + spread * rng.standard_normal((half, 2))
    real = -centre + spread * rng.standard_normal((n - half, 2))
    x = np.vstack([fake, real])
    labels = [F] * half + [R] * (n - half)
    return FeatureMatrix(x, labels, [f"p{i}" for i in range(n)])


def numeric_grad(w, b, x, y, l2, h=1e-5):
    gw = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        gw[i] = (loss_and_grad(w + e, b, x, y, l2)[0] - loss_and_grad(w - e, b, x, y, l2)[0]) / (2 * h)
    gb = (loss_and_grad(w, b + h, x, y, l2)[0] - loss_and_grad(w, b - h, x, y, l2)[0]) / (2 * h)
    return gw, gb


def max_relative_error(a, n):
    a, n = np.atleast_1d(a), np.atleast_1d(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))


def check_gradient_at(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((30, 5))
    y = (rng.random(30) > 0.5).astype(float)
    w = rng.standard_normal(5)
    b = float(rng.standard_normal())
    _, gw, gb = loss_and_grad(w, b, x, y, 0.1)
    nw, nb = numeric_grad(w, b, x, y, 0.1)
    return max(max_relative_error(gw, nw), max_relative_error(gb, nb))


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    assert check_gradient_at(seed) < 1e-5


def test_bias_not_penalized():
    x = np.zeros((4, 2))
    y = np.array([1.0, 0.0, 1.0, 0.0])
    l0, _, gb0 = loss_and_grad(np.zeros(2), 0.7, x, y, 0.0)
    l1, _, gb1 = loss_and_grad(np.zeros(2), 0.7, x, y, 10.0)
    assert l0 == l1 and gb0 == gb1


def test_blobs_separable():
    fm = blobs()
    # hand-checked separator: sign(x0 + x1)
    assert all((row.sum() > 0) == (lab is F) for row, lab in zip(fm.values, fm.labels))
    model = train(fm)
    preds = predict(model, fm)
    acc, _, _ = detection_metrics(list(zip(to_predictions(fm.record_ids, preds), fm.labels)))
    assert acc >= 0.99
    assert auc([(s, lab) for (s, _), lab in zip(preds, fm.labels)]) >= 0.999
    far = np.array([[20.0, 20.0]])
    assert predict(model, far)[0][0] > 0.99
    assert model.loss_history == sorted(model.loss_history, reverse=True)


def test_label_flip_symmetry():
    fm = blobs(seed=3, margin=1.0, spread=1.0)
    flipped = FeatureMatrix(fm.values, [R if l is F else F for l in fm.labels], fm.record_ids)
    a, b = train(fm), train(flipped)
    assert np.max(np.abs(a.weights + b.weights)) < 1e-9
    assert abs(a.bias + b.bias) < 1e-9


def test_zero_model_scores_half():
    m = ProbeModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3))
    for s, _ in predict(m, np.random.default_rng(0).standard_normal((5, 3))):
        assert s == 0.5


def test_constant_feature_column():
    fm = blobs()
    x = np.hstack([fm.values, np.ones((fm.rows, 1))])
    model = train(FeatureMatrix(x, fm.labels, fm.record_ids))
    assert np.all(np.isfinite(model.weights))
    assert model.std[-1] == 1.0


def test_divergence_detected():
    with pytest.raises(DivergedError, match="learning rate"):
        train(blobs(margin=1.0, spread=1.0), ProbeHyper(learning_rate=50.0, iterations=50))


def test_training_preconditions():
    with pytest.raises(ProbeError):
        train(FeatureMatrix(np.ones((3, 2)), [F, F, F], ["a", "b", "c"]))
    with pytest.raises(ProbeError):
        FeatureMatrix(np.array([[np.nan, 1.0]]), [F], ["a"])
    m = train(blobs())
    with pytest.raises(ProbeError, match="dimension"):
        predict(m, np.ones((1, 3)))


def _report(acc, f1, ids=("a", "b")):
    r = MetricReport(acc=acc, f1=f1)
    from fakeforge.datamodel import records_digest
    r.records_digest = records_digest(ids)
    return r


def test_comparison_table():
    t = compare_paradigms(_report(0.9, 0.88), _report(0.986, 0.981))
    text = t.render()
    lines = text.splitlines()
    assert len(lines) == 3
    assert "Acc" in lines[0] and "F1" in lines[0]
    assert "98.6" in lines[2] and "98.1" in lines[2]


def test_identical_reports_identical_rows():
    t = compare_paradigms(_report(0.5, 0.5), _report(0.5, 0.5), "x", "y")
    a, b = t.render().splitlines()[1:]
    assert a.split("|")[1:] == b.split("|")[1:]


def test_split_mismatch():
    with pytest.raises(ProbeError, match="split mismatch"):
        compare_paradigms(_report(0.5, 0.5, ("a",)), _report(0.5, 0.5, ("b",)))


def test_probe_report_fields():
    fm = blobs()
    rep = probe_report(train(fm), fm)
    assert rep.acc >= 0.99 and rep.auc >= 0.999 and rep.total == 200


# -- feature extraction ------------------------------------------------------------------


def _records(tmp_path, n=10):
    recs = []
    for i in range(n):
        p = tmp_path / f"{i}.png"
        Image.fromarray(np.full((8, 8, 3), 10 * i, np.uint8)).save(p)
        recs.append(ImageRecord(f"r{i}", str(p), F if i % 2 else R, Category.OBJECT))
    return recs


def test_extract_features_and_cache(server, gateway, tmp_path):
    server.add_embed("enc", hash_embedder(8))
    recs = _records(tmp_path)
    fm = extract_features(recs, server.endpoint("enc"), tmp_path / "cache", gateway, batch_size=4)
    assert fm.values.shape == (10, 8)
    assert fm.record_ids == [r.id for r in recs]
    assert server.calls("enc", "embed") == 3
    (req,) = server.requests["enc"][:1]
    assert req["pooling"] == "mean"
    again = extract_features(recs, server.endpoint("enc"), tmp_path / "cache", gateway)
    assert server.calls("enc", "embed") == 3
    assert np.array_equal(again.values, fm.values)


def test_duplicate_content_identical_rows(server, gateway, tmp_path):
    server.add_embed("enc", hash_embedder(8))
    recs = _records(tmp_path, 2)
    dup = ImageRecord("copy", recs[0].image_path, F, Category.OBJECT)
    fm = extract_features(recs + [dup], server.endpoint("enc"), tmp_path / "c", gateway)
    assert np.array_equal(fm.values[0], fm.values[2])


def test_extract_features_reports_failures(server, gateway, tmp_path):
    server.add_embed("enc", hash_embedder(8))
    recs = _records(tmp_path, 3) + [ImageRecord("gone", str(tmp_path / "missing.png"), F, Category.OBJECT)]
    with pytest.raises(FeatureExtractionError) as err:
        extract_features(recs, server.endpoint("enc"), tmp_path / "c", gateway)
    assert list(err.value.failed) == ["gone"]
