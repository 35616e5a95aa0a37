import hashlib
import shutil

import pytest

from fakeforge.datamodel import Authenticity, CandidateAnnotation, Category, ImageRecord
from fakeforge.gateway import ImagePart, ImageReadError, chat_body, EndpointConfig, canonical_json
from fakeforge.prompts import (
    ASSET_DIR, EVAL_PROMPT, FEW_SHOT_PLACEHOLDER, FewShotExample, PreconditionError,
    PromptAssetError, PromptCatalog, default_catalog, eval_prompt, render_aggregation_request,
    render_annotation_request, select_prompt,
)
from fakeforge.prompts._digests import ASSET_DIGESTS
from fakeforge.mock import fixture_corpus


def test_animal_fake_body():
    t = select_prompt(Category.ANIMAL, Authenticity.FAKE)
    assert "Animal structure and physical feature anomalies" in t.body
    assert t.template_id == "animal_fake"
    assert t.output_sentence == "This is a fake image."


def test_satellite_real_body():
    t = select_prompt(Category.SATELLITE, Authenticity.REAL)
    assert "Clear outlines of buildings and vehicles" in t.body


def test_fourteen_distinct_templates_match_assets():
    ids, bodies = set(), set()
    for cat in Category:
        for auth in Authenticity:
            t = select_prompt(cat, auth)
            ids.add(t.template_id)
            bodies.add(t.body)
            raw = (ASSET_DIR / f"{t.template_id}.txt").read_bytes()
            assert t.body.encode("utf-8") == raw
            assert hashlib.sha256(raw).hexdigest() == ASSET_DIGESTS[t.template_id]
            assert f'"{t.output_sentence}' in t.body
    assert len(ids) == 14 and len(bodies) == 14


def test_tampered_bundled_asset_detected(tmp_path, monkeypatch):
    import fakeforge.prompts as prompts

    copy = tmp_path / "assets"
    shutil.copytree(ASSET_DIR, copy)
    (copy / "animal_fake.txt").write_text("tampered", encoding="utf-8")
    monkeypatch.setattr(prompts, "ASSET_DIR", copy)
    with pytest.raises(PromptAssetError, match="animal_fake"):
        PromptCatalog(copy)


def test_custom_asset_dir_recorded_not_verified(tmp_path):
    copy = tmp_path / "assets"
    shutil.copytree(ASSET_DIR, copy)
    (copy / "animal_fake.txt").write_text("custom body\n" + FEW_SHOT_PLACEHOLDER + "\n", encoding="utf-8")
    cat = PromptCatalog(copy)
    assert cat.select_prompt(Category.ANIMAL, Authenticity.FAKE).body.startswith("custom body")
    assert cat.digests["animal_fake"] != ASSET_DIGESTS["animal_fake"]


def test_hard_sample_override_and_fallback(caplog):
    cat = PromptCatalog(hard_sample_prompts={"fake": "Look very closely. \"This is a fake image.\""})
    t = cat.select_prompt(Category.SCENE, Authenticity.FAKE, hard_sample=True)
    assert t.template_id == "scene_fake_hard"
    assert t.body.startswith("Look very closely")
    with caplog.at_level("WARNING"):
        t2 = cat.select_prompt(Category.SCENE, Authenticity.REAL, hard_sample=True)
    assert t2.template_id == "scene_real"
    assert "hard-sample" in caplog.text


@pytest.fixture
def record(tmp_path):
    _, recs, _ = fixture_corpus(tmp_path, n=1, categories=[Category.ANIMAL], fake_fraction=1.0)
    return recs[0]


def test_annotation_request_layout(record):
    t = select_prompt(Category.ANIMAL, Authenticity.FAKE)
    (msg,) = render_annotation_request(t, record)
    assert msg.role == "user"
    assert isinstance(msg.parts[0], ImagePart) and msg.parts[0].path == record.image_path
    assert msg.parts[1] == t.rendered_body()
    assert FEW_SHOT_PLACEHOLDER not in msg.parts[1]


def test_annotation_request_deterministic(record):
    ep = EndpointConfig("x", "http://localhost:1", "m")
    t = select_prompt(Category.ANIMAL, Authenticity.FAKE)
    a = canonical_json(chat_body(ep, render_annotation_request(t, record)))
    b = canonical_json(chat_body(ep, render_annotation_request(t, record)))
    assert a == b


def test_few_shot_pair_fills_placeholder():
    ex = FewShotExample("What is odd here?", "This is a fake image. The paws merge.")
    cat = PromptCatalog(few_shot={"animal_fake": [ex]})
    t = cat.select_prompt(Category.ANIMAL, Authenticity.FAKE)
    base = (ASSET_DIR / "animal_fake.txt").read_text(encoding="utf-8")
    head = base[:base.index(FEW_SHOT_PLACEHOLDER)]
    expected = (head + "Examples:\nExample 1:\nWhat is odd here?\n"
                "This is a fake image. The paws merge.")
    assert t.rendered_body() == expected


def test_annotation_request_preconditions(record, tmp_path):
    t = select_prompt(Category.SCENE, Authenticity.FAKE)
    with pytest.raises(PreconditionError):
        render_annotation_request(t, record)
    broken = ImageRecord("b", str(tmp_path / "nope.png"), Authenticity.FAKE, Category.ANIMAL)
    with pytest.raises(ImageReadError):
        render_annotation_request(select_prompt(Category.ANIMAL, Authenticity.FAKE), broken)


def _cands(n):
    return [CandidateAnnotation(f"m{i}", f"This is a fake image. Reason {i}.", True) for i in range(n)]


def test_aggregation_three():
    (msg,) = render_aggregation_request(_cands(3))
    text = msg.parts[0]
    instr = default_catalog().instruction.body
    assert text.startswith(instr.rstrip("\n"))
    for i in range(3):
        assert f"Response {i + 1}:\nThis is a fake image. Reason {i}." in text
    for step in range(1, 7):
        assert f"\n{step}. " in text
    assert "Response 4:" not in text


def test_aggregation_two():
    (msg,) = render_aggregation_request(_cands(2))
    text = msg.parts[0]
    assert "Response 1:" in text and "Response 2:" in text and "Response 3:" not in text
    assert "two model responses" in text


def test_aggregation_preconditions():
    with pytest.raises(PreconditionError):
        render_aggregation_request(_cands(1))
    bad = _cands(2) + [CandidateAnnotation("x", "This is a real image.", False)]
    with pytest.raises(PreconditionError):
        render_aggregation_request(bad)


def test_eval_prompt():
    assert eval_prompt() == "Does the image look real/fake?" == EVAL_PROMPT
    assert eval_prompt().encode() == eval_prompt().encode()
