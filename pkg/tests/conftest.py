import sys

import pytest

from fakeforge.gateway import Gateway, RetryPolicy
from fakeforge.mock import (
    MockLMMServer, fixture_corpus, hash_embedder, merging_aggregator, verdict_annotator,
)

ANNOTATORS = ("ann_a", "ann_b", "ann_c")


def quick_gateway(**kw) -> Gateway:
    """Gateway that retries without actually sleeping."""
    kw.setdefault("retry", RetryPolicy(max_attempts=3, base_delay=0.01, cap=0.05, seed=0))
    kw.setdefault("sleep", lambda s: None)
    return Gateway(**kw)


def install_pipeline_mocks(srv: MockLMMServer, contradict: str | None = None) -> None:
    for name in ANNOTATORS:
        srv.add_chat(name, verdict_annotator(name, contradict=(name == contradict)))
    srv.add_chat("agg", merging_aggregator())
    srv.add_embed("emb", hash_embedder(32))


@pytest.fixture
def server():
    with MockLMMServer() as srv:
        yield srv


@pytest.fixture
def gateway():
    gw = quick_gateway()
    yield gw
    gw.close()


@pytest.fixture
def pipeline(server):
    """Mock server with three annotators, an aggregator and an embedder."""
    install_pipeline_mocks(server)
    return server


@pytest.fixture
def corpus(tmp_path):
    return fixture_corpus(tmp_path / "corpus", n=20)


def build_fixture_dataset(srv: MockLMMServer, root, n: int = 20, test_fraction: float = 0.5,
                          seed: int = 0, size: int = 64):
    """Fixture corpus -> annotation store -> QA dataset, all against ``srv``.

    Returns ``(dataset_path, answers_by_level)`` where the second maps each
    image's gray level to its reference answer (what an echo model replies).
    """
    from fakeforge.annotation import run_annotation
    from fakeforge.datamodel import load_qa_pairs
    from fakeforge.dataset import build_dataset

    manifest, _, level_by_id = fixture_corpus(root / "corpus", n=n, size=size)
    ann = root / "ann.jsonl"
    gw = quick_gateway()
    run_annotation(manifest, [srv.endpoint(a) for a in ANNOTATORS], srv.endpoint("agg"), ann, gateway=gw)
    ds = root / "qa.jsonl"
    build_dataset(manifest, ann, ds, 1.0, test_fraction, seed)
    answers = {level_by_id[p.record_id]: p.answer for p in load_qa_pairs(ds)}
    return ds, answers


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(mod.RESULTS.items()):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
