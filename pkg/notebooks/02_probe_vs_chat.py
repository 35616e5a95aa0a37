# %% [markdown]
# # Linear probe versus chat-model evaluation
#
# Trains a logistic-regression probe on frozen encoder features and puts it
# next to a chat model evaluated on the same test records. The mock encoder
# hashes image bytes, so its features carry no signal and the probe sits
# near chance; the point is the plumbing (feature cache, split-digest check,
# comparison table), not the number.

# %%
import tempfile
from pathlib import Path

from fakeforge.datamodel import ImageRecord, Split, load_qa_pairs, write_manifest
from fakeforge.evaluate import evaluate
from fakeforge.gateway import Gateway
from fakeforge.mock import (
    MockLMMServer, echo_model, fixture_corpus, hash_embedder, merging_aggregator, verdict_annotator,
)
from fakeforge.annotation import run_annotation
from fakeforge.dataset import build_dataset
from fakeforge.probe import compare_paradigms, extract_features, probe_report, train

work = Path(tempfile.mkdtemp(prefix="fakeforge-probe-"))
server = MockLMMServer().start()
for name in ("ann_a", "ann_b", "ann_c"):
    server.add_chat(name, verdict_annotator(name))
server.add_chat("agg", merging_aggregator())
server.add_embed("encoder", hash_embedder(64))
gateway = Gateway()

manifest, _, level_by_id = fixture_corpus(work / "corpus", n=56)
run_annotation(manifest, [server.endpoint(n) for n in ("ann_a", "ann_b", "ann_c")], server.endpoint("agg"),
               work / "ann.jsonl", gateway=gateway)
build_dataset(manifest, work / "ann.jsonl", work / "qa.jsonl", 1.0, 0.5, seed=0)
pairs = load_qa_pairs(work / "qa.jsonl")

# %% [markdown]
# ## Split manifests for the probe

# %%
def split_manifest(split):
    recs = [ImageRecord(p.record_id, p.image_path, p.authenticity, p.category) for p in pairs if p.split is split]
    path = work / f"{split.value}.jsonl"
    write_manifest(path, recs)
    return recs


train_recs, test_recs = split_manifest(Split.TRAIN), split_manifest(Split.TEST)
cache = work / "features"
train_fm = extract_features(train_recs, server.endpoint("encoder"), cache, gateway)
test_fm = extract_features(test_recs, server.endpoint("encoder"), cache, gateway)
model = train(train_fm)
probe = probe_report(model, test_fm, name="mock encoder + linear probe")
print(f"probe acc={probe.acc:.3f} auc={probe.auc:.3f}")

# %% [markdown]
# ## Chat model on the same test split

# %%
server.add_chat("echo", echo_model({level_by_id[p.record_id]: p.answer for p in pairs}))
chat = evaluate(server.endpoint("echo"), work / "qa.jsonl", None, gateway)
print(compare_paradigms(probe, chat).render())

# %%
server.stop()
gateway.close()
