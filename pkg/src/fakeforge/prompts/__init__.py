"""Annotation prompt catalog: 14 category x authenticity templates and the merge instruction."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..datamodel import Authenticity, CandidateAnnotation, Category, ImageRecord
from ..gateway import ImagePart, MessageSequence, check_image, user_message
from ._digests import ASSET_DIGESTS

logger = logging.getLogger(__name__)

ASSET_DIR = Path(__file__).parent / "assets"
FEW_SHOT_PLACEHOLDER = "<Few-shot Examples>"
EVAL_PROMPT = "Does the image look real/fake?"
MERGE_STEPS = (
    "Extract Common Ground", "Filter Minority Claims", "Structure Hierarchically",
    "Maintain Original Format", "Avoid Redundancy", "Ensure Logical Consistency",
)
_NUMBER_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven", 8: "eight", 9: "nine"}


class PromptAssetError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class FewShotExample:
    prompt: str
    answer: str


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    category: Category
    authenticity: Authenticity
    body: str
    few_shot_slots: tuple[FewShotExample, ...] = ()

    @property
    def output_sentence(self) -> str:
        return self.authenticity.verdict_sentence()

    def rendered_body(self) -> str:
        """Body with the few-shot placeholder expanded, or removed when there are no examples."""
        if not self.few_shot_slots:
            lines = [ln for ln in self.body.split("\n") if ln.strip() != FEW_SHOT_PLACEHOLDER]
            return "\n".join(lines).rstrip("\n")
        block = "\n".join(
            f"Example {i}:\n{ex.prompt}\n{ex.answer}"
            for i, ex in enumerate(self.few_shot_slots, start=1)
        )
        return self.body.replace(FEW_SHOT_PLACEHOLDER, "Examples:\n" + block).rstrip("\n")


@dataclass(frozen=True)
class AggregationInstruction:
    body: str

    def for_count(self, k: int) -> str:
        """Instruction text adjusted to ``k`` responses (the asset is written for three)."""
        if k == 3:
            return self.body
        word = _NUMBER_WORDS.get(k, str(k))
        return (self.body
                .replace("three model responses", f"{word} model responses")
                .replace("across all three responses", f"across all {word} responses"))


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class PromptCatalog:
    """Loaded prompt assets.

    Args:
        asset_dir: directory with ``<category>_<authenticity>.txt`` and
            ``merge_instruction.txt``. The bundled directory is verified
            against embedded digests; a custom directory is only recorded.
        hard_sample_prompts: override texts for hard samples, keyed by
            template id (``"animal_fake"``) or by authenticity (``"fake"``).
        few_shot: examples per template id.
    """

    asset_dir: Path = ASSET_DIR
    hard_sample_prompts: Mapping[str, str] = field(default_factory=dict)
    few_shot: Mapping[str, Sequence[FewShotExample]] = field(default_factory=dict)

    def __post_init__(self):
        self.asset_dir = Path(self.asset_dir)
        self.digests: dict[str, str] = {}
        self._templates: dict[tuple[Category, Authenticity], PromptTemplate] = {}
        bundled = self.asset_dir.resolve() == ASSET_DIR.resolve()
        for cat in Category:
            for auth in Authenticity:
                tid = f"{cat.value}_{auth.value}"
                body = self._read(tid, bundled)
                examples = tuple(self.few_shot.get(tid, ()))
                self._templates[(cat, auth)] = PromptTemplate(tid, cat, auth, body, examples)
        self.instruction = AggregationInstruction(self._read("merge_instruction", bundled))

    def _read(self, name: str, verify: bool) -> str:
        path = self.asset_dir / f"{name}.txt"
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise PromptAssetError(f"missing prompt asset {path}") from exc
        d = _digest(text)
        if verify and ASSET_DIGESTS.get(name) != d:
            raise PromptAssetError(f"prompt asset {path.name} does not match its recorded digest")
        self.digests[name] = d
        return text

    def templates(self) -> list[PromptTemplate]:
        return list(self._templates.values())

    def select_prompt(self, category: Category, authenticity: Authenticity,
                      hard_sample: bool = False) -> PromptTemplate:
        base = self._templates[(Category(category), Authenticity(authenticity))]
        if not hard_sample:
            return base
        override = self.hard_sample_prompts.get(base.template_id) or \
            self.hard_sample_prompts.get(base.authenticity.value)
        if override is None:
            logger.warning("no hard-sample prompt configured for %s; using the standard template",
                           base.template_id)
            return base
        return PromptTemplate(f"{base.template_id}_hard", base.category, base.authenticity,
                              override, base.few_shot_slots)


_default_catalog: PromptCatalog | None = None


def default_catalog() -> PromptCatalog:
    global _default_catalog
    if _default_catalog is None:
        _default_catalog = PromptCatalog()
    return _default_catalog


def select_prompt(category: Category, authenticity: Authenticity, hard_sample: bool = False) -> PromptTemplate:
    return default_catalog().select_prompt(category, authenticity, hard_sample)


def render_annotation_request(template: PromptTemplate, record: ImageRecord) -> MessageSequence:
    """One user message: the record's image, then the instruction text."""
    if record.category != template.category:
        raise PreconditionError(
            f"record {record.id} has category {record.category}, template is for {template.category.value}"
        )
    check_image(record.image_path, record.id)
    return user_message(ImagePart(record.image_path), template.rendered_body())


def render_aggregation_request(candidates: Sequence[CandidateAnnotation],
                               instruction: AggregationInstruction | None = None) -> MessageSequence:
    instruction = instruction or default_catalog().instruction
    if len(candidates) < 2:
        raise PreconditionError(f"aggregation needs at least 2 candidates, got {len(candidates)}")
    bad = [c.annotator_id for c in candidates if not c.verdict_ok]
    if bad:
        raise PreconditionError(f"candidates contradict ground truth: {', '.join(bad)}")
    blocks = [f"Response {i}:\n{c.text.strip()}" for i, c in enumerate(candidates, start=1)]
    text = instruction.for_count(len(candidates)).rstrip("\n") + "\n\n" + "\n\n".join(blocks)
    return user_message(text)


def eval_prompt() -> str:
    return EVAL_PROMPT
