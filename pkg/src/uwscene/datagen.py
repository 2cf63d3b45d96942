"""Instruction-following QA dataset construction.

Three generation routes feed one JSONL stream of QA records:

* rule-based — detection, classification, and counting records derived
  directly from structured annotations via the template tables;
* integration — captions obtained from a provider (a captioning service or
  the file-backed stub) combined with templates into caption and grounding
  records;
* free-form — provider-generated VQA dialogues parsed from the
  ``Q:``/``A:`` block format.

Determinism: every record's randomness comes from a RNG seeded by
``sha256("{dataset_seed}:{record_id}")``, so regeneration of any subset is
byte-stable and independent of iteration order. The JSONL writer sorts by
record id and uses a fixed field order.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .boxes import Bbox, format_bbox, validate_bbox
from .errors import ParseError, ProviderError, ValidationError
from .templates import (CHOICE_LETTERS, COARSE_CLS_TEMPLATES, COUNT_INTERVALS,
                        COUNTING_TEMPLATES, DETECTION_MULTI_TEMPLATE,
                        DETECTION_SINGLE_TEMPLATE, FINE_CLS_TEMPLATES,
                        FISH_TAXONOMY, GROUNDING_TEMPLATES,
                        IMAGE_CAPTION_TEMPLATES, PROMPT_IMAGE_CAPTION,
                        PROMPT_REGION_CAPTION, PROMPT_VQA,
                        REGION_CAPTION_TEMPLATES, TASKS, render_options)

JSONL_FIELDS = ("id", "image_id", "task", "question", "answer", "conditions", "source")

# generation route per task, reported by dataset_stats
TASK_SOURCE = {
    "detection": "rule", "coarse_cls": "rule", "fine_cls": "rule",
    "counting_regress": "rule", "counting_choice": "rule",
    "image_caption": "integration", "region_caption": "integration",
    "grounding": "integration", "vqa": "freeform",
}

PROMPT_KINDS = ("image_caption", "region_caption", "vqa")

PROVIDER_KEY_ENV = "UWSCENE_PROVIDER_KEY"


# ---------------------------------------------------------------------------
# annotation and record types


@dataclass(frozen=True)
class DetectionEntry:
    class_name: str
    bbox: Bbox

    def __post_init__(self):
        if not self.class_name or not self.class_name.strip():
            raise ValidationError("detection entry needs a non-empty class name")
        validate_bbox(self.bbox)


@dataclass(frozen=True)
class ImageAnnotation:
    """All structured ground truth for one image."""

    image_id: str
    detections: tuple = ()
    count: int | None = None
    taxonomic_class: str | None = None
    conditions: tuple = ()

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("annotation needs an image_id")
        if self.count is not None and self.count < 0:
            raise ValidationError(f"count must be >= 0, got {self.count}")


@dataclass(frozen=True)
class CaptionRecord:
    """Provider output: a caption for the whole image or one region."""

    image_id: str
    scope: str  # "image" | "region"
    text: str
    bbox: Bbox | None = None
    provider_id: str = ""

    def __post_init__(self):
        if self.scope not in ("image", "region"):
            raise ValidationError(f"caption scope must be image|region, got {self.scope!r}")
        if self.scope == "region":
            if self.bbox is None:
                raise ValidationError("region captions need a bbox")
            validate_bbox(self.bbox)


@dataclass
class QaRecord:
    id: str
    image_id: str
    task: str
    question: str
    answer: str
    conditions: tuple = ()
    source: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"unknown task tag {self.task!r}")
        if not self.source:
            self.source = TASK_SOURCE[self.task]

    def to_json(self) -> str:
        obj = {"id": self.id, "image_id": self.image_id, "task": self.task,
               "question": self.question, "answer": self.answer,
               "conditions": list(self.conditions), "source": self.source}
        return json.dumps(obj, ensure_ascii=False)


def record_rng(dataset_seed: int, record_id: str) -> random.Random:
    """Per-record RNG: independent of generation order, stable across runs."""
    digest = hashlib.sha256(f"{dataset_seed}:{record_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def load_annotations(path) -> list:
    """Read per-image annotation objects from JSONL."""
    anns = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: bad JSON: {exc}") from exc
        try:
            dets = tuple(
                DetectionEntry(class_name=e["class"], bbox=tuple(e["bbox"]))
                for e in obj.get("detections", ())
            )
            anns.append(ImageAnnotation(
                image_id=str(obj["image_id"]),
                detections=dets,
                count=obj.get("count"),
                taxonomic_class=obj.get("taxonomic_class"),
                conditions=tuple(obj.get("conditions", ())),
            ))
        except (KeyError, TypeError, ValidationError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad annotation: {exc}") from exc
    return anns


# ---------------------------------------------------------------------------
# rule-based generators (one QaRecord each)


def gen_detection_qa(ann: ImageAnnotation, rng: random.Random) -> QaRecord:
    """Detection QA: all annotated boxes, in annotation order, as the answer."""
    if not ann.detections:
        raise ValidationError(f"image {ann.image_id}: no detection entries")
    classes_in_order = []
    for entry in ann.detections:
        if entry.class_name not in classes_in_order:
            classes_in_order.append(entry.class_name)
    if len(classes_in_order) == 1 and rng.random() < 0.5:
        question = DETECTION_SINGLE_TEMPLATE.replace("[class]", classes_in_order[0])
    else:
        question = DETECTION_MULTI_TEMPLATE.replace("[classes]", ", ".join(classes_in_order))
    answer = ", ".join(f"{e.class_name}:{format_bbox(e.bbox)}" for e in ann.detections)
    return QaRecord(id=f"{ann.image_id}-det", image_id=ann.image_id, task="detection",
                    question=question, answer=answer, conditions=ann.conditions)


def gen_coarse_cls_qa(ann: ImageAnnotation, entry_index: int, rng: random.Random) -> QaRecord:
    entry = ann.detections[entry_index]
    template = COARSE_CLS_TEMPLATES[rng.randrange(len(COARSE_CLS_TEMPLATES))]
    question = template.replace("[bbox]", format_bbox(entry.bbox))
    return QaRecord(id=f"{ann.image_id}-coarse-{entry_index:03d}", image_id=ann.image_id,
                    task="coarse_cls", question=question, answer=entry.class_name,
                    conditions=ann.conditions)


def gen_fine_cls_qa(ann: ImageAnnotation, rng: random.Random,
                    vocabulary=FISH_TAXONOMY) -> QaRecord:
    if ann.taxonomic_class not in vocabulary:
        raise ValidationError(
            f"image {ann.image_id}: taxonomic class {ann.taxonomic_class!r} "
            f"not in the configured vocabulary")
    template = FINE_CLS_TEMPLATES[rng.randrange(len(FINE_CLS_TEMPLATES))]
    return QaRecord(id=f"{ann.image_id}-fine", image_id=ann.image_id, task="fine_cls",
                    question=template, answer=ann.taxonomic_class,
                    conditions=ann.conditions)


def gen_counting_regress_qa(ann: ImageAnnotation, rng: random.Random) -> QaRecord:
    if ann.count is None:
        raise ValidationError(f"image {ann.image_id}: no count annotation")
    template = COUNTING_TEMPLATES[rng.randrange(len(COUNTING_TEMPLATES))]
    return QaRecord(id=f"{ann.image_id}-count-r", image_id=ann.image_id,
                    task="counting_regress", question=template, answer=str(ann.count),
                    conditions=ann.conditions)


def choice_options(count: int, rng: random.Random):
    """Four-term arithmetic sequence containing the true count.

    The interval is drawn uniformly from COUNT_INTERVALS and the position of
    the true count uniformly from 0..3, resampled while any option would go
    negative (position 0 is always valid, so this terminates).
    """
    delta = COUNT_INTERVALS[rng.randrange(len(COUNT_INTERVALS))]
    while True:
        j = rng.randrange(4)
        if count - j * delta >= 0:
            break
    options = [count + (i - j) * delta for i in range(4)]
    return options, j, delta


def gen_counting_choice_qa(ann: ImageAnnotation, rng: random.Random) -> QaRecord:
    if ann.count is None:
        raise ValidationError(f"image {ann.image_id}: no count annotation")
    template = COUNTING_TEMPLATES[rng.randrange(len(COUNTING_TEMPLATES))]
    options, j, _ = choice_options(ann.count, rng)
    question = f"{template} {render_options(options)}"
    return QaRecord(id=f"{ann.image_id}-count-c", image_id=ann.image_id,
                    task="counting_choice", question=question,
                    answer=CHOICE_LETTERS[j], conditions=ann.conditions)


# ---------------------------------------------------------------------------
# integration generators (captions -> QA)


def first_sentence(text: str) -> str:
    """Referring phrase for grounding: first sentence, final punctuation trimmed."""
    text = text.strip()
    m = re.search(r"[.!?]", text)
    if m:
        text = text[: m.start()]
    return text.strip().rstrip(".!?")


def gen_caption_qa(caption: CaptionRecord, record_id: str, rng: random.Random,
                   conditions=()) -> QaRecord:
    if caption.scope == "image":
        templates, task = IMAGE_CAPTION_TEMPLATES, "image_caption"
        question = templates[rng.randrange(len(templates))]
    else:
        templates, task = REGION_CAPTION_TEMPLATES, "region_caption"
        template = templates[rng.randrange(len(templates))]
        question = template.replace("[bbox]", format_bbox(caption.bbox))
    return QaRecord(id=record_id, image_id=caption.image_id, task=task,
                    question=question, answer=caption.text.strip(),
                    conditions=tuple(conditions))


def gen_grounding_qa(caption: CaptionRecord, record_id: str, rng: random.Random,
                     conditions=()) -> QaRecord:
    if caption.scope != "region":
        raise ValidationError("grounding requires a region-scoped caption")
    phrase = first_sentence(caption.text)
    if not phrase:
        raise ValidationError(f"caption for {caption.image_id} has no usable text")
    template = GROUNDING_TEMPLATES[rng.randrange(len(GROUNDING_TEMPLATES))]
    question = template.replace("[region]", phrase)
    return QaRecord(id=record_id, image_id=caption.image_id, task="grounding",
                    question=question, answer=format_bbox(caption.bbox),
                    conditions=tuple(conditions))


# ---------------------------------------------------------------------------
# caption providers


class StubCaptionProvider:
    """File-backed provider: one text file per (image_id, prompt_kind).

    Files are named ``<image_id>.<prompt_kind>.txt`` in a flat directory.
    Missing file -> non-retriable provider error (there is nothing to retry).
    """

    provider_id = "stub"

    def __init__(self, root):
        self.root = Path(root)

    def generate(self, image_id: str, prompt_kind: str, prompt: str) -> str:
        path = self.root / f"{image_id}.{prompt_kind}.txt"
        if not path.exists():
            raise ProviderError(f"stub has no entry for ({image_id}, {prompt_kind})",
                                retriable=False)
        return path.read_text(encoding="utf-8")

    def has(self, image_id: str, prompt_kind: str) -> bool:
        return (self.root / f"{image_id}.{prompt_kind}.txt").exists()


class HttpCaptionProvider:
    """Single-endpoint HTTP provider: POST {prompt, image} -> {text}.

    The bearer credential is read from the environment at call time and is
    never written to disk or embedded in any output.
    """

    provider_id = "http"

    def __init__(self, endpoint: str, key_env: str = PROVIDER_KEY_ENV,
                 timeout: float = 30.0):
        self.endpoint = endpoint
        self.key_env = key_env
        self.timeout = timeout

    def generate(self, image_id: str, prompt_kind: str, prompt: str) -> str:
        import requests

        headers = {}
        key = os.environ.get(self.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(self.endpoint,
                                 json={"prompt": prompt, "image": image_id},
                                 headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except Exception as exc:  # noqa: BLE001 - network errors are all retriable
            raise ProviderError(f"provider call failed for {image_id}: {exc}",
                                retriable=True) from exc
        if not isinstance(body, dict) or "text" not in body:
            raise ProviderError(f"provider returned no text for {image_id}",
                                retriable=True)
        return str(body["text"])


def render_prompt(prompt_kind: str, bbox: Bbox | None = None) -> str:
    if prompt_kind == "image_caption":
        return PROMPT_IMAGE_CAPTION
    if prompt_kind == "region_caption":
        if bbox is None:
            raise ValidationError("region caption prompt needs a bbox")
        return PROMPT_REGION_CAPTION.format(bbox=format_bbox(bbox))
    if prompt_kind == "vqa":
        return PROMPT_VQA
    raise ValidationError(f"unknown prompt kind {prompt_kind!r}")


_DESCRIPTION_PREFIX = re.compile(r"^\s*description\s*:\s*", re.IGNORECASE)


def parse_vqa_blocks(text: str):
    """Parse 'Q: ... / A: ...' pairs; returns (pairs, diagnostics).

    A question line with no following answer line is rejected with its line
    number; stray answer lines likewise. Blank and other lines are ignored.
    """
    pairs = []
    diagnostics = []
    pending = None  # (lineno, question)
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("Q:"):
            if pending is not None:
                diagnostics.append(f"line {pending[0]}: question without answer")
            pending = (lineno, stripped[2:].strip())
        elif stripped.startswith("A:"):
            if pending is None:
                diagnostics.append(f"line {lineno}: answer without question")
                continue
            answer = stripped[2:].strip()
            if not pending[1] or not answer:
                diagnostics.append(f"line {pending[0]}: empty question or answer")
            else:
                pairs.append((pending[1], answer))
            pending = None
    if pending is not None:
        diagnostics.append(f"line {pending[0]}: question without answer")
    return pairs, diagnostics


def request_freeform(provider, image_id: str, prompt_kind: str,
                     bbox: Bbox | None = None):
    """Render the prompt for ``prompt_kind``, call the provider, parse output.

    Returns (records, diagnostics): CaptionRecord list for caption kinds, a
    (question, answer) list for VQA.
    """
    if prompt_kind not in PROMPT_KINDS:
        raise ValidationError(f"unknown prompt kind {prompt_kind!r}")
    prompt = render_prompt(prompt_kind, bbox=bbox)
    text = provider.generate(image_id, prompt_kind, prompt)
    if prompt_kind == "vqa":
        return parse_vqa_blocks(text)
    text = text.strip()
    if prompt_kind == "region_caption":
        text = _DESCRIPTION_PREFIX.sub("", text)
    if not text:
        return [], [f"{prompt_kind} for {image_id}: empty provider output"]
    scope = "image" if prompt_kind == "image_caption" else "region"
    rec = CaptionRecord(image_id=image_id, scope=scope, text=text, bbox=bbox,
                        provider_id=getattr(provider, "provider_id", "unknown"))
    return [rec], []


# ---------------------------------------------------------------------------
# quality filter


class RuleJudge:
    """Deterministic quality stub: answers must be non-empty and bounded, and
    templated questions must conform to their template table."""

    def __init__(self, max_answer_len: int = 600):
        self.max_answer_len = max_answer_len

    def __call__(self, record: QaRecord):
        from .templates import question_conforms

        if not record.answer or not record.answer.strip():
            return False, "empty answer"
        if len(record.answer) > self.max_answer_len:
            return False, f"answer longer than {self.max_answer_len} chars"
        if record.task != "vqa" and not question_conforms(record.task, record.question):
            return False, "question does not match its template table"
        return True, None


def quality_filter(records, judge, retry=None):
    """Judge every record; rejected ones get one regeneration attempt.

    ``retry`` is an optional callable record -> replacement record or None.
    Returns (accepted, replaced, rejected) where ``replaced`` lists records
    that passed only after regeneration and ``rejected`` pairs each failed
    record with its reason.
    """
    accepted, replaced, rejected = [], [], []
    for record in records:
        ok, reason = judge(record)
        if ok:
            accepted.append(record)
            continue
        replacement = retry(record) if retry is not None else None
        if replacement is not None:
            ok2, reason2 = judge(replacement)
            if ok2:
                accepted.append(replacement)
                replaced.append(replacement)
                continue
            reason = reason2
        rejected.append((record, reason))
    return accepted, replaced, rejected


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class GenerationReport:
    skipped: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    replaced: list = field(default_factory=list)
    provider_errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"skipped": list(self.skipped),
                "rejected": [{"id": r.id, "reason": reason} for r, reason in self.rejected],
                "replaced": [r.id for r in self.replaced],
                "provider_errors": list(self.provider_errors)}


def generate_for_image(ann: ImageAnnotation, dataset_seed: int, provider=None,
                       report: GenerationReport | None = None,
                       vocabulary=FISH_TAXONOMY) -> list:
    """All records derivable from one image's annotations (unfiltered)."""
    report = report if report is not None else GenerationReport()
    records = []

    if ann.detections:
        rid = f"{ann.image_id}-det"
        records.append(gen_detection_qa(ann, record_rng(dataset_seed, rid)))
        for i in range(len(ann.detections)):
            rid = f"{ann.image_id}-coarse-{i:03d}"
            records.append(gen_coarse_cls_qa(ann, i, record_rng(dataset_seed, rid)))
    else:
        report.skipped.append(f"{ann.image_id}: no detections")

    if ann.count is not None:
        records.append(gen_counting_regress_qa(
            ann, record_rng(dataset_seed, f"{ann.image_id}-count-r")))
        records.append(gen_counting_choice_qa(
            ann, record_rng(dataset_seed, f"{ann.image_id}-count-c")))

    if ann.taxonomic_class is not None:
        records.append(gen_fine_cls_qa(
            ann, record_rng(dataset_seed, f"{ann.image_id}-fine"), vocabulary=vocabulary))

    if provider is not None:
        records.extend(_provider_records(ann, dataset_seed, provider, report))
    return records


def _provider_available(provider, image_id: str, kind: str) -> bool:
    has = getattr(provider, "has", None)
    return has(image_id, kind) if callable(has) else True


def _provider_records(ann: ImageAnnotation, dataset_seed: int, provider,
                      report: GenerationReport) -> list:
    records = []
    image_id = ann.image_id

    if _provider_available(provider, image_id, "image_caption"):
        try:
            caps, diags = request_freeform(provider, image_id, "image_caption")
            report.provider_errors.extend(diags)
            for cap in caps:
                rid = f"{image_id}-capimg"
                records.append(gen_caption_qa(cap, rid, record_rng(dataset_seed, rid),
                                              conditions=ann.conditions))
        except ProviderError as exc:
            report.provider_errors.append(f"{image_id}/image_caption: {exc}")

    # one region caption per image, for the first annotated box; it feeds
    # both the region-caption record and the grounding record
    if ann.detections and _provider_available(provider, image_id, "region_caption"):
        bbox = ann.detections[0].bbox
        try:
            caps, diags = request_freeform(provider, image_id, "region_caption", bbox=bbox)
            report.provider_errors.extend(diags)
            for cap in caps:
                rid = f"{image_id}-capreg"
                records.append(gen_caption_qa(cap, rid, record_rng(dataset_seed, rid),
                                              conditions=ann.conditions))
                gid = f"{image_id}-ground"
                records.append(gen_grounding_qa(cap, gid, record_rng(dataset_seed, gid),
                                                conditions=ann.conditions))
        except ProviderError as exc:
            report.provider_errors.append(f"{image_id}/region_caption: {exc}")

    if _provider_available(provider, image_id, "vqa"):
        try:
            pairs, diags = request_freeform(provider, image_id, "vqa")
            report.provider_errors.extend(f"{image_id}/vqa: {d}" for d in diags)
            for i, (question, answer) in enumerate(pairs):
                records.append(QaRecord(id=f"{image_id}-vqa-{i:03d}", image_id=image_id,
                                        task="vqa", question=question, answer=answer,
                                        conditions=ann.conditions))
        except ProviderError as exc:
            report.provider_errors.append(f"{image_id}/vqa: {exc}")

    return records


def generate_dataset(annotations, dataset_seed: int, provider=None, judge=None,
                     vocabulary=FISH_TAXONOMY):
    """Full pipeline over a list of ImageAnnotation; returns (records, report).

    Records are judged by ``judge`` (default RuleJudge) with one retry via
    the provider where possible, then sorted by record id.
    """
    judge = judge if judge is not None else RuleJudge()
    report = GenerationReport()
    records = []
    for ann in annotations:
        records.extend(generate_for_image(ann, dataset_seed, provider=provider,
                                          report=report, vocabulary=vocabulary))

    def retry(record: QaRecord):
        # only provider-backed records can be re-requested; rule-based
        # generation is deterministic so a retry would reproduce the input
        if provider is None or TASK_SOURCE[record.task] == "rule":
            return None
        ann = next((a for a in annotations if a.image_id == record.image_id), None)
        if ann is None:
            return None
        try:
            regenerated = _provider_records(ann, dataset_seed, provider,
                                            GenerationReport())
        except ProviderError:
            return None
        return next((r for r in regenerated if r.id == record.id), None)

    accepted, replaced, rejected = quality_filter(records, judge, retry=retry)
    report.replaced = replaced
    report.rejected = rejected
    accepted.sort(key=lambda r: r.id)
    return accepted, report


def write_jsonl(path, records) -> None:
    """Serialize records sorted by id, one JSON object per line, fixed field order."""
    ordered = sorted(records, key=lambda r: r.id)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in ordered:
            fh.write(rec.to_json())
            fh.write("\n")


def read_jsonl(path) -> list:
    """Load QaRecords from JSONL (inverse of write_jsonl)."""
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(QaRecord(id=obj["id"], image_id=obj["image_id"],
                                    task=obj["task"], question=obj["question"],
                                    answer=obj["answer"],
                                    conditions=tuple(obj.get("conditions", ())),
                                    source=obj.get("source", "")))
        except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
            raise ParseError(f"{path}:{lineno}: bad record: {exc}") from exc
    return records


def dataset_stats(records) -> dict:
    """Per-task and per-source counts and proportions."""
    total = len(records)
    by_task = {}
    by_source = {}
    for rec in records:
        by_task[rec.task] = by_task.get(rec.task, 0) + 1
        by_source[rec.source] = by_source.get(rec.source, 0) + 1

    def table(counts: dict) -> dict:
        return {key: {"count": counts[key],
                      "proportion": counts[key] / total if total else 0.0}
                for key in sorted(counts)}

    return {"total": total, "by_task": table(by_task), "by_source": table(by_source)}
