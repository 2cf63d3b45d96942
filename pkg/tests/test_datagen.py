import json
import math
import random

import pytest

from uwscene import datagen, templates
from uwscene.boxes import format_bbox
from uwscene.datagen import (CaptionRecord, ImageAnnotation, QaRecord,
                             StubCaptionProvider, choice_options, first_sentence,
                             generate_dataset, generate_for_image,
                             load_annotations, parse_vqa_blocks, read_jsonl,
                             record_rng, write_jsonl)
from uwscene.errors import ParseError, ProviderError, ValidationError


def _ann(image_id="img001", classes=("fish", "turtle"), count=7,
         taxonomic_class="Actinopterygii", conditions=("low_light",)):
    dets = tuple(
        datagen.DetectionEntry(class_name=c, bbox=(0.1 * (i + 1), 0.1, 0.5, 0.6))
        for i, c in enumerate(classes))
    return ImageAnnotation(image_id=image_id, detections=dets, count=count,
                           taxonomic_class=taxonomic_class, conditions=conditions)


def _write_stub(root, image_id, kind, text):
    (root / f"{image_id}.{kind}.txt").write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# deterministic seeding and annotation loading


def test_record_rng_is_stable_and_id_keyed():
    a = record_rng(7, "img-det")
    b = record_rng(7, "img-det")
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    assert record_rng(7, "img-det").random() != record_rng(8, "img-det").random()
    assert record_rng(7, "img-det").random() != record_rng(7, "img-fine").random()


def test_load_annotations_roundtrip(tmp_path):
    path = tmp_path / "anns.jsonl"
    path.write_text(
        '{"image_id": "a", "detections": [{"class": "fish", "bbox": [0.1, 0.2, 0.5, 0.8]}], '
        '"count": 3, "taxonomic_class": "Myxini", "conditions": ["turbid"]}\n'
        '\n'
        '{"image_id": "b"}\n', encoding="utf-8")
    anns = load_annotations(path)
    assert len(anns) == 2
    assert anns[0].image_id == "a"
    assert anns[0].detections[0].class_name == "fish"
    assert anns[0].count == 3 and anns[0].conditions == ("turbid",)
    assert anns[1].detections == () and anns[1].count is None


def test_load_annotations_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"image_id": "a"}\n{not json\n', encoding="utf-8")
    with pytest.raises(ValidationError, match=":2:"):
        load_annotations(path)
    path.write_text('{"detections": []}\n', encoding="utf-8")
    with pytest.raises(ValidationError, match=":1:"):
        load_annotations(path)


# ---------------------------------------------------------------------------
# rule-based generators


def test_detection_answer_lists_boxes_in_annotation_order():
    ann = _ann()
    rec = datagen.gen_detection_qa(ann, random.Random(0))
    want = ", ".join(f"{e.class_name}:{format_bbox(e.bbox)}" for e in ann.detections)
    assert rec.answer == want
    assert rec.id == "img001-det" and rec.task == "detection"
    assert templates.question_conforms("detection", rec.question)
    assert "fish, turtle" in rec.question  # multi-class always uses the list form


def test_single_class_detection_uses_either_template():
    ann = _ann(classes=("fish",))
    seen = {datagen.gen_detection_qa(ann, random.Random(s)).question for s in range(40)}
    assert "Detect all fish object in the image." in seen
    assert "Detect all underwater object in the image, including fish." in seen
    assert all(templates.question_conforms("detection", q) for q in seen)


def test_coarse_cls_question_embeds_box():
    ann = _ann()
    rec = datagen.gen_coarse_cls_qa(ann, 1, random.Random(1))
    assert rec.id == "img001-coarse-001"
    assert format_bbox(ann.detections[1].bbox) in rec.question
    assert rec.answer == "turtle"
    assert templates.question_conforms("coarse_cls", rec.question)


def test_fine_cls_enforces_vocabulary():
    rec = datagen.gen_fine_cls_qa(_ann(), random.Random(2))
    assert rec.answer == "Actinopterygii"
    assert templates.question_conforms("fine_cls", rec.question)
    with pytest.raises(ValidationError, match="vocabulary"):
        datagen.gen_fine_cls_qa(_ann(taxonomic_class="Goldfish"), random.Random(2))
    custom = datagen.gen_fine_cls_qa(_ann(taxonomic_class="Goldfish"),
                                     random.Random(2), vocabulary=("Goldfish",))
    assert custom.answer == "Goldfish"


def test_counting_regress_answer_is_the_count():
    rec = datagen.gen_counting_regress_qa(_ann(count=42), random.Random(3))
    assert rec.answer == "42" and rec.id == "img001-count-r"
    assert templates.question_conforms("counting_regress", rec.question)


def test_choice_options_invariants():
    rng = random.Random(0)
    for _ in range(2000):
        count = rng.randrange(0, 400)
        options, j, delta = choice_options(count, rng)
        assert len(options) == 4
        assert delta in templates.COUNT_INTERVALS
        assert options[j] == count
        diffs = {options[i + 1] - options[i] for i in range(3)}
        assert diffs == {delta}
        assert min(options) >= 0


def test_choice_position_unbiased_when_unconstrained():
    # with count far above 3 * max(interval), no position is ever resampled,
    # so the answer letter should be uniform over A-D within 3 sigma
    n = 20000
    counts = {letter: 0 for letter in templates.CHOICE_LETTERS}
    rng = random.Random(5)
    for _ in range(n):
        _, j, _ = choice_options(1000, rng)
        counts[templates.CHOICE_LETTERS[j]] += 1
    sigma = math.sqrt(n * 0.25 * 0.75)
    for letter, c in counts.items():
        assert abs(c - n * 0.25) < 3 * sigma, counts


def test_choice_zero_count_pins_answer_to_first_option():
    for seed in range(50):
        options, j, _ = choice_options(0, random.Random(seed))
        assert j == 0 and options[0] == 0 and min(options) == 0


def test_counting_choice_record_embeds_options():
    rec = datagen.gen_counting_choice_qa(_ann(count=12), random.Random(4))
    assert rec.id == "img001-count-c"
    assert rec.answer in ("A", "B", "C", "D")
    assert templates.question_conforms("counting_choice", rec.question)
    assert "A. " in rec.question and "D. " in rec.question


# ---------------------------------------------------------------------------
# caption-derived generators


def test_first_sentence_trims_at_terminal_punctuation():
    assert first_sentence("A big fish. It swims away.") == "A big fish"
    assert first_sentence("  no punctuation here ") == "no punctuation here"
    assert first_sentence("Look out! More text.") == "Look out"
    assert first_sentence("...") == ""


def test_caption_record_requires_bbox_for_regions():
    with pytest.raises(ValidationError):
        CaptionRecord(image_id="x", scope="region", text="t", bbox=None)
    with pytest.raises(ValidationError):
        CaptionRecord(image_id="x", scope="nowhere", text="t")


def test_grounding_answer_is_the_region_box():
    cap = CaptionRecord(image_id="x", scope="region", text="A red coral. Lots of it.",
                        bbox=(0.1, 0.2, 0.5, 0.8))
    rec = datagen.gen_grounding_qa(cap, "x-ground", random.Random(6))
    assert rec.answer == format_bbox((0.1, 0.2, 0.5, 0.8))
    assert "A red coral" in rec.question
    assert templates.question_conforms("grounding", rec.question)


def test_parse_vqa_blocks_and_diagnostics():
    text = ("Q: What animal is shown?\n"
            "A: A clownfish.\n"
            "\n"
            "Q: orphan question\n"
            "Q: second question?\n"
            "A: answered\n"
            "A: stray answer\n"
            "Q: trailing question")
    pairs, diags = parse_vqa_blocks(text)
    assert pairs == [("What animal is shown?", "A clownfish."),
                     ("second question?", "answered")]
    assert diags == ["line 4: question without answer",
                     "line 7: answer without question",
                     "line 8: question without answer"]


def test_parse_vqa_empty_fields_flagged():
    pairs, diags = parse_vqa_blocks("Q:\nA: fine\nQ: ok?\nA:")
    assert pairs == []
    assert diags == ["line 1: empty question or answer",
                     "line 3: empty question or answer"]


# ---------------------------------------------------------------------------
# providers


def test_stub_provider_reads_flat_files(tmp_path):
    _write_stub(tmp_path, "img001", "image_caption", "A reef scene.\n")
    provider = StubCaptionProvider(tmp_path)
    assert provider.has("img001", "image_caption")
    assert not provider.has("img001", "vqa")
    assert provider.generate("img001", "image_caption", "ignored") == "A reef scene.\n"
    with pytest.raises(ProviderError):
        provider.generate("img001", "vqa", "ignored")


def test_region_caption_strips_description_prefix(tmp_path):
    _write_stub(tmp_path, "img001", "region_caption", "Description: a red coral.\n")
    provider = StubCaptionProvider(tmp_path)
    caps, diags = datagen.request_freeform(provider, "img001", "region_caption",
                                           bbox=(0.1, 0.2, 0.5, 0.8))
    assert diags == []
    assert caps[0].text == "a red coral."
    assert caps[0].scope == "region"


def test_http_provider_reads_credential_from_env(monkeypatch):
    import requests

    seen = {}

    class FakeResponse:
        def raise_for_status(self):
            pass

        def json(self):
            return {"text": "hello"}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen.update(url=url, json=json, headers=headers, timeout=timeout)
        return FakeResponse()

    monkeypatch.setattr(requests, "post", fake_post)
    provider = datagen.HttpCaptionProvider("https://example.test/caption")

    monkeypatch.delenv(datagen.PROVIDER_KEY_ENV, raising=False)
    assert provider.generate("img", "image_caption", "p") == "hello"
    assert "Authorization" not in seen["headers"]

    monkeypatch.setenv(datagen.PROVIDER_KEY_ENV, "s3cret")
    provider.generate("img", "image_caption", "p")
    assert seen["headers"]["Authorization"] == "Bearer s3cret"
    # the credential must not be stored on the provider object itself
    assert "s3cret" not in repr(vars(provider))


def test_http_provider_wraps_failures_as_retriable(monkeypatch):
    import requests

    def fail_post(*a, **kw):
        raise requests.ConnectionError("boom")

    monkeypatch.setattr(requests, "post", fail_post)
    provider = datagen.HttpCaptionProvider("https://example.test/caption")
    with pytest.raises(ProviderError) as exc_info:
        provider.generate("img", "image_caption", "p")
    assert exc_info.value.retriable


# ---------------------------------------------------------------------------
# orchestration


def test_generate_for_image_rule_ids():
    records = generate_for_image(_ann(), dataset_seed=11)
    assert [r.id for r in records] == [
        "img001-det", "img001-coarse-000", "img001-coarse-001",
        "img001-count-r", "img001-count-c", "img001-fine"]
    assert all(r.source == "rule" for r in records)
    assert all(r.conditions == ("low_light",) for r in records)


def test_generate_for_image_with_stub_provider(tmp_path):
    _write_stub(tmp_path, "img001", "image_caption", "A lively reef.")
    _write_stub(tmp_path, "img001", "region_caption", "A shy turtle. It hides.")
    _write_stub(tmp_path, "img001", "vqa",
                "Q: What hides?\nA: A turtle.\nQ: Where?\nA: In the reef.")
    report = datagen.GenerationReport()
    records = generate_for_image(_ann(), dataset_seed=11,
                                 provider=StubCaptionProvider(tmp_path), report=report)
    by_id = {r.id: r for r in records}
    assert "img001-capimg" in by_id and by_id["img001-capimg"].source == "integration"
    assert by_id["img001-capreg"].answer == "A shy turtle. It hides."
    assert by_id["img001-ground"].answer == format_bbox(_ann().detections[0].bbox)
    assert by_id["img001-vqa-000"].answer == "A turtle."
    assert by_id["img001-vqa-001"].source == "freeform"
    assert report.provider_errors == []


def test_missing_stub_files_skip_silently(tmp_path):
    report = datagen.GenerationReport()
    records = generate_for_image(_ann(), dataset_seed=11,
                                 provider=StubCaptionProvider(tmp_path), report=report)
    assert all(r.source == "rule" for r in records)
    assert report.provider_errors == []


def test_provider_errors_are_recorded_not_raised():
    class Flaky:
        provider_id = "flaky"

        def generate(self, image_id, prompt_kind, prompt):
            raise ProviderError("down", retriable=True)

    report = datagen.GenerationReport()
    records = generate_for_image(_ann(), dataset_seed=11, provider=Flaky(),
                                 report=report)
    assert all(r.source == "rule" for r in records)
    assert len(report.provider_errors) == 3  # one per prompt kind


def test_generate_dataset_is_deterministic(tmp_path):
    anns = [_ann("imgA"), _ann("imgB", classes=("coral",), count=0)]
    first, _ = generate_dataset(anns, dataset_seed=3)
    second, _ = generate_dataset(anns, dataset_seed=3)
    assert [r.to_json() for r in first] == [r.to_json() for r in second]
    assert [r.id for r in first] == sorted(r.id for r in first)
    changed, _ = generate_dataset(anns, dataset_seed=4)
    assert [r.to_json() for r in changed] != [r.to_json() for r in first]


def test_overlong_provider_answer_is_rejected(tmp_path):
    _write_stub(tmp_path, "img001", "image_caption", "x" * 700)
    records, report = generate_dataset([_ann()], dataset_seed=1,
                                       provider=StubCaptionProvider(tmp_path))
    assert all(r.id != "img001-capimg" for r in records)
    assert any(r["id"] == "img001-capimg" and "longer" in r["reason"]
               for r in report.to_dict()["rejected"])


def test_write_jsonl_fixed_field_order_and_unicode(tmp_path):
    rec = QaRecord(id="z-det", image_id="z", task="detection",
                   question="Detect all fish object in the image.",
                   answer="fish:[0.100, 0.200, 0.500, 0.800] ★")
    path = tmp_path / "out.jsonl"
    write_jsonl(path, [rec])
    line = path.read_text(encoding="utf-8").strip()
    assert list(json.loads(line)) == list(datagen.JSONL_FIELDS)
    assert "★" in line  # ensure_ascii=False keeps raw unicode
    back = read_jsonl(path)
    assert back[0].to_json() == rec.to_json()


def test_read_jsonl_reports_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\n', encoding="utf-8")
    with pytest.raises(ParseError, match=":1:"):
        read_jsonl(path)


def test_dataset_stats_counts_and_proportions():
    records = generate_for_image(_ann(), dataset_seed=2)
    stats = datagen.dataset_stats(records)
    assert stats["total"] == 6
    assert stats["by_task"]["coarse_cls"]["count"] == 2
    assert stats["by_task"]["coarse_cls"]["proportion"] == pytest.approx(2 / 6)
    assert stats["by_source"]["rule"]["count"] == 6
    assert datagen.dataset_stats([]) == {"total": 0, "by_task": {}, "by_source": {}}
