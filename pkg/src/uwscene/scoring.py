"""Run evaluation: route records to task metrics and assemble the report.

Input is a gold QaRecord list plus predictions keyed by record id (each
prediction is the model's raw output text). Every gold id must have a
prediction; extras are counted but ignored. The report groups metrics by
task, then repeats the computation for every condition tag found in the
gold records, so subset tables come from the same code path as the overall
numbers. All reductions are order-independent: records are sorted by id
before scoring.
"""

from __future__ import annotations

import json
from pathlib import Path

from .boxmetrics import (classification_metrics, counting_metrics,
                         detection_metrics, grounding_metrics)
from .errors import MissingPredictionsError, ParseError, ValidationError
from .parsing import parse_bbox, parse_count, parse_detection_output
from .textmetrics import corpus_bleu4, cider_d, meteor_lite

REPORT_TASKS = ("detection", "coarse_cls", "fine_cls", "grounding", "counting",
                "image_caption", "region_caption", "vqa")


def load_predictions(path) -> dict:
    """Prediction JSONL {id, task, output_text} -> {id: output_text}."""
    preds = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            preds[str(obj["id"])] = str(obj["output_text"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad prediction: {exc}") from exc
    return preds


def _normalize(text: str) -> str:
    return text.strip().lower()


def _score_tasks(records, predictions: dict) -> dict:
    """Per-task metric tables for one record subset."""
    by_task = {}
    for rec in sorted(records, key=lambda r: r.id):
        by_task.setdefault(rec.task, []).append(rec)

    report = {}
    diagnostics = {}

    if "detection" in by_task:
        preds_imgs, golds_imgs = [], []
        parse_diags = 0
        for rec in by_task["detection"]:
            parsed = parse_detection_output(predictions[rec.id])
            parse_diags += len(parsed.diagnostics)
            preds_imgs.append(parsed.entries)
            gold = parse_detection_output(rec.answer)
            if gold.diagnostics:
                raise ValidationError(
                    f"gold detection answer for {rec.id} failed to parse: "
                    f"{gold.diagnostics}")
            golds_imgs.append([(c, b) for c, b, _ in gold.entries])
        metrics, det_diags = detection_metrics(preds_imgs, golds_imgs)
        report["detection"] = metrics
        det_diags["skipped_prediction_segments"] = parse_diags
        diagnostics["detection"] = det_diags

    if "grounding" in by_task:
        pred_boxes, gold_boxes = [], []
        failures = 0
        for rec in by_task["grounding"]:
            gold_boxes.append(parse_bbox(rec.answer))
            try:
                pred_boxes.append(parse_bbox(predictions[rec.id]))
            except ParseError:
                pred_boxes.append(None)
                failures += 1
        report["grounding"] = grounding_metrics(pred_boxes, gold_boxes)
        diagnostics["grounding"] = {"parse_failures": failures}

    regress, choice = [], []
    for rec in by_task.get("counting_regress", ()):
        gold = int(rec.answer)
        try:
            value = parse_count(predictions[rec.id])
        except ParseError:
            value = None
        regress.append((value if isinstance(value, int) else None, gold))
    for rec in by_task.get("counting_choice", ()):
        try:
            value = parse_count(predictions[rec.id])
        except ParseError:
            value = None
        choice.append((value if isinstance(value, str) else None, rec.answer))
    if regress or choice:
        report["counting"] = counting_metrics(regress, choice)

    for task in ("coarse_cls", "fine_cls"):
        if task in by_task:
            recs = by_task[task]
            report[task] = classification_metrics(
                [predictions[r.id] for r in recs], [r.answer for r in recs])

    for task in ("image_caption", "region_caption"):
        if task in by_task:
            recs = by_task[task]
            cands = [predictions[r.id] for r in recs]
            refs = [[r.answer] for r in recs]
            report[task] = {
                "bleu4": corpus_bleu4(cands, refs),
                "cider": cider_d(cands, refs),
                "meteor_lite": sum(meteor_lite(c, r) for c, r in zip(cands, refs))
                / len(cands),
            }

    if "vqa" in by_task:
        recs = by_task["vqa"]
        hits = sum(1 for r in recs
                   if _normalize(predictions[r.id]) == _normalize(r.answer))
        report["vqa"] = {"acc": hits / len(recs)}

    counts = {task: len(recs) for task, recs in sorted(by_task.items())}
    return {"tasks": report, "counts": counts, "diagnostics": diagnostics}


def evaluate(gold_records, predictions: dict, subset: str | None = None) -> dict:
    """Score a run against gold records; returns the full report dict.

    ``subset`` restricts evaluation to records carrying that condition tag.
    Raises MissingPredictionsError when any gold id lacks a prediction.
    """
    records = list(gold_records)
    if subset is not None:
        records = [r for r in records if subset in r.conditions]
    missing = sorted(r.id for r in records if r.id not in predictions)
    if missing:
        raise MissingPredictionsError(missing)

    overall = _score_tasks(records, predictions)

    tags = sorted({tag for r in records for tag in r.conditions})
    subsets = {}
    for tag in tags:
        tagged = [r for r in records if tag in r.conditions]
        subsets[tag] = _score_tasks(tagged, predictions)

    extra = sorted(set(predictions) - {r.id for r in records})
    return {
        "overall": overall["tasks"],
        "counts": overall["counts"],
        "subsets": {tag: rep["tasks"] for tag, rep in sorted(subsets.items())},
        "subset_counts": {tag: rep["counts"] for tag, rep in sorted(subsets.items())},
        "diagnostics": {**overall["diagnostics"],
                        "unused_predictions": len(extra)},
    }


def report_to_json(report: dict) -> str:
    """Canonical serialization: sorted keys, stable float repr, newline end."""
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_to_csv(report: dict) -> str:
    """Flatten to scope,task,metric,value rows (overall + per-subset)."""
    lines = ["scope,task,metric,value"]
    for task in sorted(report.get("overall", {})):
        for metric, value in sorted(report["overall"][task].items()):
            lines.append(f"overall,{task},{metric},{value!r}")
    for tag in sorted(report.get("subsets", {})):
        for task in sorted(report["subsets"][tag]):
            for metric, value in sorted(report["subsets"][tag][task].items()):
                lines.append(f"subset:{tag},{task},{metric},{value!r}")
    return "\n".join(lines) + "\n"
