"""Box, counting, and classification metrics.

Detection follows the COCO protocol: greedy matching by descending
confidence to the highest-IoU unmatched gold box, average precision with
101-point interpolation, IoU thresholds 0.50:0.05:0.95, and AR at up to 100
detections per image. Text-derived detections all carry confidence 1.0, so
the descending-confidence order reduces to emission order; this is the only
consistent ranking for score-free predictions and is applied identically to
every run.

Grounding treats each record as a single prediction; parse failures score
IoU 0 instead of being dropped, so unparseable output cannot inflate the
mean.
"""

from __future__ import annotations

import math

from .errors import ValidationError

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = tuple(i / 100.0 for i in range(101))
MAX_DETECTIONS = 100


def iou(a, b) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0.0 else 0.0


def _ap_101(tp_flags, n_gold: int) -> float:
    """101-point interpolated AP from an ordered TP/FP sequence."""
    if n_gold == 0:
        return 0.0
    precisions = []
    recalls = []
    tp_cum = 0
    for rank, is_tp in enumerate(tp_flags, 1):
        tp_cum += int(is_tp)
        precisions.append(tp_cum / rank)
        recalls.append(tp_cum / n_gold)
    ap = 0.0
    for t in RECALL_POINTS:
        best = 0.0
        for p, r in zip(precisions, recalls):
            if r >= t - 1e-12 and p > best:
                best = p
        ap += best
    return ap / len(RECALL_POINTS)


def grounding_metrics(pred_boxes, gold_boxes) -> dict:
    """miou, pr@0.5, pr@0.75, and single-class ap@0.5 for one-box records.

    ``pred_boxes[i]`` is a bbox or None (parse failure, scored as IoU 0).
    Each record counts as one prediction with confidence 1.0 in list order.
    """
    if len(pred_boxes) != len(gold_boxes):
        raise ValidationError("prediction/gold count mismatch")
    if not gold_boxes:
        return {"miou": 0.0, "pr@0.5": 0.0, "pr@0.75": 0.0, "ap@0.5": 0.0}
    ious = [iou(p, g) if p is not None else 0.0
            for p, g in zip(pred_boxes, gold_boxes)]
    n = len(ious)
    return {
        "miou": sum(ious) / n,
        "pr@0.5": sum(1 for v in ious if v >= 0.5) / n,
        "pr@0.75": sum(1 for v in ious if v >= 0.75) / n,
        "ap@0.5": _ap_101([v >= 0.5 for v in ious], n),
    }


def _normalize_class(name: str) -> str:
    return name.strip().lower()


def detection_metrics(preds_by_image, golds_by_image) -> tuple:
    """COCO-style (map, map@0.5, map@0.75, ar@100) plus diagnostics.

    ``preds_by_image[i]`` lists (class_name, bbox, confidence) for image i;
    ``golds_by_image[i]`` lists (class_name, bbox). Predicted classes absent
    from the gold vocabulary are dropped before matching and reported in the
    diagnostics.
    """
    if len(preds_by_image) != len(golds_by_image):
        raise ValidationError("prediction/gold image count mismatch")

    golds = [[(_normalize_class(c), tuple(b)) for c, b in img]
             for img in golds_by_image]
    classes = sorted({c for img in golds for c, _ in img})
    class_set = set(classes)

    dropped = {}
    preds = []
    for img_idx, img in enumerate(preds_by_image):
        kept = []
        for c, b, conf in img:
            cn = _normalize_class(c)
            if cn not in class_set:
                dropped[cn] = dropped.get(cn, 0) + 1
                continue
            kept.append((cn, tuple(b), float(conf)))
        # keep at most MAX_DETECTIONS highest-confidence detections per image
        if len(kept) > MAX_DETECTIONS:
            order = sorted(range(len(kept)), key=lambda i: -kept[i][2])[:MAX_DETECTIONS]
            kept = [kept[i] for i in sorted(order)]
        preds.append(kept)

    diagnostics = {"dropped_unknown_classes": dropped,
                   "n_images": len(golds), "classes": classes}
    if not classes:
        metrics = {"map": 0.0, "map@0.5": 0.0, "map@0.75": 0.0, "ar@100": 0.0}
        return metrics, diagnostics

    ap_by_tau = {tau: [] for tau in IOU_THRESHOLDS}
    recall_by_tau = {tau: [] for tau in IOU_THRESHOLDS}
    for cls in classes:
        cls_preds = []  # (conf, img_idx, emit_idx, bbox) in emission order
        for img_idx, img in enumerate(preds):
            for emit_idx, (c, b, conf) in enumerate(img):
                if c == cls:
                    cls_preds.append((conf, img_idx, emit_idx, b))
        cls_preds.sort(key=lambda t: -t[0])  # stable: ties keep emission order
        n_gold = sum(1 for img in golds for c, _ in img if c == cls)
        for tau in IOU_THRESHOLDS:
            matched = set()
            flags = []
            for conf, img_idx, emit_idx, box in cls_preds:
                best_iou = 0.0
                best_gold = None
                for g_idx, (gc, gb) in enumerate(golds[img_idx]):
                    if gc != cls or (img_idx, g_idx) in matched:
                        continue
                    v = iou(box, gb)
                    if v > best_iou:
                        best_iou = v
                        best_gold = g_idx
                if best_gold is not None and best_iou >= tau:
                    matched.add((img_idx, best_gold))
                    flags.append(True)
                else:
                    flags.append(False)
            ap_by_tau[tau].append(_ap_101(flags, n_gold))
            recall_by_tau[tau].append(len(matched) / n_gold if n_gold else 0.0)

    map_by_tau = {tau: sum(v) / len(v) for tau, v in ap_by_tau.items()}
    mean_recall = [sum(v) / len(v) for v in recall_by_tau.values()]
    metrics = {
        "map": sum(map_by_tau.values()) / len(map_by_tau),
        "map@0.5": map_by_tau[0.5],
        "map@0.75": map_by_tau[0.75],
        "ar@100": sum(mean_recall) / len(mean_recall),
    }
    return metrics, diagnostics


def counting_metrics(regress_pairs, choice_pairs) -> dict:
    """mae/rmse over integer-regression records, acc over choice records.

    ``regress_pairs`` holds (predicted int or None, gold int); an
    unparseable prediction counts as 0. ``choice_pairs`` holds (predicted
    letter or None, gold letter); unparseable predictions are wrong.
    """
    mae = rmse = 0.0
    if regress_pairs:
        errors = [abs((0 if p is None else p) - g) for p, g in regress_pairs]
        mae = sum(errors) / len(errors)
        rmse = math.sqrt(sum(e * e for e in errors) / len(errors))
    acc = 0.0
    if choice_pairs:
        acc = sum(1 for p, g in choice_pairs
                  if p is not None and str(p).upper() == str(g).upper()) / len(choice_pairs)
    return {"mae": mae, "rmse": rmse, "acc": acc}


def classification_metrics(preds, golds) -> dict:
    """acc plus macro precision/F1 over the gold class set.

    Matching is exact after trimming and lowercasing. Empty denominators
    (a class never predicted, or never correct) contribute 0.
    """
    if len(preds) != len(golds):
        raise ValidationError("prediction/gold count mismatch")
    if not golds:
        return {"acc": 0.0, "precision": 0.0, "f1": 0.0}
    pairs = [((None if p is None else _normalize_class(str(p))),
              _normalize_class(str(g))) for p, g in zip(preds, golds)]
    acc = sum(1 for p, g in pairs if p == g) / len(pairs)
    classes = sorted({g for _, g in pairs})
    precisions = []
    f1s = []
    for cls in classes:
        tp = sum(1 for p, g in pairs if p == cls and g == cls)
        fp = sum(1 for p, g in pairs if p == cls and g != cls)
        fn = sum(1 for p, g in pairs if p != cls and g == cls)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        f1s.append(f1)
    return {"acc": acc,
            "precision": sum(precisions) / len(precisions),
            "f1": sum(f1s) / len(f1s)}
