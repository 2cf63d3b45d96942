"""Command-line front end tying the modules together.

Subcommands: degrade, restore, genqa, eval, vfe-selfcheck, stats. Every
command accepts ``--config FILE`` pointing at a flat JSON object whose keys
mirror the flag names (underscores for dashes); explicit flags win over
config values, and unknown config keys are rejected. Exit codes: 0 success,
1 a check ran and failed, 2 usage or I/O error. Each command writes a
machine-readable JSON summary next to (or instead of) its human output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, imaging, imgio, scoring, selfcheck, vfe
from .errors import (MissingPredictionsError, NumericError, ParseError,
                     ValidationError)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

DEFAULT_BETA = (0.2, 0.3, 0.4)
DEFAULT_BACKSCATTER = (0.05, 0.08, 0.1)

_REQUIRED = object()  # sentinel: option must come from a flag or the config


def _as_triple(value, name: str) -> tuple:
    """Coerce 'r,g,b' strings or 3-element sequences to a float triple."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise ValidationError(f"{name} must be three comma-separated numbers, got {value!r}")
    if len(parts) != 3:
        raise ValidationError(f"{name} needs exactly 3 values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: cannot parse {value!r}") from exc


def _as_int(value, name: str) -> int:
    try:
        out = int(value)
        if float(value) != out:
            raise ValueError(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} must be an integer, got {value!r}") from exc
    return out


def _merge_config(args: argparse.Namespace, spec: dict) -> None:
    """Fill unset options from --config, then apply defaults; flags win.

    ``spec`` maps option dest names to their defaults (or the _REQUIRED
    sentinel). Config keys outside the command's spec are rejected.
    """
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"config {args.config} must be a JSON object")
        unknown = sorted(set(doc) - set(spec))
        if unknown:
            raise ValidationError(
                f"unknown config key {unknown[0]!r} for this command"
                f" (valid: {', '.join(sorted(spec))})")
        for key, value in doc.items():
            if getattr(args, key) is None:
                setattr(args, key, value)
    for key, default in spec.items():
        if getattr(args, key) is None and default is not _REQUIRED:
            setattr(args, key, default)
    missing = [key for key in spec
               if getattr(args, key) is None and spec[key] is _REQUIRED]
    if missing:
        flags = ", ".join("--" + key.replace("_", "-") for key in missing)
        raise ValidationError(f"missing required option(s): {flags}")


def _write_summary(path: Path, summary: dict) -> None:
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _out_dir(value) -> Path:
    out = Path(value)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_degrade(args: argparse.Namespace) -> int:
    image = imgio.read_image(args.image)
    depth = imgio.read_depth(args.depth)
    beta = _as_triple(args.beta, "beta")
    back = _as_triple(args.backscatter, "backscatter")
    bits = _as_int(args.bits, "bits")
    atten = imaging.Attenuation.constant(beta)
    degraded, stats = imaging.degrade_with_stats(image, depth, atten, np.array(back))
    out = _out_dir(args.out)
    img_path = out / "degraded.png"
    imgio.write_image(img_path, degraded, bits=bits)
    summary = {
        "command": "degrade",
        "inputs": {"image": str(args.image), "depth": str(args.depth)},
        "parameters": {"beta": list(beta), "backscatter": list(back), "bits": bits},
        "outputs": {"image": str(img_path)},
        "clamped_low": stats.clamped_low,
        "clamped_high": stats.clamped_high,
    }
    _write_summary(out / "degrade_summary.json", summary)
    print(f"wrote {img_path} "
          f"({stats.clamped_low + stats.clamped_high} values clamped)")
    return EXIT_OK


def cmd_restore(args: argparse.Namespace) -> int:
    image = imgio.read_image(args.image)
    depth = imgio.read_depth(args.depth)
    beta = _as_triple(args.beta, "beta")
    bits = _as_int(args.bits, "bits")
    patch_size = _as_int(args.patch_size, "patch_size")
    if args.backscatter is None:
        grid = imaging.PatchGrid.for_image(image.shape, patch_size)
        back = imaging.estimate_backscatter(image, grid)
        back_source = "estimated"
    else:
        back = np.array(_as_triple(args.backscatter, "backscatter"))
        back_source = "given"
    atten = imaging.Attenuation.constant(beta)
    restored, stats = imaging.restore_with_stats(image, depth, atten, back)
    out = _out_dir(args.out)
    img_path = out / "restored.png"
    imgio.write_image(img_path, restored, bits=bits)
    summary = {
        "command": "restore",
        "inputs": {"image": str(args.image), "depth": str(args.depth)},
        "parameters": {"beta": list(beta),
                       "backscatter": [float(b) for b in back],
                       "backscatter_source": back_source,
                       "patch_size": patch_size, "bits": bits},
        "outputs": {"image": str(img_path)},
        "clamped_low": stats.clamped_low,
        "clamped_high": stats.clamped_high,
        "saturated": stats.saturated,
    }
    _write_summary(out / "restore_summary.json", summary)
    print(f"wrote {img_path} (backscatter {back_source}, "
          f"{stats.saturated} saturated values)")
    return EXIT_OK


def cmd_genqa(args: argparse.Namespace) -> int:
    seed = _as_int(args.seed, "seed")
    annotations = datagen.load_annotations(args.annotations)
    provider = datagen.StubCaptionProvider(args.stub_dir) if args.stub_dir else None
    records, report = datagen.generate_dataset(annotations, seed, provider=provider)
    out = _out_dir(args.out)
    qa_path = out / "qa.jsonl"
    datagen.write_jsonl(qa_path, records)
    stats = datagen.dataset_stats(records)
    summary = {
        "command": "genqa",
        "seed": seed,
        "inputs": {"annotations": str(args.annotations),
                   "stub_dir": str(args.stub_dir) if args.stub_dir else None},
        "outputs": {"dataset": str(qa_path)},
        "stats": stats,
        "report": report.to_dict(),
    }
    _write_summary(out / "genqa_summary.json", summary)
    print(f"wrote {stats['total']} records to {qa_path}")
    for line in _stats_lines(stats):
        print(line)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    fmt = str(args.format)
    if fmt not in ("json", "csv"):
        raise ValidationError(f"format must be 'json' or 'csv', got {fmt!r}")
    gold = datagen.read_jsonl(args.gold)
    predictions = scoring.load_predictions(args.run)
    report = scoring.evaluate(gold, predictions, subset=args.subset)
    out = _out_dir(args.out)
    report_path = out / "report.json"
    report_path.write_text(scoring.report_to_json(report), encoding="utf-8")
    written = [str(report_path)]
    if fmt == "csv":
        csv_path = out / "report.csv"
        csv_path.write_text(scoring.report_to_csv(report), encoding="utf-8")
        written.append(str(csv_path))
    for task in sorted(report["overall"]):
        cells = ", ".join(f"{metric}={value:.4f}"
                          for metric, value in sorted(report["overall"][task].items()))
        print(f"{task}: {cells}")
    print(f"wrote {', '.join(written)}")
    return EXIT_OK


def cmd_vfe_selfcheck(args: argparse.Namespace) -> int:
    seed = _as_int(args.seed, "seed")
    grad_seeds = _as_int(args.grad_seeds, "grad_seeds")
    fuzz = _as_int(args.fuzz, "fuzz")
    if (args.d is None) != (args.e is None):
        raise ValidationError("d and e must be set together")
    if args.h is not None and args.d is None:
        raise ValidationError("h requires d and e")
    dims = None
    if args.d is not None:
        d = _as_int(args.d, "d")
        e = _as_int(args.e, "e")
        h = _as_int(args.h, "h") if args.h is not None else d
        dims = (d, e, h)
    w_max = None if args.w_max is None else float(args.w_max)
    result = selfcheck.run_selfcheck(grad_seeds=grad_seeds, fuzz_cases=fuzz,
                                     seed=seed, dims=dims, w_max=w_max)
    if args.checkpoint is not None:
        params = vfe.load_checkpoint(args.checkpoint)
        result["checks"].append({
            "name": "checkpoint_load", "ok": True,
            "detail": f"d={params.d} e={params.e} h={params.h} w_max={params.w_max}",
        })
        result["checks"].append(selfcheck.check_checkpoint_gradients(params, seed=seed))
        result["ok"] = all(c["ok"] for c in result["checks"])
    for check in result["checks"]:
        print(f"{'PASS' if check['ok'] else 'FAIL'} {check['name']}: {check['detail']}")
    doc = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        Path(args.out).write_text(doc, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(doc, end="")
    return EXIT_OK if result["ok"] else EXIT_CHECK_FAILED


def _stats_lines(stats: dict) -> list:
    lines = [f"total records: {stats['total']}",
             f"{'task':<18} {'count':>7} {'share':>8}"]
    for task, row in stats["by_task"].items():
        lines.append(f"{task:<18} {row['count']:>7} {row['proportion']:>8.2%}")
    lines.append(f"{'source':<18} {'count':>7} {'share':>8}")
    for source, row in stats["by_source"].items():
        lines.append(f"{source:<18} {row['count']:>7} {row['proportion']:>8.2%}")
    return lines


def cmd_stats(args: argparse.Namespace) -> int:
    records = datagen.read_jsonl(args.dataset)
    stats = datagen.dataset_stats(records)
    for line in _stats_lines(stats):
        print(line)
    doc = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        Path(args.out).write_text(doc, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(doc, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser plumbing

# dest name -> default (or _REQUIRED); doubles as the set of legal config keys
_SPECS = {
    "degrade": {"image": _REQUIRED, "depth": _REQUIRED, "out": _REQUIRED,
                "beta": DEFAULT_BETA, "backscatter": DEFAULT_BACKSCATTER,
                "bits": 16},
    "restore": {"image": _REQUIRED, "depth": _REQUIRED, "out": _REQUIRED,
                "beta": DEFAULT_BETA, "backscatter": None,
                "patch_size": 8, "bits": 16},
    "genqa": {"annotations": _REQUIRED, "out": _REQUIRED, "seed": _REQUIRED,
              "stub_dir": None},
    "eval": {"gold": _REQUIRED, "run": _REQUIRED, "out": _REQUIRED,
             "subset": None, "format": "json"},
    "vfe-selfcheck": {"seed": 0, "grad_seeds": 5, "fuzz": 1000,
                      "d": None, "e": None, "h": None, "w_max": None,
                      "checkpoint": None, "out": None},
    "stats": {"dataset": _REQUIRED, "out": None},
}

_HANDLERS = {
    "degrade": cmd_degrade,
    "restore": cmd_restore,
    "genqa": cmd_genqa,
    "eval": cmd_eval,
    "vfe-selfcheck": cmd_vfe_selfcheck,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwscene",
        description="Underwater scene toolkit: imaging transfer, QA dataset "
                    "generation, evaluation, and numeric self-checks.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE",
                       help="JSON config; keys mirror flag names, flags win")
        return p

    p = add("degrade", "apply the forward water model to a clean image")
    p.add_argument("--image", metavar="PNG", help="input RGB image")
    p.add_argument("--depth", metavar="FILE", help="depth map (.png + sidecar, or raw)")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--beta", metavar="R,G,B", help="attenuation coefficients")
    p.add_argument("--backscatter", metavar="R,G,B", help="veiling light")
    p.add_argument("--bits", type=int, choices=(8, 16), help="output bit depth (default 16)")

    p = add("restore", "invert the water model on a degraded image")
    p.add_argument("--image", metavar="PNG")
    p.add_argument("--depth", metavar="FILE")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--beta", metavar="R,G,B")
    p.add_argument("--backscatter", metavar="R,G,B",
                   help="veiling light; omitted -> estimated from the darkest patch")
    p.add_argument("--patch-size", type=int, metavar="N",
                   help="patch size for backscatter estimation (default 8)")
    p.add_argument("--bits", type=int, choices=(8, 16))

    p = add("genqa", "generate a QA dataset from detection annotations")
    p.add_argument("--annotations", metavar="JSONL")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--seed", type=int, help="dataset seed (required)")
    p.add_argument("--stub-dir", metavar="DIR",
                   help="directory of canned caption/VQA provider outputs")

    p = add("eval", "score a prediction run against gold records")
    p.add_argument("--gold", metavar="JSONL")
    p.add_argument("--run", metavar="JSONL", help="predictions: {id, output_text} lines")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--subset", metavar="TAG",
                   help="score only records carrying this condition tag")
    p.add_argument("--format", choices=("json", "csv"),
                   help="also write report.csv (default: json only)")

    p = add("vfe-selfcheck", "run every enhancement/pipeline invariant and gradient check")
    p.add_argument("--seed", type=int)
    p.add_argument("--grad-seeds", type=int, metavar="N",
                   help="number of gradient-check instances (default 5)")
    p.add_argument("--fuzz", type=int, metavar="N",
                   help="number of exp-bound fuzz cases (default 1000)")
    p.add_argument("--d", type=int, help="token width for gradient instances")
    p.add_argument("--e", type=int, help="depth-feature width")
    p.add_argument("--h", type=int, help="absorption MLP hidden width")
    p.add_argument("--w-max", type=float, help="weight clamp (0 = degenerate)")
    p.add_argument("--checkpoint", metavar="FILE",
                   help="parameter manifest to load and gradient-check")
    p.add_argument("--out", metavar="FILE", help="write the JSON report here")

    p = add("stats", "per-task distribution table for a QA dataset")
    p.add_argument("--dataset", metavar="JSONL")
    p.add_argument("--out", metavar="FILE")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        _merge_config(args, _SPECS[args.command])
        return _HANDLERS[args.command](args)
    except MissingPredictionsError as exc:
        ids = exc.missing_ids
        preview = ", ".join(ids[:5]) + (f" (+{len(ids) - 5} more)" if len(ids) > 5 else "")
        print(f"error: {len(ids)} gold records lack predictions: {preview}",
              file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, ParseError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
