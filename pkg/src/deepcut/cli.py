"""Command-line front end.

Conventions: stdout carries exactly one artifact per run (DCUT bytes for
`synth`, JSON for everything else); diagnostics and the run manifest go to
stderr unless --out-dir is given, in which case artifacts and manifest.json
are also written there. Exit codes: 0 success, 1 domain/input error, 2 usage
error. DEEPCUT_SEED overrides --seed when set.

`replay MANIFEST` re-executes a recorded run after verifying input digests;
outputs are byte-identical to the original run.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ArgumentError, DeepCutError
from .feature_io import (
    FeatureField,
    read_feature_field,
    synth_planted_features,
    synth_planted_object,
    write_feature_field,
)
from .masks import BBox, LabelMask, mask_to_json, read_pgm, write_mask_pgm
from .evaluation import MetricReport, ari, corloc, iou_bbox, miou_mask, nmi, purity
from .pipeline import (
    TrainConfig,
    kless_cluster,
    localize,
    segment,
    sequence_segment,
    two_stage_segment,
)

COMMANDS = (
    "segment",
    "two-stage",
    "localize",
    "parts",
    "cluster",
    "synth",
    "eval",
    "extract-check",
    "replay",
)


def _parse_alpha(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid alpha {text!r}")
    if math.isinf(value):
        return None  # no shift
    if value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be >= 1 or inf, got {text}")
    return value


def _add_train_flags(p: argparse.ArgumentParser, loss_default: str = "ncut"):
    p.add_argument("--loss", choices=["ncut", "cc"], default=loss_default)
    p.add_argument("--k", type=int, default=None, help="ncut cluster count")
    p.add_argument("--k-max", type=int, default=10, help="cc head width")
    p.add_argument("--alpha", type=_parse_alpha, default=3.0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--ncut-sign", choices=["default", "literal"], default="default")
    p.add_argument("--normalize-features", action="store_true")


def _add_io_flags(p: argparse.ArgumentParser, features: bool = True):
    if features:
        p.add_argument("--features", help="DCUT file, or - for stdin")
        p.add_argument("--features-list", help="file listing one DCUT path per line")
    p.add_argument("--out-dir", help="write artifacts and manifest.json here")
    p.add_argument("--jobs", type=int, default=1)


def parse_args(argv: list[str]) -> tuple[str, dict]:
    """Validate argv into (command, options). Exits with code 2 on usage errors."""
    parser = argparse.ArgumentParser(
        prog="deepcut",
        description="Graph-clustering segmentation over patch-feature files",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="single-stage segmentation")
    _add_train_flags(p)
    _add_io_flags(p)

    p = sub.add_parser("two-stage", help="foreground/background then parts")
    _add_train_flags(p)
    p.add_argument("--k-fg", type=int, default=4)
    _add_io_flags(p)

    p = sub.add_parser("localize", help="object bounding box")
    _add_train_flags(p)
    p.add_argument("--box", choices=["largest", "all"], default="largest")
    _add_io_flags(p)

    p = sub.add_parser("parts", help="sequence mode over a file list")
    _add_train_flags(p)
    p.add_argument("--k-fg", type=int, default=4)
    p.add_argument(
        "--two-stage",
        action=argparse.BooleanOptionalAction,
        default=True,
        dest="two_stage",
    )
    p.add_argument(
        "--reset-weights",
        action="store_true",
        help="re-initialize the model for every image",
    )
    _add_io_flags(p)

    p = sub.add_parser("cluster", help="k-less clustering of item features")
    _add_train_flags(p, loss_default="cc")
    _add_io_flags(p)

    p = sub.add_parser("synth", help="planted feature fixtures")
    p.add_argument("--grid-h", type=int, required=True)
    p.add_argument("--grid-w", type=int, required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--layout", choices=["strips", "object"], default="strips")
    p.add_argument("--object-box", help="R0,C0,R1,C1 for --layout object")
    p.add_argument("--out", default="-", help="output DCUT path, - for stdout")
    p.add_argument("--truth-out", help="write planted truth labels as JSON")
    p.add_argument("--out-dir", help="write artifacts and manifest.json here")

    p = sub.add_parser("eval", help="metric report from predictions and truth")
    p.add_argument("--pred-boxes", help="JSONL of predicted boxes")
    p.add_argument("--truth-boxes", help="JSONL of ground-truth boxes")
    p.add_argument("--pred-mask", action="append", default=[], help="PGM path")
    p.add_argument("--truth-mask", action="append", default=[], help="PGM path")
    p.add_argument("--pred-labels", action="append", default=[], help="JSON path")
    p.add_argument("--truth-labels", action="append", default=[], help="JSON path")
    p.add_argument("--out-dir")

    p = sub.add_parser("extract-check", help="validate a DCUT file")
    p.add_argument("--features", required=True)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="override the recorded output directory")

    args = parser.parse_args(argv)
    command = args.command
    options = {k: v for k, v in vars(args).items() if k != "command"}

    env_seed = os.environ.get("DEEPCUT_SEED")
    if env_seed is not None and "seed" in options:
        try:
            options["seed"] = int(env_seed)
        except ValueError:
            parser.error(f"DEEPCUT_SEED must be an integer, got {env_seed!r}")

    if command in ("segment", "two-stage", "localize", "parts", "cluster"):
        if options.get("loss") == "cc" and options.get("k") is not None:
            parser.error("--k applies to the ncut loss; use --k-max with --loss cc")
        if options.get("k") is None:
            options["k"] = 4 if command == "parts" else 2
        if options.get("epochs") is None:
            options["epochs"] = 100 if command == "parts" else 10
        if command == "cluster" and options["loss"] != "cc":
            parser.error("cluster requires --loss cc (k-less clustering)")
        if not options.get("features") and not options.get("features_list"):
            parser.error("one of --features or --features-list is required")
        if command == "parts" and not options.get("features_list"):
            parser.error("parts requires --features-list")
        if (
            options.get("features")
            and options.get("features_list")
            and command != "parts"
        ):
            parser.error("--features and --features-list are mutually exclusive")
    if command == "synth":
        if options["layout"] == "object" and not options.get("object_box"):
            parser.error("--layout object requires --object-box R0,C0,R1,C1")
    return command, options


def _train_config(options: dict) -> TrainConfig:
    return TrainConfig(
        loss=options["loss"],
        k=options["k"],
        k_max=options["k_max"],
        alpha=options["alpha"],
        epochs=options["epochs"],
        hidden=options["hidden"],
        seed=options["seed"],
        lr=options["lr"],
        ncut_sign=options["ncut_sign"],
        reset_weights=options.get("reset_weights", True),
        normalize_features=options["normalize_features"],
    )


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _load_field(path: str, inputs: list[dict]) -> FeatureField:
    if path == "-":
        data = sys.stdin.buffer.read()
        inputs.append({"path": "-", "sha256": _sha256(data)})
        return read_feature_field(io.BytesIO(data))
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DeepCutError(f"cannot read features file {path!r}: {exc}") from exc
    inputs.append({"path": path, "sha256": _sha256(data)})
    return read_feature_field(io.BytesIO(data))


def _read_list(path: str, inputs: list[dict]) -> list[str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DeepCutError(f"cannot read file list {path!r}: {exc}") from exc
    inputs.append({"path": path, "sha256": _sha256(text.encode())})
    return [line.strip() for line in text.splitlines() if line.strip()]


def _emit(obj: dict, out_dir: str | None, name: str) -> None:
    text = json.dumps(obj, indent=None, separators=(",", ":"))
    sys.stdout.write(text + "\n")
    if out_dir:
        (Path(out_dir) / name).write_text(text + "\n")


def _write_mask_files(mask: LabelMask, out_dir: str, stem: str, obj: dict) -> None:
    path = Path(out_dir)
    with open(path / f"{stem}.pgm", "wb") as sink:
        write_mask_pgm(mask, sink)
    (path / f"{stem}.json").write_text(
        json.dumps(obj, separators=(",", ":")) + "\n"
    )


def _stem(path: str, index: int) -> str:
    if path == "-":
        return "mask"
    return Path(path).stem or f"mask{index}"


def _segment_like(command: str, options: dict, inputs: list[dict]) -> dict:
    cfg = _train_config(options)
    out_dir = options.get("out_dir")
    if options.get("features_list"):
        paths = _read_list(options["features_list"], inputs)
        if not paths:
            raise DeepCutError(f"file list {options['features_list']!r} is empty")
        if not out_dir:
            raise DeepCutError("--features-list output needs --out-dir")
    else:
        paths = [options["features"]]
    fields = [_load_field(p, inputs) for p in paths]

    def one(item):
        index, field = item
        if command == "segment":
            mask, trace = segment(field, cfg)
            return mask, mask_to_json(mask, loss_trace=trace)
        if command == "two-stage":
            mask = two_stage_segment(field, cfg, k_fg=options["k_fg"])
            return mask, mask_to_json(mask)
        result = localize(field, cfg, box_mode=options["box"])
        obj = mask_to_json(result.mask, bbox=result.patch_box)
        obj["pixel_bbox"] = result.pixel_box.to_json()
        obj["background_label"] = result.background_label
        return result.mask, obj

    jobs = max(1, options.get("jobs") or 1)
    work = list(enumerate(fields))
    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, work))
    else:
        results = [one(item) for item in work]

    artifacts = []
    for (index, _field), (mask, obj) in zip(work, results):
        if out_dir:
            _write_mask_files(mask, out_dir, _stem(paths[index], index), obj)
        artifacts.append(obj)
    return artifacts[0] if len(artifacts) == 1 else {"images": artifacts}


def _cmd_parts(options: dict, inputs: list[dict]) -> dict:
    cfg = _train_config(options)
    paths = _read_list(options["features_list"], inputs)
    if not paths:
        raise DeepCutError(f"file list {options['features_list']!r} is empty")
    fields = [_load_field(p, inputs) for p in paths]
    masks = sequence_segment(
        fields, cfg, two_stage=options["two_stage"], k_fg=options["k_fg"]
    )
    artifacts = [mask_to_json(m) for m in masks]
    out_dir = options.get("out_dir")
    if out_dir:
        for index, (mask, obj) in enumerate(zip(masks, artifacts)):
            _write_mask_files(mask, out_dir, _stem(paths[index], index), obj)
    return {"images": artifacts}


def _cmd_cluster(options: dict, inputs: list[dict]) -> dict:
    cfg = _train_config(options)
    field = _load_field(options["features"], inputs)
    labels, k_found = kless_cluster(field, cfg)
    return {"labels": [int(v) for v in labels], "k_found": k_found}


def _cmd_synth(options: dict, inputs: list[dict]) -> dict:
    if options["layout"] == "object":
        try:
            box = tuple(int(v) for v in options["object_box"].split(","))
            if len(box) != 4:
                raise ValueError("need exactly four integers")
        except ValueError as exc:
            raise DeepCutError(f"bad --object-box {options['object_box']!r}: {exc}")
        planted = synth_planted_object(
            options["grid_h"],
            options["grid_w"],
            box,
            options["noise_sigma"],
            options["seed"],
            embed_dim=options["embed_dim"],
        )
    else:
        planted = synth_planted_features(
            options["grid_h"],
            options["grid_w"],
            options["k"],
            options["noise_sigma"],
            options["seed"],
            embed_dim=options["embed_dim"],
        )
    buf = io.BytesIO()
    count = write_feature_field(planted.field, buf)
    data = buf.getvalue()
    out = options.get("out") or "-"
    if out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(out).write_bytes(data)
    out_dir = options.get("out_dir")
    if out_dir:
        (Path(out_dir) / "features.dcut").write_bytes(data)
    truth_obj = mask_to_json(planted.truth)
    if options.get("truth_out"):
        Path(options["truth_out"]).write_text(
            json.dumps(truth_obj, separators=(",", ":")) + "\n"
        )
    if out_dir:
        (Path(out_dir) / "truth.json").write_text(
            json.dumps(truth_obj, separators=(",", ":")) + "\n"
        )
    return {"bytes": count, "sha256": _sha256(data)}


def _read_boxes(path: str, inputs: list[dict]) -> list[tuple]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DeepCutError(f"cannot read boxes file {path!r}: {exc}") from exc
    inputs.append({"path": path, "sha256": _sha256(text.encode())})
    records = []
    for line_no, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DeepCutError(f"{path}:{line_no + 1}: bad JSON: {exc}") from exc
        records.append((obj.get("id", line_no), BBox.from_json(obj)))
    return records


def _match_boxes(preds: list[tuple], truths: list[tuple]) -> tuple[list, list]:
    pred_ids = [record[0] for record in preds]
    truth_ids = [record[0] for record in truths]
    if sorted(pred_ids) == sorted(truth_ids):
        truth_by_id = dict(truths)
        return [b for _, b in preds], [truth_by_id[i] for i, _ in preds]
    if len(preds) != len(truths):
        raise ArgumentError(
            f"{len(preds)} predicted boxes vs {len(truths)} ground-truth "
            "boxes and ids do not match"
        )
    return [b for _, b in preds], [b for _, b in truths]


def _read_labels_json(path: str, inputs: list[dict]) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DeepCutError(f"cannot read labels file {path!r}: {exc}") from exc
    inputs.append({"path": path, "sha256": _sha256(text.encode())})
    obj = json.loads(text)
    if isinstance(obj, dict):
        obj = obj.get("labels")
    if not isinstance(obj, list):
        raise DeepCutError(f"{path}: expected a JSON array or a 'labels' field")
    return np.asarray(obj, dtype=np.int64)


def _read_mask_pgm(path: str, inputs: list[dict]) -> LabelMask:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DeepCutError(f"cannot read mask file {path!r}: {exc}") from exc
    inputs.append({"path": path, "sha256": _sha256(data)})
    gray = read_pgm(io.BytesIO(data))
    return LabelMask.from_labels((gray > 0).astype(np.int64))


def _cmd_eval(options: dict, inputs: list[dict]) -> dict:
    per_image: dict[str, list] = {}
    counts = []
    report_kw: dict[str, float] = {}

    if bool(options.get("pred_boxes")) != bool(options.get("truth_boxes")):
        raise DeepCutError("--pred-boxes and --truth-boxes must come together")
    if options.get("pred_boxes"):
        preds, truths = _match_boxes(
            _read_boxes(options["pred_boxes"], inputs),
            _read_boxes(options["truth_boxes"], inputs),
        )
        ious = [iou_bbox(p, t) for p, t in zip(preds, truths)]
        per_image["box_iou"] = [float(v) for v in ious]
        report_kw["corloc"] = corloc(preds, truths)
        counts.append(len(preds))

    if len(options.get("pred_mask", [])) != len(options.get("truth_mask", [])):
        raise DeepCutError("--pred-mask and --truth-mask counts differ")
    if options.get("pred_mask"):
        mious = [
            miou_mask(_read_mask_pgm(p, inputs), _read_mask_pgm(t, inputs))
            for p, t in zip(options["pred_mask"], options["truth_mask"])
        ]
        per_image["mask_miou"] = [float(v) for v in mious]
        report_kw["miou"] = float(np.mean(mious))
        counts.append(len(mious))

    if len(options.get("pred_labels", [])) != len(options.get("truth_labels", [])):
        raise DeepCutError("--pred-labels and --truth-labels counts differ")
    if options.get("pred_labels"):
        pairs = [
            (_read_labels_json(p, inputs), _read_labels_json(t, inputs))
            for p, t in zip(options["pred_labels"], options["truth_labels"])
        ]
        per_image["labeling"] = [
            {"nmi": nmi(p, t), "ari": ari(p, t), "purity": purity(p, t)}
            for p, t in pairs
        ]
        # sequence-mode labels are comparable across images, so the dataset
        # aggregate concatenates all items before scoring
        all_pred = np.concatenate([p for p, _ in pairs])
        all_truth = np.concatenate([t for _, t in pairs])
        report_kw["nmi"] = nmi(all_pred, all_truth)
        report_kw["ari"] = ari(all_pred, all_truth)
        report_kw["purity"] = purity(all_pred, all_truth)
        counts.append(len(pairs))

    if not counts:
        raise DeepCutError("eval needs at least one pred/truth input pair")
    report = MetricReport(n_images=max(counts), **report_kw)
    obj = report.to_json()
    obj["per_image"] = per_image
    return obj


def _cmd_extract_check(options: dict, inputs: list[dict]) -> dict:
    field = _load_field(options["features"], inputs)
    return {
        "grid_h": field.grid_h,
        "grid_w": field.grid_w,
        "embed_dim": field.embed_dim,
        "image_h": field.meta.image_h,
        "image_w": field.meta.image_w,
        "patch_size": field.meta.patch_size,
        "stride": field.meta.stride,
        "source_id": field.meta.source_id,
        "payload_bytes": field.n_patches * field.embed_dim * 4,
        "valid": True,
    }


def _execute(command: str, options: dict) -> int:
    started = time.perf_counter()
    inputs: list[dict] = []
    out_dir = options.get("out_dir")
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    if command in ("segment", "two-stage", "localize"):
        artifact = _segment_like(command, options, inputs)
        name = "box.json" if command == "localize" else "result.json"
        _emit(artifact, out_dir, name)
    elif command == "parts":
        _emit(_cmd_parts(options, inputs), out_dir, "parts.json")
    elif command == "cluster":
        _emit(_cmd_cluster(options, inputs), out_dir, "clusters.json")
    elif command == "synth":
        summary = _cmd_synth(options, inputs)
        print(f"synth: wrote {summary['bytes']} bytes", file=sys.stderr)
    elif command == "eval":
        _emit(_cmd_eval(options, inputs), out_dir, "report.json")
    elif command == "extract-check":
        _emit(_cmd_extract_check(options, inputs), out_dir, "check.json")
    else:  # pragma: no cover - parse_args restricts commands
        raise DeepCutError(f"unknown command {command!r}")

    manifest = {
        "command": command,
        "version": __version__,
        "seed": options.get("seed"),
        "options": {k: v for k, v in options.items() if k != "out_dir"},
        "out_dir": out_dir,
        "inputs": inputs,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    text = json.dumps(manifest, separators=(",", ":"))
    if out_dir:
        (Path(out_dir) / "manifest.json").write_text(text + "\n")
    else:
        print(f"manifest: {text}", file=sys.stderr)
    return 0


def _replay(options: dict) -> int:
    path = options["manifest"]
    try:
        manifest = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DeepCutError(f"cannot read manifest {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DeepCutError(f"manifest {path!r} is not valid JSON: {exc}") from exc
    command = manifest.get("command")
    if command not in COMMANDS or command == "replay":
        raise DeepCutError(f"manifest names unsupported command {command!r}")
    replay_options = dict(manifest.get("options", {}))
    replay_options["out_dir"] = options.get("out_dir") or manifest.get("out_dir")
    for record in manifest.get("inputs", []):
        if record["path"] == "-":
            raise DeepCutError("cannot replay a run that read from stdin")
        try:
            digest = _sha256(Path(record["path"]).read_bytes())
        except OSError as exc:
            raise DeepCutError(
                f"replay input {record['path']!r} unavailable: {exc}"
            ) from exc
        if digest != record["sha256"]:
            raise DeepCutError(
                f"replay input {record['path']!r} changed since the original run"
            )
    return _execute(command, replay_options)


def run(command: str, options: dict) -> int:
    """Execute a parsed command; maps domain errors to exit code 1."""
    try:
        if command == "replay":
            return _replay(options)
        return _execute(command, options)
    except DeepCutError as exc:
        print(f"deepcut {command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"deepcut {command}: i/o error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    command, options = parse_args(sys.argv[1:] if argv is None else argv)
    return run(command, options)


if __name__ == "__main__":
    sys.exit(main())
