"""Command-line entry point: generate, train, detect, evaluate.

Exit codes are stable API: 0 success, 2 bad invocation or spec/config
file, 3 data problem (unparseable capture, missing class), 4 model problem
(bundle mismatch, malformed model file). ``evaluate --thresholds`` exits 1
when metrics fall short, for CI gating.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import evaluate as ev
from . import gbdt
from .detector import ConfigurationError, load_bundle, write_bundle_manifest
from .pipeline import (
    PipelineConfig,
    build_training_windows,
    load_config,
    replay_capture,
    train_layer,
)
from .postprocess import SensorTrace, load_sensor_trace
from .synth import generate_dataset, load_manifest, load_profiles, parse_dataset_spec
from .taxonomy import (
    L2_NRT_CLASSES,
    L2_RT_CLASSES,
    LAYER_CLASS_ORDER,
    LAYER_L1,
    LAYER_L2_NRT,
    LAYER_L2_RT,
)
from .traffic import CaptureError, format_conversation_key, parse_capture

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_SPEC = 2
EXIT_DATA = 3
EXIT_MODEL = 4

_CLI_LAYER = {"l1": LAYER_L1, "l2rt": LAYER_L2_RT, "l2nrt": LAYER_L2_NRT}


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        spec_obj = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        specs = parse_dataset_spec(spec_obj)
        profiles = load_profiles(args.profiles)
        rows = generate_dataset(specs, args.seed, args.out, profiles,
                                local_ip=config.local_ips[0])
    except (OSError, ValueError) as exc:
        return _fail(EXIT_SPEC, f"invalid generation spec: {exc}")
    captures = len({row["capture"] for row in rows})
    print(f"wrote {captures} captures, {len(rows)} flows -> {args.out}")
    return EXIT_OK


def _train_params(args: argparse.Namespace, config: PipelineConfig):
    if args.params is None:
        return config.train
    obj = json.loads(Path(args.params).read_text(encoding="utf-8"))
    return gbdt.TrainParams.from_dict(obj)


def cmd_train(args: argparse.Namespace) -> int:
    layer = _CLI_LAYER[args.layer]
    try:
        config = load_config(args.config)
        params = _train_params(args, config)
    except (OSError, TypeError, ValueError) as exc:
        return _fail(EXIT_SPEC, f"invalid config/params: {exc}")
    try:
        local_ip, rows = load_manifest(args.manifest)
        config = dataclasses.replace(config, local_ips=(local_ip,))
        X, meta = build_training_windows(Path(args.manifest).parent, rows, config)
        model = train_layer(X, meta, layer, params)
    except (OSError, CaptureError, ValueError) as exc:
        return _fail(EXIT_DATA, f"training failed: {exc}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gbdt.save_model(model, out)
    report = {
        "layer": layer,
        "classes": list(model.class_labels),
        "rows": _layer_row_count(meta, layer),
        "loss_curve": model.loss_curve,
    }
    out.with_suffix(".report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    if args.bundle:
        _update_bundle(Path(args.bundle), layer, out)
    final = model.loss_curve[-1] if model.loss_curve else float("nan")
    print(f"trained {layer} on {report['rows']} windows, "
          f"final log-loss {final:.4f} -> {out}")
    return EXIT_OK


def _layer_row_count(meta, layer: str) -> int:
    if layer == LAYER_L1:
        return len(meta)
    parent = "RT" if layer == LAYER_L2_RT else "NRT"
    return sum(1 for m in meta if m.l1 == parent)


def _update_bundle(bundle_path: Path, layer: str, model_path: Path) -> None:
    entries: dict = {}
    if bundle_path.exists():
        entries = json.loads(bundle_path.read_text(encoding="utf-8"))
    bundle_path.parent.mkdir(parents=True, exist_ok=True)
    rel = os.path.relpath(model_path.resolve(), bundle_path.resolve().parent)
    entries[layer] = {"path": rel, "classes": list(LAYER_CLASS_ORDER[layer])}
    bundle_path.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")


def _verdict_record(step: int, capture: str, verdict) -> dict:
    return {
        "type": "prediction",
        "step": step,
        "capture": capture,
        "key": format_conversation_key(verdict.key),
        "l1": verdict.l1,
        "l2": verdict.sub,
        "raw_l1": verdict.raw_l1,
        "raw_l2": verdict.raw_sub,
        "voted_l1": verdict.voted_l1,
        "voted_l2": verdict.voted_sub,
        "l1_proba": [float(p) for p in verdict.l1_proba],
        "l2_proba": ([float(p) for p in verdict.l2_proba]
                     if verdict.l2_proba is not None else None),
    }


def cmd_detect(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_SPEC, f"invalid config: {exc}")
    try:
        bundle = load_bundle(args.bundle)
    except ConfigurationError as exc:
        return _fail(EXIT_MODEL, str(exc))
    try:
        sensors = (load_sensor_trace(args.sensors)
                   if args.sensors else SensorTrace())
        packets = parse_capture(args.capture, fmt=args.format)
    except (OSError, CaptureError, ValueError) as exc:
        return _fail(EXIT_DATA, str(exc))

    capture_name = Path(args.capture).name
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    step_s = config.step_ms / 1000.0
    start = time.perf_counter()
    try:
        for result in replay_capture(packets, bundle, config, sensors):
            for verdict in result.verdicts:
                record = _verdict_record(result.step_index, capture_name, verdict)
                sink.write(json.dumps(record, separators=(",", ":")) + "\n")
            sink.write(json.dumps({
                "type": "step",
                "step": result.step_index,
                "multi_label": {
                    "cg": result.multi_label.cg,
                    "rt": result.multi_label.rt,
                    "nrt": result.multi_label.nrt,
                },
            }, separators=(",", ":")) + "\n")
            if args.realtime:
                target = (result.step_index + 1) * step_s
                lag = target - (time.perf_counter() - start)
                if lag > 0:
                    time.sleep(lag)
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def _load_predictions(path: Path) -> tuple[list[dict], list[dict]]:
    predictions: list[dict] = []
    steps: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if obj.get("type") == "prediction":
                predictions.append(obj)
            elif obj.get("type") == "step":
                steps.append(obj)
    return predictions, steps


def _sliced_reports(joined: list[tuple[dict, dict]], layer: str,
                    per_congestion: bool) -> list[ev.Report]:
    """One overall report plus one per band (optionally per congestion)."""
    order = LAYER_CLASS_ORDER[layer]
    if layer == LAYER_L1:
        field = "l1"
        scoped = joined
    else:
        field = "l2"
        parent = "RT" if layer == LAYER_L2_RT else "NRT"
        family = L2_RT_CLASSES if layer == LAYER_L2_RT else L2_NRT_CLASSES
        scoped = [(row, rec) for row, rec in joined
                  if row["l1"] == parent and rec.get("l2") in family]
    if not scoped:
        return []

    def pairs_of(rows):
        return [(row[field], rec[field]) for row, rec in rows]

    reports = [ev.score(pairs_of(scoped), order, f"{layer}/all")]
    for band in sorted({row["band"] for row, _ in scoped}):
        rows = [(row, rec) for row, rec in scoped if row["band"] == band]
        reports.append(ev.score(pairs_of(rows), order, f"{layer}/band:{band}"))
    if per_congestion:
        for level in sorted({row["congestion"] for row, _ in scoped}):
            rows = [(row, rec) for row, rec in scoped
                    if row["congestion"] == level]
            reports.append(ev.score(pairs_of(rows), order,
                                    f"{layer}/congestion:{level}"))
    return reports


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        _, manifest_rows = load_manifest(args.manifest)
        predictions, _ = _load_predictions(Path(args.pred))
    except (OSError, ValueError) as exc:
        return _fail(EXIT_DATA, str(exc))

    truth = {(row["capture"], row["conversation_key"]): row
             for row in manifest_rows}
    joined: list[tuple[dict, dict]] = []
    unresolved = 0
    for rec in predictions:
        row = truth.get((rec.get("capture"), rec.get("key")))
        if row is None:
            unresolved += 1
            continue
        joined.append((row, rec))
    if unresolved:
        print(f"warning: {unresolved} predictions had no manifest row",
              file=sys.stderr)
    if not joined:
        return _fail(EXIT_DATA, "no predictions could be matched to the manifest")

    reports: list[ev.Report] = []
    for layer in (LAYER_L1, LAYER_L2_RT, LAYER_L2_NRT):
        reports.extend(_sliced_reports(joined, layer, args.per_congestion))
    for report in reports:
        print(ev.render_report(report))
        print(ev.render_confusion(report))
        print()
    if args.out:
        ev.write_reports(args.out, reports)

    if args.thresholds:
        try:
            limits = json.loads(Path(args.thresholds).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(EXIT_SPEC, f"invalid thresholds file: {exc}")
        overall = {r.slice_name: r for r in reports}
        checks = {
            "l1_accuracy": f"{LAYER_L1}/all",
            "l2_rt_accuracy": f"{LAYER_L2_RT}/all",
            "l2_nrt_accuracy": f"{LAYER_L2_NRT}/all",
        }
        failed = False
        for key, slice_name in checks.items():
            if key not in limits:
                continue
            report = overall.get(slice_name)
            got = report.accuracy if report else 0.0
            if got < float(limits[key]):
                print(f"threshold {key}: {got:.4f} < {limits[key]}",
                      file=sys.stderr)
                failed = True
        if failed:
            return EXIT_THRESHOLD
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svcdetect",
        description="Streaming service-type detection on network captures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a labeled dataset")
    p.add_argument("--spec", required=True, help="dataset spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profiles", default=None, help="profile table JSON override")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one layer's model from a manifest")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--layer", required=True, choices=sorted(_CLI_LAYER))
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--params", default=None, help="training params JSON")
    p.add_argument("--bundle", default=None,
                   help="bundle manifest to create/update with this model")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="stream per-step predictions for a capture")
    p.add_argument("--capture", required=True)
    p.add_argument("--bundle", required=True, help="bundle manifest JSON")
    p.add_argument("--sensors", default=None, help="sensor trace JSONL")
    p.add_argument("--out", default=None, help="prediction stream file (default stdout)")
    p.add_argument("--format", choices=("jsonl", "pcap"), default="jsonl")
    p.add_argument("--realtime", action="store_true",
                   help="pace replay at one step per step_ms of wall clock")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a prediction stream against truth")
    p.add_argument("--pred", required=True, help="prediction stream JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="report JSON file")
    p.add_argument("--thresholds", default=None,
                   help="accuracy floors JSON; unmet floors exit 1")
    p.add_argument("--per-congestion", action="store_true",
                   help="also slice reports per congestion level")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
