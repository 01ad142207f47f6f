"""Command-line entry point: synth, train, eval, ablate, bench, graph.

Every run writes a manifest (resolved config, seeds, input digests,
artifact paths) into its output directory; re-running with the same
flags and seed reproduces the artifacts bit for bit in float64 mode
(timing reports excepted: wall-clock measurements vary by nature).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, EventMixerError, NumericError
from .events import (
    MotionSpec,
    SceneConfig,
    SceneObject,
    SensorGeometry,
    US_PER_MS,
    load_scene_config,
    parse_event_file,
    serialize_events,
    synth_scene,
    window_events,
)
from .graph import build_graph, dump_graph, knn
from .model import ModelConfig, count_parameters, init_model, named_parameters
from .autodiff import set_default_dtype
from .checkpoint import load_checkpoint, save_checkpoint
from .training import (
    K_SET_SERIES,
    TrainConfig,
    ablate_ccm,
    ablation_table,
    bench_timing,
    evaluate,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs: list[Path], artifacts: list[Path]) -> None:
    manifest = {
        "tool": "eventmixer",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "artifacts": [str(p) for p in artifacts],
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _geometry(args) -> SensorGeometry:
    return SensorGeometry(args.width, args.height)


def _load_graphs(args, require_labels: bool):
    geometry = _geometry(args)
    events = parse_event_file(args.events, geometry, has_header=args.has_header)
    if not events:
        raise DataError(f"no events in {args.events}")
    windows = window_events(
        events,
        duration_us=int(args.window_ms * US_PER_MS),
        n_max=args.n_max,
        stride_us=int(args.stride_ms * US_PER_MS) if args.stride_ms is not None else None,
    )
    graphs = [build_graph(w, geometry) for w in windows if len(w)]
    if not graphs:
        raise DataError("no non-empty windows")
    if require_labels and any(g.labels is None for g in graphs):
        raise DataError("training/evaluation needs labeled events (5-column file)")
    return graphs


def _default_objects(geometry: SensorGeometry, count: int) -> tuple[SceneObject, ...]:
    objects = []
    for i in range(count):
        cls = i + 1
        cx = geometry.width * (0.25 + 0.5 * ((i + 0.5) / count))
        cy = geometry.height * (0.35 + 0.3 * (i % 2))
        if i % 2 == 0:
            objects.append(SceneObject("disc", cls, (cx, cy), radius=geometry.height * 0.12))
        else:
            w = geometry.width * 0.15
            objects.append(SceneObject("rect", cls, (cx, cy), size=(w, w * 0.7)))
    return tuple(objects)


_SCENE_FLAG_DEFAULTS = {
    "objects": 2,
    "motion": "rotational",
    "speed": 0.6,
    "duration_ms": 1000.0,
    "rate": 20000.0,
    "noise_rate": 0.0,
}


def _resolve_scene(args) -> SceneConfig:
    """Build the scene from --scene (if given) with explicit flags winning."""
    geometry = _geometry(args)

    def flag(name: str, fallback):
        v = getattr(args, name)
        return fallback if v is None else v

    if args.scene:
        base = load_scene_config(args.scene)
        return SceneConfig(
            geometry=geometry,
            duration_ms=flag("duration_ms", base.duration_ms),
            event_rate=flag("rate", base.event_rate),
            noise_rate=flag("noise_rate", base.noise_rate),
            motion=MotionSpec(
                kind=flag("motion", base.motion.kind),
                speed=flag("speed", base.motion.speed),
                direction_deg=base.motion.direction_deg,
                max_angle=base.motion.max_angle,
            ),
            objects=base.objects,
        )
    d = _SCENE_FLAG_DEFAULTS
    return SceneConfig(
        geometry=geometry,
        duration_ms=flag("duration_ms", d["duration_ms"]),
        event_rate=flag("rate", d["rate"]),
        noise_rate=flag("noise_rate", d["noise_rate"]),
        motion=MotionSpec(kind=flag("motion", d["motion"]), speed=flag("speed", d["speed"])),
        objects=_default_objects(geometry, flag("objects", d["objects"])),
    )


def cmd_synth(args) -> int:
    out = _out_dir(args)
    scene = _resolve_scene(args)
    inputs = [Path(args.scene)] if args.scene else []
    events = synth_scene(scene, args.seed)
    path = out / "events.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# x,y,t_us,polarity,label\n")
        fh.write(serialize_events(events))
    labels = np.array([e.label for e in events], dtype=np.int64)
    counts = np.bincount(labels) if len(labels) else np.zeros(1, dtype=np.int64)
    print(f"wrote {len(events)} events to {path}")
    for cls, count in enumerate(counts):
        if count:
            print(f"class {cls}: {count} events")
    _write_manifest(out, "synth", args, inputs, [path])
    return EXIT_OK


def _model_config_from_args(args) -> ModelConfig:
    if args.model_config:
        doc = ModelConfig.load(args.model_config).to_dict()
    else:
        doc = ModelConfig().to_dict()
    if args.classes is not None:
        doc["n_classes"] = args.classes
    if args.widths is not None:
        doc["widths"] = [int(w) for w in args.widths.split(",")]
    if args.k_set is not None:
        doc["k_set"] = [int(k) for k in args.k_set.split(",")]
        doc.pop("level_weights", None)  # re-derive for the new level count
    doc["seed"] = args.seed
    return ModelConfig.from_dict(doc)


def cmd_train(args) -> int:
    out = _out_dir(args)
    graphs = _load_graphs(args, require_labels=True)
    max_label = max(int(g.labels.max()) for g in graphs)
    cfg = _model_config_from_args(args)
    if args.classes is None and args.model_config is None and max_label >= cfg.n_classes:
        cfg.n_classes = max_label + 1
        cfg = ModelConfig.from_dict(cfg.to_dict())
    model = init_model(cfg)
    tc = TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        batch_size=args.batch,
        subsets=args.subsets,
        iterations=args.iterations,
        seed=args.seed,
    )
    result = train(model, graphs, tc)

    cfg_path = out / "model_config.json"
    cfg.save(cfg_path)
    ckpt_path = out / "checkpoint.bin"
    save_checkpoint(
        ckpt_path, {k: v.value for k, v in named_parameters(model).items()}, cfg.digest()
    )
    curve_path = out / "loss_curve.txt"
    with open(curve_path, "w", encoding="utf-8") as fh:
        for it, loss in result.losses:
            fh.write(f"{it} {loss:.10f}\n")
    print(f"trained {count_parameters(model)} parameters over {tc.iterations} iterations")
    print(f"final loss {result.losses[-1][1]:.6f}")
    _write_manifest(out, "train", args, [Path(args.events)], [cfg_path, ckpt_path, curve_path])
    return EXIT_OK


def _load_model(args):
    cfg = ModelConfig.load(args.model_config)
    digest, values = load_checkpoint(args.checkpoint)
    if digest != cfg.digest():
        raise ConfigError("checkpoint digest does not match model config")
    model = init_model(cfg)
    params = named_parameters(model)
    if set(params) != set(values):
        raise DataError("checkpoint parameter names do not match the model")
    for name, var in params.items():
        if values[name].shape != var.value.shape:
            raise DataError(f"checkpoint blob {name} has shape {values[name].shape}")
        var.value = values[name].astype(var.value.dtype)
    return model


def cmd_eval(args) -> int:
    out = _out_dir(args)
    graphs = _load_graphs(args, require_labels=True)
    model = _load_model(args)
    radius = args.boundary_radius_px / args.width
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    report = evaluate(model, graphs, boundary_radius=radius, workers=workers)
    json_path = out / "metrics.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    text_path = out / "metrics.txt"
    text = report.to_text()
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    _write_manifest(
        out, "eval", args,
        [Path(args.events), Path(args.checkpoint), Path(args.model_config)],
        [json_path, text_path],
    )
    return EXIT_OK


def _parse_layers(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in spec.split(",") if v]


def cmd_ablate(args) -> int:
    out = _out_dir(args)
    graphs = _load_graphs(args, require_labels=True)
    max_label = max(int(g.labels.max()) for g in graphs)
    base = ModelConfig(
        n_classes=max(2, max_label + 1),
        widths=tuple(int(w) for w in args.widths.split(",")),
        seed=args.seed,
    )
    layer_counts = _parse_layers(args.layers) if args.layers else None
    if args.k_sets == "table":
        k_sets = dict(K_SET_SERIES)
    elif args.k_sets:
        k_sets = {
            f"set-{i + 1}": tuple(int(k) for k in chunk.split(","))
            for i, chunk in enumerate(args.k_sets.split(";"))
        }
    else:
        k_sets = None
    if args.layers and not args.k_sets:
        k_sets = {}
    if args.k_sets and not args.layers:
        layer_counts = []
    rows = ablate_ccm(
        base, graphs, layer_counts=layer_counts, k_sets=k_sets,
        train_cfg=TrainConfig(iterations=args.iterations, seed=args.seed),
    )
    json_path = out / "ablation.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    table = ablation_table(rows)
    table_path = out / "ablation.txt"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    _write_manifest(out, "ablate", args, [Path(args.events)], [json_path, table_path])
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _out_dir(args)
    if bool(args.checkpoint) != bool(args.model_config):
        raise ConfigError("--checkpoint and --model-config must be given together")
    if args.precision:
        set_default_dtype(args.precision)
    try:
        return _run_bench(args, out)
    finally:
        if args.precision:
            set_default_dtype("f64")


def _run_bench(args, out: Path) -> int:
    geometry = _geometry(args)
    scene = _resolve_scene(args)
    events = synth_scene(scene, args.seed)
    windows = window_events(
        events, duration_us=int(args.graph_ms * US_PER_MS), n_max=args.n_max
    )
    graphs = [build_graph(w, geometry) for w in windows if len(w)]
    if len(graphs) < args.graphs:
        raise DataError(
            f"scene produced {len(graphs)} non-empty windows, need {args.graphs}; "
            "raise --rate or --duration-ms"
        )
    graphs = graphs[: args.graphs]
    if args.checkpoint and args.model_config:
        model = _load_model(args)
    else:
        cfg = ModelConfig(widths=tuple(int(w) for w in args.widths.split(",")), seed=args.seed)
        model = init_model(cfg)
    report = bench_timing(model, graphs, repeats=args.repeats)
    json_path = out / "timing.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    text = report.to_text()
    text_path = out / "timing.txt"
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    _write_manifest(out, "bench", args, [], [json_path, text_path])
    return EXIT_OK


def cmd_graph(args) -> int:
    out = _out_dir(args)
    graphs = _load_graphs(args, require_labels=False)
    if not 0 <= args.window < len(graphs):
        raise DataError(f"window {args.window} outside 0..{len(graphs) - 1}")
    graph = graphs[args.window]
    maps = [knn(graph, int(k)) for k in args.k.split(",")]
    text = dump_graph(graph, maps)
    path = out / "graph.txt"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    _write_manifest(out, "graph", args, [Path(args.events)], [path])
    return EXIT_OK


def _add_window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-ms", type=float, default=100.0, help="window duration (ms)")
    p.add_argument("--n-max", type=int, default=10000, help="max events kept per window")
    p.add_argument("--stride-ms", type=float, default=None, help="window stride (ms); default = window")
    p.add_argument("--has-header", action="store_true", help="skip one header line")


def _add_geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=346, help="sensor width in pixels")
    p.add_argument("--height", type=int, default=260, help="sensor height in pixels")


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    # None means "not given"; explicit flags override a --scene file
    p.add_argument("--objects", type=int, default=None, help="number of scene objects [2]")
    p.add_argument("--motion", choices=("linear", "rotational", "partial_rotational"),
                   default=None, help="camera motion kind [rotational]")
    p.add_argument("--speed", type=float, default=None, help="motion speed, px/s or rad/s [0.6]")
    p.add_argument("--duration-ms", type=float, default=None, help="scene duration (ms) [1000]")
    p.add_argument("--rate", type=float, default=None, help="contour events per second [20000]")
    p.add_argument("--noise-rate", type=float, default=None, help="background events per second [0]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventmixer", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic event stream")
    _add_geometry_flags(p)
    _add_scene_flags(p)
    p.add_argument("--scene", help="scene config JSON; explicit flags override its values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out-synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a labeled event file")
    p.add_argument("--events", required=True, help="event file (5-column, labeled)")
    _add_geometry_flags(p)
    _add_window_flags(p)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0001)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--subsets", type=int, default=1, help="subset count L of the training scheme")
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-config", help="model config JSON to start from")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--widths", default=None, help="comma-separated stage widths")
    p.add_argument("--k-set", default=None, help="comma-separated kNN levels")
    p.add_argument("--out", default="out-train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled event file")
    p.add_argument("--events", required=True)
    _add_geometry_flags(p)
    _add_window_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--boundary-radius-px", type=float, default=2.0,
                   help="boundary radius in pixels (x-axis scale)")
    p.add_argument("--workers", type=int, default=0,
                   help="parallel evaluation workers; 0 = all cores")
    p.add_argument("--out", default="out-eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep mixing-layer configurations")
    p.add_argument("--events", required=True)
    _add_geometry_flags(p)
    _add_window_flags(p)
    p.add_argument("--layers", default=None, help="layer counts, e.g. 1..7 or 1,4,7")
    p.add_argument("--k-sets", default=None,
                   help='"table" for the standard five, or e.g. "3,3,9,12;8,16,24,32"')
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--widths", default="8,16,24,32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out-ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="sequential vs batch forward timing")
    _add_geometry_flags(p)
    _add_scene_flags(p)
    p.add_argument("--scene", help="scene config JSON for the timing stream")
    p.add_argument("--graphs", type=int, default=40, help="number of event graphs")
    p.add_argument("--graph-ms", type=float, default=10.0, help="window duration per graph (ms)")
    p.add_argument("--n-max", type=int, default=10000)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--precision", choices=("f64", "f32"), default=None,
                   help="compute dtype for the timing run")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--model-config", default=None)
    p.add_argument("--widths", default="8,16,24,32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out-bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("graph", help="dump one window's graph nodes and kNN rows")
    p.add_argument("--events", required=True)
    _add_geometry_flags(p)
    _add_window_flags(p)
    p.add_argument("--window", type=int, default=0, help="window index to dump")
    p.add_argument("--k", default="16", help="comma-separated k values to dump")
    p.add_argument("--out", default="out-graph")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EventMixerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
