"""Command-line operator surface.

Subcommands tie the pipeline together end to end::

    lanetrace simulate  --out scene_dir          # synthesize a scene
    lanetrace trace     scene_dir --predictor oracle|walker|external
    lanetrace sample    scene_dir --out dataset  # expert training data
    lanetrace eval      pred.txt gt.txt          # six-score report
    lanetrace baseline  scene_dir                # skeletonization pipeline
    lanetrace render    --scene scene_dir --graph trace.txt --out map.png

Configuration comes from an optional YAML file (``--config``), overridden
field by field with repeatable ``--set section.key=value`` flags; flags win
over the file, unknown keys are hard errors. ``LANETRACE_OUT`` sets the
default output root. Exit codes: 0 success, 1 validation error, 2 runtime
error, 3 predictor-protocol error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

import numpy as np
import yaml

from .fusion import FusionConfig, accumulate_world, world_spec_for
from .geometry import GridSpec, load_graph, save_graph, graph_to_text
from .metrics import MetricConfig, MetricReport, evaluate
from .predictors import LabelConfig, OraclePredictor, PredictorError, WalkerPredictor
from .simulate import (
    NoiseConfig,
    Scene,
    SceneConfig,
    generate_scene,
    load_scene,
    rasterize_scene,
    save_scene,
)
from .tracer import AgentConfig, trace_sequence
from .vectorize import VectorizeConfig, baseline_pipeline

_SECTIONS = {
    "scene": SceneConfig,
    "noise": NoiseConfig,
    "grid": GridSpec,
    "fusion": FusionConfig,
    "agent": AgentConfig,
    "label": LabelConfig,
    "metric": MetricConfig,
    "vectorize": VectorizeConfig,
}


class ConfigError(ValueError):
    pass


def _coerce(value):
    return yaml.safe_load(value) if isinstance(value, str) else value


def build_configs(config_path=None, overrides=()):
    """Merge YAML file and command-line overrides into config objects."""
    raw = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        raw.setdefault(section, {})[key] = _coerce(value)

    known = set(_SECTIONS) | {"seed", "predictor"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    settings = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        fields = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - fields
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)} "
                              f"(expected a subset of {sorted(fields)})")
        settings[name] = dict(section)
    # nested scene pieces
    if settings["noise"]:
        settings["scene"]["noise"] = NoiseConfig(**settings["noise"])
    if settings["grid"]:
        settings["scene"]["grid"] = GridSpec(**settings["grid"])
    if "seed" in raw:
        settings["scene"].setdefault("seed", int(raw["seed"]))
    try:
        out = {name: _SECTIONS[name](**settings[name])
               for name in _SECTIONS if name not in ("noise", "grid")}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out["seed"] = int(raw.get("seed", settings["scene"].get("seed", 0)))
    out["predictor"] = raw.get("predictor", {}) or {}
    if not isinstance(out["predictor"], dict):
        raise ConfigError("predictor section must be a mapping")
    return out


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_root(args):
    return getattr(args, "out", None) or os.environ.get("LANETRACE_OUT", ".")


def _make_predictor(kind, cfgs, gt_graph=None, external_cmd=None):
    agent = cfgs["agent"]
    if kind == "oracle":
        if gt_graph is None:
            raise ConfigError("the oracle predictor needs a scene ground truth")
        return OraclePredictor(gt_graph, cfgs["label"],
                               roi_size=agent.roi_size, n_max=agent.n_max)
    if kind == "walker":
        return WalkerPredictor(step_px=cfgs["label"].step_px,
                               theta_peak=agent.theta_peak,
                               n_max=agent.n_max)
    if kind == "external":
        if not external_cmd:
            raise ConfigError("external predictor needs --external-cmd")
        from .protocol import ExternalPredictor

        n_features = 2  # fused feature channels; history is appended
        return ExternalPredictor(
            external_cmd.split(), roi_channels=n_features + 1,
            roi_size=agent.roi_size, n_max=agent.n_max,
            theta_valid=agent.theta_valid,
            timeout=float(cfgs["predictor"].get("timeout", 5.0)))
    raise ConfigError(f"unknown predictor {kind!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _simulate_one(payload):
    scene_cfg, out_dir = payload
    scene = generate_scene(scene_cfg)
    frames = rasterize_scene(scene)
    save_scene(out_dir, scene, frames)
    return out_dir


def cmd_simulate(args):
    cfgs = build_configs(args.config, args.set or [])
    base = dataclasses.asdict(cfgs["scene"])
    base["noise"] = cfgs["scene"].noise
    base["grid"] = cfgs["scene"].grid
    root = _out_root(args)
    jobs = []
    for k in range(args.count):
        cfg = SceneConfig(**{**base, "seed": cfgs["seed"] + k})
        out_dir = root if args.count == 1 else os.path.join(
            root, f"scene_{cfg.seed:04d}")
        jobs.append((cfg, out_dir))
    if args.workers > 1 and len(jobs) > 1:
        import multiprocessing

        with multiprocessing.Pool(args.workers) as pool:
            for out_dir in pool.imap_unordered(_simulate_one, jobs):
                print(f"wrote {out_dir}")
    else:
        for job in jobs:
            print(f"wrote {_simulate_one(job)}")
    return 0


def cmd_trace(args):
    cfgs = build_configs(args.config, args.set or [])
    graph, poses, frames = load_scene(args.scene)
    predictor = _make_predictor(args.predictor, cfgs, gt_graph=graph,
                                external_cmd=args.external_cmd)
    try:
        result = trace_sequence(frames, predictor, cfgs["agent"],
                                cfgs["fusion"], seed=cfgs["seed"])
    finally:
        predictor.close()
    out = args.out or os.path.join(args.scene, "trace.txt")
    _atomic_write_text(out, graph_to_text(result.graph))
    diag_path = args.diagnostics or os.path.join(args.scene,
                                                 "trace_diagnostics.json")
    _atomic_write_text(diag_path, json.dumps(result.diagnostics, indent=2,
                                             sort_keys=True) + "\n")
    totals = result.diagnostics["totals"]
    print(f"traced {result.graph.n_vertices} vertices / "
          f"{result.graph.n_edges} edges in {totals['steps']} steps "
          f"({totals['predictor_errors']} predictor errors) -> {out}")
    return 0


def cmd_sample(args):
    cfgs = build_configs(args.config, args.set or [])
    graph, poses, frames = load_scene(args.scene)
    scene = Scene(graph, poses, cfgs["scene"])
    from .sampling import coverage_audit, sample_scene, write_dataset

    samples, _ = sample_scene(scene, frames, cfgs["label"], cfgs["agent"],
                              cfgs["fusion"], seed=cfgs["seed"],
                              scene_id=os.path.basename(args.scene.rstrip("/")))
    out = args.out or os.path.join(args.scene, "dataset")
    write_dataset(out, samples)
    audit = coverage_audit(samples, scene, cfgs["label"])
    print(f"wrote {len(samples)} samples -> {out} "
          f"(truth coverage {audit:.3f})")
    return 0


def _eval_pairs(pred_path, gt_path):
    if os.path.isdir(pred_path) and os.path.isdir(gt_path):
        names = sorted(
            n for n in os.listdir(pred_path)
            if n.endswith(".txt") and os.path.exists(os.path.join(gt_path, n)))
        if not names:
            raise ConfigError("no matching graph files between directories")
        return [(n, os.path.join(pred_path, n), os.path.join(gt_path, n))
                for n in names]
    return [(os.path.basename(pred_path), pred_path, gt_path)]


def cmd_eval(args):
    cfgs = build_configs(args.config, args.set or [])
    rows = []
    reports = []
    for name, pred_path, gt_path in _eval_pairs(args.pred, args.gt):
        report = evaluate(load_graph(pred_path), load_graph(gt_path),
                          cfgs["metric"])
        reports.append(report)
        rows.append(report.to_row(args.name or name))
        print(f"== {name}")
        print(report.to_text())
    if len(reports) > 1:
        mean = [float(np.mean([r.scores()[i] for r in reports]))
                for i in range(6)]
        mean_report = MetricReport(*mean,
                                   n_pred=sum(r.n_pred for r in reports),
                                   n_gt=sum(r.n_gt for r in reports),
                                   config=cfgs["metric"])
        rows.append(mean_report.to_row("mean"))
        print("== mean")
        print(mean_report.to_text())
    if args.table:
        header = not os.path.exists(args.table)
        with open(args.table, "a", encoding="utf-8") as f:
            if header:
                f.write(MetricReport.row_header() + "\n")
            for row in rows:
                f.write(row + "\n")
    return 0


def cmd_baseline(args):
    cfgs = build_configs(args.config, args.set or [])
    _, _, frames = load_scene(args.scene)
    graph, _ = baseline_pipeline(frames, cfgs["vectorize"])
    out = args.out or os.path.join(args.scene, "baseline.txt")
    _atomic_write_text(out, graph_to_text(graph))
    print(f"baseline graph: {graph.n_vertices} vertices / "
          f"{graph.n_edges} edges -> {out}")
    return 0


def cmd_render(args):
    from .render import render_map

    graphs = []
    underlay = None
    world_spec = None
    if args.scene:
        gt, poses, frames = load_scene(args.scene)
        world_spec = world_spec_for([f.pose for f in frames], frames[0].spec)
        channels, _ = accumulate_world(frames, world_spec)
        underlay = channels[0]
        if args.gt:
            graphs.append((gt, {"color": "0.45", "linewidth": 1.0,
                                "label": "ground truth"}))
    for path in args.graph or []:
        graphs.append((load_graph(path), {"linewidth": 1.8}))
    if not graphs and underlay is None:
        raise ConfigError("nothing to render: give --scene and/or --graph")
    render_map(args.out, graphs, underlay, world_spec, title=args.title)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------

def _config_epilog():
    lines = ["configurable fields (set via --set section.key=value):"]
    for name, cls in _SECTIONS.items():
        fields = ", ".join(f.name for f in dataclasses.fields(cls))
        lines.append(f"  {name}: {fields}")
    lines.append("  predictor: timeout")
    lines.append("  seed: master random seed")
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lanetrace",
        description="Iterative lane-centerline graph tracing toolkit",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config field (repeatable)")

    p = sub.add_parser("simulate", help="synthesize scene directories")
    common(p)
    p.add_argument("--out", help="output directory (default $LANETRACE_OUT)")
    p.add_argument("--count", type=int, default=1,
                   help="number of scenes (seeds seed..seed+count-1)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel scene workers")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("trace", help="run the tracing agent over a scene")
    common(p)
    p.add_argument("scene", help="scene directory")
    p.add_argument("--predictor", default="oracle",
                   choices=["oracle", "walker", "external"])
    p.add_argument("--external-cmd", help="external predictor command line")
    p.add_argument("--out", help="output graph file (default scene/trace.txt)")
    p.add_argument("--diagnostics", help="diagnostics JSON path")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("sample", help="generate expert training data")
    common(p)
    p.add_argument("scene", help="scene directory")
    p.add_argument("--out", help="dataset directory (default scene/dataset)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a prediction against ground truth")
    common(p)
    p.add_argument("pred", help="predicted graph file or directory")
    p.add_argument("gt", help="ground-truth graph file or directory")
    p.add_argument("--table", help="append TSV rows to this results table")
    p.add_argument("--name", help="row name (default: file name)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="skeletonization baseline pipeline")
    common(p)
    p.add_argument("scene", help="scene directory")
    p.add_argument("--out", help="output graph file (default scene/baseline.txt)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("render", help="draw graphs and heatmaps to an image")
    p.add_argument("--scene", help="scene directory for the heatmap underlay")
    p.add_argument("--graph", action="append",
                   help="graph file to overlay (repeatable)")
    p.add_argument("--gt", action="store_true",
                   help="also draw the scene's ground truth")
    p.add_argument("--title")
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PredictorError as exc:
        print(f"predictor protocol error: {exc}", file=sys.stderr)
        return 3
    except (OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
