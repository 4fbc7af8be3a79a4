"""Command-line pipeline: gen-data, train, plan, experiment, report.

Every command is reproducible from (config, seed): reruns write
byte-identical primary artifacts.  Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dropoutnet, reporting, simlab
from .meshing import Camera, load_mesh_off, save_mesh_off
from .planner import PlanConfig, robust_plan, write_run_artifact
from .voxelgrid import load_cloud_csv, load_grid_npz, save_cloud_csv, save_grid_npz

MANIFEST_NAME = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _load_config_defaults(argv):
    """Pull --config FILE out of argv and return its mapping as defaults."""
    cfg = {}
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            return cfg, argv
        path = Path(argv[idx + 1])
        cfg = json.loads(path.read_text(encoding="utf-8"))
        argv = argv[:idx] + argv[idx + 2 :]
    return cfg, argv


def save_config(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_config(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# dataset (de)serialization
# ---------------------------------------------------------------------------


def write_dataset(split_objects, views, config: simlab.ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    (out / "views").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "shapegrasp-dataset-v1",
        "seed": config.seed,
        "config": {**asdict(config), "splits": list(config.splits), "cam_resolution": list(config.cam_resolution)},
        "splits": {},
    }
    for split in simlab.SPLITS:
        entries = {"objects": [], "views": []}
        for i, obj in enumerate(split_objects[split]):
            grid_rel = f"objects/{split}_{i}.grid.npz"
            mesh_rel = f"objects/{split}_{i}.off"
            if split != "holdout_views":  # holdout_views shares training solids
                save_grid_npz(obj.gt_grid, out / grid_rel)
                save_mesh_off(obj.gt_mesh, out / mesh_rel)
            else:
                grid_rel = f"objects/training_{i}.grid.npz"
                mesh_rel = f"objects/training_{i}.off"
            entries["objects"].append({"spec": obj.spec.to_dict(), "grid": grid_rel, "mesh": mesh_rel})
        for v, view in enumerate(views[split]):
            cloud_rel = f"views/{split}_{v}.cloud.csv"
            save_cloud_csv(view.cloud, out / cloud_rel)
            entries["views"].append(
                {
                    "cloud": cloud_rel,
                    "object_index": view.object_index,
                    "camera": {
                        "position": [float(x) for x in view.camera.position],
                        "look_at": [float(x) for x in view.camera.look_at],
                        "fov": view.camera.fov,
                        "resolution": list(view.camera.resolution),
                    },
                }
            )
        manifest["splits"][split] = entries
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return out / MANIFEST_NAME


def load_dataset(manifest_path):
    """(split_objects, views, manifest) from a gen-data output tree."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read dataset manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != "shapegrasp-dataset-v1":
        raise ValueError(f"{manifest_path}: not a shapegrasp dataset manifest")
    root = manifest_path.parent
    split_objects, views = {}, {}
    for split, entries in manifest["splits"].items():
        objs = []
        for e in entries["objects"]:
            try:
                grid = load_grid_npz(root / e["grid"])
            except Exception as exc:
                raise ValueError(f"corrupt dataset file {root / e['grid']}: {exc}") from exc
            try:
                mesh = load_mesh_off(root / e["mesh"])
            except Exception as exc:
                raise ValueError(f"corrupt dataset file {root / e['mesh']}: {exc}") from exc
            objs.append(simlab.SimObject(simlab.ObjectSpec.from_dict(e["spec"]), mesh, grid))
        split_objects[split] = objs
        vlist = []
        for e in entries["views"]:
            try:
                cloud = load_cloud_csv(root / e["cloud"])
            except Exception as exc:
                raise ValueError(f"corrupt dataset file {root / e['cloud']}: {exc}") from exc
            cam = e["camera"]
            vlist.append(
                simlab.View(
                    cloud,
                    Camera(np.array(cam["position"]), np.array(cam["look_at"]), cam["fov"], tuple(cam["resolution"])),
                    e["object_index"],
                )
            )
        views[split] = vlist
    return split_objects, views, manifest


def _experiment_config_from_args(args, manifest=None) -> simlab.ExperimentConfig:
    base = manifest["config"] if manifest else {}

    def pick(name, fallback):
        v = getattr(args, name, None)
        if v is not None:
            return v
        return base.get(name, fallback)

    return simlab.ExperimentConfig(
        seed=args.seed,
        views_per_split=int(pick("views_per_split", 30)),
        cameras_per_object=int(pick("cameras_per_object", 1)),
        train_cameras_per_object=int(pick("train_cameras_per_object", 4)),
        n_samples=int(pick("n_samples", 10)),
        n_candidates=int(pick("n_candidates", 600)),
        splits=tuple(pick("splits", simlab.SPLITS)),
        mu=float(pick("mu", 0.5)),
        cone_edges=int(pick("cone_edges", 8)),
        gt_resolution=int(pick("gt_resolution", 32)),
        cam_resolution=tuple(pick("cam_resolution", (48, 48))),
        cam_fov=float(pick("cam_fov", np.pi / 3)),
        cam_radius_scale=float(pick("cam_radius_scale", 2.4)),
        padding=float(pick("padding", 0.1)),
        jobs=int(getattr(args, "jobs", 1) or 1),
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _experiment_config_from_args(args)
    split_objects, views = simlab.build_dataset(config)
    manifest = write_dataset(split_objects, views, config, args.out)
    counts = {s: len(views[s]) for s in simlab.SPLITS}
    print(f"wrote dataset to {manifest.parent} (views per split: {counts})")
    return 0


def cmd_train(args) -> int:
    split_objects, views, manifest = load_dataset(Path(args.data) / MANIFEST_NAME if Path(args.data).is_dir() else args.data)
    spec = dropoutnet.default_spec(args.input_dim, args.dropout)
    pairs = simlab.completion_pairs(views["training"], split_objects["training"], args.input_dim)
    init = dropoutnet.load_checkpoint(args.resume) if args.resume else None
    tcfg = dropoutnet.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    losses = []
    params = dropoutnet.train(pairs, spec if init is None else init.spec, tcfg, init=init,
                              loss_hook=lambda e, l: losses.append((e, l)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dropoutnet.save_checkpoint(params, out)
    loss_csv = out.with_name(out.stem + ".loss.csv")
    loss_csv.write_text("epoch,loss\n" + "".join(f"{e},{l:.17g}\n" for e, l in losses), encoding="utf-8")
    print(f"trained {len(pairs)} pairs for {args.epochs} epochs -> {out} (loss log: {loss_csv})")
    return 0


def cmd_plan(args) -> int:
    params = dropoutnet.load_checkpoint(args.checkpoint)
    cloud = load_cloud_csv(args.cloud)
    config = PlanConfig(use_dropout=not args.no_dropout, metric=args.metric, mu=args.mu)
    result = robust_plan(cloud, params, args.samples, args.candidates, config, rng=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run_artifact(result, config, out, top_k=args.top)
    print(f"mode: {result.diagnostics['mode']}  candidates: {result.diagnostics['n_candidates']}")
    for i, (g, score) in enumerate(result.ranking[: args.top]):
        p = g.grasp_point
        print(f"#{i:<3d} mean {args.metric}={score:.5f}  at ({p[0]:+.4f}, {p[1]:+.4f}, {p[2]:+.4f})")
    print(f"artifact: {out}")
    return 0


def cmd_experiment(args) -> int:
    data_path = Path(args.data)
    split_objects, views, manifest = load_dataset(data_path / MANIFEST_NAME if data_path.is_dir() else data_path)
    params = dropoutnet.load_checkpoint(args.checkpoint)
    config = _experiment_config_from_args(args, manifest)
    report = simlab.run_experiment(config, params, (split_objects, views))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    reporting.write_report_json(doc, outdir / "report.json")
    reporting.write_report_table(doc, outdir / "report.txt")
    reporting.write_scores_csv(doc, outdir / "scores.csv")
    print(reporting.format_report_table(doc))
    print(f"report written to {outdir}")
    return 0


def cmd_report(args) -> int:
    doc = reporting.load_report_json(args.report)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    reporting.write_report_table(doc, outdir / "report.txt")
    reporting.write_scores_csv(doc, outdir / "scores.csv")
    figures = reporting.render_figures(doc, outdir)
    if args.loss_log:
        figures.append(reporting.render_loss_figure(args.loss_log, outdir / "training_loss.png"))
    print(f"wrote {outdir / 'report.txt'}, {outdir / 'scores.csv'}, and {len(figures)} figures")
    return 0


def build_parser():
    parser = _Parser(prog="shapegrasp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    def add_seed(p):
        p.add_argument("--seed", type=int, required=True, help="master seed; required, no wall-clock fallback")

    p = commands["gen-data"] = sub.add_parser("gen-data", help="generate synthetic objects and partial views")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.add_argument("--views-per-split", dest="views_per_split", type=int)
    p.add_argument("--cameras-per-object", dest="cameras_per_object", type=int)
    p.add_argument("--train-cameras-per-object", dest="train_cameras_per_object", type=int)
    p.add_argument("--gt-resolution", dest="gt_resolution", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = commands["train"] = sub.add_parser("train", help="train the completion network on a dataset")
    p.add_argument("--data", required=True, help="dataset dir or manifest path")
    p.add_argument("--out", required=True, help="checkpoint .npz path")
    add_seed(p)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--input-dim", dest="input_dim", type=int, default=16)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = commands["plan"] = sub.add_parser("plan", help="rank grasps for one observed cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cloud", required=True, help="cloud CSV path")
    p.add_argument("--out", required=True, help="run artifact JSON path")
    add_seed(p)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--candidates", type=int, default=600)
    p.add_argument("--no-dropout", dest="no_dropout", action="store_true")
    p.add_argument("--metric", choices=("epsilon", "v"), default="epsilon")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_plan)

    p = commands["experiment"] = sub.add_parser("experiment", help="paired ODS-vs-OD comparison with ground-truth scoring")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    add_seed(p)
    p.add_argument("--views", dest="views_per_split", type=int)
    p.add_argument("--samples", dest="n_samples", type=int)
    p.add_argument("--candidates", dest="n_candidates", type=int)
    p.add_argument("--splits", type=lambda s: tuple(s.split(",")))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = commands["report"] = sub.add_parser("report", help="tables, CSV, and figures from a report.json")
    p.add_argument("--report", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--loss-log", dest="loss_log", help="optional training loss CSV to plot")
    p.set_defaults(func=cmd_report)

    return parser, commands


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults, argv = _load_config_defaults(argv)
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"shapegrasp: cannot read config: {exc}\n")
        return 1
    parser, commands = build_parser()
    if defaults:
        for p in commands.values():
            p.set_defaults(**defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:
        sys.stderr.write(f"shapegrasp {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
