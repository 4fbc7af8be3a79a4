"""Report files: machine-parsable JSON, human-readable tables, CSV series,
and matplotlib figures rendered alongside the delimited output."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_METHOD_ORDER = ("baseline", "OD", "ODS")


def write_report_json(report_doc: dict, path) -> None:
    Path(path).write_text(json.dumps(report_doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_report_json(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "shapegrasp-report-v1":
        raise ValueError(f"{path}: not a shapegrasp report")
    return doc


def write_scores_csv(report_doc: dict, path) -> None:
    """Per-view ground-truth scores, one row per (view, method)."""
    cols = (
        "split,view,object_kind,method,gt_epsilon,gt_v,force_closure,"
        "plan_score_epsilon,plan_score_v,jaccard,jaccard_baseline"
    )
    lines = [cols]
    for r in report_doc["rows"]:
        lines.append(
            ",".join(
                [
                    r["split"],
                    str(r["view"]),
                    r["object_kind"],
                    r["method"],
                    f"{r['gt_epsilon_of_epsilon_choice']:.17g}",
                    f"{r['gt_v_of_v_choice']:.17g}",
                    str(int(r["gt_force_closure_of_epsilon_choice"])),
                    f"{r['plan_score_epsilon']:.17g}",
                    f"{r['plan_score_v']:.17g}",
                    f"{r['jaccard']:.17g}",
                    f"{r['jaccard_baseline']:.17g}",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def format_report_table(report_doc: dict) -> str:
    """Aligned text summary: quality means, Jaccard, and test results."""
    out = ["== Ground-truth quality of selected grasps =="]
    out.append(f"{'split':<16} {'method':<6} {'mean eps':>10} {'mean v':>10} {'FC rate':>8} {'views':>6}")
    for key in sorted(report_doc["aggregates"]):
        split, method = key.split("|")
        a = report_doc["aggregates"][key]
        out.append(
            f"{split:<16} {method:<6} {a['mean_gt_epsilon']:>10.4f} {a['mean_gt_v']:>10.4f}"
            f" {a['force_closure_rate']:>8.2f} {a['n_views']:>6d}"
        )
    out.append("")
    out.append("== Completion quality (Jaccard vs ground truth) ==")
    out.append(f"{'split':<16} {'method':<9} {'mean J':>8}")
    for key in sorted(report_doc["jaccard"]):
        split, method = key.split("|")
        out.append(f"{split:<16} {method:<9} {report_doc['jaccard'][key]:>8.4f}")
    out.append("")
    out.append("== One-sided Wilcoxon signed-rank (OD < ODS) ==")
    for key in sorted(report_doc["tests"]):
        split, metric = key.split("|")
        t = report_doc["tests"][key]
        if "skipped" in t:
            out.append(f"{split:<16} {metric:<8} skipped: {t['skipped']}")
        else:
            out.append(f"{split:<16} {metric:<8} T={t['T']:<8g} p={t['p']:.4g}  (n={t['n_pairs']})")
    out.append("")
    out.append(f"rows: {report_doc['meta']['row_count']}")
    return "\n".join(out) + "\n"


def write_report_table(report_doc: dict, path) -> None:
    Path(path).write_text(format_report_table(report_doc), encoding="utf-8")


def _split_views(report_doc: dict, split: str):
    rows = [r for r in report_doc["rows"] if r["split"] == split]
    views = sorted({r["view"] for r in rows})
    series = {}
    for method in ("OD", "ODS"):
        by_view = {r["view"]: r["gt_epsilon_of_epsilon_choice"] for r in rows if r["method"] == method}
        series[method] = [by_view.get(v, np.nan) for v in views]
    return views, series


def render_figures(report_doc: dict, outdir) -> list:
    """PNG figures for the report; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    splits = sorted({r["split"] for r in report_doc["rows"]})
    if splits:
        fig, axes = plt.subplots(len(splits), 1, figsize=(8, 2.6 * len(splits)), squeeze=False)
        for ax, split in zip(axes[:, 0], splits):
            views, series = _split_views(report_doc, split)
            x = np.arange(len(views))
            ax.bar(x - 0.2, series["OD"], width=0.4, label="OD", color="#888888")
            ax.bar(x + 0.2, series["ODS"], width=0.4, label="ODS", color="#2266aa")
            ax.set_title(f"{split}: ground-truth epsilon of selected grasp")
            ax.set_xlabel("view")
            ax.set_ylabel("epsilon")
            ax.set_xticks(x)
            ax.set_xticklabels([str(v) for v in views], fontsize=6)
            ax.legend(fontsize=8)
        fig.tight_layout()
        p = outdir / "gt_epsilon_by_view.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

    jac = report_doc["jaccard"]
    if jac:
        fig, ax = plt.subplots(figsize=(7, 3.2))
        labels, values = [], []
        for key in sorted(jac, key=lambda k: (k.split("|")[0], _METHOD_ORDER.index(k.split("|")[1]))):
            labels.append(key.replace("|", "\n"))
            values.append(jac[key])
        ax.bar(np.arange(len(values)), values, color="#44aa77")
        ax.set_xticks(np.arange(len(values)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylabel("mean Jaccard")
        ax.set_title("Completion quality per split")
        fig.tight_layout()
        p = outdir / "jaccard_by_split.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

    return written


def render_loss_figure(loss_csv, out_png) -> Path:
    """Training-loss curve from the per-epoch CSV log."""
    rows = Path(loss_csv).read_text(encoding="utf-8").splitlines()[1:]
    if not rows:
        raise ValueError(f"{loss_csv}: empty loss log")
    data = np.array([[float(tok) for tok in line.split(",")] for line in rows])
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(data[:, 0], data[:, 1], color="#aa4422")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title("Completion network training")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png
