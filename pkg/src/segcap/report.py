"""Report rendering: evaluation tables as text + CSV with a companion
figure, training-loss curves from the log CSV, and prediction-file I/O.

Prediction and reference files are line-oriented JSON records
``{video_id, seg_index, caption}``. Annotation files for the agreement
protocol are ``{video_id, annotator, segments: [{start, tag}]}`` records.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataError
from .metrics import EvalReport


def read_predictions(path) -> list[tuple[str, int, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            for fieldname in ("video_id", "seg_index", "caption"):
                if fieldname not in obj:
                    raise DataError(f"{path}:{lineno}: missing field '{fieldname}'")
            out.append((str(obj["video_id"]), int(obj["seg_index"]), str(obj["caption"])))
    return out


def write_predictions(path, records) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for video_id, seg_index, caption in records:
            fh.write(json.dumps({"video_id": video_id, "seg_index": seg_index,
                                 "caption": caption}, sort_keys=True) + "\n")
            n += 1
    return n


def read_annotations(path) -> dict[str, list[list[tuple[str, str]]]]:
    """Annotation sets per video for the agreement protocol."""
    out: dict[str, list[list[tuple[str, str]]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            for fieldname in ("video_id", "annotator", "segments"):
                if fieldname not in obj:
                    raise DataError(f"{path}:{lineno}: missing field '{fieldname}'")
            segs = []
            for seg in obj["segments"]:
                if "start" not in seg or "tag" not in seg:
                    raise DataError(f"{path}:{lineno}: segment entries need 'start' and 'tag'")
                segs.append((str(seg["start"]), str(seg["tag"])))
            out.setdefault(str(obj["video_id"]), []).append(segs)
    return out


# ---------------------------------------------------------------------------
# rendering


def format_report(report: EvalReport, title: str = "evaluation") -> str:
    lines = [title, "-" * len(title),
             f"segments scored: {report.count}", ""]
    width = max(len(name) for name, _ in report.rows())
    for name, value in report.rows():
        lines.append(f"{name:<{width}}  {value:8.2f}")
    lines.append("")
    lines.append("scales: BLEU/ROUGE-L 0-100; CIDEr-D native 0-10 "
                 "(x100 row for percentage-style tables)")
    return "\n".join(lines) + "\n"


def write_eval_report(report: EvalReport, out_dir, stem: str = "eval",
                      title: str = "evaluation") -> dict[str, Path]:
    """Emit {stem}.txt, {stem}.csv, {stem}_segments.csv and {stem}.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    txt = out_dir / f"{stem}.txt"
    txt.write_text(format_report(report, title), encoding="utf-8")
    paths["txt"] = txt

    summary = out_dir / f"{stem}.csv"
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in report.rows():
            writer.writerow([name, f"{value:.6f}"])
        writer.writerow(["segments", report.count])
    paths["csv"] = summary

    per_seg = out_dir / f"{stem}_segments.csv"
    with open(per_seg, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "seg_index", "rouge_l", "cider_d",
                         "candidate", "reference"])
        for seg in report.segments:
            writer.writerow([seg.video_id, seg.seg_index, f"{seg.rouge_l:.4f}",
                             f"{seg.cider_d:.4f}", seg.candidate, seg.reference])
    paths["segments_csv"] = per_seg

    fig_path = out_dir / f"{stem}.png"
    _eval_figure(report, fig_path, title)
    paths["png"] = fig_path
    return paths


def _eval_figure(report: EvalReport, path: Path, title: str) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    names = ["BLEU-1", "BLEU-4", "ROUGE-L", "CIDEr-D(x100)"]
    values = [report.bleu1, report.bleu4, report.rouge_l, report.cider_d_x100]
    axes[0].bar(names, values, color="#4878a8")
    axes[0].set_ylabel("score")
    axes[0].set_title(title)
    axes[0].tick_params(axis="x", rotation=20)
    if report.segments:
        axes[1].hist([s.rouge_l for s in report.segments], bins=20,
                     color="#76a865", edgecolor="black")
    axes[1].set_xlabel("per-segment ROUGE-L")
    axes[1].set_ylabel("segments")
    axes[1].set_title(f"{report.count} segments")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_training_curves(log_csv, out_png) -> Path:
    """Loss per step kind and the learning rate, over global iterations."""
    by_kind: dict[str, tuple[list[int], list[float]]] = {}
    lrs: list[float] = []
    with open(log_csv, newline="", encoding="utf-8") as fh:
        for n, row in enumerate(csv.DictReader(fh)):
            xs, ys = by_kind.setdefault(row["step_kind"], ([], []))
            xs.append(n)
            ys.append(float(row["loss"]))
            lrs.append(float(row["lr"]))
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True,
                                   height_ratios=[3, 1])
    for kind in sorted(by_kind):
        xs, ys = by_kind[kind]
        ax0.plot(xs, ys, label=kind, linewidth=0.9)
    ax0.set_ylabel("loss")
    ax0.legend(loc="upper right", fontsize=8)
    ax0.set_title("training loss")
    ax1.plot(range(len(lrs)), lrs, color="#a85448", linewidth=0.9)
    ax1.set_ylabel("lr")
    ax1.set_xlabel("update")
    fig.tight_layout()
    out_png = Path(out_png)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
