"""Run-report serialization: delimited table, JSON document, figures.

``report.tsv`` and ``report.json`` contain only deterministic fields and
reproduce byte-for-byte for a fixed config and seed; wall-clock timings go
to ``timing.tsv``. The figures render the learning curve (accuracy vs
labeled samples) and the per-round training loss.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from alpool.loop import RunReport

TSV_COLUMNS = ("iteration", "labeled", "ua", "wa", "train_loss", "gradient_steps")


def report_tsv(report: RunReport) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for r in report.records:
        lines.append(
            "\t".join(
                [str(r.iteration), str(r.labeled), repr(r.ua), repr(r.wa),
                 repr(r.train_loss), str(r.gradient_steps)]
            )
        )
    return "\n".join(lines) + "\n"


def timing_tsv(report: RunReport) -> str:
    lines = ["iteration\twall_seconds"]
    for r in report.records:
        lines.append(f"{r.iteration}\t{r.wall_seconds:.6f}")
    return "\n".join(lines) + "\n"


def render_figures(report: RunReport, out_dir: Path) -> list[Path]:
    iterations = [r.iteration for r in report.records]
    labeled = [r.labeled for r in report.records]
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(labeled, [r.ua for r in report.records], marker="o", label="UA")
    ax.plot(labeled, [r.wa for r in report.records], marker="s", label="WA")
    ax.set_xlabel("labeled samples")
    ax.set_ylabel("accuracy")
    ax.set_title(f"learning curve (seed {report.seed})")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    curve = out_dir / "learning_curve.png"
    fig.savefig(curve)
    plt.close(fig)
    paths.append(curve)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iterations, [r.train_loss for r in report.records], marker="o", color="tab:red")
    ax.set_xlabel("round")
    ax.set_ylabel("train loss")
    ax2 = ax.twinx()
    ax2.bar(iterations, [r.gradient_steps for r in report.records],
            alpha=0.25, color="tab:blue")
    ax2.set_ylabel("gradient steps")
    ax.set_title("training cost per round")
    fig.tight_layout()
    loss = out_dir / "training.png"
    fig.savefig(loss)
    plt.close(fig)
    paths.append(loss)
    return paths


def write_report(report: RunReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write report.json, report.tsv, timing.tsv and figures into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    json_path = out / "report.json"
    json_path.write_bytes(report.canonical_bytes() + b"\n")
    files["json"] = json_path
    tsv_path = out / "report.tsv"
    tsv_path.write_text(report_tsv(report))
    files["tsv"] = tsv_path
    timing_path = out / "timing.tsv"
    timing_path.write_text(timing_tsv(report))
    files["timing"] = timing_path
    if figures:
        for figure in render_figures(report, out):
            files[figure.stem] = figure
    return files
