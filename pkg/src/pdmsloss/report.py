"""CSV and PNG output for simulation runs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

HOP_FIELDS = ["run", "peer", "from", "depth", "answers", "recovered", "lossEmpty", "error"]
METRIC_FIELDS = ["countA", "countB", "gained", "lost", "recallA", "recall"]


def write_hops_csv(path, traces: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HOP_FIELDS)
        w.writeheader()
        for label, trace in traces.items():
            for h in trace.hops:
                w.writerow({
                    "run": label, "peer": h.peer, "from": h.parent or "", "depth": h.depth,
                    "answers": len(h.answers), "recovered": h.recovered or "",
                    "lossEmpty": "" if h.loss is None else h.loss.empty, "error": h.error,
                })
    return path


def write_metrics_csv(path, metrics) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        w.writerow({
            "countA": metrics.count_a, "countB": metrics.count_b,
            "gained": len(metrics.gained), "lost": len(metrics.lost),
            "recallA": "" if metrics.recall_a is None else f"{metrics.recall_a:.4f}",
            "recall": "" if metrics.recall_b is None else f"{metrics.recall_b:.4f}",
        })
    return path


def plot_answers(path, traces: dict) -> Path:
    """Grouped bars: answers found at each peer, one group per run."""
    path = Path(path)
    peers = []
    for trace in traces.values():
        for h in trace.hops:
            if h.peer not in peers:
                peers.append(h.peer)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(peers) + 1), 3.2))
    width = 0.8 / max(len(traces), 1)
    for i, (label, trace) in enumerate(traces.items()):
        counts = {h.peer: len(h.answers) for h in trace.hops}
        xs = [k + i * width for k in range(len(peers))]
        ax.bar(xs, [counts.get(p, 0) for p in peers], width, label=f"{label} ({len(trace.origin_answers)} total)")
    ax.set_xticks([k + width * (len(traces) - 1) / 2 for k in range(len(peers))])
    ax.set_xticklabels(peers)
    ax.set_ylabel("answers")
    ax.yaxis.set_major_locator(MaxNLocator(integer=True))
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_report(directory, traces: dict, metrics=None) -> list:
    """Write ``hops.csv``, ``metrics.csv`` (when given) and ``answers.png`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_hops_csv(out / "hops.csv", traces)]
    if metrics is not None:
        paths.append(write_metrics_csv(out / "metrics.csv", metrics))
    paths.append(plot_answers(out / "answers.png", traces))
    return paths
