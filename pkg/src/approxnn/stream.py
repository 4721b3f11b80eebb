"""End-to-end adaptive runs over traces: the adaptive pass, a parallel
all-exact baseline pass on the same inputs, and the agreement / cost-proxy
report with its plot-ready timeline.

Relative cost is the MAC ratio (adaptive / baseline), the deterministic
energy proxy; relative wall time is carried alongside as informational and
excluded from persisted reports unless wall timing is requested.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .adapt import ConfigurationLadder, FixedStrategy, Strategy, adapt_loop

REPORT_VERSION = "rep-1"

TIMELINE_FIELDS = (
    "t",
    "rung",
    "config_id",
    "adaptive_pred",
    "baseline_pred",
    "label",
    "confidence",
    "adaptive_macs",
    "baseline_macs",
    "cum_relative_cost",
)


@dataclass
class TimelineRow:
    t: float
    rung: int
    config_id: str
    adaptive_pred: int
    baseline_pred: int
    label: int | None
    confidence: float
    adaptive_macs: int
    baseline_macs: int
    cum_relative_cost: float


@dataclass
class StreamReport:
    strategy: str
    n_events: int
    agreement: float                  # fraction of events matching the baseline prediction
    accuracy: float | None            # adaptive accuracy when the trace is labeled
    baseline_accuracy: float | None
    relative_cost: float              # total adaptive MACs / total baseline MACs
    relative_wall_time: float | None
    rungs: list                       # config ids, mild to aggressive
    timeline: list = field(default_factory=list)

    def to_json_dict(self, include_wall: bool = False):
        return {
            "format_version": REPORT_VERSION,
            "strategy": self.strategy,
            "n_events": self.n_events,
            "agreement": self.agreement,
            "accuracy": self.accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "relative_cost": self.relative_cost,
            "relative_wall_time": self.relative_wall_time if include_wall else None,
            "rungs": list(self.rungs),
            "timeline": [
                {f: getattr(row, f) for f in TIMELINE_FIELDS} for row in self.timeline
            ],
        }

    @classmethod
    def from_json_dict(cls, d):
        if d.get("format_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('format_version')!r}")
        timeline = [
            TimelineRow(
                float(r["t"]),
                int(r["rung"]),
                str(r["config_id"]),
                int(r["adaptive_pred"]),
                int(r["baseline_pred"]),
                None if r["label"] is None else int(r["label"]),
                float(r["confidence"]),
                int(r["adaptive_macs"]),
                int(r["baseline_macs"]),
                float(r["cum_relative_cost"]),
            )
            for r in d["timeline"]
        ]
        return cls(
            d["strategy"],
            int(d["n_events"]),
            float(d["agreement"]),
            None if d["accuracy"] is None else float(d["accuracy"]),
            None if d["baseline_accuracy"] is None else float(d["baseline_accuracy"]),
            float(d["relative_cost"]),
            None if d.get("relative_wall_time") is None else float(d["relative_wall_time"]),
            list(d["rungs"]),
            timeline,
        )


def save_report(report: StreamReport, path, include_wall: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(include_wall=include_wall), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_report(path) -> StreamReport:
    with open(path) as fh:
        return StreamReport.from_json_dict(json.load(fh))


def run_adaptive(graph, ladder: ConfigurationLadder, strategy: Strategy, events,
                 temperature=None) -> StreamReport:
    """Adaptive pass plus an all-exact baseline pass over identical inputs."""
    if not events:
        raise ValueError("empty trace")
    adaptive = adapt_loop(graph, ladder, strategy, events, temperature=temperature)
    baseline = adapt_loop(graph, ladder, FixedStrategy(0), events, temperature=temperature)

    rows = []
    cum_a = cum_b = 0
    matches = 0
    correct_a = correct_b = 0
    labeled = all(e.label is not None for e in events)
    for ev, a, b in zip(events, adaptive, baseline):
        cum_a += a.macs
        cum_b += b.macs
        if a.predicted == b.predicted:
            matches += 1
        if labeled:
            correct_a += a.predicted == ev.label
            correct_b += b.predicted == ev.label
        rows.append(
            TimelineRow(
                t=ev.t,
                rung=a.rung,
                config_id=a.config_id,
                adaptive_pred=a.predicted,
                baseline_pred=b.predicted,
                label=ev.label,
                confidence=a.confidence,
                adaptive_macs=a.macs,
                baseline_macs=b.macs,
                cum_relative_cost=cum_a / cum_b,
            )
        )
    n = len(events)
    wall_a = sum(s.wall_time for s in adaptive)
    wall_b = sum(s.wall_time for s in baseline)
    return StreamReport(
        strategy=strategy.describe(),
        n_events=n,
        agreement=matches / n,
        accuracy=correct_a / n if labeled else None,
        baseline_accuracy=correct_b / n if labeled else None,
        relative_cost=cum_a / cum_b,
        relative_wall_time=(wall_a / wall_b) if wall_b > 0 else None,
        rungs=[c.id for c in ladder.rungs],
        timeline=rows,
    )


# --- rendering ----------------------------------------------------------------

def write_timeline_csv(report: StreamReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMELINE_FIELDS)
        for row in report.timeline:
            writer.writerow(
                [
                    repr(row.t),
                    row.rung,
                    row.config_id,
                    row.adaptive_pred,
                    row.baseline_pred,
                    "" if row.label is None else row.label,
                    repr(row.confidence),
                    row.adaptive_macs,
                    row.baseline_macs,
                    repr(row.cum_relative_cost),
                ]
            )


def read_timeline_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TIMELINE_FIELDS:
            raise ValueError(f"{path}: unexpected timeline header {header}")
        for rec in reader:
            rows.append(
                TimelineRow(
                    float(rec[0]),
                    int(rec[1]),
                    rec[2],
                    int(rec[3]),
                    int(rec[4]),
                    None if rec[5] == "" else int(rec[5]),
                    float(rec[6]),
                    int(rec[7]),
                    int(rec[8]),
                    float(rec[9]),
                )
            )
    return rows


SUMMARY_FIELDS = (
    "report",
    "strategy",
    "n_events",
    "agreement",
    "accuracy",
    "baseline_accuracy",
    "accuracy_drop_pp",
    "relative_cost",
    "relative_wall_time",
)


def write_summary_csv(reports, path) -> None:
    """One row per (name, StreamReport) pair, Table-style."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_FIELDS)
        for name, rep in reports:
            drop = (
                ""
                if rep.accuracy is None or rep.baseline_accuracy is None
                else repr((rep.baseline_accuracy - rep.accuracy) * 100.0)
            )
            writer.writerow(
                [
                    name,
                    rep.strategy,
                    rep.n_events,
                    repr(rep.agreement),
                    "" if rep.accuracy is None else repr(rep.accuracy),
                    "" if rep.baseline_accuracy is None else repr(rep.baseline_accuracy),
                    drop,
                    repr(rep.relative_cost),
                    "" if rep.relative_wall_time is None else repr(rep.relative_wall_time),
                ]
            )


def render_plot(report: StreamReport, path) -> None:
    """Static timeline plot: rung index over time, baseline-mismatch markers,
    and the cumulative cost saving."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = [row.t for row in report.timeline]
    rungs = [row.rung for row in report.timeline]
    savings = [1.0 - row.cum_relative_cost for row in report.timeline]
    mism_t = [row.t for row in report.timeline if row.adaptive_pred != row.baseline_pred]
    mism_r = [row.rung for row in report.timeline if row.adaptive_pred != row.baseline_pred]

    fig, ax = plt.subplots(figsize=(10, 4))
    ax.step(t, rungs, where="post", color="black", linewidth=1.0, label="active rung")
    if mism_t:
        ax.plot(mism_t, mism_r, "rv", markersize=4, label="baseline mismatch")
    ax.set_xlabel("time")
    ax.set_ylabel("rung (higher = more approximate)")
    ax.set_ylim(-0.5, max(len(report.rungs) - 0.5, 0.5))

    ax2 = ax.twinx()
    ax2.plot(t, savings, color="tab:blue", linewidth=1.0, label="cumulative saving")
    ax2.set_ylabel("cumulative MAC saving")
    ax2.set_ylim(0, 1)

    lines1, labels1 = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines1 + lines2, labels1 + labels2, loc="upper left", fontsize=8)
    ax.set_title(
        f"{report.strategy}: agreement {report.agreement:.3f}, relative cost {report.relative_cost:.3f}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": "approxnn"})
    plt.close(fig)
