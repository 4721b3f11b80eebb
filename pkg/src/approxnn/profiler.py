"""Measure each candidate configuration on the test set: accuracy, speedup,
MAC cost ratio, and per-class confidence statistics for correct and incorrect
predictions.

Timing modes: "wall" stores real wall-clock batch times (honest but
non-reproducible across runs); "proxy" (the default used by the CLI) derives
the stored speedup from the deterministic MAC ratio so profiled configuration
files are bit-reproducible. Raw wall times are returned either way on the
in-memory records, but only written to disk in wall mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .executor import run_batch
from .graph import Configuration
from .ops import softmax_t


@dataclass
class ClassConfidence:
    """Mean calibrated confidence of predictions of one class, split by
    correctness. Cells with no samples stay None (absent, not zero)."""

    correct_mean: float | None = None
    correct_count: int = 0
    incorrect_mean: float | None = None
    incorrect_count: int = 0


@dataclass
class ProfileRecord:
    qos_loss: float               # percentage points vs the profiled baseline
    speedup: float                # baseline batch time / config batch time
    cost_ratio: float             # config MACs / baseline MACs
    accuracy: float
    temperature: float
    per_class: dict = field(default_factory=dict)  # predicted class -> ClassConfidence
    batch_time: float | None = None  # mean seconds per batch; informational

    def to_json_dict(self, include_wall: bool = True):
        d = {
            "qos_loss": self.qos_loss,
            "speedup": self.speedup,
            "cost_ratio": self.cost_ratio,
            "accuracy": self.accuracy,
            "temperature": self.temperature,
            "per_class": {
                str(c): {
                    "correct_mean": s.correct_mean,
                    "correct_count": s.correct_count,
                    "incorrect_mean": s.incorrect_mean,
                    "incorrect_count": s.incorrect_count,
                }
                for c, s in sorted(self.per_class.items())
            },
        }
        if include_wall and self.batch_time is not None:
            d["batch_time"] = self.batch_time
        return d

    @classmethod
    def from_json_dict(cls, d):
        per_class = {
            int(c): ClassConfidence(
                s.get("correct_mean"),
                int(s.get("correct_count", 0)),
                s.get("incorrect_mean"),
                int(s.get("incorrect_count", 0)),
            )
            for c, s in d.get("per_class", {}).items()
        }
        return cls(
            float(d["qos_loss"]),
            float(d["speedup"]),
            float(d["cost_ratio"]),
            float(d["accuracy"]),
            float(d["temperature"]),
            per_class,
            d.get("batch_time"),
        )


@dataclass
class ProfileResult:
    configs: list                 # Configurations with ProfileRecord attached
    logits: dict                  # config id -> [M, classes] float32 logits
    labels: np.ndarray            # [M] labels for the profiled samples


@dataclass
class OrderCheck:
    tau_predicted: float | None   # predicted-speedup order vs measured order
    tau_cost: float | None        # MAC-ratio order vs measured order
    outliers: list                # config ids dominated in measured space


def confidence_stats(logits, labels, temperature: float):
    """Per predicted class: mean tempered-softmax confidence over correct and
    incorrect predictions."""
    probs = softmax_t(np.asarray(logits), temperature)
    if probs.ndim == 1:
        probs = probs[None]
    predicted = np.argmax(np.asarray(logits), axis=1)
    conf = probs[np.arange(probs.shape[0]), predicted]
    labels = np.asarray(labels)
    stats = {}
    for cls in np.unique(predicted):
        mask = predicted == cls
        correct = mask & (labels == cls)
        wrong = mask & (labels != cls)
        stats[int(cls)] = ClassConfidence(
            float(conf[correct].mean()) if correct.any() else None,
            int(correct.sum()),
            float(conf[wrong].mean()) if wrong.any() else None,
            int(wrong.sum()),
        )
    return stats


def _batches(n, batch_size):
    """Fixed-size batch index ranges; the remainder is dropped to keep batch
    timings uniform."""
    n_batches = n // batch_size
    if n_batches == 0:
        raise ValueError(f"test set of {n} samples smaller than batch size {batch_size}")
    return [(i * batch_size, (i + 1) * batch_size) for i in range(n_batches)]


def profile(graph, configs, inputs, labels, batch_size: int, temperature: float = 1.0,
            timing: str = "proxy") -> ProfileResult:
    """Run every configuration over the labeled test set in fixed-size batches
    and attach a ProfileRecord to each. The all-exact baseline is profiled in
    the same session (it is added if missing) and anchors qos_loss, speedup,
    and cost_ratio."""
    if timing not in ("proxy", "wall"):
        raise ValueError(f"timing must be 'proxy' or 'wall', got {timing!r}")
    if labels is None or len(labels) == 0:
        raise ValueError("profiling needs a labeled test set")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    inputs = np.asarray(inputs)
    labels = np.asarray(labels)
    spans = _batches(inputs.shape[0], batch_size)
    used = spans[-1][1]

    configs = list(configs)
    if not any(c.is_baseline() for c in configs):
        configs.insert(0, graph.baseline_config())

    raw = {}
    logits_map = {}
    for config in configs:
        total_correct = 0
        total_macs = 0
        times = []
        chunks = []
        for lo, hi in spans:
            batch = run_batch(graph, config, inputs[lo:hi], labels[lo:hi], temperature=temperature)
            total_correct += int(np.sum(batch.result.predicted == labels[lo:hi]))
            total_macs += batch.result.cost.macs
            times.append(batch.result.wall_time)
            chunks.append(batch.result.logits)
        raw[config.id] = {
            "accuracy": total_correct / used,
            "macs": total_macs,
            "batch_time": sum(times) / len(times),
        }
        logits_map[config.id] = np.concatenate(chunks, axis=0)

    baseline_id = next(c.id for c in configs if c.is_baseline())
    base = raw[baseline_id]
    out = []
    for config in configs:
        r = raw[config.id]
        cost_ratio = r["macs"] / base["macs"]
        if timing == "wall":
            speedup = base["batch_time"] / r["batch_time"]
        else:
            speedup = base["macs"] / r["macs"]
        record = ProfileRecord(
            qos_loss=(base["accuracy"] - r["accuracy"]) * 100.0,
            speedup=speedup,
            cost_ratio=cost_ratio,
            accuracy=r["accuracy"],
            temperature=float(temperature),
            per_class=confidence_stats(logits_map[config.id], labels[:used], temperature),
            batch_time=r["batch_time"] if timing == "wall" else None,
        )
        out.append(Configuration(config.id, dict(config.knobs), config.predicted, record, config.outlier))

    result = ProfileResult(out, logits_map, labels[:used].copy())
    check = reprofile_order_check(out) if len(out) >= 2 else OrderCheck(None, None, [])
    flagged = set(check.outliers)
    for c in out:
        c.outlier = c.id in flagged
    return result


def kendall_tau(a, b) -> float:
    """Tie-adjusted (tau-b) rank correlation between two equal-length value
    sequences."""
    n = len(a)
    if n != len(b) or n < 2:
        raise ValueError("kendall_tau needs two sequences of equal length >= 2")
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = np.sign(a[i] - a[j])
            db = np.sign(b[i] - b[j])
            if da == 0 and db == 0:
                ties_a += 1
                ties_b += 1
            elif da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif da == db:
                concordant += 1
            else:
                discordant += 1
    pairs = n * (n - 1) / 2
    denom = np.sqrt((pairs - ties_a) * (pairs - ties_b))
    if denom == 0:
        return 0.0
    return float((concordant - discordant) / denom)


def reprofile_order_check(configs) -> OrderCheck:
    """Compare predicted and measured speedup orderings (Kendall tau) and flag
    configurations dominated in the measured (qos_loss, speedup) space.

    The all-exact baseline is never flagged: it anchors the runtime ladder.
    """
    profiled = [c for c in configs if c.profile is not None]
    if len(profiled) < 2:
        raise ValueError("order check needs at least 2 profiled configurations")
    measured = [c.profile.speedup for c in profiled]
    tau_pred = None
    with_pred = [c for c in profiled if c.predicted is not None]
    if len(with_pred) >= 2:
        tau_pred = kendall_tau(
            [c.predicted.speedup for c in with_pred],
            [c.profile.speedup for c in with_pred],
        )
    tau_cost = kendall_tau([1.0 / c.profile.cost_ratio for c in profiled], measured)

    outliers = []
    for c in profiled:
        if c.is_baseline():
            continue
        for d in profiled:
            if d is c:
                continue
            better_loss = d.profile.qos_loss <= c.profile.qos_loss
            better_speed = d.profile.speedup >= c.profile.speedup
            strict = (d.profile.qos_loss < c.profile.qos_loss) or (
                d.profile.speedup > c.profile.speedup
            )
            if better_loss and better_speed and strict:
                outliers.append(c.id)
                break
    return OrderCheck(tau_pred, tau_cost, outliers)
