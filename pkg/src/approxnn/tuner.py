"""Search over the per-layer knob space for a Pareto frontier of
configurations in (QoS loss, predicted speedup).

QoS loss is baseline accuracy minus configuration accuracy on the tuning set,
in percentage points. Predicted speedup is the deterministic MAC ratio
baseline/config. Small knob spaces are enumerated exhaustively; larger ones
use a seeded sensitivity-biased mutation search whose archive is seeded with
every single-knob configuration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .executor import run_batch
from .graph import Configuration, EXACT, KnobSetting, PredictedMetrics, default_knob_domain


@dataclass(frozen=True)
class TunerParams:
    max_qos_loss: float = 5.0      # percentage points; frontier points above are dropped
    max_configs: int = 20          # frontier cap (hypervolume-greedy)
    iterations: int = 400          # mutation evaluations for the stochastic search
    seed: int = 0
    exhaustive_limit: int = 10_000  # enumerate outright when the space is this small

    def __post_init__(self):
        if self.max_configs < 1:
            raise ValueError(f"max_configs must be >= 1, got {self.max_configs}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class TradeoffPoint:
    config: Configuration
    qos_loss: float
    speedup: float


@dataclass
class KnobScore:
    knob: KnobSetting
    qos_loss: float
    mac_reduction: float  # 1 - config MACs / baseline MACs


def space_size(domain) -> int:
    size = 1
    for knobs in domain.values():
        size *= len(knobs)
    return size


def _pareto_indices(losses, speedups):
    """Indices of non-dominated (minimize loss, maximize speedup) points,
    ordered by ascending speedup then ascending loss."""
    order = sorted(range(len(losses)), key=lambda i: (losses[i], -speedups[i]))
    kept = []
    best_speedup = -np.inf  # max speedup among strictly lower losses
    i = 0
    while i < len(order):
        j = i
        loss = losses[order[i]]
        while j < len(order) and losses[order[j]] == loss:
            j += 1
        group = order[i:j]
        group_best = speedups[group[0]]
        if group_best > best_speedup:
            kept.extend(g for g in group if speedups[g] == group_best)
            best_speedup = group_best
        i = j
    kept.sort(key=lambda g: (speedups[g], losses[g]))
    return kept


def pareto_filter(points):
    """Keep the non-dominated TradeoffPoints: p survives iff no q has
    qos_loss <= p.qos_loss and speedup >= p.speedup with at least one strict.
    Stable order by ascending speedup."""
    kept = _pareto_indices([p.qos_loss for p in points], [p.speedup for p in points])
    return [points[i] for i in kept]


def _hypervolume(pairs, ref_loss, ref_speedup):
    """Area dominated by (loss, speedup) pairs relative to the reference
    corner (ref_loss, ref_speedup); pairs need not be pre-filtered."""
    pts = sorted(
        ((l, s) for l, s in pairs if l < ref_loss and s > ref_speedup),
        key=lambda x: -x[1],
    )
    hv = 0.0
    best_loss = ref_loss
    prev_speedup = None
    for loss, speedup in pts:
        if prev_speedup is not None:
            hv += (prev_speedup - speedup) * (ref_loss - best_loss)
        best_loss = min(best_loss, loss)
        prev_speedup = speedup
    if prev_speedup is not None:
        hv += (prev_speedup - ref_speedup) * (ref_loss - best_loss)
    return hv


def hypervolume(points, ref_loss, ref_speedup) -> float:
    """Dominated-area hypervolume of TradeoffPoints (see _hypervolume)."""
    return _hypervolume([(p.qos_loss, p.speedup) for p in points], ref_loss, ref_speedup)


def _cap_by_hypervolume(points, max_configs, max_qos_loss):
    """Greedily drop the point with the smallest exclusive hypervolume until
    the cap holds; the baseline anchor is never dropped."""
    if len(points) <= max_configs:
        return points
    points = list(points)
    ref_loss = max(max_qos_loss, max(p.qos_loss for p in points)) + 1.0
    ref_speedup = min(1.0, min(p.speedup for p in points)) - 1e-9
    while len(points) > max_configs:
        pairs = [(p.qos_loss, p.speedup) for p in points]
        total = _hypervolume(pairs, ref_loss, ref_speedup)
        worst_idx, worst_contrib = None, None
        for i, p in enumerate(points):
            if p.config.is_baseline():
                continue
            contrib = total - _hypervolume(pairs[:i] + pairs[i + 1 :], ref_loss, ref_speedup)
            if worst_contrib is None or contrib < worst_contrib - 1e-15:
                worst_idx, worst_contrib = i, contrib
        if worst_idx is None:
            break
        del points[worst_idx]
    return points


class _Evaluator:
    """Caches (accuracy, macs) per knob assignment over the tuning set."""

    def __init__(self, graph, inputs, labels):
        if labels is None or len(labels) == 0:
            raise ValueError("tuner needs a labeled, non-empty tuning set")
        self.graph = graph
        self.inputs = inputs
        self.labels = labels
        self.layer_names = graph.layer_names()
        self.cache = {}
        self.evaluations = 0

    def key(self, knobs):
        return tuple(knobs[n].key() for n in self.layer_names)

    def evaluate(self, knobs):
        key = self.key(knobs)
        if key not in self.cache:
            config = Configuration(f"eval-{len(self.cache)}", dict(knobs))
            batch = run_batch(self.graph, config, self.inputs, self.labels)
            self.cache[key] = (batch.accuracy, batch.result.cost.macs)
            self.evaluations += 1
        return self.cache[key]


def sensitivity_pass(graph, inputs, labels, domain=None):
    """Score every candidate knob in isolation (all other layers exact).

    Returns {layer: [KnobScore, ...]} with qos_loss in percentage points and
    the MAC reduction fraction vs the all-exact baseline.
    """
    domain = domain or default_knob_domain(graph)
    ev = _Evaluator(graph, inputs, labels)
    baseline_knobs = {name: EXACT for name in graph.layer_names()}
    base_acc, base_macs = ev.evaluate(baseline_knobs)
    scores = {}
    for layer in graph.layer_names():
        layer_scores = []
        for knob in domain.get(layer, [EXACT]):
            knobs = dict(baseline_knobs)
            knobs[layer] = knob
            acc, macs = ev.evaluate(knobs)
            layer_scores.append(
                KnobScore(knob, (base_acc - acc) * 100.0, 1.0 - macs / base_macs)
            )
        scores[layer] = layer_scores
    return scores


def _knob_weights(layer_scores):
    # Favor knobs that save MACs without losing accuracy; every candidate
    # keeps a floor weight so nothing is unreachable.
    w = np.asarray(
        [
            (0.05 + max(s.mac_reduction, 0.0)) / (1.0 + max(s.qos_loss, 0.0)) ** 2
            for s in layer_scores
        ]
    )
    return w / w.sum()


def tune(graph, inputs, labels, params: TunerParams, domain=None):
    """Chart the knob space and return the Pareto frontier as TradeoffPoints.

    Deterministic given (graph, data, params.seed). The all-exact baseline is
    always present as the frontier anchor (even if some lossless approximation
    dominates it: the runtime ladder needs its rung 0); no other returned
    point exceeds params.max_qos_loss or is dominated.
    """
    domain = domain or default_knob_domain(graph)
    for layer in graph.layer_names():
        knobs = domain.get(layer, [])
        if not any(k.is_exact and not k.fp16 for k in knobs):
            raise ValueError(f"knob domain for layer '{layer}' must contain the exact knob")

    ev = _Evaluator(graph, inputs, labels)
    layer_names = graph.layer_names()
    baseline_knobs = {name: EXACT for name in layer_names}
    base_acc, base_macs = ev.evaluate(baseline_knobs)

    archive = {}  # knob key -> (knobs dict, qos_loss, speedup)

    def record(knobs):
        key = ev.key(knobs)
        if key not in archive:
            acc, macs = ev.evaluate(knobs)
            archive[key] = (dict(knobs), (base_acc - acc) * 100.0, base_macs / macs)
        return key

    record(baseline_knobs)

    if space_size(domain) <= params.exhaustive_limit:
        for combo in itertools.product(*(domain[n] for n in layer_names)):
            record(dict(zip(layer_names, combo)))
    else:
        scores = sensitivity_pass(graph, inputs, labels, domain)
        weights = {layer: _knob_weights(scores[layer]) for layer in layer_names}
        for layer in layer_names:  # single-knob configs seed the archive
            for s in scores[layer]:
                knobs = dict(baseline_knobs)
                knobs[layer] = s.knob
                record(knobs)
        rng = np.random.default_rng(np.random.SeedSequence([int(params.seed), 0x7E5E]))
        mutable = [n for n in layer_names if len(domain[n]) > 1]
        for _ in range(params.iterations):
            keys = list(archive.keys())
            frontier_pos = _pareto_indices(
                [archive[k][1] for k in keys], [archive[k][2] for k in keys]
            )
            base_key = keys[frontier_pos[rng.integers(len(frontier_pos))]]
            knobs = dict(archive[base_key][0])
            for _ in range(int(rng.integers(1, 3))):
                layer = mutable[rng.integers(len(mutable))]
                cands = domain[layer]
                if rng.random() < 0.25:
                    knob = cands[rng.integers(len(cands))]
                else:
                    knob = cands[rng.choice(len(cands), p=weights[layer])]
                knobs[layer] = knob
            record(knobs)

    entries = list(archive.values())
    kept = _pareto_indices([e[1] for e in entries], [e[2] for e in entries])
    frontier = [
        TradeoffPoint(Configuration("cfg", entries[i][0]), entries[i][1], entries[i][2])
        for i in kept
    ]
    frontier = [
        p for p in frontier if p.qos_loss <= params.max_qos_loss or p.config.is_baseline()
    ]
    if not any(p.config.is_baseline() for p in frontier):
        frontier.insert(0, TradeoffPoint(Configuration("cfg", dict(baseline_knobs)), 0.0, 1.0))
    frontier = _cap_by_hypervolume(frontier, params.max_configs, params.max_qos_loss)

    named = []
    counter = 0
    for p in frontier:
        cid = "baseline" if p.config.is_baseline() else f"cfg-{counter:03d}"
        if not p.config.is_baseline():
            counter += 1
        named.append(
            TradeoffPoint(
                Configuration(
                    cid,
                    {n: p.config.knobs[n] for n in layer_names},
                    predicted=PredictedMetrics(p.qos_loss, p.speedup),
                ),
                p.qos_loss,
                p.speedup,
            )
        )
    return named
