"""Command-line pipeline: gen-data -> tune -> profile -> calibrate ->
run-adaptive -> report.

All commands read and write the documented file formats only and are
bit-reproducible for a fixed --seed (wall-clock timing is opt-in via
--timing wall and is the one non-reproducible quantity)."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset
from .adapt import (
    ConfidenceStrategy,
    ConfigurationLadder,
    FixedStrategy,
    NaiveStrategy,
    StateDrivenStrategy,
)
from .calibration import fit_temperature, single_T_policy
from .executor import run_batch
from .graph import build_graph, parse_configurations, serialize_configurations
from .profiler import confidence_stats, profile, reprofile_order_check
from .stream import (
    load_report,
    render_plot,
    run_adaptive,
    save_report,
    write_summary_csv,
    write_timeline_csv,
)
from .tensor import load_archive, save_archive
from .tuner import TunerParams, tune

MODEL_GRAPH = "graph.json"


def _load_model(model_dir):
    archive = load_archive(model_dir)
    return build_graph(os.path.join(model_dir, MODEL_GRAPH), archive)


def _save_model(manifest, weights, model_dir):
    save_archive(weights, model_dir)
    import json

    with open(os.path.join(model_dir, MODEL_GRAPH), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse_noise(args):
    if args.noise_schedule:
        points = []
        for part in args.noise_schedule.split(","):
            f, s = part.split(":")
            points.append((float(f), float(s)))
        return tuple(points)
    return args.noise


def _logits_cache_dir(configs_path):
    base = configs_path[: -len(".json")] if configs_path.endswith(".json") else configs_path
    return base + ".logits"


def cmd_gen_data(args):
    spec = dataset.SyntheticSpec(
        classes=args.classes,
        noise_sigma=_parse_noise(args),
        dwell_mean=args.dwell_mean,
        dwell=args.dwell,
        seed=args.seed,
    )
    manifest, weights = dataset.build_matched_filter_model(spec, mixing_conv=args.mixing_conv)
    os.makedirs(args.out, exist_ok=True)
    model_dir = os.path.join(args.out, "model")
    _save_model(manifest, weights, model_dir)

    header = {
        "classes": spec.classes,
        "seed": spec.seed,
        "noise": spec.noise_sigma if np.isscalar(spec.noise_sigma) else [list(p) for p in spec.noise_sigma],
        "dwell_mean": spec.dwell_mean,
        "dwell": spec.dwell,
    }
    for name, n_events, salt in (
        ("run", args.events, 0),
        ("val", args.val_events, 1),
        ("test", args.test_events, 2),
    ):
        events = dataset.generate_stream(spec, n_events, salt=salt)
        path = os.path.join(args.out, f"{name}.trace.json")
        dataset.save_trace(events, path, dict(header, stream=name, salt=salt))
        print(f"wrote {path} ({n_events} events)")
    print(f"wrote {model_dir} ({manifest['name']})")
    return 0


def cmd_tune(args):
    graph = _load_model(args.model)
    events, _ = dataset.load_trace(args.data)
    inputs, labels = dataset.trace_arrays(events)
    if labels is None:
        raise ValueError(f"{args.data}: tuning needs a labeled trace")
    params = TunerParams(
        max_qos_loss=args.max_qos_loss,
        max_configs=args.max_configs,
        iterations=args.iterations,
        seed=args.seed,
        exhaustive_limit=args.exhaustive_limit,
    )
    points = tune(graph, inputs, labels, params)
    serialize_configurations([p.config for p in points], args.out, model=graph.name)
    for p in points:
        print(f"{p.config.id}: qos_loss {p.qos_loss:+.3f} pp, predicted speedup {p.speedup:.3f}x")
    print(f"wrote {args.out} ({len(points)} configurations)")
    return 0


def cmd_profile(args):
    graph = _load_model(args.model)
    cf = parse_configurations(args.configs)
    events, _ = dataset.load_trace(args.data)
    inputs, labels = dataset.trace_arrays(events)
    if labels is None:
        raise ValueError(f"{args.data}: profiling needs a labeled trace")
    temperature = args.temperature if args.temperature is not None else (cf.temperature or 1.0)
    result = profile(
        graph,
        cf.configurations,
        inputs,
        labels,
        batch_size=args.batch_size,
        temperature=temperature,
        timing=args.timing,
    )
    out = args.out or args.configs
    serialize_configurations(result.configs, out, temperature=cf.temperature, model=cf.model)
    cache = {f"{cid}.logits": arr for cid, arr in result.logits.items()}
    cache["labels"] = result.labels.astype(np.float32)
    save_archive(cache, _logits_cache_dir(out))
    check = reprofile_order_check(result.configs)
    for c in result.configs:
        flag = " [outlier]" if c.outlier else ""
        print(
            f"{c.id}: accuracy {c.profile.accuracy:.4f}, qos_loss {c.profile.qos_loss:+.3f} pp, "
            f"speedup {c.profile.speedup:.3f}x, cost_ratio {c.profile.cost_ratio:.4f}{flag}"
        )
    if check.tau_predicted is not None:
        print(f"order agreement: tau(predicted vs measured) = {check.tau_predicted:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_calibrate(args):
    graph = _load_model(args.model)
    cf = parse_configurations(args.configs)
    events, _ = dataset.load_trace(args.data)
    inputs, labels = dataset.trace_arrays(events)
    if labels is None:
        raise ValueError(f"{args.data}: calibration needs a labeled trace")
    baseline = next((c for c in cf.configurations if c.is_baseline()), None)
    if baseline is None:
        raise ValueError(f"{args.configs}: no all-exact baseline configuration found")
    batch = run_batch(graph, baseline, inputs, labels, temperature=1.0)
    fit = fit_temperature(batch.result.logits, labels)
    temperature = single_T_policy({baseline.id: fit})
    print(
        f"fitted T = {temperature:.4f} (NLL {fit.nll_before:.4f} -> {fit.nll_after:.4f}, "
        f"{fit.iterations} iterations)"
    )

    cache_dir = _logits_cache_dir(args.configs)
    updated = 0
    if os.path.isdir(cache_dir):
        cache = load_archive(cache_dir)
        cached_labels = cache["labels"].astype(np.int64)
        for config in cf.configurations:
            key = f"{config.id}.logits"
            if config.profile is not None and key in cache:
                config.profile.temperature = temperature
                config.profile.per_class = confidence_stats(cache[key], cached_labels, temperature)
                updated += 1
        print(f"recomputed confidence stats for {updated} configurations at T = {temperature:.4f}")
    out = args.out or args.configs
    serialize_configurations(cf.configurations, out, temperature=temperature, model=cf.model)
    print(f"wrote {out}")
    return 0


def _make_strategy(args, ladder):
    if args.strategy == "naive":
        return NaiveStrategy(mode=args.mode)
    if args.strategy == "state":
        return StateDrivenStrategy(memory=args.memory, v_limit=args.v_limit, mode=args.mode)
    if args.strategy == "confidence":
        return ConfidenceStrategy.for_ladder(ladder, mode=args.mode)
    if args.strategy.startswith("fixed:"):
        return FixedStrategy(int(args.strategy.split(":", 1)[1]))
    raise ValueError(f"unknown strategy {args.strategy!r}")


def cmd_run_adaptive(args):
    graph = _load_model(args.model)
    cf = parse_configurations(args.configs)
    events, _ = dataset.load_trace(args.trace)
    ladder = ConfigurationLadder.build(cf.configurations, include_outliers=args.include_outliers)
    strategy = _make_strategy(args, ladder)
    report = run_adaptive(graph, ladder, strategy, events, temperature=cf.temperature)
    save_report(report, args.out, include_wall=args.timing == "wall")
    if args.timeline:
        write_timeline_csv(report, args.timeline)
        print(f"wrote {args.timeline}")
    acc = "n/a" if report.accuracy is None else f"{report.accuracy:.4f}"
    base_acc = "n/a" if report.baseline_accuracy is None else f"{report.baseline_accuracy:.4f}"
    print(
        f"{report.strategy}: {report.n_events} events on a {len(ladder)}-rung ladder\n"
        f"  agreement with baseline: {report.agreement:.4f}\n"
        f"  accuracy: {acc} (baseline {base_acc})\n"
        f"  relative cost (MAC proxy): {report.relative_cost:.4f}"
    )
    print(f"wrote {args.out}")
    return 0


def cmd_report(args):
    os.makedirs(args.out_dir, exist_ok=True)
    reports = []
    for path in args.reports:
        rep = load_report(path)
        name = os.path.splitext(os.path.basename(path))[0]
        reports.append((name, rep))
        csv_path = os.path.join(args.out_dir, f"{name}.timeline.csv")
        write_timeline_csv(rep, csv_path)
        plot_path = os.path.join(args.out_dir, f"{name}.png")
        render_plot(rep, plot_path)
        print(f"wrote {csv_path} and {plot_path}")
    summary = os.path.join(args.out_dir, "summary.csv")
    write_summary_csv(reports, summary)
    print(f"wrote {summary}")
    return 0


def cmd_csv_to_trace(args):
    windows = dataset.windows_from_csv(args.csv)
    if not windows:
        raise ValueError(f"{args.csv}: no windows found")
    events = dataset.events_from_windows(windows)
    dataset.save_trace(events, args.out, {"source": os.path.basename(args.csv)})
    print(f"wrote {args.out} ({len(events)} events)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="approxnn",
        description="Approximate CNN inference: tune, profile, calibrate, and adapt at runtime.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic model plus run/val/test traces")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--events", type=int, default=600, help="run-trace length")
    p.add_argument("--val-events", type=int, default=120)
    p.add_argument("--test-events", type=int, default=240)
    p.add_argument("--dwell-mean", type=float, default=25.0)
    p.add_argument("--dwell", choices=("geometric", "fixed"), default="geometric")
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--noise-schedule", help="piecewise-linear sigma, e.g. '0:0.4,0.5:0.9,1:0.4'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mixing-conv", action="store_true", help="add a second (identity) conv layer")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("tune", help="search the knob space for a Pareto frontier")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="labeled validation trace")
    p.add_argument("--out", required=True, help="configuration file to write")
    p.add_argument("--max-qos-loss", type=float, default=5.0)
    p.add_argument("--max-configs", type=int, default=20)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--exhaustive-limit", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("profile", help="measure configurations on the test set")
    p.add_argument("--model", required=True)
    p.add_argument("--configs", required=True)
    p.add_argument("--data", required=True, help="labeled test trace")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--temperature", type=float, help="override the softmax temperature")
    p.add_argument("--timing", choices=("proxy", "wall"), default="proxy")
    p.add_argument("--out", help="output configuration file (default: rewrite --configs)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("calibrate", help="fit the shared softmax temperature on validation data")
    p.add_argument("--model", required=True)
    p.add_argument("--configs", required=True)
    p.add_argument("--data", required=True, help="labeled validation trace")
    p.add_argument("--out", help="output configuration file (default: rewrite --configs)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run-adaptive", help="run a strategy over a trace with a baseline pass")
    p.add_argument("--model", required=True)
    p.add_argument("--configs", required=True, help="profiled configuration file")
    p.add_argument("--trace", required=True)
    p.add_argument("--strategy", default="state", help="naive | state | confidence | fixed:K")
    p.add_argument("--mode", choices=("linear", "exponential"), default="linear")
    p.add_argument("--memory", type=int, default=3, help="state strategy FIFO size N")
    p.add_argument("--v-limit", type=int, default=2, help="state strategy reliability bound")
    p.add_argument("--include-outliers", action="store_true")
    p.add_argument("--timing", choices=("proxy", "wall"), default="proxy")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.add_argument("--timeline", help="also write the timeline CSV here")
    p.set_defaults(func=cmd_run_adaptive)

    p = sub.add_parser("report", help="summaries, timeline CSVs, and plots from report files")
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("csv-to-trace", help="convert CSV windows (label + 128*9 floats) to a trace")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="trace JSON path")
    p.set_defaults(func=cmd_csv_to_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
