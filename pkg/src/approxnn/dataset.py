"""Synthetic inertial-style data: the signal-image transform, seeded streams of
slowly changing class states, and an analytically constructed matched-filter
CNN that classifies them.

A window is 128 time steps x 9 channels (3 feature sets x 3 axes). Its signal
image stacks each feature set's axis rows cyclically to 8 rows of 128 samples,
then re-stacks four 8x32 column blocks vertically into a 32x32 image; the 3
feature sets become the image channels. Class base patterns are period-8 time
motifs chosen orthonormal under the image inner product, so an 8x8-tile conv
bank responds 1.0 to its own class and ~0 to the rest, giving the model 100%
accuracy on noise-free inputs and a smooth decay with noise.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import GRAPH_VERSION

TRACE_VERSION = "tr-1"

WINDOW_STEPS = 128
WINDOW_CHANNELS = 9
FEATURE_SETS = 3
AXES = 3
IMAGE_SIDE = 32
BLOCK_ROWS = 8
# Axis index for each of the 8 stacked rows: x,y,z,x,y,z,x,y.
ROW_AXIS = tuple(r % AXES for r in range(BLOCK_ROWS))
# How often each axis appears among the 8 rows (x:3, y:3, z:2).
AXIS_MULTIPLICITY = tuple(ROW_AXIS.count(a) for a in range(AXES))
MOTIF_PERIOD = 8


@dataclass
class SignalWindow:
    samples: np.ndarray  # [128, 9] float32, channel = 3*feature_set + axis
    label: int | None = None


@dataclass
class TraceEvent:
    t: float
    input: np.ndarray  # [1, 3, 32, 32] float32, ready for the model
    label: int | None = None
    sigma: float = 0.0


@dataclass
class SyntheticSpec:
    """Generator parameters for class-pure segments with Gaussian noise.

    noise_sigma is either a constant or a piecewise-linear schedule given as
    ((fraction, sigma), ...) breakpoints over the stream position in [0, 1].
    """

    classes: int = 4
    noise_sigma: object = 0.5
    dwell_mean: float = 25.0
    dwell: str = "geometric"  # or "fixed"
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.dwell_mean < 1:
            raise ValueError(f"dwell_mean must be >= 1, got {self.dwell_mean}")
        if self.dwell not in ("geometric", "fixed"):
            raise ValueError(f"dwell must be 'geometric' or 'fixed', got {self.dwell!r}")
        if not np.isscalar(self.noise_sigma):
            self.noise_sigma = tuple((float(f), float(s)) for f, s in self.noise_sigma)


def signal_image(window: SignalWindow) -> np.ndarray:
    """Rearrange a [128, 9] window into a [1, 3, 32, 32] signal image."""
    samples = np.asarray(window.samples, dtype=np.float32)
    if samples.shape != (WINDOW_STEPS, WINDOW_CHANNELS):
        raise ValueError(
            f"window must be [{WINDOW_STEPS}, {WINDOW_CHANNELS}], got {tuple(samples.shape)}"
        )
    img = np.empty((FEATURE_SETS, IMAGE_SIDE, IMAGE_SIDE), dtype=np.float32)
    for s in range(FEATURE_SETS):
        stacked = samples[:, [3 * s + a for a in ROW_AXIS]].T  # [8, 128]
        for block in range(IMAGE_SIDE // BLOCK_ROWS):
            img[s, BLOCK_ROWS * block : BLOCK_ROWS * (block + 1), :] = stacked[
                :, IMAGE_SIDE * block : IMAGE_SIDE * (block + 1)
            ]
    return img[None]


def sigma_at(noise_sigma, i: int, n: int) -> float:
    """Evaluate a constant or piecewise-linear noise schedule at event i of n."""
    if np.isscalar(noise_sigma):
        return float(noise_sigma)
    points = sorted(noise_sigma)
    f = 0.0 if n <= 1 else i / (n - 1)
    if f <= points[0][0]:
        return points[0][1]
    for (f0, s0), (f1, s1) in zip(points, points[1:]):
        if f <= f1:
            if f1 == f0:
                return s1
            return s0 + (s1 - s0) * (f - f0) / (f1 - f0)
    return points[-1][1]


def base_patterns(spec: SyntheticSpec) -> np.ndarray:
    """Per-class [128, 9] window patterns: period-8 motifs whose signal-image
    tiles are orthonormal, derived deterministically from the spec seed."""
    dim = FEATURE_SETS * AXES * MOTIF_PERIOD
    if spec.classes > dim:
        raise ValueError(f"at most {dim} orthogonal classes are available, got {spec.classes}")
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0xBA5E]))
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    motifs = q.T[: spec.classes].reshape(spec.classes, FEATURE_SETS, AXES, MOTIF_PERIOD)
    # Compensate the per-axis row repetition so the image tiles are unit-norm
    # and mutually orthogonal under the plain dot product.
    weights = np.sqrt(np.asarray(AXIS_MULTIPLICITY, dtype=np.float64))
    motifs = motifs / weights[None, None, :, None]
    patterns = np.empty((spec.classes, WINDOW_STEPS, WINDOW_CHANNELS), dtype=np.float32)
    t = np.arange(WINDOW_STEPS) % MOTIF_PERIOD
    for c in range(spec.classes):
        for s in range(FEATURE_SETS):
            for a in range(AXES):
                patterns[c, :, 3 * s + a] = motifs[c, s, a, t]
    return patterns


def _dwell_lengths(spec, rng, n_events):
    lengths = []
    total = 0
    while total < n_events:
        if spec.dwell == "fixed":
            d = max(1, int(round(spec.dwell_mean)))
        else:
            d = int(rng.geometric(1.0 / spec.dwell_mean))
        lengths.append(d)
        total += d
    return lengths


def generate_stream(spec: SyntheticSpec, n_events: int, salt: int = 0) -> list:
    """Seeded, reproducible stream of noisy class-pure segments.

    ``salt`` derives independent streams (run/validation/test) from one spec
    without changing the class base patterns."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x57EA, int(salt)]))
    patterns = base_patterns(spec)
    labels = []
    current = int(rng.integers(spec.classes))
    for dwell in _dwell_lengths(spec, rng, n_events):
        labels.extend([current] * dwell)
        step = int(rng.integers(1, spec.classes))
        current = (current + step) % spec.classes
    labels = labels[:n_events]

    events = []
    for i, label in enumerate(labels):
        sigma = sigma_at(spec.noise_sigma, i, n_events)
        window = patterns[label]
        if sigma > 0:
            window = window + rng.normal(0.0, sigma, size=window.shape)
        image = signal_image(SignalWindow(window.astype(np.float32), label))
        events.append(TraceEvent(float(i), image, label, sigma))
    return events


def build_matched_filter_model(spec: SyntheticSpec, mixing_conv: bool = False):
    """Construct the matched-filter CNN for the spec's classes.

    conv bank of per-class 8x8 tile filters (stride 8) -> relu -> average
    pool -> identity dense head -> softmax. With ``mixing_conv`` a 3x3
    identity (center-tap) conv is inserted after the relu, enlarging the
    tunable knob space without changing the function computed.

    Returns (graph manifest dict, weights dict).
    """
    patterns = base_patterns(spec)
    k = spec.classes
    filters = np.empty((k, FEATURE_SETS, MOTIF_PERIOD, MOTIF_PERIOD), dtype=np.float32)
    for c in range(k):
        image = signal_image(SignalWindow(patterns[c], c))[0]
        filters[c] = image[:, :MOTIF_PERIOD, :MOTIF_PERIOD]

    weights = {
        "features.w": filters,
        "features.b": np.zeros(k, dtype=np.float32),
        "head.w": np.eye(k, dtype=np.float32),
        "head.b": np.zeros(k, dtype=np.float32),
    }
    layers = [
        {
            "name": "features",
            "kind": "conv2d",
            "filter": "features.w",
            "bias": "features.b",
            "stride": [MOTIF_PERIOD, MOTIF_PERIOD],
            "pad": [0, 0],
        },
        {"name": "act", "kind": "activation", "fn": "relu"},
    ]
    if mixing_conv:
        mix = np.zeros((k, k, 3, 3), dtype=np.float32)
        mix[np.arange(k), np.arange(k), 1, 1] = 1.0
        weights["mix.w"] = mix
        weights["mix.b"] = np.zeros(k, dtype=np.float32)
        layers.append(
            {
                "name": "mix",
                "kind": "conv2d",
                "filter": "mix.w",
                "bias": "mix.b",
                "stride": [1, 1],
                "pad": [1, 1],
            }
        )
    side = IMAGE_SIDE // MOTIF_PERIOD
    layers += [
        {"name": "pool", "kind": "pool", "op": "average", "window": [side, side], "stride": [side, side]},
        {"name": "flat", "kind": "flatten"},
        {"name": "head", "kind": "dense", "weights": "head.w", "bias": "head.b"},
        {"name": "prob", "kind": "softmax"},
    ]
    manifest = {
        "format_version": GRAPH_VERSION,
        "name": f"matched-filter-{k}c" + ("-mix" if mixing_conv else ""),
        "input_shape": [FEATURE_SETS, IMAGE_SIDE, IMAGE_SIDE],
        "layers": layers,
    }
    return manifest, weights


# --- trace files --------------------------------------------------------------

def _blob_path(path: str) -> str:
    base = path[: -len(".json")] if path.endswith(".json") else path
    return base + ".bin"


def save_trace(events, path, header=None) -> None:
    """Write a trace: JSON header + per-event records, inputs in a sibling
    little-endian float32 blob."""
    if not events:
        raise ValueError("cannot save an empty trace")
    input_shape = list(events[0].input.shape)
    doc = dict(header or {})
    doc.update(
        {
            "format_version": TRACE_VERSION,
            "input_shape": input_shape,
            "blob": os.path.basename(_blob_path(path)),
            "events": [
                {"t": e.t, "label": e.label, "sigma": e.sigma} for e in events
            ],
        }
    )
    payload = b"".join(
        np.ascontiguousarray(e.input, dtype="<f4").tobytes() for e in events
    )
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(_blob_path(path), "wb") as fh:
        fh.write(payload)


def load_trace(path):
    """Read a trace back as (events, header dict)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != TRACE_VERSION:
        raise ValueError(f"{path}: unsupported trace version {doc.get('format_version')!r}")
    shape = tuple(doc["input_shape"])
    numel = int(np.prod(shape))
    blob_file = os.path.join(os.path.dirname(path) or ".", doc["blob"])
    with open(blob_file, "rb") as fh:
        blob = fh.read()
    records = doc["events"]
    if len(blob) != 4 * numel * len(records):
        raise ValueError(
            f"{path}: blob holds {len(blob)} bytes, expected {4 * numel * len(records)} "
            f"for {len(records)} events of shape {shape}"
        )
    events = []
    prev_t = None
    for i, rec in enumerate(records):
        arr = np.frombuffer(blob, dtype="<f4", count=numel, offset=4 * numel * i)
        t = float(rec["t"])
        if prev_t is not None and t <= prev_t:
            raise ValueError(f"{path}: event {i} timestamp {t} not increasing")
        prev_t = t
        label = rec.get("label")
        events.append(
            TraceEvent(t, arr.astype(np.float32).reshape(shape), None if label is None else int(label), float(rec.get("sigma", 0.0)))
        )
    return events, doc


def trace_arrays(events):
    """Stack trace events into (inputs [N,C,H,W], labels [N] or None)."""
    inputs = np.concatenate([e.input for e in events], axis=0)
    if any(e.label is None for e in events):
        return inputs, None
    return inputs, np.asarray([e.label for e in events], dtype=np.int64)


def windows_from_csv(path):
    """Import external windows from CSV: label, then 128*9 floats per row
    (row-major over time steps then channels)."""
    windows = []
    expected = WINDOW_STEPS * WINDOW_CHANNELS
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != expected + 1:
                raise ValueError(
                    f"{path}: row {i} has {len(row)} fields, expected label + {expected} values"
                )
            label = int(row[0])
            samples = np.asarray(row[1:], dtype=np.float32).reshape(WINDOW_STEPS, WINDOW_CHANNELS)
            windows.append(SignalWindow(samples, label))
    return windows


def events_from_windows(windows):
    return [
        TraceEvent(float(i), signal_image(w), w.label) for i, w in enumerate(windows)
    ]
