"""Feed-forward network definition, per-layer approximation knobs, and the
versioned configuration file format.

A network is a linear chain of named layers (with optional add-skip references
to earlier layers). A Configuration assigns exactly one KnobSetting to every
layer; perforation and filter-sampling knobs are legal on conv layers only,
the fp16 flag on any layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ops import ConvGeometry, FilterSampleSpec, PerforationSpec

GRAPH_VERSION = "net-1"
CONFIG_VERSION = "cfg-1"

LAYER_KINDS = ("conv2d", "dense", "batch_norm", "pool", "activation", "add", "softmax", "flatten")
KNOB_VARIANTS = ("exact", "perf_row", "perf_col", "filter_samp")


class GraphError(ValueError):
    """Network manifest is inconsistent (shapes, weights, layer wiring)."""


class ConfigError(ValueError):
    """A configuration violates the graph's knob constraints."""


class ConfigFormatError(ValueError):
    """A configuration file cannot be parsed."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    geom: ConvGeometry | None = None      # conv2d
    weights: str | None = None            # conv2d filter / dense weights archive ref
    bias: str | None = None
    gamma: str | None = None              # batch_norm refs
    beta: str | None = None
    mean: str | None = None
    var: str | None = None
    eps: float = 1e-5
    pool_op: str | None = None            # pool
    window: tuple | None = None
    pool_stride: tuple | None = None
    act: str | None = None                # activation
    clip: float | None = None
    other: str | None = None              # add: earlier layer to sum with


@dataclass(frozen=True)
class KnobSetting:
    """One layer's approximation choice: a conv variant plus the fp16 flag."""

    variant: str = "exact"
    stride: int | None = None
    offset: int | None = None
    fp16: bool = False

    def __post_init__(self):
        if self.variant not in KNOB_VARIANTS:
            raise ConfigError(f"unknown knob variant {self.variant!r}")
        if self.variant == "exact":
            if self.stride is not None or self.offset is not None:
                raise ConfigError("exact knob takes no stride/offset")
        else:
            if self.stride is None or self.offset is None:
                raise ConfigError(f"{self.variant} knob needs stride and offset")
            if self.stride < 2:
                raise ConfigError(f"{self.variant} stride must be >= 2, got {self.stride}")
            if self.offset < 0:
                raise ConfigError(f"{self.variant} offset must be >= 0, got {self.offset}")

    @property
    def is_exact(self) -> bool:
        return self.variant == "exact"

    def key(self):
        return (self.variant, self.stride, self.offset, self.fp16)


EXACT = KnobSetting()


@dataclass
class Configuration:
    """A complete per-layer knob assignment plus optional tuner/profiler metadata."""

    id: str
    knobs: dict  # layer name -> KnobSetting, in graph layer order
    predicted: "PredictedMetrics | None" = None
    profile: "object | None" = None  # profiler.ProfileRecord
    outlier: bool = False

    def knob_key(self):
        return tuple((name, k.key()) for name, k in self.knobs.items())

    def is_baseline(self) -> bool:
        return all(k.is_exact and not k.fp16 for k in self.knobs.values())


@dataclass(frozen=True)
class PredictedMetrics:
    qos_loss: float      # percentage points vs baseline on the tuning set
    speedup: float       # baseline MACs / config MACs


class NetworkGraph:
    """Shape-checked linear network with resolved weights."""

    def __init__(self, name, input_shape, layers, weights):
        self.name = name
        self.input_shape = tuple(input_shape)  # per-sample (C, H, W)
        self.layers = list(layers)
        self.weights = weights
        self.layer_shapes = self._check_shapes()
        last = self.layers[-1]
        out_shape = self.layer_shapes[last.name]
        self.classes = int(np.prod(out_shape))

    def layer_names(self):
        return [l.name for l in self.layers]

    def conv_layers(self):
        return [l.name for l in self.layers if l.kind == "conv2d"]

    def baseline_config(self, config_id="baseline") -> Configuration:
        return Configuration(config_id, {l.name: EXACT for l in self.layers})

    def weight(self, ref, layer):
        if ref not in self.weights:
            raise GraphError(f"layer '{layer}' references missing weight '{ref}'")
        return self.weights[ref]

    def _check_shapes(self):
        shapes = {}
        shape = self.input_shape
        seen = set()
        for i, layer in enumerate(self.layers):
            if layer.name in seen:
                raise GraphError(f"duplicate layer name '{layer.name}'")
            seen.add(layer.name)
            if layer.kind not in LAYER_KINDS:
                raise GraphError(f"layer '{layer.name}': unknown kind {layer.kind!r}")
            if layer.kind == "softmax" and i != len(self.layers) - 1:
                raise GraphError(f"layer '{layer.name}': softmax must be the final layer")
            shape = self._out_shape(layer, shape, shapes)
            shapes[layer.name] = shape
        return shapes

    def _out_shape(self, layer, shape, shapes):
        kind = layer.kind
        if kind == "conv2d":
            if len(shape) != 3:
                raise GraphError(f"layer '{layer.name}': conv needs (C,H,W) input, got {shape}")
            w = self.weight(layer.weights, layer.name)
            if w.ndim != 4:
                raise GraphError(f"layer '{layer.name}': filter '{layer.weights}' must be rank 4")
            k, c, r, s = w.shape
            if c != shape[0]:
                raise GraphError(
                    f"layer '{layer.name}': input channels {shape[0]} != filter channels {c}"
                )
            if layer.bias is not None:
                b = self.weight(layer.bias, layer.name)
                if b.shape != (k,):
                    raise GraphError(f"layer '{layer.name}': bias shape {b.shape} != ({k},)")
            out_h, out_w = layer.geom.out_hw(shape[1], shape[2], r, s)
            return (k, out_h, out_w)
        if kind == "dense":
            if len(shape) != 1:
                raise GraphError(
                    f"layer '{layer.name}': dense needs flat input, got {shape} "
                    f"(insert a flatten layer)"
                )
            w = self.weight(layer.weights, layer.name)
            if w.ndim != 2 or w.shape[1] != shape[0]:
                raise GraphError(
                    f"layer '{layer.name}': weights {tuple(w.shape)} incompatible with input ({shape[0]},)"
                )
            if layer.bias is not None:
                b = self.weight(layer.bias, layer.name)
                if b.shape != (w.shape[0],):
                    raise GraphError(f"layer '{layer.name}': bias shape {b.shape} != ({w.shape[0]},)")
            return (w.shape[0],)
        if kind == "batch_norm":
            if len(shape) != 3:
                raise GraphError(f"layer '{layer.name}': batch_norm needs (C,H,W) input, got {shape}")
            for ref in (layer.gamma, layer.beta, layer.mean, layer.var):
                p = self.weight(ref, layer.name)
                if p.shape != (shape[0],):
                    raise GraphError(
                        f"layer '{layer.name}': param '{ref}' length {p.shape} != channels ({shape[0]},)"
                    )
            return shape
        if kind == "pool":
            if len(shape) != 3:
                raise GraphError(f"layer '{layer.name}': pool needs (C,H,W) input, got {shape}")
            wh, ww = layer.window
            sh, sw = layer.pool_stride
            if wh > shape[1] or ww > shape[2]:
                raise GraphError(
                    f"layer '{layer.name}': window {wh}x{ww} larger than input {shape[1]}x{shape[2]}"
                )
            return (shape[0], (shape[1] - wh) // sh + 1, (shape[2] - ww) // sw + 1)
        if kind == "activation":
            return shape
        if kind == "add":
            if layer.other not in shapes:
                raise GraphError(f"layer '{layer.name}': add references unknown layer '{layer.other}'")
            if shapes[layer.other] != shape:
                raise GraphError(
                    f"layer '{layer.name}' (shape {shape}) and layer '{layer.other}' "
                    f"(shape {shapes[layer.other]}) cannot be added"
                )
            return shape
        if kind == "flatten":
            return (int(np.prod(shape)),)
        if kind == "softmax":
            if len(shape) != 1:
                raise GraphError(f"layer '{layer.name}': softmax needs flat input, got {shape}")
            return shape
        raise GraphError(f"layer '{layer.name}': unhandled kind {kind!r}")


def _layer_from_manifest(entry):
    kind = entry.get("kind")
    name = entry.get("name")
    if not name:
        raise GraphError(f"layer entry missing a name: {entry}")
    kwargs = {"name": name, "kind": kind}
    if kind == "conv2d":
        stride = entry.get("stride", [1, 1])
        pad = entry.get("pad", [0, 0])
        kwargs["geom"] = ConvGeometry(int(stride[0]), int(stride[1]), int(pad[0]), int(pad[1]))
        kwargs["weights"] = entry["filter"]
        kwargs["bias"] = entry.get("bias")
    elif kind == "dense":
        kwargs["weights"] = entry["weights"]
        kwargs["bias"] = entry.get("bias")
    elif kind == "batch_norm":
        for f in ("gamma", "beta", "mean", "var"):
            kwargs[f] = entry[f]
        kwargs["eps"] = float(entry.get("eps", 1e-5))
    elif kind == "pool":
        kwargs["pool_op"] = entry["op"]
        kwargs["window"] = tuple(entry["window"])
        kwargs["pool_stride"] = tuple(entry.get("stride", entry["window"]))
    elif kind == "activation":
        kwargs["act"] = entry["fn"]
        kwargs["clip"] = entry.get("clip")
    elif kind == "add":
        kwargs["other"] = entry["other"]
    elif kind in ("softmax", "flatten"):
        pass
    else:
        raise GraphError(f"layer '{name}': unknown kind {kind!r}")
    return LayerSpec(**kwargs)


def _layer_to_manifest(layer: LayerSpec):
    entry = {"name": layer.name, "kind": layer.kind}
    if layer.kind == "conv2d":
        entry["filter"] = layer.weights
        if layer.bias is not None:
            entry["bias"] = layer.bias
        entry["stride"] = [layer.geom.stride_h, layer.geom.stride_w]
        entry["pad"] = [layer.geom.pad_h, layer.geom.pad_w]
    elif layer.kind == "dense":
        entry["weights"] = layer.weights
        if layer.bias is not None:
            entry["bias"] = layer.bias
    elif layer.kind == "batch_norm":
        entry.update(gamma=layer.gamma, beta=layer.beta, mean=layer.mean, var=layer.var, eps=layer.eps)
    elif layer.kind == "pool":
        entry.update(op=layer.pool_op, window=list(layer.window), stride=list(layer.pool_stride))
    elif layer.kind == "activation":
        entry["fn"] = layer.act
        if layer.clip is not None:
            entry["clip"] = layer.clip
    elif layer.kind == "add":
        entry["other"] = layer.other
    return entry


def build_graph(manifest, archive) -> NetworkGraph:
    """Build a shape-checked graph from a manifest dict (or JSON path) and a
    loaded weight archive (name -> float32 array)."""
    if isinstance(manifest, str):
        with open(manifest) as fh:
            manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != GRAPH_VERSION:
        raise GraphError(f"unsupported graph manifest version {version!r} (expected {GRAPH_VERSION!r})")
    layers = [_layer_from_manifest(e) for e in manifest.get("layers", [])]
    if not layers:
        raise GraphError("graph manifest has no layers")
    return NetworkGraph(
        manifest.get("name", "network"),
        tuple(manifest["input_shape"]),
        layers,
        archive,
    )


def graph_manifest(graph: NetworkGraph) -> dict:
    return {
        "format_version": GRAPH_VERSION,
        "name": graph.name,
        "input_shape": list(graph.input_shape),
        "layers": [_layer_to_manifest(l) for l in graph.layers],
    }


def validate_configuration(graph: NetworkGraph, config: Configuration) -> None:
    """Check knob coverage and per-layer legality; raises ConfigError listing
    every violation."""
    problems = []
    names = set(graph.layer_names())
    for layer_name in config.knobs:
        if layer_name not in names:
            problems.append(f"knob for unknown layer '{layer_name}'")
    for layer in graph.layers:
        knob = config.knobs.get(layer.name)
        if knob is None:
            problems.append(f"layer '{layer.name}' has no knob")
            continue
        if not knob.is_exact and layer.kind != "conv2d":
            problems.append(
                f"layer '{layer.name}' ({layer.kind}) cannot take knob '{knob.variant}'"
            )
    if problems:
        raise ConfigError(
            f"configuration '{config.id}' invalid: " + "; ".join(problems)
        )


def knob_spec(knob: KnobSetting):
    """Translate a conv knob into the op-level spec it dispatches to."""
    if knob.variant == "perf_row":
        return PerforationSpec("row", knob.stride, knob.offset)
    if knob.variant == "perf_col":
        return PerforationSpec("col", knob.stride, knob.offset)
    if knob.variant == "filter_samp":
        return FilterSampleSpec(knob.stride, knob.offset)
    return None


def default_knob_domain(graph: NetworkGraph, strides=(2, 3, 4), with_fp16=True):
    """Per-layer candidate knobs: exact (+-fp16) everywhere; conv layers add
    row/column perforation and filter sampling over the stride/offset grid.
    The softmax layer stays exact (quantizing probabilities buys nothing)."""
    fp16_opts = (False, True) if with_fp16 else (False,)
    domain = {}
    for layer in graph.layers:
        knobs = [KnobSetting(fp16=f) for f in fp16_opts]
        if layer.kind == "softmax":
            knobs = [EXACT]
        elif layer.kind == "conv2d":
            for variant in ("perf_row", "perf_col", "filter_samp"):
                for stride in strides:
                    for offset in range(stride):
                        for f in fp16_opts:
                            knobs.append(KnobSetting(variant, stride, offset, fp16=f))
        domain[layer.name] = knobs
    return domain


# --- configuration file -----------------------------------------------------

def _knob_to_dict(layer_name, knob: KnobSetting):
    d = {"layer": layer_name, "variant": knob.variant, "fp16": knob.fp16}
    if knob.stride is not None:
        d["stride"] = knob.stride
        d["offset"] = knob.offset
    return d


def _knob_from_dict(d, where):
    variant = d.get("variant")
    if variant not in KNOB_VARIANTS:
        raise ConfigFormatError(f"{where}: unknown knob variant {variant!r}")
    try:
        return d["layer"], KnobSetting(
            variant,
            d.get("stride"),
            d.get("offset"),
            bool(d.get("fp16", False)),
        )
    except (KeyError, ConfigError) as err:
        raise ConfigFormatError(f"{where}: {err}")


def _config_to_dict(config: Configuration):
    d = {
        "id": config.id,
        "knobs": [_knob_to_dict(n, k) for n, k in config.knobs.items()],
    }
    if config.predicted is not None:
        d["predicted"] = {
            "qos_loss": config.predicted.qos_loss,
            "speedup": config.predicted.speedup,
        }
    if config.profile is not None:
        d["profile"] = config.profile.to_json_dict()
    if config.outlier:
        d["outlier"] = True
    return d


def _config_from_dict(d, index):
    where = f"configuration #{index} ({d.get('id', '<no id>')})"
    if "id" not in d or "knobs" not in d:
        raise ConfigFormatError(f"{where}: missing 'id' or 'knobs'")
    knobs = {}
    for kd in d["knobs"]:
        name, knob = _knob_from_dict(kd, where)
        if name in knobs:
            raise ConfigFormatError(f"{where}: duplicate knob for layer '{name}'")
        knobs[name] = knob
    predicted = None
    if d.get("predicted") is not None:
        p = d["predicted"]
        predicted = PredictedMetrics(float(p["qos_loss"]), float(p["speedup"]))
    prof = None
    if d.get("profile") is not None:
        from .profiler import ProfileRecord

        prof = ProfileRecord.from_json_dict(d["profile"])
    return Configuration(d["id"], knobs, predicted, prof, bool(d.get("outlier", False)))


def serialize_configurations(configs, path, temperature=None, model=None) -> None:
    """Write configurations (with any tuner/profiler metadata) to a versioned
    JSON file. Ordering follows the input list; output is deterministic."""
    doc = {
        "format_version": CONFIG_VERSION,
        "model": model,
        "temperature": temperature,
        "configurations": [_config_to_dict(c) for c in configs],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


@dataclass
class ConfigFile:
    configurations: list
    temperature: float | None = None
    model: str | None = None


def parse_configurations(path) -> ConfigFile:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigFormatError(f"{path}: not valid JSON ({err})")
    version = doc.get("format_version")
    if version != CONFIG_VERSION:
        raise ConfigFormatError(
            f"{path}: unsupported configuration file version {version!r} (expected {CONFIG_VERSION!r})"
        )
    configs = [_config_from_dict(d, i) for i, d in enumerate(doc.get("configurations", []))]
    temp = doc.get("temperature")
    return ConfigFile(configs, None if temp is None else float(temp), doc.get("model"))
