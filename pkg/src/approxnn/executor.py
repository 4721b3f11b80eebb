"""Run one network inference under a configuration, producing logits,
tempered-softmax confidences, wall time, and the MAC/element cost."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .graph import Configuration, NetworkGraph, knob_spec, validate_configuration
from .ops import CostCounter
from .tensor import quantize


class ExecutionError(RuntimeError):
    """An operation failed while executing a layer."""


@dataclass
class InferenceResult:
    logits: np.ndarray          # [N, classes] float32
    probs: np.ndarray           # [N, classes] softmax at the run temperature
    predicted: np.ndarray       # [N] argmax of logits
    top_confidence: np.ndarray  # [N] probs at the predicted class
    wall_time: float
    cost: CostCounter
    temperature: float

    def row(self, i: int) -> "InferenceResult":
        return InferenceResult(
            self.logits[i : i + 1],
            self.probs[i : i + 1],
            self.predicted[i : i + 1],
            self.top_confidence[i : i + 1],
            self.wall_time,
            self.cost,
            self.temperature,
        )


@dataclass
class BatchResult:
    result: InferenceResult
    accuracy: float | None
    n: int

    def per_sample(self):
        return [self.result.row(i) for i in range(self.n)]


def _resolve_temperature(config: Configuration, temperature):
    if temperature is not None:
        return float(temperature)
    if config.profile is not None and getattr(config.profile, "temperature", None):
        return float(config.profile.temperature)
    return 1.0


def _layer_weights(graph, layer, fp16):
    def get(ref):
        w = graph.weight(ref, layer.name)
        return quantize(w) if fp16 else w

    return get


def run_inference(graph: NetworkGraph, config: Configuration, x, temperature=None) -> InferenceResult:
    """Execute every layer with its knob on a [N, C, H, W] (or [C, H, W]) input.

    An fp16 knob round-trips the layer's input, weights, and output through
    binary16; accumulation stays 32-bit. Deterministic for fixed inputs.
    """
    validate_configuration(graph, config)
    x = np.asarray(x, dtype=np.float32)
    if x.shape == graph.input_shape:
        x = x[None]
    if tuple(x.shape[1:]) != graph.input_shape:
        raise ops.ShapeError(
            f"input shape {tuple(x.shape)} does not match graph input {graph.input_shape}"
        )
    temperature = _resolve_temperature(config, temperature)

    counter = CostCounter()
    start = time.perf_counter()
    outputs = {}
    cur = x
    logits_in = None
    for layer in graph.layers:
        knob = config.knobs[layer.name]
        try:
            if layer.kind == "softmax":
                logits_in = cur
                cur = ops.softmax_t(cur, temperature)
                outputs[layer.name] = cur
                continue
            if knob.fp16:
                cur = quantize(cur)
            get = _layer_weights(graph, layer, knob.fp16)
            cur = _run_layer(layer, knob, cur, get, counter, outputs)
            if knob.fp16:
                cur = quantize(cur)
        except (ValueError, ops.ShapeError) as err:
            raise ExecutionError(f"layer '{layer.name}': {err}") from err
        outputs[layer.name] = cur

    if logits_in is None:
        logits_in = cur
    logits = logits_in.reshape(logits_in.shape[0], -1)
    wall = time.perf_counter() - start

    probs = ops.softmax_t(logits, temperature)
    predicted = np.argmax(logits, axis=1)
    top_conf = probs[np.arange(probs.shape[0]), predicted]
    return InferenceResult(logits, probs, predicted, top_conf, wall, counter, temperature)


def _run_layer(layer, knob, cur, get, counter, outputs):
    kind = layer.kind
    if kind == "conv2d":
        w = get(layer.weights)
        b = get(layer.bias) if layer.bias is not None else None
        spec = knob_spec(knob)
        if isinstance(spec, ops.PerforationSpec):
            return ops.conv2d_perforated(cur, w, b, layer.geom, spec, counter)
        if isinstance(spec, ops.FilterSampleSpec):
            return ops.conv2d_filter_sampled(cur, w, b, layer.geom, spec, counter)
        return ops.conv2d_exact(cur, w, b, layer.geom, counter)
    if kind == "dense":
        return ops.dense(cur, get(layer.weights), get(layer.bias) if layer.bias else None, counter)
    if kind == "batch_norm":
        return ops.batch_norm(
            cur, get(layer.gamma), get(layer.beta), get(layer.mean), get(layer.var), layer.eps, counter
        )
    if kind == "pool":
        return ops.pool(cur, layer.pool_op, layer.window, layer.pool_stride, counter)
    if kind == "activation":
        return ops.activation(cur, layer.act, counter, clip=layer.clip)
    if kind == "add":
        return ops.elementwise_add(cur, outputs[layer.other], counter)
    if kind == "flatten":
        return cur.reshape(cur.shape[0], -1)
    raise ValueError(f"unhandled layer kind {kind!r}")


def run_batch(graph, config, inputs, labels=None, temperature=None) -> BatchResult:
    """One forward pass over a whole batch, plus accuracy when labels are given."""
    result = run_inference(graph, config, inputs, temperature=temperature)
    accuracy = None
    if labels is not None and len(labels):
        labels = np.asarray(labels)
        if labels.shape[0] != result.predicted.shape[0]:
            raise ValueError(
                f"labels length {labels.shape[0]} != batch size {result.predicted.shape[0]}"
            )
        accuracy = float(np.mean(result.predicted == labels))
    return BatchResult(result, accuracy, result.predicted.shape[0])
