"""Exact and approximate tensor operations with compute-cost accounting.

Convolutions are lowered through im2col onto one einsum contraction; the
perforated and filter-sampled variants reuse the same lowering so that their
identity cases (empty skip set, empty removed set) are bit-for-bit equal to
the exact path. Every operation reports its work to a caller-owned
CostCounter: multiply-accumulates for conv/dense, element counts for
everything else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


@dataclass
class CostCounter:
    """Running multiply-accumulate and element-op counts for one inference."""

    macs: int = 0
    elems: int = 0

    def add_macs(self, n: int) -> None:
        self.macs += int(n)

    def add_elems(self, n: int) -> None:
        self.elems += int(n)

    def snapshot(self) -> "CostCounter":
        return CostCounter(self.macs, self.elems)

    def reset(self) -> None:
        self.macs = 0
        self.elems = 0


@dataclass(frozen=True)
class ConvGeometry:
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError(f"strides must be positive, got ({self.stride_h}, {self.stride_w})")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError(f"padding must be non-negative, got ({self.pad_h}, {self.pad_w})")

    def out_hw(self, in_h: int, in_w: int, r: int, s: int):
        out_h = (in_h + 2 * self.pad_h - r) // self.stride_h + 1
        out_w = (in_w + 2 * self.pad_w - s) // self.stride_w + 1
        if out_h < 1 or out_w < 1:
            raise ShapeError(
                f"filter {r}x{s} does not fit input {in_h}x{in_w} "
                f"(pad {self.pad_h},{self.pad_w} stride {self.stride_h},{self.stride_w})"
            )
        return out_h, out_w


@dataclass(frozen=True)
class PerforationSpec:
    """Skip output rows or columns {offset, offset+stride, ...} of a convolution."""

    axis: str  # "row" | "col"
    stride: int
    offset: int

    def __post_init__(self):
        if self.axis not in ("row", "col"):
            raise ValueError(f"perforation axis must be 'row' or 'col', got {self.axis!r}")
        if self.stride < 2:
            raise ValueError(f"perforation stride must be >= 2, got {self.stride}")
        if self.offset < 0:
            raise ValueError(f"perforation offset must be >= 0, got {self.offset}")

    def skipped(self, extent: int) -> np.ndarray:
        return np.arange(self.offset, extent, self.stride)

    def computed(self, extent: int) -> np.ndarray:
        mask = np.ones(extent, dtype=bool)
        skip = self.skipped(extent)
        mask[skip] = False
        return np.nonzero(mask)[0]


@dataclass(frozen=True)
class FilterSampleSpec:
    """Zero filter components {offset, offset+stride, ...} in C*R*S flat order
    and rescale the survivors by n_elm / n_samp."""

    stride: int
    offset: int

    def __post_init__(self):
        if self.stride < 2:
            raise ValueError(f"filter sampling stride must be >= 2, got {self.stride}")
        if self.offset < 0:
            raise ValueError(f"filter sampling offset must be >= 0, got {self.offset}")

    def removed(self, n_elm: int) -> np.ndarray:
        return np.arange(self.offset, n_elm, self.stride)

    def removed_count(self, n_elm: int) -> int:
        # Cardinality of {offset, offset+stride, ...} below n_elm.
        if self.offset >= n_elm:
            return 0
        return (n_elm - self.offset + self.stride - 1) // self.stride

    def n_samp(self, n_elm: int) -> int:
        return n_elm - self.removed_count(n_elm)


def _check_conv_shapes(x, w, bias):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4 [N,C,H,W], got shape {tuple(x.shape)}")
    if w.ndim != 4:
        raise ShapeError(f"conv filter must be rank 4 [K,C,R,S], got shape {tuple(w.shape)}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} != filter channels {w.shape[1]} "
            f"(input {tuple(x.shape)}, filter {tuple(w.shape)})"
        )
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({w.shape[0]},)")


def _conv_at(x, w, geom, h_idx, w_idx):
    """Cross-correlate at the given output row/column index grids.

    Returns [N, K, len(h_idx), len(w_idx)]. The im2col flat order is (c, r, s),
    matching w.reshape(K, -1), so restricting the grids never changes the
    per-element reduction order.
    """
    n, c, h, wdt = x.shape
    k, _, r, s = w.shape
    xp = x
    if geom.pad_h or geom.pad_w:
        xp = np.pad(x, ((0, 0), (0, 0), (geom.pad_h, geom.pad_h), (geom.pad_w, geom.pad_w)))
    # Patch top-left corners for every requested output position.
    top = geom.stride_h * np.asarray(h_idx, dtype=np.intp)
    left = geom.stride_w * np.asarray(w_idx, dtype=np.intp)
    rows = top[:, None] + np.arange(r, dtype=np.intp)[None, :]      # [Hsel, R]
    cols = left[:, None] + np.arange(s, dtype=np.intp)[None, :]     # [Wsel, S]
    # Gather to [N, C, Hsel, R, Wsel, S] then order as (positions, c, r, s).
    patches = xp[:, :, rows[:, :, None, None], cols[None, None, :, :]]
    patches = patches.transpose(0, 2, 4, 1, 3, 5)                   # N,Hsel,Wsel,C,R,S
    pmat = np.ascontiguousarray(patches.reshape(n, len(h_idx) * len(w_idx), c * r * s))
    # einsum, not BLAS matmul: its per-element reduction order depends only on
    # the contraction length, so outputs for identical patches are bit-equal
    # no matter which subset of positions was gathered (the perforation
    # identities rely on this).
    out = np.einsum("npj,kj->nkp", pmat, w.reshape(k, -1))
    return out.reshape(n, k, len(h_idx), len(w_idx))


def conv2d_exact(x, w, bias, geom: ConvGeometry, counter: CostCounter):
    """Standard cross-correlation, [N,C,H,W] * [K,C,R,S] -> [N,K,Hout,Wout]."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    bias = None if bias is None else np.asarray(bias, dtype=np.float32)
    _check_conv_shapes(x, w, bias)
    n, c, h, wdt = x.shape
    k, _, r, s = w.shape
    out_h, out_w = geom.out_hw(h, wdt, r, s)
    out = _conv_at(x, w, geom, np.arange(out_h), np.arange(out_w))
    counter.add_macs(n * k * out_h * out_w * c * r * s)
    if bias is not None:
        out = out + bias[None, :, None, None]
        counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def interpolate_skipped(partial, perf: PerforationSpec):
    """Fill skipped rows/columns with the mean of the nearest computed
    neighbors on each side; boundary positions copy their single neighbor.

    ``partial`` is a full-size [N,K,H,W] tensor whose skipped positions (per
    ``perf``) hold placeholder values.
    """
    out = np.array(partial, dtype=np.float32)
    extent = out.shape[2] if perf.axis == "row" else out.shape[3]
    computed = perf.computed(extent)
    if computed.size == 0:
        raise ValueError(
            f"perforation (stride={perf.stride}, offset={perf.offset}) skips every "
            f"{perf.axis} of extent {extent}; nothing left to interpolate from"
        )
    skipped = perf.skipped(extent)
    if perf.axis == "col":
        out = out.transpose(0, 1, 3, 2)
    for idx in skipped:
        below = computed[computed < idx]
        above = computed[computed > idx]
        if below.size and above.size:
            out[:, :, idx, :] = (out[:, :, below[-1], :] + out[:, :, above[0], :]) / 2.0
        elif below.size:
            out[:, :, idx, :] = out[:, :, below[-1], :]
        else:
            out[:, :, idx, :] = out[:, :, above[0], :]
    if perf.axis == "col":
        out = out.transpose(0, 1, 3, 2)
    return out


def conv2d_perforated(x, w, bias, geom: ConvGeometry, perf: PerforationSpec, counter: CostCounter):
    """Convolution that computes only non-skipped output rows/columns and
    interpolates the rest. MACs count only the computed positions."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    bias = None if bias is None else np.asarray(bias, dtype=np.float32)
    _check_conv_shapes(x, w, bias)
    n, c, h, wdt = x.shape
    k, _, r, s = w.shape
    out_h, out_w = geom.out_hw(h, wdt, r, s)

    extent = out_h if perf.axis == "row" else out_w
    comp = perf.computed(extent)
    if comp.size == 0:
        raise ValueError(
            f"perforation (stride={perf.stride}, offset={perf.offset}) skips every "
            f"{perf.axis} of extent {extent}"
        )
    if perf.axis == "row":
        h_idx, w_idx = comp, np.arange(out_w)
    else:
        h_idx, w_idx = np.arange(out_h), comp

    computed = _conv_at(x, w, geom, h_idx, w_idx)
    counter.add_macs(n * k * computed.shape[2] * computed.shape[3] * c * r * s)

    skipped_count = extent - comp.size
    if skipped_count == 0:
        out = computed
    else:
        out = np.zeros((n, k, out_h, out_w), dtype=np.float32)
        if perf.axis == "row":
            out[:, :, h_idx, :] = computed
        else:
            out[:, :, :, w_idx] = computed
        out = interpolate_skipped(out, perf)
        counter.add_elems(n * k * skipped_count * (out_w if perf.axis == "row" else out_h))

    if bias is not None:
        out = out + bias[None, :, None, None]
        counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def conv2d_filter_sampled(x, w, bias, geom: ConvGeometry, samp: FilterSampleSpec, counter: CostCounter):
    """Convolution with a strided subset of each filter's C*R*S components
    removed and the survivors rescaled by n_elm/n_samp."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    bias = None if bias is None else np.asarray(bias, dtype=np.float32)
    _check_conv_shapes(x, w, bias)
    n, c, h, wdt = x.shape
    k, _, r, s = w.shape
    n_elm = c * r * s
    n_samp = samp.n_samp(n_elm)
    if n_samp == 0:
        raise ValueError(
            f"filter sampling (stride={samp.stride}, offset={samp.offset}) removes "
            f"all {n_elm} filter components"
        )
    removed = samp.removed(n_elm)
    if removed.size:
        w_mod = w.reshape(k, n_elm) * np.float32(n_elm / n_samp)
        w_mod[:, removed] = 0.0
        w_mod = w_mod.reshape(k, c, r, s)
    else:
        # Rescale factor is exactly 1.0; keep the original bits.
        w_mod = w
    out_h, out_w = geom.out_hw(h, wdt, r, s)
    out = _conv_at(x, w_mod, geom, np.arange(out_h), np.arange(out_w))
    counter.add_macs(n * k * out_h * out_w * n_samp)
    if bias is not None:
        out = out + bias[None, :, None, None]
        counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def dense(x, w, bias, counter: CostCounter):
    """[N,F] x [G,F] (+ bias[G]) -> [N,G]."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense expects [N,F] and [G,F], got {tuple(x.shape)} and {tuple(w.shape)}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense features mismatch: input {tuple(x.shape)} vs weights {tuple(w.shape)}")
    out = x @ w.T
    counter.add_macs(x.shape[0] * w.shape[0] * w.shape[1])
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float32)
        if bias.shape != (w.shape[0],):
            raise ShapeError(f"dense bias shape {tuple(bias.shape)} != ({w.shape[0]},)")
        out = out + bias[None, :]
        counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def activation(x, kind: str, counter: CostCounter, clip: float | None = None):
    """Element-wise relu / clipped_relu / tanh."""
    x = np.asarray(x, dtype=np.float32)
    if kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "clipped_relu":
        if clip is None or clip <= 0:
            raise ValueError(f"clipped_relu needs clip > 0, got {clip}")
        out = np.minimum(np.maximum(x, 0.0), np.float32(clip))
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def batch_norm(x, gamma, beta, mean, var, eps, counter: CostCounter):
    """Per-channel y = gamma * (x - mean) / sqrt(var + eps) + beta on [N,C,H,W]."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects [N,C,H,W], got {tuple(x.shape)}")
    if eps <= 0:
        raise ValueError(f"batch_norm eps must be > 0, got {eps}")
    c = x.shape[1]
    params = []
    for pname, p in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        p = np.asarray(p, dtype=np.float32)
        if p.shape != (c,):
            raise ShapeError(f"batch_norm {pname} length {p.shape} != channels ({c},)")
        params.append(p)
    gamma, beta, mean, var = params
    scale = gamma / np.sqrt(var + np.float32(eps))
    out = (x - mean[None, :, None, None]) * scale[None, :, None, None] + beta[None, :, None, None]
    counter.add_elems(out.size)
    return out.astype(np.float32, copy=False)


def pool(x, kind: str, window, stride, counter: CostCounter):
    """min / max / average pooling over spatial dims of [N,C,H,W]."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"pool expects [N,C,H,W], got {tuple(x.shape)}")
    wh, ww = (window, window) if np.isscalar(window) else tuple(window)
    sh, sw = (stride, stride) if np.isscalar(stride) else tuple(stride)
    n, c, h, w = x.shape
    if wh > h or ww > w:
        raise ShapeError(f"pool window {wh}x{ww} larger than input {h}x{w}")
    out_h = (h - wh) // sh + 1
    out_w = (w - ww) // sw + 1
    rows = sh * np.arange(out_h)[:, None] + np.arange(wh)[None, :]
    cols = sw * np.arange(out_w)[:, None] + np.arange(ww)[None, :]
    windows = x[:, :, rows[:, :, None, None], cols[None, None, :, :]]  # N,C,Ho,wh,Wo,ww
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, out_h, out_w, wh * ww)
    if kind == "max":
        out = windows.max(axis=-1)
    elif kind == "min":
        out = windows.min(axis=-1)
    elif kind == "average":
        out = windows.mean(axis=-1, dtype=np.float32)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    counter.add_elems(n * c * out_h * out_w * wh * ww)
    return out.astype(np.float32, copy=False)


def elementwise_add(a, b, counter: CostCounter):
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_add shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    counter.add_elems(a.size)
    return (a + b).astype(np.float32, copy=False)


def bias_add(x, bias, counter: CostCounter):
    """Add a per-channel bias to [N,C,H,W]."""
    x = np.asarray(x, dtype=np.float32)
    bias = np.asarray(bias, dtype=np.float32)
    if x.ndim != 4 or bias.shape != (x.shape[1],):
        raise ShapeError(f"bias_add: input {tuple(x.shape)} vs bias {tuple(bias.shape)}")
    counter.add_elems(x.size)
    return (x + bias[None, :, None, None]).astype(np.float32, copy=False)


def softmax_t(z, temperature: float = 1.0):
    """Row-wise temperature-scaled softmax exp(z_i/T) / sum_j exp(z_j/T).

    Computed and returned in float64 (with max subtraction for stability):
    probabilities are a derived result, not a stored tensor, and the extra
    precision keeps rows summing to 1 and the argmax aligned with the logits.
    """
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be > 0, got {temperature}")
    z = np.asarray(z, dtype=np.float64)
    squeeze = False
    if z.ndim == 1:
        z = z[None, :]
        squeeze = True
    if z.ndim != 2:
        raise ShapeError(f"softmax_t expects [N,classes], got {tuple(z.shape)}")
    scaled = z / float(temperature)
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p
