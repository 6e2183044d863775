"""Discrete forward evaluation of a network on periodic grids.

Signals are float64 arrays whose trailing axes are the grid; any leading
axes are treated as a batch, so one call can push many inputs through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .netspec import Domain, MergeKind


class ForwardError(ValueError):
    pass


def circular_conv(x, filt):
    """y[n] = sum_i taps[i] x[n - (i - origin)] on the trailing ``taps.ndim`` axes."""
    if filt.taps.dtype.kind == "c" and np.any(filt.taps.imag):
        raise ForwardError("forward evaluation needs real taps")
    axes = tuple(range(-filt.taps.ndim, 0))
    out = None
    for lag, coef in filt.lags():
        term = float(np.real(coef)) * np.roll(x, lag, axis=axes)
        out = term if out is None else out + term
    if out is None:
        return np.zeros_like(x, dtype=float)
    return out


def circular_corr(y, filt):
    """Adjoint of :func:`circular_conv`."""
    ndim = filt.taps.ndim
    axes = tuple(range(-ndim, 0))
    out = None
    for lag, coef in filt.lags():
        term = float(np.real(coef)) * np.roll(y, tuple(-l for l in lag), axis=axes)
        out = term if out is None else out + term
    if out is None:
        return np.zeros_like(y, dtype=float)
    return out


def downsample(x, stride):
    """Keep every s-th sample per trailing axis, phase 0."""
    if all(s == 1 for s in stride):
        return x
    index = (Ellipsis,) + tuple(slice(None, None, s) for s in stride)
    return x[index]


def upsample(y, stride, shape):
    """Adjoint of :func:`downsample`: zero-fill back onto ``shape``."""
    if all(s == 1 for s in stride):
        return y
    out = np.zeros(y.shape[: y.ndim - len(stride)] + tuple(shape))
    out[(Ellipsis,) + tuple(slice(None, None, s) for s in stride)] = y
    return out


def merge_apply(merge, inputs):
    """Combine already-activated member signals pointwise."""
    if not inputs:
        raise ForwardError("merge of an empty input list")
    stack = np.stack([np.asarray(v, dtype=float) for v in inputs])
    kind = merge.kind
    if kind is MergeKind.SUM:
        return stack.sum(axis=0)
    if kind is MergeKind.PRODUCT:
        return np.prod(stack, axis=0)
    if math.isinf(merge.p):
        return np.abs(stack).max(axis=0)
    return (np.abs(stack) ** merge.p).sum(axis=0) ** (1.0 / merge.p)


@dataclass
class FeatureBundle:
    """Feature-tap signals keyed by (layer, node) in layer-major order."""

    features: dict
    grid_ndim: int

    def keys(self):
        return list(self.features)

    def __getitem__(self, key):
        return self.features[key]

    def __len__(self):
        return len(self.features)

    def squared_norm(self):
        axes = tuple(range(-self.grid_ndim, 0))
        total = 0.0
        for v in self.features.values():
            total = total + np.sum(v * v, axis=axes)
        return total

    def norm(self):
        """|||Phi(f)||| = (sum over taps of ||f_N||_2^2)^(1/2), per batch item."""
        return np.sqrt(self.squared_norm())

    def flatten(self):
        """Concatenate taps into one vector (or one row per batch item)."""
        parts = []
        for v in self.features.values():
            lead = v.shape[: v.ndim - self.grid_ndim]
            parts.append(v.reshape(lead + (-1,)))
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts, axis=-1)

    def __sub__(self, other):
        return FeatureBundle({k: v - other.features[k] for k, v in self.features.items()}, self.grid_ndim)


def feature_norm(bundle):
    return bundle.norm()


@dataclass
class LayerTrace:
    """Intermediate values of one layer, kept for linearization."""

    inputs: list
    preact: dict = field(default_factory=dict)
    activated: dict = field(default_factory=dict)


def propagate(net, f, traces=None):
    """Run the network; append a LayerTrace per layer to ``traces`` if given."""
    if net.domain is not Domain.DISCRETE:
        raise ForwardError("forward evaluation needs a discrete network")
    f = np.asarray(f, dtype=float)
    if tuple(f.shape[f.ndim - net.ndim:]) != tuple(net.input_shape):
        raise ForwardError(f"input of shape {f.shape} does not match grid {tuple(net.input_shape)}")
    nodes = [f]
    features = {}
    for m, layer in enumerate(net.layers):
        trace = LayerTrace(inputs=nodes) if traces is not None else None
        for n, tap in enumerate(layer.feature_taps):
            if tap:
                features[(m, n)] = circular_conv(nodes[n], layer.pooling[n])
        if not layer.filters:
            nodes = []
        elif layer.is_linear:
            nodes = _linear_layer(layer, nodes, trace)
        else:
            nodes = _merge_layer(m, layer, nodes, trace)
        if traces is not None:
            traces.append(trace)
    return FeatureBundle(features, net.ndim)


def _linear_layer(layer, nodes, trace):
    sums = {}
    for att in layer.filters:
        y = circular_conv(nodes[att.source], att.filter)
        sums[att.target] = y if att.target not in sums else sums[att.target] + y
    out = []
    for j in range(layer.output_count):
        att = next(a for a in layer.filters if a.target == j)
        z = downsample(sums[j], att.dilation)
        if trace is not None:
            trace.preact[j] = z
        out.append(att.sigma(z))
    return out


def _merge_layer(m, layer, nodes, trace):
    out = []
    for g, group in enumerate(layer.merges):
        members = []
        for k in group.members:
            att = layer.filters[k]
            z = downsample(circular_conv(nodes[att.source], att.filter), att.dilation)
            y = att.sigma(z)
            if group.merge.kind is MergeKind.PRODUCT and np.any(np.abs(y) > 1.0 + 1e-12):
                raise ForwardError(f"layer {m} output node {g}: product-merge member {k} exceeds sup-norm 1")
            if trace is not None:
                trace.preact[k] = z
                trace.activated[k] = y
            members.append(y)
        out.append(merge_apply(group.merge, members))
    return out


def forward(net, f):
    """Feature bundle Phi(f) for one input or a batch of inputs."""
    return propagate(net, f)


def empirical_ratio(net, f, g):
    """|||Phi(f) - Phi(g)||| / ||f - g||_2."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    axes = tuple(range(-net.ndim, 0))
    denom = np.sqrt(np.sum((f - g) ** 2, axis=axes))
    if np.any(denom == 0):
        raise ForwardError("empirical ratio needs f != g")
    diff = forward(net, f) - forward(net, g)
    return diff.norm() / denom
