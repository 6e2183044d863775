"""Random discrete network specs for property-based checks."""

from __future__ import annotations

import math

import numpy as np

from .netspec import (
    Filter,
    FilterAttachment,
    LayerSpec,
    MergeGroup,
    MergeKind,
    MergeSpec,
    NetworkSpec,
    Nonlinearity,
    validate,
)

GRIDS_1D = (8, 12, 16, 24, 32)
GRIDS_2D = (4, 6, 8)
UNBOUNDED = ("relu", "abs", "identity")
P_VALUES = (1.0, 1.5, 2.0, 3.0, math.inf)


def _taps(rng, shape, scale):
    size = tuple(int(rng.integers(1, min(4, n) + 1)) for n in shape)
    taps = rng.standard_normal(size) * scale / math.sqrt(np.prod(size))
    origin = tuple(int(rng.integers(0, s)) for s in size)
    return Filter(taps, origin)


def _merge(rng, piecewise_linear, K):
    if piecewise_linear:
        return MergeSpec(MergeKind.PNORM, math.inf) if rng.random() < 0.4 and K > 1 else MergeSpec(MergeKind.SUM)
    u = rng.random()
    if u < 0.35:
        return MergeSpec(MergeKind.SUM)
    if u < 0.75:
        return MergeSpec(MergeKind.PNORM, float(rng.choice(P_VALUES)))
    return MergeSpec(MergeKind.PRODUCT)


def _sigma(rng, merge, piecewise_linear):
    if merge.kind is MergeKind.PRODUCT:
        return Nonlinearity("clipped_sigmoid")
    if piecewise_linear:
        return Nonlinearity(str(rng.choice(UNBOUNDED)))
    if rng.random() < 0.1:
        return Nonlinearity("custom_table", ((-1.0, 0.0, 2.0), (-0.5, 0.0, 1.0)))
    return Nonlinearity(str(rng.choice(UNBOUNDED + ("clipped_sigmoid",))))


def random_network(rng, max_layers=4, max_nodes=3, ndim=None, strides=True,
                   linear_layers=True, piecewise_linear=False, scale=(0.3, 1.5), depth=None, shape=None):
    """A validated random discrete network.

    ``strides=False`` yields dilation-free nets.  ``piecewise_linear=True``
    restricts merges to sums and max merges and nonlinearities to relu, abs
    and identity, so the result can be linearized.  ``depth`` and ``shape``
    fix the layer count and input grid instead of drawing them.
    """
    if shape is None:
        ndim = ndim or (1 if rng.random() < 0.7 else 2)
        shape = ((int(rng.choice(GRIDS_1D)),) if ndim == 1
                 else tuple(int(rng.choice(GRIDS_2D)) for _ in range(2)))
    shape = tuple(shape)
    ndim = len(shape)
    if depth is None:
        depth = int(rng.integers(2, max_layers + 1)) if max_layers > 1 else 1
    layers = []
    n_in, grid = 1, shape
    for m in range(depth):
        pooling = tuple(_taps(rng, grid, rng.uniform(*scale)) if (m == depth - 1 or rng.random() < 0.6) else None
                        for _ in range(n_in))
        if m == depth - 1:
            layers.append(LayerSpec(n_in, pooling, (), ()))
            break
        stride = 1
        if strides and rng.random() < 0.4:
            s = int(rng.choice((2, 3)))
            if all(n % s == 0 and n // s >= 2 for n in grid):
                stride = s
        dil = (stride,) * ndim
        n_out = int(rng.integers(1, max_nodes + 1))
        if linear_layers and rng.random() < 0.2:
            filters = []
            for j in range(n_out):
                sigma = _sigma(rng, MergeSpec(), piecewise_linear)
                srcs = rng.choice(n_in, size=int(rng.integers(1, n_in + 1)), replace=False)
                for src in sorted(int(s) for s in srcs):
                    filters.append(FilterAttachment(_taps(rng, grid, rng.uniform(*scale)), src, dil, sigma, None, j))
            layers.append(LayerSpec(n_in, pooling, tuple(filters), None))
        else:
            filters, groups = [], []
            for _ in range(n_out):
                K = int(rng.integers(1, 4))
                merge = _merge(rng, piecewise_linear, K)
                members = []
                for _ in range(K):
                    att = FilterAttachment(_taps(rng, grid, rng.uniform(*scale)), int(rng.integers(0, n_in)), dil,
                                           _sigma(rng, merge, piecewise_linear))
                    members.append(len(filters))
                    filters.append(att)
                groups.append(MergeGroup(tuple(members), merge))
            layers.append(LayerSpec(n_in, pooling, tuple(filters), tuple(groups)))
        n_in = n_out
        grid = tuple(n // stride for n in grid)
    return validate(NetworkSpec(tuple(layers), shape))
