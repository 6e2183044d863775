"""Per-layer Bessel bounds of the three types.

For a merge layer the bounds are per input node,

    b1_n = sup_w |phi^_n|^2 + sum_k l_k (det D_k)^-1 |g^_k|^2
    b2_n = sup_w sum_k l_k (det D_k)^-1 |g^_k|^2
    b3_n = sup_w |phi^_n|^2

maximized over nodes.  For a linear (no-merge) layer they are suprema of the
squared spectral norm of the stacked matrix [Delta T^(w); Psi^(w)], of its
top block, and of its bottom block.

Discrete layers whose filters all have stride 1 are diagonalized exactly by
the DFT of the node grid.  Strided discrete layers mix frequencies; their b1
and b2 are the squared operator norms of the actual strided maps, computed
exactly from the aliasing blocks of the DFT.  A matrix-free power iteration
on the same maps is available as an independent check.  Closed-form profiles are maximized on a dense grid with
one local refinement around the argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import profiles
from .forward import circular_conv, circular_corr, downsample, upsample
from .linalg import power_iteration
from .netspec import Domain, MergeKind

DEFAULT_SAMPLES = 2 ** 14


class BesselError(ValueError):
    pass


@dataclass(frozen=True)
class BesselTriple:
    b1: float
    b2: float
    b3: float
    method: str = field(default="frequency", compare=False)
    grid: str = field(default="", compare=False)
    tolerance: float = field(default=0.0, compare=False)

    def __iter__(self):
        return iter((self.b1, self.b2, self.b3))

    def as_dict(self):
        return {"b1": self.b1, "b2": self.b2, "b3": self.b3,
                "method": self.method, "grid": self.grid, "tolerance": self.tolerance}


@dataclass(frozen=True)
class FrequencyGrid:
    """DFT bins of the node grids (discrete) or a dense uniform grid (closed form).

    ``band=None`` on a dense grid means: cover the union of the filters'
    declared supports.
    """

    kind: str
    node_shapes: tuple = ()
    samples: int = DEFAULT_SAMPLES
    band: tuple | None = None
    refine: bool = True

    @classmethod
    def dft(cls, node_shapes):
        return cls("dft", tuple(tuple(s) for s in node_shapes))

    @classmethod
    def dense(cls, samples=DEFAULT_SAMPLES, band=None, refine=True):
        return cls("dense", samples=int(samples), band=band, refine=refine)

    def describe(self, node=None):
        if self.kind == "dft":
            shapes = self.node_shapes if node is None else (self.node_shapes[node],)
            return "dft:" + ";".join("x".join(map(str, s)) for s in shapes)
        return f"dense:{self.samples}"


def multiplier(kind, p, K):
    """Energy multiplier of one filter inside a merge group of size K."""
    kind = MergeKind(kind)
    if K < 1:
        raise BesselError("merge group size must be positive")
    if kind is MergeKind.PNORM:
        if not p >= 1:
            raise BesselError(f"p-norm merge needs p >= 1, got {p}")
        exponent = max(0.0, 2.0 / p - 1.0) if not math.isinf(p) else 0.0
        return float(K) ** exponent
    return float(K)


def filter_multipliers(layer):
    """Multiplier l_k for every filter of a merge layer."""
    mult = [1.0] * len(layer.filters)
    for group in layer.merges:
        lk = multiplier(group.merge.kind, group.merge.p, len(group.members))
        for k in group.members:
            mult[k] = lk
    return mult


# ---------------------------------------------------------------------------
# suprema on dense grids


def _band_of(filters):
    lo, hi = math.inf, -math.inf
    for filt in filters:
        b = filt.profile.band() if filt.profile is not None else None
        if b is None:
            b = profiles.DEFAULT_BAND
        lo, hi = min(lo, b[0]), max(hi, b[1])
    if not math.isfinite(lo):
        return profiles.DEFAULT_BAND
    return lo, hi


def _dense_sup(fn, band, samples, refine):
    """max of fn on a uniform grid, then a bounded local search around the argmax."""
    omega = np.linspace(band[0], band[1], samples)
    vals = fn(omega)
    i = int(np.argmax(vals))
    best = float(vals[i])
    gain = 0.0
    if refine and samples > 2:
        lo = omega[max(i - 1, 0)]
        hi = omega[min(i + 1, samples - 1)]
        res = minimize_scalar(lambda w: -float(fn(np.array([w]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        if -res.fun > best:
            gain = -res.fun - best
            best = -res.fun
    return float(best), float(gain)


# ---------------------------------------------------------------------------
# merge layers


def _node_terms(layer, node, mult):
    return [(mult[k], layer.filters[k]) for k in layer.filters_from(node)]


def bessel_merge_node(layer, node, grid):
    """Bessel triple of one input node of a merge layer."""
    if layer.node_is_empty(node):
        raise BesselError(f"node {node} has neither filters nor a pooling filter")
    mult = filter_multipliers(layer)
    terms = _node_terms(layer, node, mult)
    pool = layer.pooling[node] if layer.feature_taps[node] else None
    if grid.kind == "dft":
        shape = grid.node_shapes[node]
        if any(att.strided for _, att in terms):
            return _merge_node_operator(terms, pool, shape, grid.describe(node))
        hidden = np.zeros(shape)
        for lk, att in terms:
            hidden += lk * np.abs(att.filter.dft(shape)) ** 2
        feat = np.abs(pool.dft(shape)) ** 2 if pool is not None else np.zeros(shape)
        return BesselTriple(float(np.max(hidden + feat)), float(np.max(hidden)), float(np.max(feat)),
                            "frequency", grid.describe(node), 0.0)
    filters = [att.filter for _, att in terms] + ([pool] if pool is not None else [])
    band = grid.band or _band_of(filters)

    def hidden(w):
        out = np.zeros(np.shape(w))
        for lk, att in terms:
            out += lk * att.energy_factor() * att.filter.power_response(w)
        return out

    def feat(w):
        return pool.power_response(w) if pool is not None else np.zeros(np.shape(w))

    b1, t1 = _dense_sup(lambda w: hidden(w) + feat(w), band, grid.samples, grid.refine)
    b2, t2 = _dense_sup(hidden, band, grid.samples, grid.refine) if terms else (0.0, 0.0)
    b3, t3 = _dense_sup(feat, band, grid.samples, grid.refine) if pool is not None else (0.0, 0.0)
    return BesselTriple(b1, b2, b3, "frequency", grid.describe(), max(t1, t2, t3))


def _merge_node_operator(terms, pool, shape, desc):
    hidden = [_Channel(att.dilation, [(0, att.filter.dft(shape), math.sqrt(lk))]) for lk, att in terms]
    feat = [_Channel((1,) * len(shape), [(0, pool.dft(shape), 1.0)])] if pool is not None else []
    b1 = _aliased_norm_sq(shape, hidden + feat, 1)
    b2 = _aliased_norm_sq(shape, hidden, 1)
    b3 = float(np.max(np.abs(pool.dft(shape)) ** 2)) if pool is not None else 0.0
    return BesselTriple(b1, b2, b3, "operator", desc, 0.0)


@dataclass
class _Channel:
    """One output signal: sum over (input node, DFT of filter, coefficient), then a stride."""

    stride: tuple
    terms: list


def _aliased_norm_sq(shape, channels, n_nodes):
    """Exact squared norm of a strided filter bank on a periodic grid.

    With S the per-axis lcm of the strides, input frequencies in one coset
    modulo N / S only feed each other's output frequencies, so the operator
    splits into small blocks, one per coset, each of size rows x (nodes * S^d).
    """
    if not channels:
        return 0.0
    d = len(shape)
    S = tuple(int(np.lcm.reduce([c.stride[i] for c in channels])) for i in range(d))
    coarse = np.array([n // s for n, s in zip(shape, S)])
    q = np.indices(tuple(coarse)).reshape(d, -1)
    r = np.indices(S).reshape(d, -1)
    omega = q[:, :, None] + r[:, None, :] * coarse[:, None, None]
    flat = np.ravel_multi_index(tuple(omega), shape)
    Q, R = flat.shape
    blocks = []
    for ch in channels:
        sub = tuple(s_all // s for s_all, s in zip(S, ch.stride))
        rows = np.ravel_multi_index(tuple(r % np.array(sub)[:, None]), sub)
        block = np.zeros((Q, int(np.prod(sub)), n_nodes * R), dtype=complex)
        scale = 1.0 / math.sqrt(float(np.prod(ch.stride)))
        for node, resp, coef in ch.terms:
            block[:, rows, node * R + np.arange(R)] += coef * scale * resp.ravel()[flat]
        blocks.append(block)
    return float(_op_norm_sq(np.concatenate(blocks, axis=1)).max())


def _node_operator_norm(terms, pool, shape, tol):
    """Squared norm of x -> [sqrt(l_k) S_k (g_k * x)]_k (+ phi * x)."""
    blocks = [(math.sqrt(lk), att.filter, att.dilation) for lk, att in terms]
    if pool is not None:
        blocks.append((1.0, pool, (1,) * len(shape)))
    if not blocks:
        return 0.0
    out_shapes = [tuple(n // s for n, s in zip(shape, dil)) for _, _, dil in blocks]
    sizes = [int(np.prod(s)) for s in out_shapes]
    n_in = int(np.prod(shape))

    def matvec(v):
        x = v.reshape(shape)
        return np.concatenate([(c * downsample(circular_conv(x, f), dil)).ravel() for c, f, dil in blocks])

    def rmatvec(u):
        out = np.zeros(shape)
        offset = 0
        for (c, f, dil), oshape, size in zip(blocks, out_shapes, sizes):
            piece = u[offset:offset + size].reshape(oshape)
            out += c * circular_corr(upsample(piece, dil, shape), f)
            offset += size
        return out.ravel()

    return power_iteration(matvec, rmatvec, n_in, tol=tol).sigma_sq


# ---------------------------------------------------------------------------
# linear (no-merge) layers


def _transfer_matrices(layer, response, nbins):
    """T^(w) (n' x n), scaled rows, and diag(phi^) at every frequency sample."""
    n_in, n_out = layer.input_count, layer.output_count
    top = np.zeros((nbins, n_out, n_in), dtype=complex)
    for att in layer.filters:
        top[:, att.target, att.source] += response(att.filter)
    scale = np.ones(n_out)
    for att in layer.filters:
        scale[att.target] = math.sqrt(att.energy_factor())
    top *= scale[None, :, None]
    bottom = np.zeros((nbins, n_in, n_in), dtype=complex)
    for n, (pool, tap) in enumerate(zip(layer.pooling, layer.feature_taps)):
        if tap:
            bottom[:, n, n] = response(pool)
    return top, bottom


def _response(filt, omega):
    """Complex response for taps; closed-form profiles carry magnitude only."""
    if filt.profile is not None:
        return np.sqrt(filt.power_response(omega))
    resp = np.zeros(omega.shape, dtype=complex)
    for lag, coef in filt.lags():
        resp += coef * np.exp(-1j * omega * lag[0])
    return resp


def _op_norm_sq(mats):
    if mats.shape[1] == 0 or mats.shape[2] == 0:
        return np.zeros(mats.shape[0])
    return np.linalg.svd(mats, compute_uv=False)[:, 0] ** 2


def bessel_no_merge_layer(layer, grid):
    """Bessel triple of a linear layer from its frequency-domain filter matrix."""
    if not layer.is_linear:
        raise BesselError("layer has merge groups; use bessel_merge_node")
    for att in layer.filters:
        if not (0 <= att.source < layer.input_count and 0 <= att.target < layer.output_count):
            raise BesselError("filter array does not match the node counts")
    if grid.kind == "dft":
        shapes = set(grid.node_shapes)
        if len(shapes) != 1:
            raise BesselError("a linear layer needs all input nodes on one grid")
        shape = shapes.pop()
        if any(att.strided for att in layer.filters):
            return _linear_operator_triple(layer, shape, grid.describe())
        nbins = int(np.prod(shape))
        top, bottom = _transfer_matrices(layer, lambda f: f.dft(shape).ravel(), nbins)
        stacked = np.concatenate([top, bottom], axis=1)
        return BesselTriple(float(_op_norm_sq(stacked).max()), float(_op_norm_sq(top).max()),
                            float(_op_norm_sq(bottom).max()), "frequency", grid.describe(), 0.0)
    filters = [a.filter for a in layer.filters] + [p for p, t in zip(layer.pooling, layer.feature_taps) if t]
    band = grid.band or _band_of(filters)

    def blocks(w):
        w = np.atleast_1d(w)
        return _transfer_matrices(layer, lambda f: _response(f, w), len(w))

    def b1_fn(w):
        top, bottom = blocks(w)
        return _op_norm_sq(np.concatenate([top, bottom], axis=1))

    b1, t1 = _dense_sup(b1_fn, band, grid.samples, grid.refine)
    b2, t2 = _dense_sup(lambda w: _op_norm_sq(blocks(w)[0]), band, grid.samples, grid.refine)
    b3, t3 = _dense_sup(lambda w: _op_norm_sq(blocks(w)[1]), band, grid.samples, grid.refine)
    return BesselTriple(b1, b2, b3, "frequency", grid.describe(), max(t1, t2, t3))


def _linear_operator_norm(layer, shape, with_pooling, tol):
    n_in = layer.input_count
    size_in = int(np.prod(shape))
    outs = []
    for j in range(layer.output_count):
        dil = next(a.dilation for a in layer.filters if a.target == j)
        outs.append((j, dil, tuple(n // s for n, s in zip(shape, dil))))
    taps = [n for n, t in enumerate(layer.feature_taps) if t] if with_pooling else []

    def matvec(v):
        xs = v.reshape((n_in,) + shape)
        sums = [np.zeros(shape) for _ in outs]
        for att in layer.filters:
            sums[att.target] += circular_conv(xs[att.source], att.filter)
        parts = [downsample(sums[j], dil).ravel() for j, dil, _ in outs]
        parts += [circular_conv(xs[n], layer.pooling[n]).ravel() for n in taps]
        return np.concatenate(parts) if parts else np.zeros(0)

    def rmatvec(u):
        xs = np.zeros((n_in,) + shape)
        offset = 0
        ups = []
        for j, dil, oshape in outs:
            size = int(np.prod(oshape))
            ups.append(upsample(u[offset:offset + size].reshape(oshape), dil, shape))
            offset += size
        for att in layer.filters:
            xs[att.source] += circular_corr(ups[att.target], att.filter)
        for n in taps:
            xs[n] += circular_corr(u[offset:offset + size_in].reshape(shape), layer.pooling[n])
            offset += size_in
        return xs.ravel()

    return power_iteration(matvec, rmatvec, n_in * size_in, tol=tol).sigma_sq


def _linear_operator_triple(layer, shape, desc):
    hidden = []
    for j in range(layer.output_count):
        atts = [a for a in layer.filters if a.target == j]
        hidden.append(_Channel(atts[0].dilation, [(a.source, a.filter.dft(shape), 1.0) for a in atts]))
    feat = [_Channel((1,) * len(shape), [(n, p.dft(shape), 1.0)])
            for n, (p, t) in enumerate(zip(layer.pooling, layer.feature_taps)) if t]
    b1 = _aliased_norm_sq(shape, hidden + feat, layer.input_count)
    b2 = _aliased_norm_sq(shape, hidden, layer.input_count)
    b3 = max((float(np.max(np.abs(p.dft(shape)) ** 2))
              for p, t in zip(layer.pooling, layer.feature_taps) if t), default=0.0)
    return BesselTriple(b1, b2, b3, "operator", desc, 0.0)


# ---------------------------------------------------------------------------
# layer and network level


def bessel_layer(layer, grid):
    """Bessel triple of a layer: node maxima for merge layers, matrix form otherwise."""
    if layer.is_linear:
        return bessel_no_merge_layer(layer, grid)
    triples = [bessel_merge_node(layer, n, grid) for n in range(layer.input_count)
               if not layer.node_is_empty(n)]
    if not triples:
        return BesselTriple(0.0, 0.0, 0.0, "frequency", grid.describe(), 0.0)
    methods = {t.method for t in triples}
    return BesselTriple(
        max(t.b1 for t in triples),
        max(t.b2 for t in triples),
        max(t.b3 for t in triples),
        "operator" if "operator" in methods else "frequency",
        grid.describe(),
        max(t.tolerance for t in triples),
    )


def bessel_discrete_operator(layer, input_shape, tol=1e-12, part="combined"):
    """Squared operator norm of a discrete layer's strided linear stage.

    ``part`` selects the hidden outputs only (``"hidden"``) or hidden plus
    pooled feature outputs (``"combined"``).  ``input_shape`` is one grid
    shape for all nodes or a list with one shape per node.
    """
    if part not in ("hidden", "combined"):
        raise ValueError("part must be 'hidden' or 'combined'")
    shapes = _node_shapes(layer, input_shape)
    with_pool = part == "combined"
    if layer.is_linear:
        if len(set(shapes)) != 1:
            raise BesselError("a linear layer needs all input nodes on one grid")
        return _linear_operator_norm(layer, shapes[0], with_pool, tol)
    mult = filter_multipliers(layer)
    best = 0.0
    for n in range(layer.input_count):
        pool = layer.pooling[n] if (with_pool and layer.feature_taps[n]) else None
        best = max(best, _node_operator_norm(_node_terms(layer, n, mult), pool, shapes[n], tol))
    return best


def _node_shapes(layer, input_shape):
    if input_shape and isinstance(input_shape[0], (tuple, list)):
        return [tuple(s) for s in input_shape]
    return [tuple(input_shape)] * layer.input_count


def network_bessel(net, samples=DEFAULT_SAMPLES):
    """Bessel triples for every layer of a network."""
    if net.domain is Domain.DISCRETE:
        shapes = net.node_shapes()
        return [bessel_layer(layer, FrequencyGrid.dft(shapes[m])) for m, layer in enumerate(net.layers)]
    grid = FrequencyGrid.dense(samples)
    return [bessel_layer(layer, grid) for layer in net.layers]
