"""Local Lipschitz analysis at an input and single-direction adversarial search.

Around an input ``f`` away from switching boundaries, a network built from
piecewise-linear nonlinearities, sum merges and max merges is affine.  Its
Jacobian T'[f] is the original linear stages with each activated pixel
weighted by the local slope of its nonlinearity and, for max merges, only the
winning member kept.  The largest singular value of T'[f] is the local
Lipschitz constant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .forward import circular_conv, circular_corr, downsample, forward, propagate, upsample
from .linalg import power_iteration
from .netspec import MergeKind

TIE_TOL = 1e-12


class LinearizationError(ValueError):
    pass


class LinearizationWarning(UserWarning):
    pass


def _kinks(sigma):
    if sigma.kind == "custom_table":
        return tuple(sigma.table[0])
    return {"identity": (), "relu": (0.0,), "abs": (0.0,), "clipped_sigmoid": (0.0, 1.0)}[sigma.kind]


@dataclass
class LinearizedOperator:
    """T'[f] as matrix-free forward and adjoint maps on flattened vectors.

    ``weights[m][k]`` is the pixelwise factor applied after the linear stage
    of filter ``k`` (merge layers) or output ``k`` (linear layers): the
    nonlinearity slope, times the winner indicator and sign for max merges.
    """

    net: object
    point: np.ndarray
    traces: list = field(repr=False)
    weights: list = field(repr=False)
    output_size: int = 0
    ties: list = field(default_factory=list)

    @property
    def shape(self):
        return (self.output_size, int(self.point.size))

    def matvec(self, v):
        return self.push(np.asarray(v, dtype=float).reshape(self.net.input_shape))[0]

    def rmatvec(self, u):
        return self.pull(np.asarray(u, dtype=float)).ravel()

    def to_dense(self):
        n = self.shape[1]
        return np.column_stack([self.matvec(e) for e in np.eye(n)])

    def push(self, v):
        """Apply T'[f]; also return the preactivation tangents of every layer."""
        nodes = [v]
        feats = []
        tangents = []
        for m, layer in enumerate(self.net.layers):
            for n, tap in enumerate(layer.feature_taps):
                if tap:
                    feats.append(circular_conv(nodes[n], layer.pooling[n]).ravel())
            w = self.weights[m]
            pre = {}
            if not layer.filters:
                nodes = []
            elif layer.is_linear:
                sums = {}
                for att in layer.filters:
                    y = circular_conv(nodes[att.source], att.filter)
                    sums[att.target] = y if att.target not in sums else sums[att.target] + y
                out = []
                for j in range(layer.output_count):
                    att = next(a for a in layer.filters if a.target == j)
                    pre[j] = downsample(sums[j], att.dilation)
                    out.append(w[j] * pre[j])
                nodes = out
            else:
                out = []
                for group in layer.merges:
                    acc = 0.0
                    for k in group.members:
                        att = layer.filters[k]
                        pre[k] = downsample(circular_conv(nodes[att.source], att.filter), att.dilation)
                        acc = acc + w[k] * pre[k]
                    out.append(acc)
                nodes = out
            tangents.append(pre)
        out = np.concatenate(feats) if feats else np.zeros(0)
        return out, tangents

    def pull(self, u):
        """Apply the adjoint of T'[f] to a flattened feature vector."""
        layers = self.net.layers
        pieces = {}
        offset = 0
        for m, layer in enumerate(layers):
            for n, tap in enumerate(layer.feature_taps):
                if tap:
                    shape = self.traces[m].inputs[n].shape
                    size = int(np.prod(shape))
                    pieces[(m, n)] = u[offset:offset + size].reshape(shape)
                    offset += size
        out_adj = []
        for m in range(len(layers) - 1, -1, -1):
            layer = layers[m]
            shapes = [x.shape for x in self.traces[m].inputs]
            adj = [np.zeros(s) for s in shapes]
            for n, tap in enumerate(layer.feature_taps):
                if tap:
                    adj[n] += circular_corr(pieces[(m, n)], layer.pooling[n])
            w = self.weights[m]
            if layer.is_linear:
                for att in layer.filters:
                    g = upsample(w[att.target] * out_adj[att.target], att.dilation, shapes[att.source])
                    adj[att.source] += circular_corr(g, att.filter)
            elif layer.filters:
                owner = layer.group_of()
                for k, att in enumerate(layer.filters):
                    g = upsample(w[k] * out_adj[owner[k]], att.dilation, shapes[att.source])
                    adj[att.source] += circular_corr(g, att.filter)
            out_adj = adj
        return out_adj[0]


def linearize(net, f):
    """Active-set linearization T'[f] of a piecewise-linear network."""
    f = np.asarray(f, dtype=float)
    traces = []
    bundle = propagate(net, f, traces)
    weights = []
    ties = []
    for m, (layer, trace) in enumerate(zip(net.layers, traces)):
        w = {}
        if layer.is_linear:
            for j, z in trace.preact.items():
                att = next(a for a in layer.filters if a.target == j)
                _check_kinks(att.sigma, z, (m, j), ties)
                w[j] = att.sigma.derivative(z)
        else:
            for g, group in enumerate(layer.merges):
                kind = group.merge.kind
                if kind is MergeKind.PRODUCT or (kind is MergeKind.PNORM and not math.isinf(group.merge.p)):
                    raise LinearizationError(
                        f"layer {m} merge group {g}: only sum and max merges are piecewise linear"
                    )
                for k in group.members:
                    att = layer.filters[k]
                    _check_kinks(att.sigma, trace.preact[k], (m, k), ties)
                    w[k] = att.sigma.derivative(trace.preact[k])
                if kind is MergeKind.PNORM:
                    _select_winners(m, group, trace, w, ties)
        weights.append(w)
    if ties:
        warnings.warn(
            f"{len(ties)} switching-boundary ties within {TIE_TOL:g}; first index / right slope used",
            LinearizationWarning,
            stacklevel=2,
        )
    size = int(bundle.flatten().size)
    return LinearizedOperator(net, f, traces, weights, size, ties)


def _check_kinks(sigma, z, where, ties):
    for kink in _kinks(sigma):
        hits = int(np.count_nonzero(np.abs(z - kink) <= TIE_TOL))
        if hits:
            ties.append({"site": where, "kind": "kink", "count": hits})


def _select_winners(m, group, trace, w, ties):
    members = list(group.members)
    vals = np.stack([trace.activated[k] for k in members])
    mags = np.abs(vals)
    win = np.argmax(mags, axis=0)
    top = np.take_along_axis(mags, win[None], axis=0)[0]
    close = np.count_nonzero(mags >= top - TIE_TOL, axis=0) > 1
    if np.any(close):
        ties.append({"site": (m, tuple(members)), "kind": "max", "count": int(close.sum())})
    sign = np.where(np.take_along_axis(vals, win[None], axis=0)[0] < 0, -1.0, 1.0)
    for i, k in enumerate(members):
        w[k] = w[k] * (win == i) * sign


@dataclass
class LocalReport:
    sigma_max: float
    direction: np.ndarray
    iterations: int
    residual: float

    def as_dict(self):
        return {"sigma_max": self.sigma_max, "iterations": self.iterations, "residual": self.residual}


def sigma_max(op, tol=1e-12, seed=0):
    """Largest singular value and right singular vector of any matvec/rmatvec operator."""
    n = op.shape[1]
    res = power_iteration(op.matvec, op.rmatvec, n, tol=tol, seed=seed)
    return LocalReport(res.sigma, res.vector, res.iterations, res.residual)


@dataclass
class MaskedProduct:
    """x -> diag(d_L) A_L ... diag(d_1) A_1 x, used to test the singular value solver."""

    matrices: list
    masks: list

    @property
    def shape(self):
        return (self.matrices[-1].shape[0], self.matrices[0].shape[1])

    def matvec(self, x):
        for A, d in zip(self.matrices, self.masks):
            x = d * (A @ x)
        return x

    def rmatvec(self, y):
        for A, d in zip(reversed(self.matrices), reversed(self.masks)):
            y = A.T @ (d * y)
        return y

    def to_dense(self):
        out = np.eye(self.shape[1])
        for A, d in zip(self.matrices, self.masks):
            out = d[:, None] * (A @ out)
        return out


def masked_product_operator(dims, rng, density=0.5):
    """Random masked product with layer widths ``dims`` (input first)."""
    mats = [rng.standard_normal((b, a)) / math.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    masks = [(rng.random(A.shape[0]) < density).astype(float) for A in mats]
    return MaskedProduct(mats, masks)


def local_constants(net, samples, tol=1e-12):
    """sigma_max(T'[f]) for every sample."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinearizationWarning)
        return np.array([sigma_max(linearize(net, f), tol).sigma_max for f in samples])


def global_from_local(net, samples, tol=1e-12):
    """Maximum local constant over a sample set, an estimate of the global constant from below."""
    vals = local_constants(net, samples, tol)
    return float(vals.max()) if vals.size else 0.0


def quotient_curve(net, f, v, h_grid):
    """(h, |||Phi(f + h v) - Phi(f)||| / h) for each h."""
    v = np.asarray(v, dtype=float)
    h_grid = np.asarray(h_grid, dtype=float)
    if np.any(h_grid <= 0):
        raise ValueError("step sizes must be positive")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must have unit norm")
    base = forward(net, f)
    probes = np.asarray(f, dtype=float)[None] + h_grid.reshape((-1,) + (1,) * v.ndim) * v[None]
    diff = forward(net, probes) - base
    return np.column_stack([h_grid, diff.norm() / h_grid])


def region_radius(op, v):
    """Largest h such that f + t v keeps the active set of T'[f] for all 0 <= t < h."""
    v = np.asarray(v, dtype=float).reshape(op.net.input_shape)
    _, tangents = op.push(v)
    radius = math.inf
    for m, layer in enumerate(op.net.layers):
        trace, dz = op.traces[m], tangents[m]
        for key, z in trace.preact.items():
            sigma = (next(a for a in layer.filters if a.target == key) if layer.is_linear
                     else layer.filters[key]).sigma
            for kink in _kinks(sigma):
                radius = min(radius, _first_crossing(z - kink, dz[key]))
        if layer.is_linear:
            continue
        for group in layer.merges:
            if group.merge.kind is not MergeKind.PNORM:
                continue
            members = list(group.members)
            y = np.stack([trace.activated[k] for k in members])
            dy = np.stack([layer.filters[k].sigma.derivative(trace.preact[k]) * dz[k] for k in members])
            win = np.argmax(np.abs(y), axis=0)
            yw = np.take_along_axis(y, win[None], 0)[0]
            dyw = np.take_along_axis(dy, win[None], 0)[0]
            radius = min(radius, _first_crossing(yw, dyw))
            for i in range(len(members)):
                other = win != i
                for s in (1.0, -1.0):
                    radius = min(radius, _first_crossing((yw - s * y[i])[other], (dyw - s * dy[i])[other]))
    return radius


def _first_crossing(a, da):
    """Smallest t > 0 where a + t da changes sign (inf if never)."""
    a, da = np.ravel(a), np.ravel(da)
    moving = (a * da < 0)
    if not np.any(moving):
        return math.inf
    return float(np.min(-a[moving] / da[moving]))


# ---------------------------------------------------------------------------
# adversarial search


@dataclass(frozen=True)
class LinearClassifier:
    """Label = argmax of W phi + b over the flattened feature vector phi."""

    weights: np.ndarray
    bias: np.ndarray

    def __call__(self, features):
        return int(self.predict(np.asarray(features)[None])[0])

    def predict(self, features):
        return np.argmax(features @ self.weights.T + self.bias, axis=-1)

    @classmethod
    def random(cls, n_features, n_classes, rng):
        return cls(rng.standard_normal((n_classes, n_features)), np.zeros(n_classes))

    @classmethod
    def near_boundary(cls, features, n_classes, rng, margin=0.1):
        """Random head whose two top scores at ``features`` differ by ``margin`` times their spread."""
        W = rng.standard_normal((n_classes, features.size))
        scores = W @ features
        bias = -scores + margin * np.linalg.norm(W, axis=1).mean() * np.linalg.norm(features) * (
            np.arange(n_classes) == 0) / math.sqrt(features.size)
        return cls(W, bias)


def _predict(classifier, feats):
    predict = getattr(classifier, "predict", None)
    if predict is not None:
        return np.asarray(predict(feats))
    return np.array([classifier(row) for row in feats])


def fooling_magnitudes(net, classifier, f, directions, h_max, rel_tol=1e-3):
    """Smallest fooling h along each row of ``directions`` (inf where none up to h_max).

    All directions advance in lockstep: a doubling scan from h_max / 2^20
    brackets the first label change, then bisection narrows each bracket to
    ``rel_tol * h_max``.
    """
    f = np.asarray(f, dtype=float)
    V = np.asarray(directions, dtype=float).reshape((-1,) + f.shape)
    k = len(V)
    base = _predict(classifier, forward(net, f[None]).flatten())[0]
    bcast = (slice(None),) + (None,) * f.ndim

    def fooled(h, idx):
        probes = f[None] + h[bcast] * V[idx]
        return _predict(classifier, forward(net, probes).flatten()) != base

    lo = np.zeros(k)
    hi = np.full(k, h_max * 2.0 ** -20)
    found = np.zeros(k, dtype=bool)
    open_ = np.ones(k, dtype=bool)
    while np.any(open_):
        idx = np.flatnonzero(open_)
        hit = fooled(hi[idx], idx)
        found[idx[hit]] = True
        open_[idx[hit]] = False
        miss = idx[~hit]
        at_cap = hi[miss] >= h_max
        open_[miss[at_cap]] = False
        grow = miss[~at_cap]
        lo[grow] = hi[grow]
        hi[grow] = np.minimum(2.0 * hi[grow], h_max)
    idx = np.flatnonzero(found)
    while idx.size and np.max(hi[idx] - lo[idx]) > rel_tol * h_max:
        mid = 0.5 * (lo[idx] + hi[idx])
        hit = fooled(mid, idx)
        hi[idx[hit]] = mid[hit]
        lo[idx[~hit]] = mid[~hit]
    return np.where(found, hi, math.inf)


@dataclass
class FoolingResult:
    magnitude: float
    sign: float


def adversarial_search(net, classifier, f, v, h_max, rel_tol=1e-3, both_signs=True):
    """Smallest h in (0, h_max] with label(f + h v) != label(f), or None if not fooled.

    With ``both_signs`` the direction -v is searched too and the smaller
    magnitude wins.
    """
    v = np.asarray(v, dtype=float)
    dirs = np.stack([v, -v]) if both_signs else v[None]
    mags = fooling_magnitudes(net, classifier, f, dirs, h_max, rel_tol)
    i = int(np.argmin(mags))
    if math.isinf(mags[i]):
        return None
    return FoolingResult(float(mags[i]), 1.0 if i == 0 else -1.0)


def random_direction_comparison(net, classifier, f, h_max, n_directions=200, rng=None, tol=1e-12):
    """Fooling magnitude along the principal direction of T'[f] and along random unit directions.

    Each direction is searched with both signs.  Directions that never fool
    within ``h_max`` count as ``inf``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    f = np.asarray(f, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LinearizationWarning)
        rep = sigma_max(linearize(net, f), tol)
    V = rng.standard_normal((n_directions,) + f.shape)
    V /= np.sqrt(np.sum(V ** 2, axis=tuple(range(1, V.ndim)), keepdims=True))
    dirs = np.concatenate([rep.direction.reshape((1,) + f.shape), V])
    mags = fooling_magnitudes(net, classifier, f, np.concatenate([dirs, -dirs]), h_max)
    both = np.minimum(mags[: len(dirs)], mags[len(dirs):])
    principal, randoms = float(both[0]), both[1:]
    return {
        "sigma_max": rep.sigma_max,
        "principal": principal,
        "random": randoms,
        "random_median": float(np.median(randoms)),
        "fraction_random_at_least_principal": float(np.mean(randoms >= principal)),
    }
