"""Declarative model of a feed-forward CNN graph and its JSON file format.

A network is a sequence of layers.  Layer ``m`` has ``input_count`` input
nodes; each node may carry a pooling filter whose output is a feature tap,
and any number of convolutional filters.  In a merge layer the filters are
partitioned into merge groups, one per output node.  In a linear (no-merge)
layer each filter names the output node it contributes to and the layer acts
as an array of filters followed by one dilation and nonlinearity per output.
Output node ``j`` of layer ``m`` is input node ``j`` of layer ``m + 1``.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import profiles

MAGIC = b"LIPCFLT1"


class SpecError(ValueError):
    pass


class SpecSyntaxError(SpecError):
    def __init__(self, message, line=None, column=None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class SpecValidationError(SpecError):
    def __init__(self, invariant, message):
        super().__init__(f"[{invariant}] {message}")
        self.invariant = invariant


class Domain(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


class MergeKind(str, enum.Enum):
    SUM = "sum"
    PNORM = "pnorm"
    PRODUCT = "product"


# ---------------------------------------------------------------------------
# nonlinearities


_CLOSED_FORM = {
    "identity": (lambda x: x, lambda x: np.ones_like(x), math.inf),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float), math.inf),
    "abs": (np.abs, lambda x: np.where(x < 0, -1.0, 1.0), math.inf),
    "clipped_sigmoid": (
        lambda x: np.clip(x, 0.0, 1.0),
        lambda x: ((x > 0) & (x < 1)).astype(float),
        1.0,
    ),
}


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise 1-Lipschitz map from the closed catalog.

    ``table`` holds sample points ``(xs, ys)`` for the ``custom_table`` kind;
    the map interpolates linearly and extrapolates by constants.
    """

    kind: str = "identity"
    table: tuple | None = None

    def __post_init__(self):
        if self.kind == "custom_table":
            if self.table is None or len(self.table[0]) < 2:
                raise SpecValidationError("nonlinearity", "custom_table needs at least two samples")
            xs = np.asarray(self.table[0], dtype=float)
            if np.any(np.diff(xs) <= 0):
                raise SpecValidationError("nonlinearity", "custom_table abscissae must increase")
        elif self.kind not in _CLOSED_FORM:
            raise SpecValidationError("nonlinearity", f"unknown nonlinearity {self.kind!r}")

    def __call__(self, x):
        if self.kind == "custom_table":
            return np.interp(x, self.table[0], self.table[1])
        return _CLOSED_FORM[self.kind][0](x)

    def derivative(self, x):
        """Right derivative, the convention used when linearizing at kinks."""
        if self.kind == "custom_table":
            xs = np.asarray(self.table[0])
            slopes = np.diff(self.table[1]) / np.diff(xs)
            idx = np.searchsorted(xs, x, side="right") - 1
            inside = (idx >= 0) & (idx < len(slopes))
            return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)
        return _CLOSED_FORM[self.kind][1](x)

    @property
    def sup_norm(self):
        if self.kind == "custom_table":
            return float(np.max(np.abs(self.table[1])))
        return _CLOSED_FORM[self.kind][2]

    @property
    def piecewise_linear(self):
        return True

    def lipschitz_on(self, grid):
        """Largest difference quotient over consecutive sample points."""
        grid = np.sort(np.asarray(grid, dtype=float))
        vals = self(grid)
        dx = np.diff(grid)
        keep = dx > 0
        return float(np.max(np.abs(np.diff(vals))[keep] / dx[keep]))

    def to_string(self):
        if self.kind != "custom_table":
            return self.kind
        pairs = ",".join(f"{x!r}:{y!r}" for x, y in zip(*self.table))
        return f"table:{pairs}"

    @classmethod
    def from_string(cls, text):
        if text.startswith("table:"):
            try:
                pairs = [p.split(":") for p in text[len("table:"):].split(",")]
                xs = tuple(float(a) for a, _ in pairs)
                ys = tuple(float(b) for _, b in pairs)
            except ValueError:
                raise SpecValidationError("nonlinearity", f"malformed table {text!r}") from None
            return cls("custom_table", (xs, ys))
        return cls(text)


IDENTITY = Nonlinearity("identity")


def check_nonlinearity(sigma, lo=-50.0, hi=50.0, samples=20001):
    """Numerically confirm the 1-Lipschitz property on a sample grid."""
    grid = np.linspace(lo, hi, samples)
    if sigma.kind == "custom_table":
        grid = np.union1d(grid, sigma.table[0])
    const = sigma.lipschitz_on(grid)
    if const > 1.0 + 1e-12:
        raise SpecValidationError(
            "nonlinearity-lipschitz", f"{sigma.to_string()} has slope {const:.6g} > 1"
        )
    return const


# ---------------------------------------------------------------------------
# filters and layers


@dataclass(frozen=True)
class Profile:
    name: str
    params: tuple = ()
    power: bool = False

    def __post_init__(self):
        if self.name not in profiles.PROFILES:
            raise SpecValidationError("filter", f"unknown frequency profile {self.name!r}")

    @property
    def kwargs(self):
        return dict(self.params)

    def power_response(self, omega):
        vals = profiles.evaluate(self.name, self.kwargs, omega)
        return vals if self.power else np.abs(vals) ** 2

    def band(self):
        return profiles.band(self.name, self.kwargs)


class Filter:
    """Either a finite tap array (with an origin index) or a closed-form profile."""

    __slots__ = ("taps", "origin", "profile")

    def __init__(self, taps=None, origin=None, profile=None):
        if (taps is None) == (profile is None):
            raise SpecValidationError("filter", "a filter has exactly one of taps or profile")
        if taps is not None:
            taps = np.array(taps)
            if taps.dtype.kind not in "fciu":
                raise SpecValidationError("filter", "taps must be numeric")
            taps = taps.astype(complex if taps.dtype.kind == "c" else float)
            if taps.ndim == 0:
                taps = taps.reshape(1)
            if taps.size == 0 or not np.all(np.isfinite(taps)):
                raise SpecValidationError("filter", "taps must be nonempty and finite")
            taps.setflags(write=False)
            origin = tuple(int(o) for o in origin) if origin is not None else (0,) * taps.ndim
            if len(origin) != taps.ndim:
                raise SpecValidationError("filter", "origin must give one index per tap axis")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "profile", profile)

    def __setattr__(self, name, value):
        raise AttributeError("Filter is immutable")

    @classmethod
    def delta(cls, ndim=1, shift=0):
        """Unit impulse; ``shift=s`` gives y[n] = x[n + s] (per axis if a tuple)."""
        shift = (shift,) * ndim if np.isscalar(shift) else tuple(shift)
        taps = np.zeros(tuple(abs(s) + 1 for s in shift))
        taps[tuple(0 if s >= 0 else -s for s in shift)] = 1.0
        return cls(taps, origin=tuple(max(s, 0) for s in shift))

    @property
    def is_discrete(self):
        return self.taps is not None

    def lags(self):
        """Yield (lag tuple, coefficient) for every nonzero tap."""
        for idx in zip(*np.nonzero(self.taps)):
            yield tuple(int(i) - o for i, o in zip(idx, self.origin)), self.taps[idx]

    def scaled(self, c):
        if self.taps is not None:
            return Filter(self.taps * c, self.origin)
        raise SpecValidationError("filter", "closed-form profiles cannot be rescaled")

    def dft(self, shape):
        """Frequency response on the DFT bins of a periodic grid (unnormalized forward)."""
        if self.taps is None:
            raise SpecValidationError("filter", "closed-form profile has no DFT")
        grid = np.zeros(shape, dtype=self.taps.dtype)
        for lag, coef in self.lags():
            grid[tuple(l % n for l, n in zip(lag, shape))] += coef
        return np.fft.fftn(grid)

    def power_response(self, omega):
        """|g^(w)|^2 at real frequencies (1-D) for either representation."""
        if self.profile is not None:
            return self.profile.power_response(omega)
        omega = np.asarray(omega, dtype=float)
        resp = np.zeros(omega.shape, dtype=complex)
        for lag, coef in self.lags():
            resp += coef * np.exp(-1j * omega * lag[0])
        return np.abs(resp) ** 2

    def __eq__(self, other):
        if not isinstance(other, Filter):
            return NotImplemented
        if self.profile is not None or other.profile is not None:
            return self.profile == other.profile
        return (
            self.origin == other.origin
            and self.taps.shape == other.taps.shape
            and np.array_equal(self.taps, other.taps)
        )

    def __hash__(self):
        if self.profile is not None:
            return hash(self.profile)
        return hash((self.origin, self.taps.shape, self.taps.tobytes()))

    def __repr__(self):
        if self.profile is not None:
            return f"Filter(profile={self.profile!r})"
        return f"Filter(taps={self.taps.tolist()!r}, origin={self.origin})"


def _freeze_dilation(dilation, domain, ndim):
    if domain is Domain.DISCRETE:
        if dilation is None:
            return (1,) * ndim
        dil = tuple(int(s) for s in np.atleast_1d(dilation))
        if len(dil) == 1 and ndim > 1:
            dil = dil * ndim
        return dil
    if dilation is None:
        return ((1.0,),)
    mat = np.atleast_2d(np.asarray(dilation, dtype=float))
    return tuple(tuple(float(v) for v in row) for row in mat)


@dataclass(frozen=True)
class FilterAttachment:
    filter: Filter
    source: int = 0
    dilation: tuple = (1,)
    sigma: Nonlinearity = IDENTITY
    source_layer: int | None = None
    target: int | None = None

    @property
    def strided(self):
        if isinstance(self.dilation[0], tuple):
            return not np.allclose(np.asarray(self.dilation), np.eye(len(self.dilation)))
        return any(s != 1 for s in self.dilation)

    def energy_factor(self):
        """(det D)^{-1}: the energy scaling of the dilation in the continuous model."""
        if isinstance(self.dilation[0], tuple):
            return 1.0 / abs(float(np.linalg.det(np.asarray(self.dilation))))
        return 1.0 / float(np.prod(self.dilation))


@dataclass(frozen=True)
class MergeSpec:
    kind: MergeKind = MergeKind.SUM
    p: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MergeKind(self.kind))
        if self.kind is MergeKind.PNORM and not self.p >= 1:
            raise SpecValidationError("merge-p", f"p-norm merge needs p >= 1, got {self.p}")


SUM = MergeSpec(MergeKind.SUM)


@dataclass(frozen=True)
class MergeGroup:
    members: tuple
    merge: MergeSpec = SUM


@dataclass(frozen=True)
class LayerSpec:
    input_count: int
    pooling: tuple = ()
    filters: tuple = ()
    merges: tuple | None = ()
    feature_taps: tuple = ()

    def __post_init__(self):
        if not self.pooling:
            object.__setattr__(self, "pooling", (None,) * self.input_count)
        if not self.feature_taps:
            object.__setattr__(self, "feature_taps", tuple(p is not None for p in self.pooling))

    @property
    def is_linear(self):
        return self.merges is None

    @property
    def output_count(self):
        if self.is_linear:
            return 1 + max(a.target for a in self.filters) if self.filters else 0
        return len(self.merges)

    def group_of(self):
        """Map filter index -> merge group index (merge layers only)."""
        owner = {}
        for g, group in enumerate(self.merges):
            for k in group.members:
                owner[k] = g
        return owner

    def filters_from(self, node):
        return [k for k, a in enumerate(self.filters) if a.source == node]

    def node_is_empty(self, node):
        return self.pooling[node] is None and not self.filters_from(node)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    domain: Domain = Domain.DISCRETE
    name: str = field(default="", compare=False)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def ndim(self):
        return len(self.input_shape)

    def node_shapes(self):
        """Grid shape of every input node, layer by layer (discrete domain)."""
        shapes = [[tuple(self.input_shape)] * self.layers[0].input_count]
        for layer in self.layers[:-1]:
            out = [None] * layer.output_count
            owner = None if layer.is_linear else layer.group_of()
            for k, att in enumerate(layer.filters):
                src_shape = shapes[-1][att.source]
                dst = att.target if layer.is_linear else owner[k]
                out[dst] = tuple(n // s for n, s in zip(src_shape, att.dilation))
            shapes.append(out)
        return shapes

    def has_dilation(self):
        return any(a.strided for layer in self.layers for a in layer.filters)

    def feature_nodes(self):
        return [(m, n) for m, layer in enumerate(self.layers)
                for n, tap in enumerate(layer.feature_taps) if tap]


# ---------------------------------------------------------------------------
# validation


def validate(net):
    """Check every structural invariant; raise SpecValidationError on the first violation."""
    if not net.layers:
        raise SpecValidationError("layer-count", "network needs at least one layer")
    if any(int(n) <= 0 for n in net.input_shape):
        raise SpecValidationError("input-shape", "grid extents must be positive integers")
    if net.domain is Domain.CONTINUOUS and net.ndim != 1:
        raise SpecValidationError("domain", "closed-form continuous networks are 1-D")
    if net.layers[0].input_count != 1:
        raise SpecValidationError("first-layer", "the first layer has exactly one input node")
    for m, layer in enumerate(net.layers):
        _validate_layer(net, m, layer)
        if m + 1 < net.depth and layer.output_count != net.layers[m + 1].input_count:
            raise SpecValidationError(
                "node-correspondence",
                f"layer {m} has {layer.output_count} output nodes but layer {m + 1} "
                f"has {net.layers[m + 1].input_count} input nodes",
            )
    last = net.layers[-1]
    if last.filters:
        raise SpecValidationError("last-layer", "the last layer has no hidden output nodes")
    if net.domain is Domain.DISCRETE:
        _validate_shapes(net)
    return net


def _validate_layer(net, m, layer):
    if layer.input_count <= 0:
        raise SpecValidationError("node-count", f"layer {m} needs a positive input count")
    if len(layer.pooling) != layer.input_count or len(layer.feature_taps) != layer.input_count:
        raise SpecValidationError("node-count", f"layer {m}: per-node arrays have wrong length")
    for n, (pool, tap) in enumerate(zip(layer.pooling, layer.feature_taps)):
        if bool(tap) != (pool is not None):
            raise SpecValidationError(
                "feature-tap", f"layer {m} node {n}: a feature tap needs a pooling filter and vice versa"
            )
    for k, att in enumerate(layer.filters):
        if att.source_layer is not None and att.source_layer != m:
            raise SpecValidationError(
                "feed-forward", f"layer {m} filter {k} reads layer {att.source_layer}; normalize skip connections first"
            )
        if not 0 <= att.source < layer.input_count:
            raise SpecValidationError("feed-forward", f"layer {m} filter {k}: source {att.source} out of range")
        _validate_filter(net, f"layer {m} filter {k}", att.filter)
        _validate_dilation(net, f"layer {m} filter {k}", att.dilation)
        check_nonlinearity(att.sigma)
    for n, pool in enumerate(layer.pooling):
        if pool is not None:
            _validate_filter(net, f"layer {m} pooling {n}", pool)
    if layer.is_linear:
        _validate_linear(m, layer)
    else:
        _validate_merges(m, layer)


def _validate_filter(net, where, filt):
    if filt.taps is not None:
        if filt.taps.ndim != net.ndim:
            raise SpecValidationError("filter", f"{where}: taps are {filt.taps.ndim}-D on a {net.ndim}-D grid")
        if net.domain is Domain.DISCRETE and any(t > n for t, n in zip(filt.taps.shape, net.input_shape)):
            raise SpecValidationError("filter-support", f"{where}: taps exceed the grid")
    elif net.domain is Domain.DISCRETE:
        raise SpecValidationError("filter", f"{where}: closed-form profiles need the continuous domain")


def _validate_dilation(net, where, dilation):
    if net.domain is Domain.DISCRETE:
        if len(dilation) != net.ndim or any(s <= 0 for s in dilation):
            raise SpecValidationError("dilation", f"{where}: dilation must be a positive integer per axis")
    else:
        mat = np.asarray(dilation, dtype=float)
        if mat.shape != (net.ndim, net.ndim) or abs(np.linalg.det(mat)) < 1e-12:
            raise SpecValidationError("dilation", f"{where}: dilation must be an invertible {net.ndim}x{net.ndim} matrix")


def _validate_merges(m, layer):
    seen = {}
    for g, group in enumerate(layer.merges):
        if not group.members:
            raise SpecValidationError("merge-partition", f"layer {m} merge group {g} is empty")
        for k in group.members:
            if not 0 <= k < len(layer.filters):
                raise SpecValidationError("merge-partition", f"layer {m} merge group {g}: no filter {k}")
            if k in seen:
                raise SpecValidationError(
                    "merge-partition", f"layer {m} filter {k} belongs to groups {seen[k]} and {g}"
                )
            seen[k] = g
        if group.merge.kind is MergeKind.PRODUCT:
            for k in group.members:
                if layer.filters[k].sigma.sup_norm > 1.0:
                    raise SpecValidationError(
                        "product-merge-bounded",
                        f"layer {m} filter {k}: product merge needs |sigma| <= 1, "
                        f"{layer.filters[k].sigma.to_string()} is unbounded",
                    )
    missing = set(range(len(layer.filters))) - set(seen)
    if missing:
        raise SpecValidationError("merge-partition", f"layer {m}: filters {sorted(missing)} are in no merge group")


def _validate_linear(m, layer):
    per_target = {}
    for k, att in enumerate(layer.filters):
        if att.target is None or att.target < 0:
            raise SpecValidationError("linear-layer", f"layer {m} filter {k} needs a target output node")
        first = per_target.setdefault(att.target, att)
        if first.dilation != att.dilation or first.sigma != att.sigma:
            raise SpecValidationError(
                "linear-layer", f"layer {m} output {att.target}: filters disagree on dilation or nonlinearity"
            )
    if layer.filters and set(per_target) != set(range(layer.output_count)):
        raise SpecValidationError("linear-layer", f"layer {m}: output nodes are not contiguous")


def _validate_shapes(net):
    shapes = [[tuple(net.input_shape)] * net.layers[0].input_count]
    for m, layer in enumerate(net.layers[:-1]):
        out = {}
        owner = None if layer.is_linear else layer.group_of()
        for k, att in enumerate(layer.filters):
            src = shapes[-1][att.source]
            if any(t > n for t, n in zip(att.filter.taps.shape, src)):
                raise SpecValidationError("filter-support", f"layer {m} filter {k}: taps exceed the node grid {src}")
            if any(n % s for n, s in zip(src, att.dilation)):
                raise SpecValidationError(
                    "dilation-divides", f"layer {m} filter {k}: stride {att.dilation} does not divide grid {src}"
                )
            if layer.is_linear:
                key = ("in", att.target)
                if out.setdefault(key, src) != src:
                    raise SpecValidationError("shape", f"layer {m} output {att.target}: sources on different grids")
            dst = att.target if layer.is_linear else owner[k]
            shape = tuple(n // s for n, s in zip(src, att.dilation))
            if out.setdefault(dst, shape) != shape:
                raise SpecValidationError("shape", f"layer {m} output node {dst}: merged signals differ in shape")
        shapes.append([out[j] for j in range(layer.output_count)])
    for m, layer in enumerate(net.layers):
        for n, pool in enumerate(layer.pooling):
            if pool is not None and any(t > s for t, s in zip(pool.taps.shape, shapes[m][n])):
                raise SpecValidationError("filter-support", f"layer {m} pooling {n}: taps exceed the node grid")


# ---------------------------------------------------------------------------
# sidecar binary arrays


def write_array(path, array):
    """Little-endian float64, row-major, after magic and a uint32 rank + extents header."""
    array = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def read_array(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise SpecError(f"{path}: bad magic, expected {MAGIC!r}")
    (ndim,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    offset = 12 + 4 * ndim
    count = int(np.prod(shape)) if shape else 1
    if len(data) - offset != 8 * count:
        raise SpecError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)


# ---------------------------------------------------------------------------
# JSON parsing and serialization


def _require(obj, key, where):
    if key not in obj:
        raise SpecValidationError("schema", f"{where}: missing key {key!r}")
    return obj[key]


def _parse_p(value, where):
    if value in ("inf", "Infinity", "infinity"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SpecValidationError("schema", f"{where}: p must be a number or 'inf'") from None


def _parse_filter(obj, where, base_dir):
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise SpecValidationError("schema", f"{where}: filter must be an object")
    if "profile" in obj:
        prof = obj["profile"]
        params = tuple(sorted((str(k), float(v)) for k, v in prof.get("params", {}).items()))
        return Filter(profile=Profile(_require(prof, "name", where), params, bool(prof.get("power", False))))
    taps = _require(obj, "taps", where)
    if isinstance(taps, dict):
        path = Path(_require(taps, "file", where))
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        taps = read_array(path)
    else:
        try:
            taps = np.array(taps, dtype=float)
        except (TypeError, ValueError):
            raise SpecValidationError("schema", f"{where}: taps must be a rectangular numeric array") from None
    return Filter(taps, origin=obj.get("origin"))


def _parse_layer(obj, m, domain, ndim, base_dir):
    where = f"layer {m}"
    if not isinstance(obj, dict):
        raise SpecValidationError("schema", f"{where}: layer must be an object")
    pooling = obj.get("pooling")
    filters_raw = obj.get("filters", [])
    merges_raw = obj.get("merges", None)
    if pooling is None:
        inputs = obj.get("inputs")
        if inputs is None:
            raise SpecValidationError("schema", f"{where}: give 'pooling' (one entry per node) or 'inputs'")
        pooling = [None] * int(inputs)
    pool = tuple(_parse_filter(p, f"{where} pooling {n}", base_dir) for n, p in enumerate(pooling))
    atts = []
    for k, fobj in enumerate(filters_raw):
        fw = f"{where} filter {k}"
        atts.append(
            FilterAttachment(
                filter=_parse_filter(fobj, fw, base_dir),
                source=int(fobj.get("source", 0)),
                dilation=_freeze_dilation(fobj.get("dilation"), domain, ndim),
                sigma=Nonlinearity.from_string(fobj.get("sigma", "identity")),
                source_layer=fobj.get("source_layer"),
                target=fobj.get("target"),
            )
        )
    merges = None
    if merges_raw is not None:
        merges = tuple(
            MergeGroup(
                tuple(int(i) for i in _require(g, "members", f"{where} merge {j}")),
                MergeSpec(MergeKind(g.get("kind", "sum")), _parse_p(g.get("p", 2.0), f"{where} merge {j}")),
            )
            for j, g in enumerate(merges_raw)
        )
    taps = obj.get("feature_taps")
    return LayerSpec(
        input_count=len(pool),
        pooling=pool,
        filters=tuple(atts),
        merges=merges,
        feature_taps=tuple(bool(t) for t in taps) if taps is not None else (),
    )


def spec_from_dict(doc, base_dir=None):
    if not isinstance(doc, dict):
        raise SpecValidationError("schema", "top level must be an object")
    try:
        domain = Domain(doc.get("domain", "discrete"))
    except ValueError:
        raise SpecValidationError("schema", f"unknown domain {doc.get('domain')!r}") from None
    shape = tuple(int(n) for n in _require(doc, "input_shape", "document"))
    layers = tuple(
        _parse_layer(lobj, m, domain, len(shape), base_dir)
        for m, lobj in enumerate(_require(doc, "layers", "document"))
    )
    return validate(NetworkSpec(layers, shape, domain, name=str(doc.get("name", ""))))


def parse_spec(text, base_dir=None):
    """Parse and validate a JSON network document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(exc.msg, exc.lineno, exc.colno) from None
    return spec_from_dict(doc, base_dir)


def load_spec(path):
    path = Path(path)
    return parse_spec(path.read_text(encoding="utf-8"), base_dir=path.parent)


def _filter_to_dict(filt):
    if filt is None:
        return None
    if filt.profile is not None:
        out = {"profile": {"name": filt.profile.name, "params": dict(filt.profile.params)}}
        if filt.profile.power:
            out["profile"]["power"] = True
        return out
    out = {"taps": filt.taps.real.tolist()}
    if any(filt.origin):
        out["origin"] = list(filt.origin)
    return out


def _p_to_json(p):
    return "inf" if math.isinf(p) else p


def spec_to_dict(net):
    layers = []
    for layer in net.layers:
        filters = []
        for att in layer.filters:
            entry = _filter_to_dict(att.filter)
            entry["source"] = att.source
            entry["dilation"] = [list(r) for r in att.dilation] if isinstance(att.dilation[0], tuple) else list(att.dilation)
            entry["sigma"] = att.sigma.to_string()
            if att.source_layer is not None:
                entry["source_layer"] = att.source_layer
            if att.target is not None:
                entry["target"] = att.target
            filters.append(entry)
        doc = {
            "pooling": [_filter_to_dict(p) for p in layer.pooling],
            "filters": filters,
            "feature_taps": list(layer.feature_taps),
        }
        if layer.merges is not None:
            doc["merges"] = [
                {"members": list(g.members), "kind": g.merge.kind.value, "p": _p_to_json(g.merge.p)}
                for g in layer.merges
            ]
        layers.append(doc)
    out = {"input_shape": list(net.input_shape), "domain": net.domain.value, "layers": layers}
    if net.name:
        out["name"] = net.name
    return out


def dump_spec(net):
    return json.dumps(spec_to_dict(net), indent=2)


# ---------------------------------------------------------------------------
# graph transformations


def normalize_skip_connections(net):
    """Replace cross-layer edges with chains of delta pass-through nodes.

    A filter in layer ``m`` reading input node ``n`` of layer ``m' < m``
    gets one identity node per intermediate layer, appended after the
    existing output nodes, so the graph becomes strictly layer-to-layer.
    """
    layers = [
        _Editable(list(l.pooling), list(l.filters), None if l.merges is None else list(l.merges), list(l.feature_taps))
        for l in net.layers
    ]
    changed = False
    for m, layer in enumerate(layers):
        for k, att in enumerate(layer.filters):
            src_layer = m if att.source_layer is None else att.source_layer
            if src_layer == m:
                if att.source_layer is not None:
                    layer.filters[k] = replace(att, source_layer=None)
                continue
            if not 0 <= src_layer < m:
                raise SpecValidationError("feed-forward", f"layer {m} filter {k} reads layer {src_layer}")
            node = att.source
            for j in range(src_layer, m):
                node = _append_passthrough(layers[j], layers[j + 1], node, net.ndim, net.domain)
            layer.filters[k] = replace(att, source=node, source_layer=None)
            changed = True
    if not changed and all(a.source_layer is None for l in net.layers for a in l.filters):
        return net
    new_layers = tuple(
        LayerSpec(len(l.pooling), tuple(l.pooling), tuple(l.filters),
                  None if l.merges is None else tuple(l.merges), tuple(l.feature_taps))
        for l in layers
    )
    return validate(NetworkSpec(new_layers, net.input_shape, net.domain, net.name))


@dataclass
class _Editable:
    pooling: list
    filters: list
    merges: list | None
    feature_taps: list


def _append_passthrough(layer, nxt, node, ndim, domain):
    dil = _freeze_dilation(None, domain, ndim)
    if layer.merges is None:
        target = 1 + max((a.target for a in layer.filters), default=-1)
        layer.filters.append(FilterAttachment(Filter.delta(ndim), node, dil, IDENTITY, None, target))
    else:
        layer.filters.append(FilterAttachment(Filter.delta(ndim), node, dil, IDENTITY))
        layer.merges.append(MergeGroup((len(layer.filters) - 1,), SUM))
    nxt.pooling.append(None)
    nxt.feature_taps.append(False)
    return len(nxt.pooling) - 1


@dataclass(frozen=True)
class LayerFragment:
    """Filters plus the merge group that combines them into one output node."""

    filters: tuple
    merge: MergeGroup

    def as_layer(self, input_count=1, pooling=None):
        return LayerSpec(
            input_count=input_count,
            pooling=tuple(pooling) if pooling is not None else (None,) * input_count,
            filters=self.filters,
            merges=(self.merge,),
        )


def max_pool_as_merge(size, stride, source=0, ndim=1, extent=None, sigma=IDENTITY):
    """Max pooling as translated deltas, a shared stride, and a p = inf merge.

    Equals windowed max pooling for nonnegative inputs (place after a relu,
    or pass ``sigma=Nonlinearity('abs')`` to pool magnitudes).
    """
    if size < 1 or stride < 1:
        raise SpecValidationError("pooling", "size and stride must be positive")
    if extent is not None and extent % stride:
        raise SpecValidationError("dilation-divides", f"stride {stride} does not divide extent {extent}")
    filters = tuple(
        FilterAttachment(Filter.delta(ndim, shift=offset), source, (stride,) * ndim, sigma)
        for offset in itertools.product(range(size), repeat=ndim)
    )
    members = tuple(range(len(filters)))
    return LayerFragment(filters, MergeGroup(members, MergeSpec(MergeKind.PNORM, math.inf)))
