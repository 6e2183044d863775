"""Class separation in feature space for two Gaussian signal classes.

A class is colored Gaussian noise mu_c + W_c * nu with nu white.  The
discriminant compares the squared distance of the class means in feature
space with the spread of each class: either the nuclear norms of the
feature covariances (S) or the Lipschitz bounds of the network applied after
each coloring filter (S~).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .bounds import certify
from .forward import circular_conv, forward
from .netspec import (
    Filter,
    FilterAttachment,
    LayerSpec,
    MergeGroup,
    NetworkSpec,
    validate,
)
from .stochastic import generator


class DegenerateClassError(ValueError):
    pass


@dataclass(frozen=True)
class ClassModel:
    mean: np.ndarray
    coloring_filter: Filter
    label: int = 0

    def sample(self, n, rng):
        noise = rng.standard_normal((n,) + np.shape(self.mean))
        return np.asarray(self.mean, dtype=float) + circular_conv(noise, self.coloring_filter)


@dataclass
class DiscriminantReport:
    s: float
    s_lip: float
    separation: float
    nuclear_norms: tuple
    lipschitz_bounds: tuple
    feature_means: tuple
    shrinkage: float

    def as_dict(self):
        return {
            "s": self.s,
            "s_lip": self.s_lip,
            "separation": self.separation,
            "nuclear_norms": list(self.nuclear_norms),
            "lipschitz_bounds": list(self.lipschitz_bounds),
            "shrinkage": self.shrinkage,
        }


def prepend_coloring(net, coloring):
    """The network applied after a stride-1 coloring convolution (no pooling, identity nonlinearity)."""
    dil = (1,) * net.ndim
    first = LayerSpec(1, (None,), (FilterAttachment(coloring, 0, dil),), (MergeGroup((0,)),))
    return validate(NetworkSpec((first,) + tuple(net.layers), net.input_shape, net.domain, net.name))


def nuclear_norm(cov):
    return float(np.linalg.svd(cov, compute_uv=False).sum())


def _covariance(feats):
    n, D = feats.shape
    cov = np.atleast_2d(np.cov(feats, rowvar=False))
    shrink = 0.0
    if n < D:
        shrink = 1e-6 * float(np.trace(cov)) / D
        cov = cov + shrink * np.eye(D)
    return cov, shrink


def discriminant_from_features(f1, f2, L1=None, L2=None):
    mu1, mu2 = f1.mean(axis=0), f2.mean(axis=0)
    sep = float(np.sum((mu1 - mu2) ** 2))
    (c1, s1), (c2, s2) = _covariance(f1), _covariance(f2)
    nuc = (nuclear_norm(c1), nuclear_norm(c2))
    denom = nuc[0] + nuc[1]
    if denom <= 0:
        raise DegenerateClassError("both feature covariances vanish")
    s_lip = math.nan
    if L1 is not None:
        if L1 + L2 <= 0:
            raise DegenerateClassError("both class Lipschitz bounds vanish")
        s_lip = sep / (L1 + L2)
    return DiscriminantReport(sep / denom, s_lip, sep, nuc, (L1, L2), (mu1, mu2), max(s1, s2))


def discriminant(net, class1, class2, n, seed=0):
    """S and S~ of two classes from n samples each."""
    x1 = class1.sample(n, generator(seed, 1))
    x2 = class2.sample(n, generator(seed, 2))
    L1 = certify(prepend_coloring(net, class1.coloring_filter))[1].lp_bound
    L2 = certify(prepend_coloring(net, class2.coloring_filter))[1].lp_bound
    return discriminant_from_features(forward(net, x1).flatten(), forward(net, x2).flatten(), L1, L2)


def nearest_mean_error(train1, train2, test1, test2):
    mu1, mu2 = train1.mean(axis=0), train2.mean(axis=0)

    def wrong(x, own, other):
        return np.sum((x - own) ** 2, axis=1) > np.sum((x - other) ** 2, axis=1)

    errors = wrong(test1, mu1, mu2).sum() + wrong(test2, mu2, mu1).sum()
    return float(errors) / (len(test1) + len(test2))


def error_vs_discriminant(nets, class1, class2, n_train, n_test, seed=0):
    """(S, S~, nearest-mean test error) per net plus Spearman rank correlations."""
    if len(nets) < 2:
        raise ValueError("need at least two networks")
    x1 = class1.sample(n_train, generator(seed, 1))
    x2 = class2.sample(n_train, generator(seed, 2))
    t1 = class1.sample(n_test, generator(seed, 3))
    t2 = class2.sample(n_test, generator(seed, 4))
    rows = []
    for i, net in enumerate(nets):
        f1, f2 = forward(net, x1).flatten(), forward(net, x2).flatten()
        L1 = certify(prepend_coloring(net, class1.coloring_filter))[1].lp_bound
        L2 = certify(prepend_coloring(net, class2.coloring_filter))[1].lp_bound
        try:
            rep = discriminant_from_features(f1, f2, L1, L2)
        except DegenerateClassError as exc:
            warnings.warn(f"net {i} skipped: {exc}", stacklevel=2)
            continue
        err = nearest_mean_error(f1, f2, forward(net, t1).flatten(), forward(net, t2).flatten())
        rows.append({"net": i, "s": rep.s, "s_lip": rep.s_lip, "error": err})
    s = np.array([r["s"] for r in rows])
    s_lip = np.array([r["s_lip"] for r in rows])
    err = np.array([r["error"] for r in rows])
    return {
        "rows": rows,
        "spearman_s": float(spearmanr(s, err).statistic),
        "spearman_s_lip": float(spearmanr(s_lip, err).statistic),
    }
