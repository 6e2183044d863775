"""Monte-Carlo checks for networks driven by stationary Gaussian processes.

Processes live on periodic grids.  A process is specified by its spectrum:
the eigenvalues of its circulant covariance on the DFT bins, so a flat
spectrum of height s is white noise with variance s.  All randomness comes
from counter-based Philox streams keyed by (seed, stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forward import circular_conv, forward

SIGMA_FLAG = 4.0


class StationarityError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessConfig:
    spectrum: np.ndarray = field(repr=False)
    shape: tuple = ()
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        spec = np.asarray(self.spectrum, dtype=float)
        shape = tuple(self.shape) or spec.shape
        if spec.shape != shape:
            raise ValueError(f"spectrum of shape {spec.shape} does not match grid {shape}")
        if np.any(spec < 0) or not np.all(np.isfinite(spec)):
            raise ValueError("spectrum must be finite and nonnegative")
        object.__setattr__(self, "spectrum", spec)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def white(cls, shape, variance=1.0, n_samples=1000, seed=0):
        return cls(np.full(tuple(shape), float(variance)), tuple(shape), n_samples, seed)

    @property
    def symmetric_spectrum(self):
        """Spectrum averaged with its mirror image, which is what a real process realizes."""
        mirrored = np.roll(np.flip(self.spectrum), 1, axis=tuple(range(self.spectrum.ndim)))
        return 0.5 * (self.spectrum + mirrored)

    @property
    def energy(self):
        """E ||X||_2^2 over the grid."""
        return float(self.spectrum.sum())


def generator(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(stream) << 64)))


def random_spectrum(shape, rng, smoothness=2.0):
    """Random smooth nonnegative spectrum, normalized to unit mean."""
    axes = [np.fft.fftfreq(n) for n in shape]
    radius = np.sqrt(sum(a ** 2 for a in np.meshgrid(*axes, indexing="ij")))
    width = rng.uniform(0.05, 0.5)
    spec = np.exp(-(radius / width) ** smoothness) + rng.uniform(0.0, 0.3, size=tuple(shape))
    return spec / spec.mean()


def sample_sss(cfg, n=None, stream=0):
    """n realizations (rows) of the circularly stationary Gaussian process of ``cfg``."""
    n = cfg.n_samples if n is None else int(n)
    axes = tuple(range(1, len(cfg.shape) + 1))
    z = generator(cfg.seed, stream).standard_normal((n,) + cfg.shape)
    amp = np.sqrt(cfg.symmetric_spectrum)
    return np.fft.ifftn(amp * np.fft.fftn(z, axes=axes), axes=axes).real


@dataclass
class MonteCarloResult:
    estimate: float
    standard_error: float
    sample_count: int
    bound_value: float
    satisfied: bool
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "sample_count": self.sample_count,
            "bound_value": self.bound_value,
            "satisfied": self.satisfied,
            **self.details,
        }


def _require_dilation_free(net):
    if net.has_dilation():
        raise StationarityError(
            "network has a dilation; outputs of strided branches are no longer stationary after merging"
        )


def verify_theorem2(net, cfg_x, cfg_y, n=None, L=None):
    """E|||Phi(X) - Phi(Y)|||^2 against L * E||X - Y||^2 over paired draws.

    X and Y are drawn independently from their own streams; ``cfg_y=None``
    sets Y = X.  Both expectations are sample means over the same pairs.
    """
    from .bounds import certify

    _require_dilation_free(net)
    if L is None:
        L = certify(net)[1].lp_bound
    n = cfg_x.n_samples if n is None else int(n)
    x = sample_sss(cfg_x, n, stream=0)
    y = x if cfg_y is None else sample_sss(cfg_y, n, stream=1)
    lhs = (forward(net, x) - forward(net, y)).squared_norm()
    rhs = np.sum((x - y) ** 2, axis=tuple(range(1, x.ndim)))
    est = float(lhs.mean())
    se = float(lhs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    bound = float(L * rhs.mean())
    return MonteCarloResult(est, se, n, bound, est <= bound + 3.0 * se,
                            {"L": float(L), "rhs_second_moment": float(rhs.mean())})


def _features(net_or_map, x):
    if callable(net_or_map) and not hasattr(net_or_map, "layers"):
        out = net_or_map(x)
        return out if isinstance(out, dict) else {"output": out}
    _require_dilation_free(net_or_map)
    return forward(net_or_map, x).features


def test_stationarity(net, cfg, n=None, shifts=(1,)):
    """Compare first and second moments of every feature at index 0 and at shifted indices.

    ``net`` is a dilation-free NetworkSpec or any callable mapping a batch of
    signals to an array (or dict of arrays) of per-sample outputs.  A
    deviation beyond 4 standard errors raises the flag.
    """
    n = cfg.n_samples if n is None else int(n)
    x = sample_sss(cfg, n)
    rows = []
    for key, vals in _features(net, x).items():
        grid = vals.shape[1:]
        base = vals[(slice(None),) + (0,) * len(grid)]
        for s in shifts:
            idx = tuple(int(s) % g for g in grid)
            other = vals[(slice(None),) + idx]
            for moment, diff in (("mean", base - other), ("second", base ** 2 - other ** 2)):
                sd = diff.std(ddof=1)
                z = 0.0 if sd == 0 else float(diff.mean() / (sd / math.sqrt(n)))
                rows.append({"feature": str(key), "shift": int(s), "moment": moment, "z": z})
    worst = max((abs(r["z"]) for r in rows), default=0.0)
    return {"rows": rows, "max_abs_z": worst, "flag": worst > SIGMA_FLAG, "threshold": SIGMA_FLAG}


test_stationarity.__test__ = False


def triple_rate_map(x):
    """Y[t] = X[t] + X[3t mod N]: a rescaled copy added to the signal, not shift-equivariant."""
    n = x.shape[-1]
    return x + x[..., (3 * np.arange(n)) % n]


def dilation_counterexample(n=10_000, seed=0, points=64):
    """X(t) = cos(t + theta), Y(t) = X(t) + X(3t): Var Y depends on t."""
    theta = generator(seed).uniform(0.0, 2.0 * math.pi, size=n)
    t = np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
    x = np.cos(t[None, :] + theta[:, None])
    y = x + np.cos(3.0 * t[None, :] + theta[:, None])

    def var_and_se(col):
        dev = (col - col.mean()) ** 2
        return float(dev.mean()), float(dev.std(ddof=1) / math.sqrt(n))

    quarter = points // 4
    var0, se0 = var_and_se(y[:, 0])
    varq, seq = var_and_se(y[:, quarter])
    var_x = x.var(axis=0)
    return {
        "var_y_0": var0, "se_y_0": se0,
        "var_y_half_pi": varq, "se_y_half_pi": seq,
        "var_x_min": float(var_x.min()), "var_x_max": float(var_x.max()),
        "samples": n,
    }


def spectrum_transfer_check(filt, cfg, n=None):
    """Averaged periodogram of Z * g against S_Z |g^|^2, bin by bin."""
    n = cfg.n_samples if n is None else int(n)
    axes = tuple(range(1, len(cfg.shape) + 1))
    z = sample_sss(cfg, n)
    w = circular_conv(z, filt)
    size = int(np.prod(cfg.shape))
    periodogram = (np.abs(np.fft.fftn(w, axes=axes)) ** 2).mean(axis=0) / size
    expected = cfg.symmetric_spectrum * np.abs(filt.dft(cfg.shape)) ** 2
    scale = float(expected.max())
    live = expected > 1e-12 * max(scale, 1e-300)
    rel = np.abs(periodogram[live] - expected[live]) / expected[live]
    return {
        "max_relative_deviation": float(rel.max()) if rel.size else 0.0,
        "max_dead_bin_power": float(periodogram[~live].max()) if np.any(~live) else 0.0,
        "tolerance": 5.0 / math.sqrt(n),
        "periodogram": periodogram,
        "expected": expected,
    }


def concentration_profile(net, cfg, t_grid, n=None, L=None, bootstrap=200):
    """Shell-tail fractions of ||Y - Ybar|| around its median against exp(-t^2 / (2 sigma^2 L))."""
    from .bounds import certify

    n = cfg.n_samples if n is None else int(n)
    if n < 100:
        raise ValueError("concentration profile needs at least 100 samples")
    if L is None:
        L = certify(net)[1].lp_bound
    x = sample_sss(cfg, n)
    y = forward(net, x).flatten()
    r = np.linalg.norm(y - y.mean(axis=0), axis=1)
    med = float(np.median(r))
    boot = generator(cfg.seed, 7).integers(0, n, size=(bootstrap, n))
    med_se = float(np.median(r[boot], axis=1).std(ddof=1))
    sigma2 = cfg.energy
    rows = []
    for t in np.asarray(t_grid, dtype=float):
        frac = float(np.mean(np.abs(r - med) > t))
        bound = 1.0 if sigma2 * L == 0 and t == 0 else (
            math.exp(-t * t / (2.0 * sigma2 * L)) if sigma2 * L > 0 else 0.0)
        se = math.sqrt(max(frac * (1.0 - frac), 1.0 / n) / n)
        rows.append({"t": float(t), "fraction": frac, "bound": bound, "standard_error": se,
                     "satisfied": frac <= bound + 3.0 * se})
    return {"median": med, "median_se": med_se, "sigma2": sigma2, "L": float(L), "rows": rows}
