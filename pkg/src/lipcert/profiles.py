"""Closed-form frequency profiles for filters given analytically.

A profile is evaluated on real frequencies.  With ``power=False`` the value
is the amplitude |g^(w)|; with ``power=True`` it is already the power
response |g^(w)|^2.
"""

from __future__ import annotations

import numpy as np


def gate(omega, halfwidth=0.5, center=0.0):
    """C-infinity gate: 1 on |w - c| <= a, smooth decay to 0 at |w - c| = a + 1/2."""
    omega = np.asarray(omega, dtype=float)
    r = np.abs(omega - center) - halfwidth
    out = np.zeros_like(omega)
    out[r <= 0] = 1.0
    edge = (r > 0) & (r < 0.5)
    u = 2.0 * r[edge]
    out[edge] = np.exp(u * u / (u * u - 1.0))
    return out


def gate_pair(omega, halfwidth=0.5, center=1.0):
    omega = np.asarray(omega, dtype=float)
    return gate(omega, halfwidth, center) + gate(omega, halfwidth, -center)


def constant(omega, value=1.0):
    return np.full(np.shape(omega), float(value))


def _gate_band(halfwidth=0.5, center=0.0):
    return (center - halfwidth - 0.5, center + halfwidth + 0.5)


def _pair_band(halfwidth=0.5, center=1.0):
    reach = abs(center) + halfwidth + 0.5
    return (-reach, reach)


PROFILES = {
    "gate": (gate, _gate_band),
    "gate_pair": (gate_pair, _pair_band),
    "constant": (constant, None),
}

DEFAULT_BAND = (-np.pi, np.pi)


def evaluate(name, params, omega):
    try:
        fn, _ = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown frequency profile {name!r}") from None
    return fn(omega, **params)


def band(name, params):
    """Frequency interval outside of which the profile vanishes, or None if unbounded."""
    _, band_fn = PROFILES[name]
    if band_fn is None:
        return None
    return band_fn(**params)
