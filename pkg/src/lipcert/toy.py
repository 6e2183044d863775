"""Four-layer toy network with smooth band-limited gate filters.

All filters are closed-form power responses built from one gate: a plateau
of half-width ``a`` around ``c`` followed by exp(u^2 / (u^2 - 1)) decay over
half a unit.  Bandpass filters are symmetric gate pairs.
"""

from __future__ import annotations

import math

from .bounds import solve_lipschitz_lp
from .netspec import (
    Domain,
    Filter,
    FilterAttachment,
    LayerSpec,
    MergeGroup,
    MergeKind,
    MergeSpec,
    NetworkSpec,
    Nonlinearity,
    Profile,
    validate,
)
from .spectral import DEFAULT_SAMPLES, network_bessel

RELU = Nonlinearity("relu")
CLIPPED = Nonlinearity("clipped_sigmoid")
PRODUCT_NOTE = (
    "corollary_product = 8 exp(-2/3) = 4.1074; the value 4.102 sometimes quoted "
    "for this example does not match this product"
)


def _gate(halfwidth, center=0.0):
    return Filter(profile=Profile("gate", (("center", center), ("halfwidth", halfwidth)), power=True))


def _pair(center, halfwidth=0.5):
    return Filter(profile=Profile("gate_pair", (("center", center), ("halfwidth", halfwidth)), power=True))


def _conv(filt, source, sigma=RELU):
    return FilterAttachment(filt, source, ((1.0,),), sigma)


def toy_network():
    lowpass = _gate(0.5)
    phi2 = _gate(1.5)
    phi3 = _gate(2.5)
    g1 = [_pair(2 * j - 0.5) for j in range(1, 5)]
    l2 = MergeSpec(MergeKind.PNORM, 2.0)

    layer1 = LayerSpec(
        input_count=1,
        pooling=(lowpass,),
        filters=tuple(_conv(g, 0) for g in g1),
        merges=tuple(MergeGroup((k,)) for k in range(4)),
    )
    layer2 = LayerSpec(
        input_count=4,
        pooling=(lowpass, None, phi2, None),
        filters=(
            _conv(g1[0], 0),
            _conv(_pair(2.0), 1),
            _conv(_pair(4.0), 2),
            _conv(_pair(6.0), 3),
            _conv(_pair(2.0), 3),
        ),
        merges=(MergeGroup((0, 1), l2), MergeGroup((2, 3, 4), l2)),
    )
    layer3 = LayerSpec(
        input_count=2,
        pooling=(phi2, phi2),
        filters=(_conv(_pair(5.0), 0, CLIPPED), _conv(_pair(4.0), 1, CLIPPED)),
        merges=(MergeGroup((0, 1), MergeSpec(MergeKind.PRODUCT)),),
    )
    layer4 = LayerSpec(input_count=1, pooling=(phi3,), filters=(), merges=())
    return validate(NetworkSpec((layer1, layer2, layer3, layer4), (1,), Domain.CONTINUOUS, name="toy"))


def expected_triples():
    a = 2.0 * math.exp(-1.0 / 3.0)
    return [(a, 1.0, 1.0), (a, 1.0, 1.0), (2.0, 2.0, 1.0), (1.0, 0.0, 1.0)]


def toy_report(samples=DEFAULT_SAMPLES):
    """Bessel triples, LP bound and corollaries of the toy network."""
    triples = network_bessel(toy_network(), samples)
    report = solve_lipschitz_lp(triples)
    return {
        "layers": [dict(layer=m + 1, **t.as_dict()) for m, t in enumerate(triples)],
        "certificate": report.as_dict(),
        "note": PRODUCT_NOTE,
    }
