import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipcert.fuzz import random_network
from lipcert.netspec import (
    Domain,
    Filter,
    FilterAttachment,
    LayerSpec,
    MergeGroup,
    MergeKind,
    MergeSpec,
    NetworkSpec,
    validate,
)
from lipcert.netspec import Profile
from lipcert.spectral import (
    BesselError,
    FrequencyGrid,
    bessel_discrete_operator,
    bessel_layer,
    bessel_merge_node,
    bessel_no_merge_layer,
    multiplier,
    network_bessel,
)
from oracles import conv_matrix, downsample_matrix, strided_norm_sq

DELTA = Filter([1.0])


def merge_layer(filters, merge=MergeSpec(), pooling=None, dilation=(1,)):
    atts = tuple(FilterAttachment(Filter(t), 0, dilation) for t in filters)
    return LayerSpec(1, (pooling,), atts, (MergeGroup(tuple(range(len(atts))), merge),))


@pytest.mark.parametrize("kind,p,K,expected", [
    ("sum", 2.0, 3, 3.0),
    ("pnorm", 2.0, 5, 1.0),
    ("pnorm", 1.0, 2, 2.0),
    ("pnorm", math.inf, 4, 1.0),
    ("product", 2.0, 3, 3.0),
])
def test_multiplier(kind, p, K, expected):
    assert multiplier(kind, p, K) == expected


def test_multiplier_rejects_bad_input():
    with pytest.raises(BesselError):
        multiplier("sum", 2.0, 0)
    with pytest.raises(BesselError):
        multiplier("pnorm", 0.5, 2)


class TestMergeNode:
    grid = FrequencyGrid.dft([(8,)])

    def test_delta(self):
        t = bessel_merge_node(merge_layer([[1.0]]), 0, self.grid)
        assert tuple(t) == pytest.approx((1.0, 1.0, 0.0))

    def test_two_sum_merged(self):
        t = bessel_merge_node(merge_layer([[1.0], [1.0]]), 0, self.grid)
        assert t.b2 == pytest.approx(4.0)

    def test_two_pnorm_merged(self):
        t = bessel_merge_node(merge_layer([[1.0], [1.0]], MergeSpec(MergeKind.PNORM, 2.0)), 0, self.grid)
        assert t.b2 == pytest.approx(2.0)

    def test_pooling(self):
        t = bessel_merge_node(merge_layer([[1.0]], pooling=DELTA), 0, self.grid)
        assert tuple(t) == pytest.approx((2.0, 1.0, 1.0))

    def test_empty_node(self):
        layer = LayerSpec(2, (DELTA, None), (FilterAttachment(DELTA, 0),), (MergeGroup((0,)),))
        with pytest.raises(BesselError):
            bessel_merge_node(layer, 1, FrequencyGrid.dft([(8,), (8,)]))

    def test_matches_dft_oracle(self):
        rng = np.random.default_rng(0)
        taps = rng.standard_normal(5)
        t = bessel_merge_node(merge_layer([taps]), 0, FrequencyGrid.dft([(16,)]))
        C = conv_matrix(taps, 0, 16)
        assert t.b2 == pytest.approx(np.linalg.norm(C, 2) ** 2, rel=1e-12)

    def test_strided_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        taps = rng.standard_normal(4)
        t = bessel_merge_node(merge_layer([taps], dilation=(2,)), 0, FrequencyGrid.dft([(12,)]))
        assert t.b2 == pytest.approx(strided_norm_sq(taps, 0, 12, 2), rel=1e-10)
        S = downsample_matrix(12, 2) @ conv_matrix(taps, 0, 12)
        assert t.b2 == pytest.approx(np.linalg.norm(S, 2) ** 2, rel=1e-10)


class TestNoMergeLayer:
    def continuous(self, pooling=None):
        amp2 = Filter(profile=Profile("constant", (("value", 2.0),)))
        att = FilterAttachment(amp2, 0, ((2.0,),), target=0)
        return LayerSpec(1, (pooling,), (att,), None)

    def test_constant_amplitude_stride_two(self):
        t = bessel_no_merge_layer(self.continuous(), FrequencyGrid.dense(256))
        assert t.b2 == pytest.approx(2.0)
        assert t.b3 == 0.0

    def test_with_delta_pooling(self):
        delta = Filter(profile=Profile("constant", (("value", 1.0),)))
        t = bessel_no_merge_layer(self.continuous(delta), FrequencyGrid.dense(256))
        assert tuple(t) == pytest.approx((3.0, 2.0, 1.0))

    def test_identity_operator(self):
        atts = (FilterAttachment(DELTA, 0, target=0), FilterAttachment(DELTA, 1, target=1))
        layer = LayerSpec(2, (None, None), atts, None)
        t = bessel_no_merge_layer(layer, FrequencyGrid.dft([(8,), (8,)]))
        assert t.b2 == pytest.approx(1.0)

    def test_mixing_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        taps = [rng.standard_normal(3) for _ in range(4)]
        atts = tuple(FilterAttachment(Filter(taps[2 * i + j]), j, target=i) for i in range(2) for j in range(2))
        layer = LayerSpec(2, (None, None), atts, None)
        t = bessel_no_merge_layer(layer, FrequencyGrid.dft([(10,), (10,)]))
        C = [conv_matrix(g, 0, 10) for g in taps]
        T = np.block([[C[0], C[1]], [C[2], C[3]]])
        assert t.b2 == pytest.approx(np.linalg.norm(T, 2) ** 2, rel=1e-10)


class TestDiscreteOperator:
    def test_stride_two_average(self):
        layer = merge_layer([[0.5, 0.5]], dilation=(2,))
        assert bessel_discrete_operator(layer, (8,)) == pytest.approx(0.5, abs=1e-9)

    def test_zero_filter(self):
        assert bessel_discrete_operator(merge_layer([[0.0, 0.0]]), (8,)) == pytest.approx(0.0, abs=1e-12)

    def test_stride_one_matches_frequency_formula(self):
        rng = np.random.default_rng(3)
        taps = rng.standard_normal(5)
        layer = merge_layer([taps])
        peak = np.max(np.abs(np.fft.fft(taps, 16)) ** 2)
        assert bessel_discrete_operator(layer, (16,)) == pytest.approx(peak, rel=1e-9)

    def test_bad_part(self):
        with pytest.raises(ValueError):
            bessel_discrete_operator(merge_layer([[1.0]]), (8,), part="features")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_triple_invariants(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, depth=2)
    shapes = net.node_shapes()
    for m, layer in enumerate(net.layers):
        t = bessel_layer(layer, FrequencyGrid.dft(shapes[m]))
        assert t.b1 <= t.b2 + t.b3 + 1e-9 * max(1.0, t.b1)
        hidden = bessel_discrete_operator(layer, shapes[m], part="hidden")
        combined = bessel_discrete_operator(layer, shapes[m], part="combined")
        if layer.is_linear:
            assert t.b2 == pytest.approx(hidden, rel=1e-6, abs=1e-12)
            assert t.b1 == pytest.approx(combined, rel=1e-6, abs=1e-12)
        else:
            # node maxima of the frequency form dominate the joint strided stage
            assert t.b2 >= hidden * (1 - 1e-6) - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.25, 3.0))
def test_scaling(seed, c):
    rng = np.random.default_rng(seed)
    layer = merge_layer([rng.standard_normal(3), rng.standard_normal(2)], pooling=Filter(rng.standard_normal(2)))
    scaled = LayerSpec(1, (layer.pooling[0].scaled(c),),
                       tuple(FilterAttachment(a.filter.scaled(c), 0) for a in layer.filters), layer.merges)
    grid = FrequencyGrid.dft([(12,)])
    a, b = bessel_layer(layer, grid), bessel_layer(scaled, grid)
    np.testing.assert_allclose(tuple(b), np.array(tuple(a)) * c * c, rtol=1e-10)


def test_network_bessel_continuous_needs_profiles():
    net = validate(NetworkSpec((LayerSpec(1, (Filter(profile=Profile("constant", (("value", 1.0),))),), (), ()),),
                               (1,), Domain.CONTINUOUS))
    (t,) = network_bessel(net, 64)
    assert tuple(t) == pytest.approx((1.0, 0.0, 1.0))
