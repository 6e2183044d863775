import math

import numpy as np
import pytest

from lipcert.fuzz import random_network
from lipcert.netspec import (
    Filter,
    FilterAttachment,
    LayerSpec,
    MergeGroup,
    NetworkSpec,
    Nonlinearity,
    validate,
)
from lipcert.stochastic import (
    ProcessConfig,
    StationarityError,
    concentration_profile,
    dilation_counterexample,
    generator,
    random_spectrum,
    sample_sss,
    spectrum_transfer_check,
    test_stationarity as stationarity_report,
    triple_rate_map,
    verify_theorem2,
)

DELTA = Filter([1.0])


def identity_net(n=16):
    return validate(NetworkSpec((LayerSpec(1, (DELTA,), (), ()),), (n,)))


def strided_net(n=16):
    atts = (FilterAttachment(Filter([0.5, 0.5]), 0, (2,), Nonlinearity("relu")),
            FilterAttachment(Filter([0.0, 1.0]), 0, (2,), Nonlinearity("relu")))
    layer = LayerSpec(1, (None,), atts, (MergeGroup((0, 1)),))
    return validate(NetworkSpec((layer, LayerSpec(1, (DELTA,), (), ())), (n,)))


class TestSampling:
    def test_streams_are_independent_and_reproducible(self):
        a = generator(3, 0).standard_normal(5)
        np.testing.assert_array_equal(a, generator(3, 0).standard_normal(5))
        assert not np.allclose(a, generator(3, 1).standard_normal(5))

    def test_white_noise_moments(self):
        n = 20000
        x = sample_sss(ProcessConfig.white((16,), variance=2.0, seed=1), n)
        assert x.var() == pytest.approx(2.0, rel=0.02)
        lag1 = np.mean(x * np.roll(x, 1, axis=1)) / 2.0
        assert abs(lag1) < 4 / math.sqrt(n)

    def test_zero_spectrum(self):
        x = sample_sss(ProcessConfig(np.zeros(8)), 10)
        np.testing.assert_array_equal(x, 0.0)

    def test_one_bin_is_random_phase_sinusoid(self):
        spec = np.zeros(16)
        spec[3] = spec[-3] = 16.0
        x = sample_sss(ProcessConfig(spec, seed=2), 20000)
        var = x.var(axis=0)
        assert var.max() - var.min() < 0.1 * var.mean()
        # the realizations live on the single frequency
        power = np.abs(np.fft.fft(x, axis=1)) ** 2
        assert power[:, [0, 1, 2, 4, 5, 8]].max() < 1e-18 * power.max() + 1e-20

    def test_spectrum_matches_covariance(self):
        rng = np.random.default_rng(4)
        cfg = ProcessConfig(random_spectrum((12,), rng), seed=4)
        x = sample_sss(cfg, 40000)
        cov0 = np.mean(x * x)
        assert cov0 == pytest.approx(cfg.symmetric_spectrum.mean(), rel=0.03)

    def test_invalid_spectrum(self):
        with pytest.raises(ValueError):
            ProcessConfig(np.array([1.0, -1.0]))
        with pytest.raises(ValueError):
            ProcessConfig(np.ones(4), shape=(8,))


class TestTheorem2:
    def test_identity_independent(self):
        n = 4000
        cx = ProcessConfig.white((16,), 1.0, n, seed=5)
        cy = ProcessConfig.white((16,), 4.0, n, seed=5)
        res = verify_theorem2(identity_net(), cx, cy, L=1.0)
        assert res.estimate == pytest.approx(5 * 16, rel=0.05)
        assert res.bound_value == pytest.approx(res.estimate)
        assert res.satisfied

    def test_same_process(self):
        cfg = ProcessConfig.white((16,), 1.0, 100)
        res = verify_theorem2(identity_net(), cfg, None, L=1.0)
        assert res.estimate == 0.0 and res.satisfied

    def test_rejects_dilation(self):
        cfg = ProcessConfig.white((16,), 1.0, 100)
        with pytest.raises(StationarityError):
            verify_theorem2(strided_net(), cfg, None)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_relu_net(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network(rng, strides=False, ndim=1, depth=3)
        shape = tuple(net.input_shape)
        cx = ProcessConfig(random_spectrum(shape, rng), shape, 1000, seed)
        cy = ProcessConfig(random_spectrum(shape, rng), shape, 1000, seed)
        assert verify_theorem2(net, cx, cy).satisfied


class TestStationarity:
    def test_identity_white(self):
        rep = stationarity_report(identity_net(), ProcessConfig.white((16,), n_samples=4000), shifts=(1, 5))
        assert not rep["flag"]

    def test_relu_net(self):
        net = random_network(np.random.default_rng(1), strides=False, ndim=1, depth=2, shape=(16,))
        rep = stationarity_report(net, ProcessConfig(random_spectrum((16,), np.random.default_rng(2)), n_samples=4000),
                                  shifts=(1, 3))
        assert not rep["flag"]

    def test_rescaled_copy_flags(self):
        spec = np.zeros(16)
        spec[[1, 15]] = 8.0
        rep = stationarity_report(triple_rate_map, ProcessConfig(spec, n_samples=4000), shifts=(4,))
        assert rep["flag"]

    def test_dilated_net_rejected(self):
        with pytest.raises(StationarityError):
            stationarity_report(strided_net(), ProcessConfig.white((16,), n_samples=100))


def test_dilation_counterexample():
    rep = dilation_counterexample(20000)
    assert abs(rep["var_y_0"] - 2.0) <= 3 * rep["se_y_0"]
    assert abs(rep["var_y_half_pi"]) <= 3 * rep["se_y_half_pi"] + 1e-12
    assert rep["var_x_min"] == pytest.approx(0.5, abs=0.02)
    assert rep["var_x_max"] == pytest.approx(0.5, abs=0.02)


class TestSpectrumTransfer:
    def test_delta(self):
        cfg = ProcessConfig.white((16,), n_samples=2000, seed=3)
        rep = spectrum_transfer_check(DELTA, cfg)
        assert rep["max_relative_deviation"] <= rep["tolerance"]

    def test_known_filter(self):
        cfg = ProcessConfig.white((16,), n_samples=4000, seed=6)
        filt = Filter([0.5, 1.0, -0.25])
        rep = spectrum_transfer_check(filt, cfg)
        np.testing.assert_allclose(rep["expected"], np.abs(np.fft.fft([0.5, 1.0, -0.25], 16)) ** 2)
        assert rep["max_relative_deviation"] <= rep["tolerance"]

    def test_zero_filter(self):
        rep = spectrum_transfer_check(Filter([0.0]), ProcessConfig.white((8,), n_samples=100))
        assert rep["max_dead_bin_power"] == 0.0


class TestConcentration:
    def test_needs_samples(self):
        with pytest.raises(ValueError):
            concentration_profile(identity_net(), ProcessConfig.white((16,)), [0.0], n=50)

    def test_zero_threshold(self):
        rep = concentration_profile(identity_net(), ProcessConfig.white((16,), n_samples=500), [0.0], L=1.0)
        row = rep["rows"][0]
        assert row["bound"] == 1.0
        assert row["fraction"] == pytest.approx(1.0, abs=0.01)

    def test_identity_large_t(self):
        rep = concentration_profile(identity_net(), ProcessConfig.white((16,), n_samples=2000), [1.0, 4.0, 10.0],
                                    L=1.0)
        assert rep["rows"][-1]["fraction"] == 0.0
        assert all(r["satisfied"] for r in rep["rows"])
        assert rep["sigma2"] == pytest.approx(16.0)
