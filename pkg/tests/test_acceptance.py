"""Acceptance criteria, one test each, every test records a PASS/FAIL line."""

import math
import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from lipcert.bounds import certify, corollary_product, corollary_sumprod, solve_lipschitz_lp
from lipcert.discriminant import ClassModel, error_vs_discriminant
from lipcert.forward import empirical_ratio, forward
from lipcert.fuzz import random_network
from lipcert.local import (
    LinearClassifier,
    LinearizationWarning,
    linearize,
    masked_product_operator,
    quotient_curve,
    random_direction_comparison,
    region_radius,
    sigma_max,
)
from lipcert.netspec import Filter, LayerSpec, NetworkSpec, max_pool_as_merge, validate
from lipcert.spectral import network_bessel
from lipcert.stochastic import (
    ProcessConfig,
    concentration_profile,
    dilation_counterexample,
    random_spectrum,
    verify_theorem2,
)
from lipcert.toy import expected_triples, toy_network
from oracles import lp_dynamic_program, lp_vertex_enumeration

pytestmark = pytest.mark.acceptance

A = 2 * math.exp(-1 / 3)
TABLE = [(A, 1.0, 1.0), (A, 1.0, 1.0), (2.0, 2.0, 1.0), (1.0, 0.0, 1.0)]


def test_01_toy_bessel_bounds(acceptance):
    start = time.perf_counter()
    got = np.array([tuple(t) for t in network_bessel(toy_network())])
    elapsed = time.perf_counter() - start
    err = float(np.abs(got - np.array(TABLE)).max())
    ok = err <= 1e-2 and elapsed < 10
    acceptance(1, ok, f"toy Bessel triples max error {err:.2e} (tol 1e-2), {elapsed:.2f} s (limit 10 s)")
    assert ok


def test_02_toy_lp(acceptance):
    lp = solve_lipschitz_lp(TABLE).lp_bound
    ok = abs(lp - 2.866) <= 5e-3
    acceptance(2, ok, f"toy LP bound {lp:.5f} (target 2.866 +/- 5e-3)")
    assert ok


def test_03_toy_corollaries(acceptance):
    sp, prod = corollary_sumprod(TABLE), corollary_product(TABLE)
    ok = sp == 5.0 and abs(prod - 8 * math.exp(-2 / 3)) <= 1e-3 and abs(prod - 4.1074) <= 1e-3
    acceptance(3, ok, f"sum-product bound {sp!r} (exactly 5), product bound {prod:.5f} (4.1074 +/- 1e-3)")
    assert ok


def test_04_scattering_lp(acceptance):
    errs = [abs(solve_lipschitz_lp([(1.0, 1.0, 1.0)] * M).lp_bound - 1.0) for M in range(1, 11)]
    ok = max(errs) <= 1e-9
    acceptance(4, ok, f"all-(1,1,1) triples, M = 1..10: max |LP - 1| = {max(errs):.1e} (tol 1e-9)")
    assert ok


def test_05_max_pool(acceptance):
    frag = max_pool_as_merge(2, 2, extent=8)
    net = validate(NetworkSpec((frag.as_layer(), LayerSpec(1, (Filter([1.0]),), (), ())), (8,)))
    out = forward(net, np.array([1.0, 3, 4, 2, 1, 5, 6, 7]))[(1, 0)]
    ok = out.tolist() == [3.0, 4.0, 5.0, 7.0]
    acceptance(5, ok, f"max-pool fragment on (1,3,4,2,1,5,6,7) gives {tuple(out.tolist())}")
    assert ok


def test_06_soundness_fuzz(acceptance):
    start = time.perf_counter()
    violations, worst, kinds = 0, -math.inf, set()
    for i in range(1000):
        rng = np.random.default_rng([6, i])
        net = random_network(rng)
        kinds.update(g.merge.kind.value for layer in net.layers if not layer.is_linear for g in layer.merges)
        bound = math.sqrt(certify(net)[1].lp_bound)
        shape = (100,) + tuple(net.input_shape)
        f = rng.standard_normal(shape)
        scale = 10.0 ** rng.uniform(-3, 1, size=(100,) + (1,) * net.ndim)
        g = f + scale * rng.standard_normal(shape)
        ratio = empirical_ratio(net, f, g)
        violations += int(np.sum(ratio > bound + 1e-7))
        worst = max(worst, float((ratio - bound).max()))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 300
    acceptance(6, ok, f"1000 nets x 100 pairs: {violations} violations, max ratio - sqrt(L) = {worst:.2e}, "
                      f"merge kinds {sorted(kinds)}, {elapsed:.0f} s (limit 300 s)")
    assert ok


def _dominated_triples(rng, M):
    b23 = rng.uniform(0.0, 3.0, size=(M, 2))
    b23[rng.random((M, 2)) < 0.05] = 0.0
    lo, hi = b23.max(axis=1), b23.sum(axis=1)
    b1 = lo + rng.random(M) * (hi - lo)
    return [(float(a), float(b), float(c)) for a, (b, c) in zip(b1, b23)]


def test_07_corollary_dominance(acceptance):
    rng = np.random.default_rng(7)
    over, worst_dom, worst_enum, worst_dp, enumerated = 0, -math.inf, 0.0, 0.0, 0
    for _ in range(100_000):
        M = int(rng.integers(1, 9))
        triples = _dominated_triples(rng, M)
        lp = solve_lipschitz_lp(triples).lp_bound
        gap = lp - min(corollary_product(triples), corollary_sumprod(triples))
        worst_dom = max(worst_dom, gap)
        over += gap > 1e-9
        worst_dp = max(worst_dp, abs(lp - lp_dynamic_program(triples)))
        if M <= 4:
            worst_enum = max(worst_enum, abs(lp - lp_vertex_enumeration(triples)))
            enumerated += 1
    ok = over == 0 and worst_enum <= 1e-8
    acceptance(7, ok, f"1e5 triples (b2, b3 <= b1 <= b2 + b3): {over} dominance violations "
                      f"(max LP - min corollary {worst_dom:.1e}); vertex enumeration on {enumerated} cases "
                      f"with M <= 4 max deviation {worst_enum:.1e} (tol 1e-8); recursion oracle {worst_dp:.1e}")
    assert ok


def test_08_local_analysis(acceptance):
    rng = np.random.default_rng(8)
    svd_err = 0.0
    for _ in range(100):
        dims = [int(d) for d in rng.integers(2, 401, size=int(rng.integers(2, 5)))]
        op = masked_product_operator(dims, rng, density=rng.uniform(0.3, 0.9))
        want = np.linalg.svd(op.to_dense(), compute_uv=False)[0]
        svd_err = max(svd_err, abs(sigma_max(op).sigma_max - want))
    quot_err, excess, checked = 0.0, -math.inf, 0
    for i in range(30):
        nrng = np.random.default_rng([8, i])
        net = random_network(nrng, piecewise_linear=True)
        root_L = math.sqrt(certify(net)[1].lp_bound)
        for f in nrng.standard_normal((5,) + tuple(net.input_shape)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinearizationWarning)
                op = linearize(net, f)
            rep = sigma_max(op)
            excess = max(excess, rep.sigma_max - root_L)
            v = rep.direction.reshape(f.shape)
            r = region_radius(op, v)
            if r == 0 or rep.sigma_max == 0:
                continue
            hs = np.array([0.25, 0.5, 0.9]) * min(r, 10.0)
            quot_err = max(quot_err, float(np.abs(quotient_curve(net, f, v, hs)[:, 1] - rep.sigma_max).max()))
            checked += 1
    ok = svd_err <= 1e-6 and quot_err <= 1e-9 and excess <= 1e-7
    acceptance(8, ok, f"masked operators: max |sigma - SVD| {svd_err:.1e} (tol 1e-6); quotient along principal "
                      f"direction inside region on {checked} points: max deviation {quot_err:.1e} (tol 1e-9); "
                      f"max sigma_max - sqrt(L) = {excess:.2e} (tol 1e-7)")
    assert ok


def test_09_theorem2_monte_carlo(acceptance):
    satisfied = 0
    for i in range(100):
        rng = np.random.default_rng([9, i])
        net = random_network(rng, strides=False)
        shape = tuple(net.input_shape)
        cx = ProcessConfig(random_spectrum(shape, rng), shape, 2000, seed=1000 + i)
        cy = ProcessConfig(rng.uniform(0.2, 2.0) * random_spectrum(shape, rng), shape, 2000, seed=1000 + i)
        satisfied += verify_theorem2(net, cx, cy).satisfied
    dc = dilation_counterexample(20000)
    z0 = abs(dc["var_y_0"] - 2.0) / dc["se_y_0"]
    zq_ok = abs(dc["var_y_half_pi"]) <= 3 * dc["se_y_half_pi"] + 1e-12
    ok = satisfied == 100 and z0 <= 3 and zq_ok
    acceptance(9, ok, f"second-moment bound held in {satisfied}/100 runs (n = 2000); counterexample "
                      f"Var Y(0) = {dc['var_y_0']:.4f} ({z0:.2f} se from 2), Var Y(pi/2) = {dc['var_y_half_pi']:.1e}")
    assert ok


def test_10_concentration(acceptance):
    bad, rows = 0, 0
    for i in range(20):
        rng = np.random.default_rng([10, i])
        net = random_network(rng)
        shape = tuple(net.input_shape)
        cfg = ProcessConfig(random_spectrum(shape, rng), shape, 2000, seed=i)
        L = certify(net)[1].lp_bound
        t_grid = np.linspace(0.0, 3.0 * math.sqrt(cfg.energy * L), 13)
        prof = concentration_profile(net, cfg, t_grid, L=L)
        bad += sum(not r["satisfied"] for r in prof["rows"])
        rows += len(prof["rows"])
    ok = bad == 0
    acceptance(10, ok, f"shell-tail fraction <= bound + 3 se at {rows - bad}/{rows} (net, t) points on 20 nets")
    assert ok


def test_11_discriminant_trend(acceptance):
    N = 32
    t = np.arange(N)
    c1 = ClassModel(0.6 * np.cos(2 * np.pi * 3 * t / N), Filter([0.6, 0.5, 0.3]))
    c2 = ClassModel(0.6 * np.cos(2 * np.pi * 5 * t / N), Filter([0.3, 0.5, 0.6]))
    rng = np.random.default_rng(11)
    nets = [random_network(rng, depth=3, shape=(N,)) for _ in range(50)]
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        out = error_vs_discriminant(nets, c1, c2, 400, 400, seed=11)
    elapsed = time.perf_counter() - start
    rs, rl = out["spearman_s"], out["spearman_s_lip"]
    ok = rs < 0 and rl < 0 and elapsed < 120
    acceptance(11, ok, f"{len(out['rows'])} nets: Spearman(S, error) = {rs:.3f}, Spearman(S~, error) = {rl:.3f}, "
                       f"{elapsed:.1f} s (limit 120 s)")
    assert ok


def test_12_adversarial_trend(acceptance):
    wins, rows = 0, []
    for i in range(20):
        rng = np.random.default_rng([12, i])
        net = random_network(rng, piecewise_linear=True, ndim=1)
        f = rng.standard_normal(net.input_shape)
        feats = forward(net, f).flatten()
        clf = LinearClassifier.near_boundary(feats, 10, rng)
        res = random_direction_comparison(net, clf, f, 10 * np.linalg.norm(f), 200, rng)
        wins += res["principal"] <= res["random_median"]
        rows.append(res["principal"] / res["random_median"] if math.isfinite(res["random_median"]) else 0.0)
    frac = wins / 20
    ok = frac >= 0.7
    acceptance(12, ok, f"principal direction fools at or below the random median on {wins}/20 nets "
                       f"({frac:.0%}, need 70%); median magnitude ratio {np.median(rows):.2f}")
    assert ok
