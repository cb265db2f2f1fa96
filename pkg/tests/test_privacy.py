import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_bus
from dpps.model import build_zone_subproblem
from dpps.partition import build_partition
from dpps.privacy import (NoiseDraw, PrivacyParams, accountant_report, compute_sensitivity, draw_noise,
                          laplace_logpdf, laplace_scale, noise_rng, perturb)
from dpps.solver import solve

GOLDEN = Path(__file__).parent / "golden"


def _zone_base(net, part, z, lin=None):
    prog = build_zone_subproblem(net, part, z)
    res = solve(prog, lin)
    assert res.ok
    return prog, res.x[prog.meta["y_idx"]]


def test_params_validation():
    with pytest.raises(ValueError):
        PrivacyParams(epsilon_bar=0)
    with pytest.raises(ValueError):
        PrivacyParams(beta=1.0)
    with pytest.raises(ValueError):
        PrivacyParams(accountant="sum")
    assert not PrivacyParams().private and PrivacyParams(epsilon_bar=1).private


def test_zero_beta_zero_sensitivity(case14, part14):
    prog, y = _zone_base(case14, part14, 0)
    sens = compute_sensitivity(prog, y, 0.0)
    assert np.all(sens.delta == 0) and sens.solves == 0


def test_two_bus_sensitivity_equals_beta_d(toy_split):
    net, part = toy_split
    prog, y = _zone_base(net, part, 1)
    d = net.buses[1].p_demand
    sens = compute_sensitivity(prog, y, 0.05)
    tags = [t for _, t in part.consensus_index]
    for tag in ("pF", "pT"):
        assert sens.delta[tags.index(tag)] == pytest.approx(0.05 * d, abs=1e-6)
    assert sens.solves == 2 and sens.skipped == 0


def test_case14_zone_sensitivity_golden(case14, part14):
    gold = json.loads((GOLDEN / "sensitivity_case14_zone0.json").read_text())
    prog, y = _zone_base(case14, part14, 0)
    sens = compute_sensitivity(prog, y, gold["beta"])
    assert np.allclose(sens.delta, gold["delta"], atol=1e-6)


def test_extremes_dominate_interior():
    rng = np.random.default_rng(3)
    wins = trials = 0
    beta = 0.1
    for _ in range(20):
        d = rng.uniform(0.2, 1.5)
        net = two_bus(demand=d, r=rng.uniform(0, 0.05), x=rng.uniform(0.05, 0.3), b_charge=rng.uniform(0, 0.1))
        part = build_partition(net, [0, 1])
        prog = build_zone_subproblem(net, part, 1)
        lin = np.zeros(prog.n)
        lin[prog.meta["y_idx"]] = rng.normal(scale=5.0, size=len(prog.meta["y_idx"]))
        res = solve(prog, lin)
        y = res.x[prog.meta["y_idx"]]
        ext = compute_sensitivity(prog, y, beta, lin).delta.max()
        inner = 0.0
        for dd in rng.uniform(d * (1 - beta), d * (1 + beta), size=10):
            r = solve(build_zone_subproblem(net, part, 1, {1: dd}), lin)
            if r.ok:
                inner = max(inner, np.abs(r.x[prog.meta["y_idx"]] - y).max())
        trials += 1
        wins += ext >= inner - 1e-7
    assert wins >= 0.95 * trials


def test_zero_sensitivity_zero_noise():
    p = PrivacyParams(epsilon_bar=0.1, seed=1)
    draw = draw_noise(np.array([0.0, 1.0, 0.0]), p, K=10, k=1, z=0)
    assert draw.xi[0] == 0 and draw.xi[2] == 0 and draw.xi[1] != 0


def test_non_private_is_exactly_zero():
    draw = draw_noise(np.ones(5), PrivacyParams(), K=10, k=3, z=1)
    assert np.all(draw.xi == 0)
    y = np.array([1.0, 2.0])
    assert np.array_equal(perturb(y, NoiseDraw(np.zeros(2), np.zeros(2))), y)


def test_perturb_example_and_mismatch():
    out = perturb(np.array([1.0, 2.0]), NoiseDraw(np.array([0.5, -0.5]), np.ones(2)))
    assert np.array_equal(out, [1.5, 1.5])
    with pytest.raises(ValueError):
        perturb(np.ones(3), NoiseDraw(np.zeros(2), np.zeros(2)))


def test_laplace_moments():
    p = PrivacyParams(epsilon_bar=1.0, seed=11)
    xi = draw_noise(np.ones(1_000_000), p, K=1, k=1, z=0).xi
    assert abs(xi.mean()) < 0.01
    assert abs(np.abs(xi).mean() - 1.0) < 0.01


def test_halving_epsilon_doubles_noise():
    delta = np.full(1_000_000, 0.3)
    a = np.abs(draw_noise(delta, PrivacyParams(epsilon_bar=1.0, seed=5), 1, 1, 0).xi).mean()
    b = np.abs(draw_noise(delta, PrivacyParams(epsilon_bar=0.5, seed=6), 1, 1, 0).xi).mean()
    assert b / a == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_density_ratio_bound(eps):
    """Outputs on neighbouring inputs (query differs by the sensitivity) are eps-indistinguishable."""
    sens, n = 1.0, 1_000_000
    p = PrivacyParams(epsilon_bar=eps, seed=21)
    a = 0.0 + draw_noise(np.full(n, sens), p, 1, 1, 0).xi
    b = sens + draw_noise(np.full(n, sens), p, 1, 2, 0).xi
    edges = np.linspace(-6 * sens / eps, 6 * sens / eps, 61)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    ok = (ha >= 1000) & (hb >= 1000)
    assert ok.sum() > 10
    lr = np.abs(np.log(ha[ok] / hb[ok]))
    slack = 4 * np.sqrt(1 / ha[ok] + 1 / hb[ok])
    assert np.all(lr <= eps + slack)
    # analytic density agrees with the sampler
    mid = 0.5 * (edges[1:] + edges[:-1])[ok]
    width = edges[1] - edges[0]
    dens = np.exp(laplace_logpdf(mid, sens / eps)) * width * n
    assert np.allclose(ha[ok], dens, rtol=0.1)


def test_noise_deterministic_and_order_free():
    p = PrivacyParams(epsilon_bar=0.3, seed=99)
    d = np.linspace(0.1, 1, 8)
    a = [draw_noise(d, p, 50, k, z).xi for k in (1, 2) for z in (0, 1, 2)]
    b = [draw_noise(d, p, 50, k, z).xi for z in (2, 1, 0) for k in (2, 1)]
    order = [(k, z) for k in (1, 2) for z in (0, 1, 2)]
    border = [(k, z) for z in (2, 1, 0) for k in (2, 1)]
    for (k, z), x in zip(order, a):
        assert np.array_equal(x, b[border.index((k, z))])
    assert not np.array_equal(noise_rng(1, 1, 0).random(3), noise_rng(1, 1, 1).random(3))


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(1e-3, 1e3), K=st.integers(1, 1000))
def test_whole_run_scale_is_k_times(eps, K):
    delta = np.array([0.1, 2.0, 0.0])
    it = laplace_scale(delta, PrivacyParams(epsilon_bar=eps), K)
    run = laplace_scale(delta, PrivacyParams(epsilon_bar=eps, accountant="run"), K)
    assert np.array_equal(run, K * delta / eps) and np.array_equal(it, delta / eps)


def test_accountant_report():
    r = accountant_report(PrivacyParams(epsilon_bar=0.1), 100)
    assert r["cumulative"] == pytest.approx(10.0) and r["per_iteration"] == 0.1
    r = accountant_report(PrivacyParams(epsilon_bar=0.1, accountant="run"), 100)
    assert r["scale_multiplier"] == 100 and r["cumulative"] == 0.1
    r = accountant_report(PrivacyParams(), 100)
    assert r["private"] is False and math.isinf(r["cumulative"])
    with pytest.raises(ValueError):
        accountant_report(PrivacyParams(), 0)


def test_sensitivity_cache_reuses_results(ctx14, tmp_path):
    from dpps.algorithms import DistributedContext, RuleConfig, run_dp_ps
    from dpps.privacy import SensitivityCache

    p = PrivacyParams(epsilon_bar=1.0, seed=4)
    plain = run_dp_ps(ctx14, RuleConfig(), p, 3, keep_zone_x=False)
    cache = SensitivityCache(tmp_path / "sens")
    ctx = DistributedContext(ctx14.net, ctx14.part, sens_cache=cache)
    first = run_dp_ps(ctx, RuleConfig(), p, 3, keep_zone_x=False)
    assert cache.misses == 9 and cache.hits == 0
    second = run_dp_ps(ctx, RuleConfig(), p, 3, keep_zone_x=False)
    assert cache.hits == 9
    assert second.column("n_solves").sum() == 9
    for a, b, c in zip(plain.delta, first.delta, second.delta):
        assert np.array_equal(a, b) and np.array_equal(b, c)
