import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import two_bus
from dpps.algorithms import DistributedContext, evaluate_dual
from dpps.model import (_Builder, boundary_bounds, build_centralized_soc, build_zone_subproblem,
                        gradient_norm_bound, split_primal, with_demand)
from dpps.network import BranchRecord, BusRecord, GeneratorRecord, NetworkData
from dpps.partition import build_partition, project_onto_lambda_space
from dpps.solver import INFEASIBLE, SolverConfig, solve


def test_scalar_qp():
    b = _Builder()
    b.var("x", 3.0, math.inf)
    b.q[0] = 1.0
    res = solve(b.build())
    assert res.ok and res.objective == pytest.approx(9.0, abs=1e-6) and res.x[0] == pytest.approx(3.0, abs=1e-6)
    assert res.primal == {"x": pytest.approx(3.0, abs=1e-6)}


def test_infeasible_status():
    b = _Builder()
    k = b.var("x", 0.0, 1.0)
    b.add_eq({k: 1.0}, 5.0)
    assert solve(b.build()).status == INFEASIBLE


def test_two_bus_lossless_balance():
    net = two_bus(demand=0.5)
    res = solve(build_centralized_soc(net))
    assert res.ok
    assert res.primal["pg[0]"] == pytest.approx(0.5, abs=1e-6)
    assert res.objective == pytest.approx(10.0 * 100 * 0.5, rel=1e-6)


def test_centralized_optimum_case14(case14):
    res = solve(build_centralized_soc(case14))
    assert res.ok and abs(res.objective - 8075.1) / 8075.1 < 1e-3


def test_solve_deterministic(case14):
    prog = build_centralized_soc(case14)
    a, b = solve(prog), solve(prog)
    assert abs(a.objective - b.objective) <= 1e-9 * abs(a.objective)
    assert np.array_equal(a.x, b.x)


def test_zone_rows_hold_at_centralized_solution(case14, part14):
    cen = build_centralized_soc(case14)
    res = solve(cen, cfg=SolverConfig(feas_tol=1e-9, opt_tol=1e-9))
    vals = res.primal
    for z in range(part14.n_zones):
        prog = build_zone_subproblem(case14, part14, z)
        x = np.array([vals[nm] for nm in prog.names])
        assert prog.residuals(x)["max"] < 1e-6


def test_single_zone_dual_is_optimum(case14):
    part = build_partition(case14, [0] * 14)
    ctx = DistributedContext(case14, part)
    ev = evaluate_dual(part.zeros(), ctx)
    assert ev.H == pytest.approx(ctx.z_star, rel=1e-7)


def test_zone_boundary_length(case14, part14):
    prog = build_zone_subproblem(case14, part14, 1)
    assert len(prog.meta["y_idx"]) == 8 * 4 == len(part14.zone_view[1])
    x = np.arange(prog.n, dtype=float)
    zp = split_primal(prog, x)
    assert len(zp.y_part) + len(zp.x_part) == prog.n


def test_demand_override_changes_one_row(case14, part14):
    base = build_zone_subproblem(case14, part14, 0)
    bus = case14.bus_index(4)
    d = base.meta["demand"][bus]
    for pert in (build_zone_subproblem(case14, part14, 0, {bus: 1.05 * d}), with_demand(base, {bus: 1.05 * d})):
        diff = np.flatnonzero(pert.b_eq != base.b_eq)
        assert list(diff) == [base.meta["p_rows"][bus]]
        assert pert.b_eq[diff[0]] == pytest.approx(-1.05 * d)
        assert (pert.A_eq != base.A_eq).nnz == 0
    assert with_demand(base, {bus: 0.0}).meta["demand"][bus] == 0.0
    assert base.meta["demand"][bus] == d


def test_weak_duality_random_lambda(ctx14, part14):
    rng = np.random.default_rng(7)
    for _ in range(50):
        lam = project_onto_lambda_space(rng.normal(scale=200.0, size=part14.dual_size), part14)
        assert evaluate_dual(lam, ctx14).H <= ctx14.z_star + 1e-4 * abs(ctx14.z_star)


def test_boundary_bounds_examples():
    buses = (BusRecord(1, 0.94, 1.06, 0, 0, 0, 0), BusRecord(2, 0.94, 1.06, 0.3, 0, 0, 0))
    net = NetworkData(100.0, buses, (GeneratorRecord(0, 0, 1, -1, 1, 1, 0),),
                      (BranchRecord(0, 1, 0.01, 0.1, 0.0, s_max=1.0),))
    part = build_partition(net, [0, 1])
    bnd = boundary_bounds(net, part)
    tags = [t for _, t in part.consensus_index]
    assert bnd[tags.index("pF")] == pytest.approx([-1.0, 1.0])
    assert bnd[tags.index("wRR")] == pytest.approx([-1.1236, 1.1236])
    g_u = gradient_norm_bound(bnd, part, 0.0)
    expected = sum(max(abs(lo), abs(hi)) ** 2 for lo, hi in bnd[part.group])
    assert g_u == pytest.approx(expected)
    assert gradient_norm_bound(bnd, part, 0.1) > g_u


def test_unbounded_flow_bounds_contain_solution(case14, part14):
    bnd = boundary_bounds(case14, part14)
    res = solve(build_centralized_soc(case14))
    for k, (l, tag) in enumerate(part14.consensus_index):
        v = res.primal[f"{tag}[{l}]"]
        assert bnd[k, 0] - 1e-6 <= v <= bnd[k, 1] + 1e-6


def test_soc_lower_bounds_ac_on_toy():
    """Exact AC on the 2-bus toy by grid over |V| and a root solve in the angle."""
    net = two_bus(demand=0.8, r=0.02, x=0.1, b_charge=0.05, gen_at_load=True, q_demand=0.2)
    soc = solve(build_centralized_soc(net))
    assert soc.ok
    yff, yft, ytf, ytt = net.branches[0].admittance
    d = net.buses[1].p_demand
    best = math.inf
    lim = math.radians(30)
    for v1 in np.linspace(0.9, 1.1, 41):
        for v2 in np.linspace(0.9, 1.1, 41):
            def flows(th):
                V1, V2 = v1, v2 * np.exp(-1j * th)
                return V1 * np.conj(yff * V1 + yft * V2), V2 * np.conj(ytf * V1 + ytt * V2)

            f = lambda th: flows(th)[1].real + d  # noqa: E731
            if f(-lim) * f(lim) > 0:
                continue
            th = brentq(f, -lim, lim, xtol=1e-14)
            sf, _ = flows(th)
            if 0 <= sf.real <= 2 and -2 <= sf.imag <= 2:
                best = min(best, 10.0 * 100 * sf.real)
    assert math.isfinite(best)
    assert soc.objective <= best + 1e-6
    assert soc.objective >= 0.99 * best  # tight on a radial toy
