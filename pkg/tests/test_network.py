import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpps.network import (BranchRecord, BusRecord, CaseParseError, GeneratorRecord, NetworkData,
                          NetworkValidationError, SingularBranchError, admittance_block, load_case,
                          parse_matpower)

MINI = """
function mpc = mini
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	1.1	0.9;
	2	1	50	20	0	19	1	1	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0	0	0	0	0	0	0	0	0	0	0	0;
	2	0	0	100	-100	1	100	0	200	0	0	0	0	0	0	0	0	0	0	0	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	20	5;
	2	0	0	3	0.02	30	0;
];
"""


def test_case14_counts(case14):
    assert (case14.n_bus, len(case14.generators), len(case14.branches)) == (14, 5, 20)


def test_case118_bus_count(case118):
    assert case118.n_bus == 118


def test_mini_parse_per_unit_and_status():
    net = parse_matpower(MINI, "mini")
    assert net.n_bus == 2
    assert len(net.generators) == 1  # second generator is out of service
    b2 = net.buses[1]
    assert b2.p_demand == pytest.approx(0.5)
    assert b2.q_demand == pytest.approx(0.2)
    assert b2.b_shunt == pytest.approx(0.19)
    g = net.generators[0]
    assert (g.p_max, g.q_min, g.c2, g.c1, g.c0) == (pytest.approx(2.0), pytest.approx(-1.0), 0.01, 20, 5)
    br = net.branches[0]
    assert br.tau == 1.0
    assert math.isinf(br.s_max)
    assert br.angle_min == pytest.approx(-2 * math.pi)


def test_parse_errors_carry_line():
    bad = MINI.replace("2	1	50	20", "2	1	abc	20")
    with pytest.raises(CaseParseError) as exc:
        parse_matpower(bad)
    assert exc.value.line is not None
    with pytest.raises(CaseParseError):
        parse_matpower(MINI.replace("mpc.branch", "mpc.nobranch"))


def test_validation_errors():
    with pytest.raises(NetworkValidationError):
        BusRecord(1, 1.1, 0.9, 0, 0, 0, 0)
    with pytest.raises(NetworkValidationError):
        GeneratorRecord(0, 1, 0, 0, 1, 1, 0)
    with pytest.raises(NetworkValidationError):
        GeneratorRecord(0, 0, 1, 0, 1, 1, -1)
    with pytest.raises(SingularBranchError):
        BranchRecord(0, 1, 0.0, 0.0, 0.0)
    with pytest.raises(NetworkValidationError):
        BranchRecord(0, 1, 0.0, 0.1, 0.0, tau=0.0)


def test_admittance_examples():
    yff, yft, _, ytt = BranchRecord(0, 1, 0.0, 0.1, 0.0).admittance
    assert yff == pytest.approx(-10j)
    assert yft == pytest.approx(10j)
    yff, _, _, ytt = BranchRecord(0, 1, 0.01, 0.1, 0.0).admittance
    assert abs(yff - (0.9901 - 9.9010j)) < 1e-3 and abs(ytt - yff) < 1e-12
    yff2 = BranchRecord(0, 1, 0.01, 0.1, 0.0, tau=2.0).admittance[0]
    assert yff2 == pytest.approx(yff / 4)
    yffb = BranchRecord(0, 1, 0.01, 0.1, 0.2).admittance[0]
    assert abs(yffb.imag - (-9.9010 + 0.1)) < 1e-3


@settings(max_examples=200, deadline=None)
@given(
    r=st.floats(0, 0.5), x=st.floats(0.01, 1.0), tau=st.floats(0.5, 1.5),
    shift=st.floats(-0.5, 0.5), bc=st.floats(0, 1.0),
)
def test_admittance_matches_matrix_form(r, x, tau, shift, bc):
    br = BranchRecord(0, 1, r, x, bc, tau=tau, theta_shift=shift)
    got = np.array(admittance_block(br)).reshape(2, 2)
    # independent: Y = [[ys + j b/2, -ys], [-ys, ys + j b/2]] conjugated by the tap transform
    ys = 1 / complex(r, x)
    t = tau * cmath.exp(1j * shift)
    Yl = np.array([[ys + 0.5j * bc, -ys], [-ys, ys + 0.5j * bc]])
    left = np.diag([1 / np.conj(t), 1.0])
    right = np.diag([1 / t, 1.0])
    want = left @ Yl @ right
    assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_incident_lines_count(case14, case118):
    for net in (case14, case118):
        assert sum(len(net.incident_lines(i)) for i in range(net.n_bus)) == 2 * len(net.branches)
        for k, br in enumerate(net.branches):
            assert br.to_bus in net.neighbors[br.from_bus]
            assert k in net.lines_from[br.from_bus] and k in net.lines_to[br.to_bus]


def test_json_round_trip_bit_identical(case118, tmp_path):
    back = NetworkData.loads(case118.dumps())
    assert back == case118
    p = tmp_path / "c.json"
    p.write_text(case118.dumps())
    assert load_case(p) == case118


def test_unknown_case():
    with pytest.raises(FileNotFoundError):
        load_case("case9999")
