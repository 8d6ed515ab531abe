import math

import numpy as np
import pytest

from smpscopf.data import case_path
from smpscopf.grid import (
    CaseParseError, CaseValidationError, IslandingError, admittance_view, load_case,
    parse_case, to_per_unit, to_physical, validate_network,
)

TWO_BUS = """
buses:
  - {id: A, v_min: 0.9, v_max: 1.1, p_load: 0, q_load: 0, is_slack_angle_ref: true}
  - {id: B, v_min: 0.9, v_max: 1.1, p_load: 50, q_load: 10}
branches:
  - {id: AB, from: A, to: B, v_nom: 400, r: 3.2, x: 16, b_sh: 0, i_max: 1587.7}
generators:
  - {id: G, bus: A, p_min: 0, p_max: 100, q_min: -50, q_max: 50, ramp: 100, cost_b: 10}
contingencies: [AB]
"""


def test_five_bus_counts(net5):
    assert len(net5.buses) == 5
    assert len(net5.branches) == 6
    assert len(net5.generators) == 3
    assert validate_network(net5) == []


def test_load_case_from_file():
    net = load_case(str(case_path("five_bus.yaml")))
    assert [g.id for g in net.generators] == ["G3", "G4", "G5"]


def test_empty_bus_list():
    with pytest.raises(CaseValidationError, match="no buses"):
        parse_case("buses: []\n")


def test_unknown_bus_names_branch():
    text = TWO_BUS.replace("to: B", "to: '99'")
    with pytest.raises(CaseValidationError, match="AB"):
        parse_case(text)


def test_malformed_document():
    with pytest.raises(CaseParseError):
        parse_case("buses: [1, 2\n")


def test_bound_ordering_diagnostic(net5):
    from dataclasses import replace
    bus = replace(net5.buses[0], v_min=1.06)
    net = replace(net5, buses=(bus,) + net5.buses[1:])
    diags = validate_network(net)
    assert len(diags) == 1


def test_efficiency_diagnostic(net5):
    from dataclasses import replace
    ess = replace(net5.storage[0], eta_ch=1.2)
    diags = validate_network(replace(net5, storage=(ess,)))
    assert len(diags) == 1


def test_per_unit_impedance(net5):
    nn = to_per_unit(net5, 100.0)
    assert nn.r[0] == pytest.approx(0.002)
    assert nn.x[0] == pytest.approx(0.01)


def test_per_unit_current_limit(net5):
    nn = to_per_unit(net5, 100.0)
    i_base = 100e3 / (math.sqrt(3) * 400)
    assert nn.i_max[0] == pytest.approx(1587.7 / i_base)
    assert nn.i_max[0] == pytest.approx(11.0, abs=1e-3)


def test_identity_base():
    # base chosen so that z_base = 1 ohm
    text = TWO_BUS.replace("v_nom: 400", "v_nom: 10").replace("contingencies: [AB]", "")
    net = parse_case(text)
    nn = to_per_unit(net, 100.0)
    assert nn.r[0] == pytest.approx(3.2)
    assert nn.x[0] == pytest.approx(16.0)


def test_round_trip(net5):
    back = to_physical(to_per_unit(net5, 100.0))
    for a, b in zip(net5.branches, back.branches):
        assert a.r == pytest.approx(b.r)
        assert a.i_max == pytest.approx(b.i_max)
    for a, b in zip(net5.generators, back.generators):
        assert a.p_max == pytest.approx(b.p_max)


def test_series_admittance_sign(net5):
    nn = to_per_unit(net5)
    z = nn.r + 1j * nn.x
    np.testing.assert_allclose(nn.g + 1j * nn.b, 1 / z)
    assert np.all(nn.b < 0)


def test_intact_state_all_branches(net5):
    view = admittance_view(to_per_unit(net5), 0)
    assert len(view.branches) == 6


def test_l2_out_state(net5):
    nn = to_per_unit(net5)
    k = [net5.contingencies.label(i) for i in range(len(net5.contingencies))].index("L2 out")
    view = admittance_view(nn, k)
    assert len(view.branches) == 5
    pairs = {frozenset((int(a), int(b))) for a, b in zip(view.from_bus, view.to_bus)}
    assert frozenset((0, 2)) not in pairs


def test_islanding_two_bus():
    with pytest.raises(CaseValidationError, match="islands"):
        parse_case(TWO_BUS)
    nn = to_per_unit(parse_case(TWO_BUS, validate=False))
    admittance_view(nn, 0)
    with pytest.raises(IslandingError):
        admittance_view(nn, 1)
