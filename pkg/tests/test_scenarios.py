import numpy as np
import pytest

from smpscopf.grid import ResPlant
from smpscopf.scenarios import (
    ScenarioRangeError, load_scenarios, replicate_scenarios, res_injection,
)


def test_bundled_profiles(scen):
    assert scen.n_scenarios == 10
    assert scen.n_periods == 24
    assert scen.profiles[7, 11] == pytest.approx(0.96)
    np.testing.assert_allclose(scen.probabilities, 0.1)


def test_all_zero_single_scenario():
    text = "t,s1\n" + "".join(f"{t},0\n" for t in range(1, 5))
    s = load_scenarios(text, 4)
    assert s.n_scenarios == 1
    assert s.probabilities[0] == 1.0


def test_out_of_range_entry():
    text = "t,s1,s2\n1,0.2,0.3\n2,1.3,0.1\n"
    with pytest.raises(ScenarioRangeError) as err:
        load_scenarios(text, 2)
    assert (err.value.scenario, err.value.period) == (0, 1)


def test_res_injection(scen):
    plant = ResPlant("W", "4", 1000.0)
    assert res_injection(scen, plant, 7, 11) == pytest.approx(960.0)
    assert res_injection(scen, ResPlant("W", "4", 700.0), 0, 0) == pytest.approx(119.0)
    zero = ResPlant("W", "4", 0.0)
    assert all(res_injection(scen, zero, s, t) == 0 for s in range(10) for t in range(24))


def test_replicate_cycles(scen):
    r = replicate_scenarios(scen, 30)
    assert r.n_scenarios == 30
    np.testing.assert_array_equal(r.profiles[10:20], scen.profiles)
    np.testing.assert_array_equal(r.profiles[20:30], scen.profiles)
    np.testing.assert_allclose(r.probabilities, 1 / 30)


def test_replicate_identity(scen):
    r = replicate_scenarios(scen, 10)
    np.testing.assert_array_equal(r.profiles, scen.profiles)
    np.testing.assert_allclose(r.probabilities, scen.probabilities)


def test_replicate_truncates(scen):
    r = replicate_scenarios(scen, 3)
    np.testing.assert_array_equal(r.profiles, scen.profiles[:3])
    np.testing.assert_allclose(r.probabilities, 1 / 3)
