from pathlib import Path

import pytest

from wavecouple.config import (
    Scenario,
    check_bump_support,
    load_scenario,
    parse_config_text,
    scenario_from_dict,
    time_grid,
)
from wavecouple.errors import ConfigError
from wavecouple.mesh import extract_boundary, make_cube_mesh
from wavecouple.stepper import Bump
from wavecouple.verify import exterior_scenario, spatial_scenario, temporal_scenario

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_parse_types():
    d = parse_config_text("""
# comment
[domain]
cube_n = 4   # trailing
origin = 0, 0, 1
[time]
dt = auto
allow_unstable = yes
[probes]
points = 0.5, 0.5, 2 ; 2, 0.5, 0.5
""")
    assert d["domain"] == {"cube_n": 4, "origin": (0.0, 0.0, 1.0)}
    assert d["time"] == {"dt": None, "allow_unstable": True}
    assert d["probes"]["points"] == ((0.5, 0.5, 2.0), (2.0, 0.5, 0.5))


@pytest.mark.parametrize("text, line", [
    ("[domain]\ncube_n = 2\n[nope]\n", 3),
    ("[domain]\nsize = 2\n", 2),
    ("[domain]\ncube_n = 2.5\n", 2),
    ("\n\n[time]\nT = fast\n", 4),
    ("cube_n = 2\n", 1),
    ("[domain]\ncube_n\n", 2),
    ("[domain]\ncube_n = 2\ncube_n = 3\n", 3),
    ("[domain\n", 1),
    ("[bump]\ncenter = 1, 2\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=rf"cfg:{line}:"):
        parse_config_text(text, "cfg")


def test_scenario_defaults():
    sc = scenario_from_dict({})
    assert sc.cube_n == 6 and sc.T == 1.5 and sc.cfl_safety == 0.9 and sc.alpha == 1.0
    assert sc.bump == Bump((0.5, 0.5, 0.5), 0.1, 1.0, "gaussian")
    assert sc.forcing is None


@pytest.mark.parametrize("data", [
    {"time": {"alpha": 0.5}},
    {"domain": {"cube_n": 0}},
    {"domain": {"side": -1.0}},
    {"time": {"T": -1.0}},
    {"forcing": {"kind": "siren"}},
    {"bump": {"kind": "box"}},
    {"quadrature": {"q_far": 1}},
])
def test_scenario_invalid(data):
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_alpha_override_allowed():
    sc = scenario_from_dict({"time": {"alpha": 0.5, "allow_unstable": True}})
    assert sc.alpha == 0.5


def test_bump_support_check():
    surf, _ = extract_boundary(make_cube_mesh(2, 1.0))
    assert check_bump_support(Bump((0.5, 0.5, 0.5), 0.1), surf) <= 1e-8
    with pytest.raises(ConfigError, match="boundary"):
        check_bump_support(Bump((0.5, 0.5, 0.5), 0.3), surf)
    assert check_bump_support(Bump((0.5, 0.5, 0.5), 0.45, kind="compact"), surf) == 0.0


def test_time_grid():
    dt, n = time_grid(1.0, None, 10.0, 0.9)
    assert n == 12 and abs(dt * n - 1.0) < 1e-15 and dt * 10.0 <= 0.9
    assert time_grid(1.0, 0.25, 10.0, 0.9) == (0.25, 4)
    assert time_grid(0.0, None, 10.0, 0.9)[1] == 0
    with pytest.raises(ConfigError):
        time_grid(1.0, 0.3, 10.0, 0.9)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_scenario("/nonexistent/wavecouple.cfg")


def _same(a: Scenario, b: Scenario):
    for k in a.__dataclass_fields__:
        if k == "output_dir":
            continue
        assert getattr(a, k) == getattr(b, k), k


@pytest.mark.parametrize("name, factory", [
    ("temporal.cfg", temporal_scenario),
    ("spatial.cfg", spatial_scenario),
    ("exterior.cfg", exterior_scenario),
])
def test_shipped_configs_match_suite(name, factory):
    _same(load_scenario(CONFIGS / name), factory())


def test_default_config_loads():
    sc = load_scenario(CONFIGS / "default.cfg")
    _same(sc.with_updates(probes=()), Scenario())
    assert sc.probes == ((0.5, 0.5, 2.0),)


def test_mesh_path_relative_to_config(tmp_path):
    from wavecouple.mesh import save_mesh

    save_mesh(make_cube_mesh(1, 1.0), tmp_path / "m.wcmesh")
    (tmp_path / "s.cfg").write_text("[domain]\nmesh = m.wcmesh\n")
    sc = load_scenario(tmp_path / "s.cfg")
    assert sc.build_mesh().n_tets == 6
