import pytest

from dissipative_wqed.config import (
    PRESETS,
    SCHEMA,
    ConfigError,
    RunConfig,
    defaults,
    dump_toml,
    load_file,
    parse_toml,
    preset,
)
from dissipative_wqed.model import OPEN, PERIODIC, SSH


@pytest.mark.parametrize(
    "text,where,match",
    [
        ("[emitters]\ncouplng = 1\n", "b.toml:2", "unknown key 'couplng' in \\[emitters\\]"),
        ("[system]\nJ = 1.0\n\n[foo]\na = 1\n", "b.toml:4", "unknown section \\[foo\\]"),
        ("[system]\nJ = \"x\"\n", "b.toml:2", "J must be int or float"),
        ("[sweep]\naxes = [{name = \"coupling\", min = 0, max = 1}]\n", "b.toml:2", "exactly the keys"),
        ("x = = 1", "b.toml", "Invalid value"),
    ],
)
def test_errors_carry_file_and_line(text, where, match):
    with pytest.raises(ConfigError, match=match) as info:
        parse_toml(text, "b.toml")
    assert str(info.value).startswith(where)


def test_load_file_reports_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_file(str(tmp_path / "absent.toml"))


def test_presets_are_valid_and_buildable():
    for name in PRESETS:
        cfg = RunConfig.build(preset(name))
        spec = cfg.system_spec()
        cfg.sweep_plan(spec)
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("fig9")


def test_defaults_round_trip_through_toml():
    d = defaults()
    assert parse_toml(dump_toml(d)) == d
    assert set(d) == set(SCHEMA)


def test_layers_override_in_order():
    cfg = RunConfig.build(
        {"emitters": {"coupling": 0.2}},
        preset("fig2"),
        parse_toml("[emitters]\ncoupling = 0.05\n"),
    )
    e = cfg["emitters"]
    assert e["coupling"] == 0.05 and e["detuning"] == 2.1


def test_auto_entries_resolve_per_lattice():
    uni = RunConfig.build().system_spec(num_sites_auto=123)
    assert uni.lattice.num_sites == 123 and uni.lattice.boundary == PERIODIC
    ssh = RunConfig.build({"system": {"lattice": SSH}, "emitters": {"sites": "auto"}}).system_spec()
    assert ssh.lattice.boundary == OPEN
    assert ssh.emitters[0].site == 40
    assert ssh.lattice.num_sites >= 40 + 46 + 10


@pytest.mark.parametrize("delta", [0.0, -0.2, 1.0])
def test_ssh_dimerization_outside_unit_interval_is_explained(delta):
    cfg = RunConfig.build({"system": {"lattice": SSH, "dimerization": delta}})
    with pytest.raises(ConfigError, match="0 < delta < 1"):
        cfg.system_spec()


def test_invalid_system_and_sweep_are_config_errors():
    with pytest.raises(ConfigError, match="emitter 0: site 50"):
        RunConfig.build({"system": {"num_sites": 10}, "emitters": {"sites": [50]}}).system_spec()
    cfg = RunConfig.build(parse_toml('[sweep]\naxes = [{name = "coupling", min = 1, max = 0, count = 3}]\n'))
    with pytest.raises(ConfigError, match="invalid sweep"):
        cfg.sweep_plan(cfg.system_spec(20))
    with pytest.raises(ConfigError, match="lattice must be"):
        RunConfig.build({"system": {"lattice": "kagome"}}).system_spec()


def test_tolerances_section():
    tol = RunConfig.build({"tolerances": {"eps_real_rel": 1e-7}}).tolerances()
    assert tol.eps_real_rel == 1e-7
