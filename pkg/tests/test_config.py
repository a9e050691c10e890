import json
import math

import numpy as np
import pytest
import tomli
from hypothesis import given, strategies as st

from penning import config
from penning.errors import ConfigError


def test_defaults_build_every_object():
    cfg = config.resolve()
    sc = config.scene(cfg)
    f = sc.frequencies
    assert sc.drive.frequency == f.omega_c
    assert sc.probe.frequency == f.omega_m
    assert sc.laser is not None
    assert config.sim_config(cfg).dt is None or config.sim_config(cfg).dt > 0
    pos, vel = config.initial_state(cfg)
    assert pos.shape == vel.shape == (1, 3)
    config.camera(cfg)
    p, s = config.envelope(cfg)
    assert p.delta == 1000.0 and s.r_m == 50e-6


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        config.resolve(overrides=["trap.b_teslas=1.0"])


@pytest.mark.parametrize("override", ["trap.b_tesla=true", "sim.coulomb=1",
                                      "sim.rng_seed=1.5", "trap.v_volts=high",
                                      "laser.direction=3.0"])
def test_type_mismatch_rejected(override):
    with pytest.raises(ConfigError):
        config.resolve(overrides=[override])


def test_numeric_coercion():
    cfg = config.resolve(overrides=["trap.b_tesla=2", "sim.rng_seed=7.0"])
    assert cfg["trap.b_tesla"] == 2.0 and isinstance(cfg["trap.b_tesla"], float)
    assert cfg["sim.rng_seed"] == 7 and isinstance(cfg["sim.rng_seed"], int)


def test_parse_override():
    assert config.parse_override("a.b = 3") == ("a.b", 3)
    assert config.parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    assert config.parse_override("a.b=montecarlo") == ("a.b", "montecarlo")
    assert config.parse_override('a.b="x=y"') == ("a.b", "x=y")
    for bad in ("novalue", "=3"):
        with pytest.raises(ConfigError):
            config.parse_override(bad)


def test_toml_nested_and_dotted(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[trap]\nb_tesla = 2.0\n"sim.rng_seed" = 1\n'
                    '[sim]\nduration_s = 1e-3\n')
    with pytest.raises(ConfigError):
        config.resolve(path=path)  # quoted key nests as trap."sim.rng_seed"
    path.write_text('sim.rng_seed = 4\n[trap]\nb_tesla = 2.0\n')
    cfg = config.resolve(path=path)
    assert cfg["trap.b_tesla"] == 2.0 and cfg["sim.rng_seed"] == 4


def test_layer_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("trap.v_volts = 3.0\nsim.rng_seed = 2\n")
    cfg = config.resolve(preset={"trap.v_volts": 2.0, "sim.duration_s": 1e-3},
                         path=path, overrides=["sim.rng_seed=9"])
    assert cfg["sim.duration_s"] == 1e-3
    assert cfg["trap.v_volts"] == 3.0
    assert cfg["sim.rng_seed"] == 9


def test_json_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"scenario": "fig4", "config": {"trap.v_volts": 4.0}}))
    layer, name = config.load_file(path)
    assert name == "fig4" and layer == {"trap.v_volts": 4.0}
    path.write_text(json.dumps({"scenario": "fig4"}))
    with pytest.raises(ConfigError):
        config.load_file(path)
    path.write_text("{")
    with pytest.raises(ConfigError):
        config.load_file(path)
    with pytest.raises(ConfigError):
        config.load_file(tmp_path / "missing.toml")


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("trap = = 1")
    with pytest.raises(ConfigError):
        config.load_file(path)


def test_extra_keys():
    cfg = config.resolve(extra={"scenario.points": 5}, overrides=["scenario.points=7"])
    assert cfg["scenario.points"] == 7
    with pytest.raises(ConfigError):
        config.resolve(overrides=["scenario.points=7"])


@pytest.mark.parametrize("alias,attr", [("f_c", "omega_c"), ("f_c_prime", "omega_c_prime"),
                                        ("f_m", "omega_m"), ("f_z", "omega_z")])
def test_frequency_aliases(alias, attr):
    cfg = config.resolve(overrides=[f"drive.frequency_hz={alias}"])
    sc = config.scene(cfg)
    assert sc.drive.frequency == getattr(sc.frequencies, attr)


def test_numeric_frequency_and_bad_alias():
    cfg = config.resolve(overrides=["drive.frequency_hz=627e3"])
    assert config.scene(cfg).drive.frequency == pytest.approx(2 * math.pi * 627e3, rel=1e-15)
    cfg = config.resolve(overrides=["drive.frequency_hz=f_q"])
    with pytest.raises(ConfigError):
        config.scene(cfg)


def test_dt_auto_and_number():
    assert config.sim_config(config.resolve(overrides=["sim.dt_s=1e-9"])).dt == 1e-9
    with pytest.raises(ConfigError):
        config.sim_config(config.resolve(overrides=["sim.dt_s=soon"]))


def test_builder_errors_are_config_errors():
    with pytest.raises(ConfigError, match="^trap"):
        config.fields(config.resolve(overrides=["trap.b_tesla=-1.0"]))
    with pytest.raises(ConfigError):
        config.laser(config.resolve(overrides=["laser.direction=[1.0, 0.0]"]))
    with pytest.raises(ConfigError):
        config.initial_state(config.resolve(overrides=["ions.velocities_m_per_s=[]"]))
    assert config.laser(config.resolve(overrides=["laser.enabled=false"])) is None


def test_toml_roundtrip_of_defaults(tmp_path):
    cfg = config.resolve(overrides=["sim.rng_seed=3", "drive.frequency_hz=1.5e5"])
    path = tmp_path / "c.toml"
    path.write_text(config.to_toml(cfg))
    assert config.resolve(path=path) == cfg


toml_scalars = st.one_of(st.booleans(), st.integers(-2**62, 2**62),
                         st.floats(allow_nan=False, allow_infinity=False),
                         st.text(max_size=20))


@given(st.dictionaries(st.from_regex(r"[a-z]{1,6}\.[a-z_]{1,8}", fullmatch=True),
                       st.one_of(toml_scalars, st.lists(toml_scalars.filter(
                           lambda x: isinstance(x, float)), max_size=4)), max_size=8))
def test_to_toml_roundtrip_property(cfg):
    back = config.flatten(tomli.loads(config.to_toml(cfg)))
    assert back == cfg


def test_sample_weights_without_laser():
    cfg = config.resolve(overrides=["laser.enabled=false"])

    class T:
        positions = np.zeros((4, 2, 3))
        sample_interval = 1e-6
    w = config.sample_weights(T, cfg)
    assert w.shape == (4, 2) and np.all(w == 1e-6)
