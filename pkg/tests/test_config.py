import pytest
from hypothesis import given
from hypothesis import strategies as st

from runaway_lab import config
from runaway_lab.errors import ConfigError

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=1e-12, max_value=1e12)


def test_defaults_validate():
    cfg = config.SimConfig().validate()
    assert cfg.potential.r0 == 1.0 and cfg.body.M == 1.0


def test_missing_kind_names_key():
    with pytest.raises(ConfigError) as exc:
        config.loads("[body]\nE = 1.0\n")
    assert exc.value.key == "potential.kind"


@pytest.mark.parametrize("text,key", [
    ("[potential]\nkind = square\n", "potential.kind"),
    ("[potential]\nkind = bump\n[fluid]\nrho0 = -1\n", "fluid.rho0"),
    ("[potential]\nkind = bump\n[grid]\ndx = 0\n", "grid.dx"),
    ("[potential]\nkind = bump\n[body]\nspeed = 3\n", "body.speed"),
    ("[potential]\nkind = bump\n[body]\nE = fast\n", "body.E"),
])
def test_malformed_config_names_key(text, key):
    with pytest.raises(ConfigError) as exc:
        config.loads(text)
    assert exc.value.key == key


def test_overrides_parse_strings():
    cfg = config.SimConfig().with_overrides({"body.E": "0.5", "diagnostics.obs_speeds": "10, 20",
                                            "integration.frozen": "true"})
    assert cfg.body.E == 0.5
    assert cfg.diagnostics.obs_speeds == [10.0, 20.0]
    assert cfg.integration.frozen is True


@given(finite, finite, st.floats(0, 1e6), st.integers(0, 2**31), st.booleans(),
       st.lists(finite, max_size=4), st.sampled_from(["bump", "singular", "null"]))
def test_roundtrip_bit_exact(E, dx, rho0, seed, frozen, speeds, kind):
    cfg = config.SimConfig()
    cfg.body.E = E
    cfg.grid.dx = dx
    cfg.fluid.rho0 = rho0
    cfg.fluid.rng_seed = seed
    cfg.integration.frozen = frozen
    cfg.diagnostics.obs_speeds = speeds
    cfg.potential.kind = kind
    again = config.loads(config.dumps(cfg))
    assert again == cfg
    assert config.dumps(again) == config.dumps(cfg)


def test_save_load(tmp_path):
    cfg = config.SimConfig().with_overrides({"body.xidot0": 12.5})
    config.save(cfg, tmp_path / "c.ini")
    assert config.load(tmp_path / "c.ini") == cfg


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.ini")
