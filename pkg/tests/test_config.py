import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoscale import config as cfg
from twoscale.errors import MissingSection, ParseError, UnknownKey

GOOD = """
# comment line
[geometry]
variant = annulus   # trailing comment
r_solid = 0.2
r_water = 0.35

[diffusion]
d3 = [[2.0, 0.0], [0.0, 2.0]]

[kinetics]
k1 = 1
"""


def test_parse_applies_defaults():
    c = cfg.parse_config(GOOD)
    assert c.get("geometry", "variant") == "annulus"
    assert c.get("kinetics", "k1") == 1.0 and isinstance(c.get("kinetics", "k1"), float)
    assert c.get("macro", "n_cells") == [20, 20]
    assert c.present == {"geometry", "diffusion", "kinetics"}


def test_default_file_round_trip(default_config):
    assert cfg.parse_config(default_config.render()) == default_config


def test_duplicate_key_names_key():
    with pytest.raises(ParseError, match="r_solid") as exc:
        cfg.parse_config("[geometry]\nr_solid = 0.1\nr_solid = 0.2\n")
    assert exc.value.line == 3


def test_parse_error_location():
    with pytest.raises(ParseError) as exc:
        cfg.parse_config("[geometry]\n  r_solid = [0.1,\n")
    assert (exc.value.line, exc.value.column) == (2, 13)
    with pytest.raises(ParseError):
        cfg.parse_config("[geometry\n")
    with pytest.raises(ParseError):
        cfg.parse_config("r_solid = 0.1\n")
    with pytest.raises(ParseError):
        cfg.parse_config("[macro]\nn_cells = [1.5, 2]\n")


def test_unknown_keys_rejected():
    with pytest.raises(UnknownKey):
        cfg.parse_config("[geometry]\nradius = 0.1\n")
    with pytest.raises(UnknownKey):
        cfg.parse_config("[plotting]\n")


def test_missing_section_for_command():
    c = cfg.parse_config(GOOD)
    c.require("cell")
    with pytest.raises(MissingSection):
        c.require("run")


def test_expressions():
    c = cfg.parse_config('[macro]\nu10 = "0.1 + 0.1*sin(pi*x)*y"\nu20 = 0.2*exp(-x)\n')
    vals = cfg.initial_samples(c, "u10")
    assert len(vals) == 400 and vals.min() >= 0.1
    with pytest.raises(ParseError):
        cfg.parse_config('[macro]\nu10 = "__import__(1)"\n')
    with pytest.raises(ParseError):
        cfg.parse_config('[macro]\nu10 = "x.real"\n')


def test_negative_radius_fails_geometry_validation(default_config):
    from twoscale.kinetics import validate_assumptions

    text = default_config.render().replace("r_solid = 0.2", "r_solid = -0.1")
    report = validate_assumptions(cfg.parse_config(text))
    assert not report.ok and report.failures()[0][0] == "geometry"


values = {
    "r_solid": st.floats(0.01, 0.2),
    "k1": st.floats(0, 10, allow_subnormal=False),
    "dt": st.floats(1e-6, 1.0),
    "n": st.integers(1, 200),
    "flag": st.booleans(),
    "u10": st.one_of(st.floats(0, 5), st.sampled_from(["x*y", "0.5 + 0.1*cos(pi*y)"])),
    "tensor": st.floats(0.01, 10),
}


@settings(max_examples=100, deadline=None)
@given(**values)
def test_round_trip_property(r_solid, k1, dt, n, flag, u10, tensor):
    c = cfg.load_config(cfg.DEFAULT_CONFIG)
    c = (c.with_values("geometry", r_solid=r_solid)
          .with_values("kinetics", k1=k1, strict_a4=flag)
          .with_values("macro", dt=dt, n_cells=[n, n], u10=u10)
          .with_values("diffusion", d2=[[tensor, 0.0], [0.0, tensor]]))
    assert cfg.parse_config(c.render()) == c
