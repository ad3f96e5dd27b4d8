import pytest

from mhdlab.config import RunConfig, load_config, parse_config
from mhdlab.errors import ConfigError


def test_sections_aliases_and_comments():
    cfg = parse_config("""
# a comment
[physics]
lambda = 0.25   # trailing comment
kappa = 1e3
[grid]
grid.nx = 37
[run]
monitors = energy, divB
kappas = 1e2 1e3
compatible = yes
""")
    assert cfg.lam == 0.25 and cfg.kappa == 1000.0 and cfg.nx == 37
    assert cfg.monitors == ["energy", "divB"] and cfg.kappas == [100.0, 1000.0]
    assert cfg.compatible is True
    assert cfg.validate() is cfg


@pytest.mark.parametrize("text,msg", [
    ("nonsense = 1", "line 1: unknown key"),
    ("kappa 100", "expected 'key = value'"),
    ("nx = many", "bad value"),
    ("[run\nnx = 3", "malformed section"),
    ("kappa =", "empty value"),
    ("compatible = maybe", "not a boolean"),
])
def test_malformed_input(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


@pytest.mark.parametrize("kw", [dict(dim=4), dict(kappa=-1.0), dict(lam=-0.1),
                                dict(dt_policy="fixed"), dict(source="nope"),
                                dict(monitors=["energy", "x"]), dict(N_order=3)])
def test_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw).validate()


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.cfg"))
