import pytest

from meanflock.config import parse_config, schema_lines
from meanflock.errors import ConfigError

BASE = """
experiment = transport-check
model = cucker-smale
output_dir = /tmp/out
phi_lambda = 0.4
"""


def test_parse_minimal():
    cfg = parse_config(BASE)
    assert cfg.kind == "transport-check"
    assert cfg["model"] == "cucker-smale"
    assert cfg["dt"] == 0.01  # default
    assert cfg.seeds() == [0]


def test_comments_and_blanks_ignored():
    cfg = parse_config("# header\n\n" + BASE + "\nn_particles = 4  # inline\n")
    assert cfg["n_particles"] == 4


def test_unknown_key_cites_line():
    text = BASE + "\nwibble = 1\n"
    with pytest.raises(ConfigError, match=r"line 7: unknown key 'wibble'"):
        parse_config(text)


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(BASE + "\nmodel = zero\n")


def test_type_error_names_field():
    with pytest.raises(ConfigError, match="'n_particles' expects int"):
        parse_config(BASE + "\nn_particles = four\n")


def test_choice_error():
    with pytest.raises(ConfigError, match="scheme"):
        parse_config(BASE + "\nscheme = rk4\n")


def test_missing_required():
    with pytest.raises(ConfigError, match="required key 'output_dir'"):
        parse_config("experiment = simulate\nmodel = zero\n")


def test_kind_specific_requirements():
    text = BASE.replace("transport-check", "cauchy")
    with pytest.raises(ConfigError, match="'sizes'"):
        parse_config(text)


def test_nonpositive_dt_rejected():
    with pytest.raises(ConfigError, match="'dt'"):
        parse_config(BASE + "\ndt = -0.5\n")


def test_truncation_keys_travel_together():
    with pytest.raises(ConfigError, match="trunc"):
        parse_config(BASE + "\ntrunc_radius = 1.0\n")


def test_seed_list_and_derivation():
    cfg = parse_config(BASE + "\nseeds = 3, 5, 9\n")
    assert cfg.seeds() == [3, 5, 9]
    cfg2 = parse_config(BASE + "\nmaster_seed = 10\nn_seeds = 3\n")
    assert cfg2.seeds() == [10, 11, 12]


def test_sha_is_stable():
    a = parse_config(BASE)
    b = parse_config(BASE)
    assert a.sha256() == b.sha256()


def test_schema_lines_cover_all_keys():
    text = "\n".join(schema_lines())
    for key in ("experiment", "sizes", "n_list", "tf_radius"):
        assert key in text
