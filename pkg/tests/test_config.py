import pytest

from lowenv.config import ExperimentConfig
from lowenv.errors import ConfigError


def test_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.sigma == (1.0, 3.0, 15.0)
    assert (cfg.alpha1, cfg.alpha2, cfg.alpha3) == (0.2, 0.8, 1e5)
    assert cfg.currents == tuple(range(1, 12))


def test_echo_round_trip():
    cfg = ExperimentConfig(n=17, delta=0.0123, init_seeds=((0.1, 0.2, 0.05),), currents=(1, 5))
    assert ExperimentConfig.parse(cfg.echo()) == cfg


def test_parse_comments_and_lists():
    cfg = ExperimentConfig.parse("""
        # a comment
        n = 32   # trailing comment
        sigma = 1, 2, 7
        truth_ellipses = 0.5,0.5,0.2,0.1 ; 0.2,0.2,0.1,0.1
    """)
    assert cfg.n == 32 and cfg.sigma == (1.0, 2.0, 7.0)
    assert cfg.truth_ellipses == ((0.5, 0.5, 0.2, 0.1), (0.2, 0.2, 0.1, 0.1))


@pytest.mark.parametrize("text, token", [
    ("bogus = 3", "bogus"),
    ("n = 3\nn = 4", "duplicate"),
    ("n 3", "key = value"),
    ("n = x", "n"),
    ("sigma = 1, 1, 2", "distinct"),
    ("sigma = 1, -3, 2", "positive"),
    ("delta = -0.1", "delta"),
    ("currents = 0, 3", "currents"),
    ("cfl = 1.5", "cfl"),
    ("sigma_mode = nope", "sigma_mode"),
])
def test_rejections_name_the_problem(text, token):
    with pytest.raises(ConfigError, match=token):
        ExperimentConfig.parse(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "none.cfg")


def test_from_mapping_overrides():
    base = ExperimentConfig(n=20)
    cfg = ExperimentConfig.from_mapping({"seed": "9"}, base=base)
    assert cfg.n == 20 and cfg.seed == 9
