import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoreseg.config import RunConfig, load_config, parse_config
from scoreseg.errors import ConfigError


def test_defaults_round_trip():
    cfg = RunConfig()
    assert parse_config(cfg.to_text()) == cfg
    assert parse_config(cfg.to_text()).to_text() == cfg.to_text()


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    lr=st.floats(1e-8, 1.0),
    K=st.integers(2, 1000),
    r=st.floats(1e-3, 2.0),
    mode=st.sampled_from(["sdf", "binary"]),
    data=st.text(st.characters(categories=["L", "N"]), max_size=12),
)
def test_canonical_round_trip(seed, lr, K, r, mode, data):
    cfg = RunConfig(seed=seed, learning_rate=lr, K=K, r=r, target_mode=mode, data=data)
    back = parse_config(cfg.to_text())
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_comments_and_blank_lines(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# desk run\n\nseed = 5   # master seed\nK = 50\n", encoding="utf-8")
    cfg = load_config(p)
    assert cfg.seed == 5 and cfg.K == 50 and cfg.J == RunConfig().J


@pytest.mark.parametrize("text", [
    "bogus = 1\n",
    "seed = 1\nseed = 2\n",
    "seed\n",
    "K = many\n",
    "K = 1\n",
    "r = -0.5\n",
    "grid = 8\n",
    "target_mode = onehot\n",
    "sigma_min = 6\n",
    "seed = -1\n",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_require_and_updated():
    cfg = RunConfig()
    with pytest.raises(ConfigError):
        cfg.require("data", command="train")
    assert cfg.updated(seed=None, K=10).K == 10
    assert cfg.updated(seed=None).seed == cfg.seed
    with pytest.raises(ConfigError):
        cfg.updated(nonsense=1)


def test_component_configs_follow_fields():
    cfg = RunConfig(K=17, delta=3.0, total_steps=9, sigma_max=4.0)
    assert cfg.sampler_config.K == 17
    assert cfg.sdf_config.delta == 3.0
    assert cfg.train_config.total_steps == 9
    assert cfg.schedule.sigma_max == 4.0
