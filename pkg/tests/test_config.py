import pytest
from hypothesis import given, strategies as st

from drkit.config import FusionSpec, RunConfig, load_config, save_config
from drkit.ensemble import EnsembleSpec
from drkit.errors import ConfigError
from drkit.sampling import SamplerSpec


def test_defaults():
    c = RunConfig()
    assert (c.epochs, c.batch_size, c.schedule.lr0) == (25, 16, 0.001)
    assert (c.optimizer.momentum, c.optimizer.weight_decay) == (0.9, 0.0005)
    assert (c.fusion.epochs, c.fusion.batch_size, c.fusion.lr) == (20, 64, 0.02)
    assert c.preprocess.graham.theta == 10 and c.preprocess.clahe.clip_limit == 3
    assert c.backbone_config().feature_dim == 64
    assert c.schedule_spec().total_epochs == 25


def test_digest_is_stable_and_sensitive():
    a, b = RunConfig(), RunConfig()
    assert a.digest() == b.digest()
    assert len(a.digest()) == 64
    assert a.digest() != a.replace(seed=1).digest()
    assert a.digest() != a.replace(**{"loss.kind": "mse"}).digest()


def test_dict_round_trip():
    c = RunConfig(resolution=32, ensemble=EnsembleSpec("multi_model", (3, 4)), sampler=SamplerSpec("progressive", 0.9))
    assert RunConfig.from_dict(c.to_dict()) == c


def test_yaml_round_trip(tmp_path):
    c = RunConfig().replace(**{"schedule.kind": "cosine", "preprocess.enhance": "clahe", "fusion.enabled": True})
    save_config(c, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == c
    assert back.digest() == c.digest()


def test_partial_yaml_uses_defaults(tmp_path):
    (tmp_path / "c.yaml").write_text("loss:\n  kind: mse\nepochs: 3\nbackbone:\n  conv_channels: [4, 8]\n")
    c = load_config(tmp_path / "c.yaml")
    assert c.loss.kind == "mse" and c.epochs == 3 and c.backbone.conv_channels == (4, 8)
    assert c.backbone_config().head == "regression"
    assert c.sampler == SamplerSpec()


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"lr": 0.1})
    with pytest.raises(ConfigError, match="loss"):
        RunConfig.from_dict({"loss": {"kind": "ce", "weight": 2}})
    (tmp_path / "bad.yaml").write_text("loss: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        RunConfig(epochs=0)
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"loss.kind": "hinge"})
    with pytest.raises(ConfigError):
        RunConfig().replace(resolution=8)  # four pooling stages need at least 16 pixels
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"nope.kind": 1})


def test_replace_accepts_dataclass_values():
    c = RunConfig().replace(fusion=FusionSpec(enabled=True, lr=0.01))
    assert c.fusion.enabled and c.fusion.lr == 0.01


def test_member_seeds():
    assert RunConfig(seed=5).member_seeds() == (5,)
    assert RunConfig(ensemble=EnsembleSpec("multi_model", (1, 2, 3))).member_seeds() == (1, 2, 3)


@given(st.integers(0, 2**31), st.sampled_from(["ce", "mse", "focal", "smooth_l1"]), st.sampled_from([16, 32, 64]))
def test_round_trip_property(seed, loss, res):
    c = RunConfig(seed=seed, resolution=res).replace(**{"loss.kind": loss})
    assert RunConfig.from_dict(c.to_dict()).digest() == c.digest()
