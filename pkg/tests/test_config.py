import numpy as np
import pytest

from episodic_lssvm.checkpoint import load_checkpoint, save_checkpoint
from episodic_lssvm.config import RunConfig, parse_config, parse_config_text
from episodic_lssvm.engine import Pipeline, backbone_init
from episodic_lssvm.errors import BadMagic, ConfigError, TruncatedFile, UnknownKey
from episodic_lssvm.rng import stream
from episodic_lssvm.transduction import iam_init_params


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.conf"
    p.write_text("")
    assert parse_config(p) == RunConfig()
    assert parse_config() == RunConfig()


def test_values_and_sections():
    cfg = parse_config_text("gamma = 0.1\n[iam]\niam = on  # comment\n[episode]\nshot = 5\n")
    assert isinstance(cfg.gamma, float) and cfg.gamma == 0.1
    assert cfg.iam is True and cfg.shot == 5


def test_unknown_key_named():
    with pytest.raises(UnknownKey) as info:
        parse_config_text("gama = 0.1\n")
    assert info.value.key == "gama" and "gama" in str(info.value)
    with pytest.raises(UnknownKey):
        parse_config_text("", {"bogus": "1"})


@pytest.mark.parametrize(
    "text",
    [
        "[learner]\nshot = 1\n",
        "[nowhere]\n",
        "[learner\n",
        "gamma 0.1\n",
        "gamma = abc\n",
        "gamma = -1\n",
        "learner = svm\n",
        "iam = maybe\n",
        "lr_milestones = 1,2\n",
        "way = 1\n",
        "backbone = 8,4\n",
    ],
)
def test_malformed_configs(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_overrides_and_round_trip():
    cfg = parse_config_text("gamma = 1.0\n", {"gamma": "2.5", "learners": "nn,lssvm"})
    assert cfg.gamma == 2.5
    assert parse_config_text(cfg.to_text()) == cfg


def test_builders():
    cfg = parse_config_text("", {"coding": "ovo", "iam_r": "auto"})
    assert cfg.lssvm_config().coding == "ovo"
    assert cfg.iam_ratio(64) == 8 and cfg.iam_ratio(640) == 16
    assert parse_config_text("", {"iam_r": "4"}).iam_ratio(640) == 4
    assert cfg.synth_spec(dim=64).dim == 64


def test_checkpoint_round_trip(tmp_path):
    bb = backbone_init([16, 8], stream(0))
    pipe = Pipeline(bb, iam_init_params(8, r=4, rng=stream(1)))
    cfg = parse_config_text("", {"backbone": "16,8", "iam": "on", "iam_r": "4"})
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, pipe, cfg)
    loaded, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg and loaded.iam.r == 4
    for k, v in pipe.arrays().items():
        np.testing.assert_array_equal(loaded.arrays()[k], v)
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagic):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        load_checkpoint(tmp_path / "short")
