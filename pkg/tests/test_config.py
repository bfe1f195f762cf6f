import pytest

from polarseg.config import ConfigError, PipelineConfig, load_config, read_pairs


def test_defaults_are_desk_scale():
    cfg = load_config(environ={})
    assert cfg.scales == (16, 10, 8)
    assert cfg.per_level("n_angle") == (80, 80, 80)
    assert cfg.hidden == 64 and cfg.learning_rate == 0.001
    assert cfg.viewpoint_offsets[1] == pytest.approx(2.0943951023931953)


def test_file_include_and_comments(tmp_path):
    (tmp_path / "base.cfg").write_text("hidden = 8\nscales = 8, 4  # two levels\n")
    (tmp_path / "run.cfg").write_text("# run\ninclude = base.cfg\nhidden = 16\nepochs = 3, 5\n")
    cfg = load_config(tmp_path / "run.cfg", environ={})
    assert cfg.hidden == 16 and cfg.scales == (8, 4) and cfg.per_level("epochs") == (3, 5)


def test_precedence_file_env_override(tmp_path):
    (tmp_path / "a.cfg").write_text("data_dir = from_file\nmodel_dir = from_file\nhidden = 8\n")
    env = {"POLARSEG_DATA_DIR": "from_env", "POLARSEG_MODEL_DIR": "from_env"}
    cfg = load_config(tmp_path / "a.cfg", {"model_dir": "from_cli", "hidden": None}, environ=env)
    assert cfg.data_dir == "from_env" and cfg.model_dir == "from_cli" and cfg.hidden == 8


def test_env_only_overrides_paths(tmp_path):
    cfg = load_config(environ={"POLARSEG_HIDDEN": "3"})
    assert cfg.hidden == 64


def test_include_cycle_rejected(tmp_path):
    (tmp_path / "a.cfg").write_text("include = b.cfg\n")
    (tmp_path / "b.cfg").write_text("include = a.cfg\n")
    with pytest.raises(ConfigError):
        read_pairs(tmp_path / "a.cfg")


@pytest.mark.parametrize(
    "text",
    [
        "nonsense_key = 1\n",
        "hidden = many\n",
        "scales = 16, 12\n",
        "n_angle = 80, 80\n",
        "hidden = 0\n",
        "uniform_init_value = 1.5\n",
        "max_arc_deg = 90\n",
        "just a line\n",
    ],
)
def test_invalid_configs_rejected(tmp_path, text):
    (tmp_path / "bad.cfg").write_text(text)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.cfg", environ={})


def test_text_round_trip(tmp_path):
    cfg = load_config(overrides={"scales": (8, 4), "epochs": (2, 3), "learning_rate": 0.002}, environ={})
    (tmp_path / "c.cfg").write_text(cfg.to_text())
    assert load_config(tmp_path / "c.cfg", environ={}) == cfg


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "nope.cfg")
    assert isinstance(PipelineConfig().validate(), PipelineConfig)
