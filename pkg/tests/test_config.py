import pytest

from app.config import (
    DEFAULT_CONFIG_PATH,
    BackendConfig,
    ConfigError,
    TrainerConfig,
    apply_override,
    env_float,
    env_int,
    load_config,
)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in (
        "EVOLVE_BACKEND_URL",
        "EVOLVE_BACKEND_MODEL",
        "EVOLVE_BACKEND_TIMEOUT",
        "EVOLVE_BACKEND_MAX_RETRIES",
        "EVOLVE_API_KEY",
    ):
        monkeypatch.delenv(name, raising=False)


def test_default_file_matches_built_in_defaults():
    loaded = load_config(DEFAULT_CONFIG_PATH)
    assert loaded.trainer == TrainerConfig()
    assert loaded.backend == BackendConfig()
    assert loaded.snapshot["world"]["bin_difficulty"] is None
    assert "api_key" not in loaded.snapshot["backend"]


def test_overrides_are_applied_in_order():
    loaded = load_config(
        DEFAULT_CONFIG_PATH,
        ["steps=10", "world.n_distractors=9", "steps=20", "world.n_bins=3", "world.bin_difficulty=[-1, 0, 1.5]"],
    )
    assert loaded.trainer.steps == 20
    assert loaded.trainer.world.n_distractors == 9
    assert loaded.trainer.world.bin_difficulty == (-1.0, 0.0, 1.5)


def test_data_merges_over_file():
    loaded = load_config(DEFAULT_CONFIG_PATH, data={"kl_solver": {"beta": 0.2}})
    assert loaded.trainer.kl_solver.beta == 0.2
    assert loaded.trainer.kl_solver.target == 0.05


@pytest.mark.parametrize(
    ("override", "key"),
    [
        ("world.nope=1", "world.nope"),
        ("steps=abc", "steps"),
        ("kl_solver.beta=50", "kl_solver.beta"),
        ("solver_reward=binary", "solver_reward"),
        ("world.bin_difficulty=[0, 0, 1, 2, 3, 4, 5, 6]", "world.bin_difficulty"),
        ("backend.n_answers=1", "backend.n_answers"),
    ],
)
def test_invalid_values_name_their_key(override, key):
    with pytest.raises(ConfigError) as exc_info:
        load_config(DEFAULT_CONFIG_PATH, [override])
    assert exc_info.value.key == key


def test_malformed_override():
    with pytest.raises(ConfigError):
        apply_override({}, "steps")


def test_backend_settings_from_environment(monkeypatch):
    monkeypatch.setenv("EVOLVE_BACKEND_URL", "https://models.example.com/v1")
    monkeypatch.setenv("EVOLVE_BACKEND_MODEL", "vision-7b")
    monkeypatch.setenv("EVOLVE_API_KEY", "secret")
    loaded = load_config(DEFAULT_CONFIG_PATH)
    assert loaded.backend.base_url == "https://models.example.com/v1"
    assert loaded.backend.model_name == "vision-7b"
    assert loaded.backend.api_key == "secret"
    assert "secret" not in repr(loaded.backend)
    assert "secret" not in str(loaded.snapshot)


def test_file_value_wins_over_environment(monkeypatch):
    monkeypatch.setenv("EVOLVE_BACKEND_URL", "https://ignored.example.com/v1")
    loaded = load_config(DEFAULT_CONFIG_PATH, ["backend.base_url=http://localhost:9000/v1"])
    assert loaded.backend.base_url == "http://localhost:9000/v1"


def test_backend_timeout_and_retries_from_environment(monkeypatch):
    monkeypatch.setenv("EVOLVE_BACKEND_TIMEOUT", " 12.5 ")
    monkeypatch.setenv("EVOLVE_BACKEND_MAX_RETRIES", "4")
    loaded = load_config(DEFAULT_CONFIG_PATH)
    assert loaded.backend.request_timeout == 12.5
    assert loaded.backend.max_retries == 4
    assert loaded.snapshot["backend"]["max_retries"] == 4

    overridden = load_config(DEFAULT_CONFIG_PATH, ["backend.max_retries=0"])
    assert overridden.backend.max_retries == 0


def test_malformed_numeric_environment_names_the_variable(monkeypatch):
    monkeypatch.setenv("EVOLVE_BACKEND_MAX_RETRIES", "many")
    with pytest.raises(ConfigError) as exc_info:
        load_config(DEFAULT_CONFIG_PATH)
    assert exc_info.value.key == "EVOLVE_BACKEND_MAX_RETRIES"
    assert env_int("EVOLVE_UNSET_VARIABLE", 3) == 3
    monkeypatch.setenv("EVOLVE_BACKEND_TIMEOUT", "")
    assert env_float("EVOLVE_BACKEND_TIMEOUT", 60.0) == 60.0


def test_missing_file_and_bad_yaml(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.yaml")
