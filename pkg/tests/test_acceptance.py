"""Long training checks on the simulated world; run with ``pytest -m slow``."""

from functools import lru_cache

import numpy as np
import pytest

from app.config import WordsConfig, WorldConfig, trainer_config
from app.domain.sim.oracle import best_bin
from app.domain.sim.service import SimWorld
from app.domain.trainer.service import run

pytestmark = pytest.mark.slow

SEEDS = range(10)


@lru_cache(maxsize=None)
def _default_summary(seed, solver_reward="continuous"):
    return run(trainer_config(seed=seed, solver_reward=solver_reward)).summary


def _settled_on_best_bin(seeds, **overrides):
    hits = 0
    for seed in seeds:
        config = trainer_config(seed=seed, learning_rate_solver=0.0, **overrides)
        world = SimWorld.from_config(config.world, config.n_answers)
        target = best_bin(world, config.proposer_params, config.solver_params)
        result = run(config, world)
        hits += int(np.argmax(result.final_state.proposer.logits) == target)
    return hits


def test_frozen_solver_proposer_settles_on_best_bin():
    assert _settled_on_best_bin(SEEDS) >= 8


def test_frozen_solver_finds_an_interior_best_bin():
    world_config = WorldConfig(n_distractors=9)
    world = SimWorld.from_config(world_config, trainer_config().n_answers)
    target = best_bin(world, trainer_config().proposer_params, trainer_config().solver_params)
    assert 0 < target < world.n_bins - 1
    assert _settled_on_best_bin(SEEDS, learning_rate_proposer=0.05, world=world_config) >= 8


def test_co_evolution_raises_mid_band_share():
    improved = sum(
        int(summary["mid_band_share_last"] > summary["mid_band_share_first"])
        for summary in map(_default_summary, SEEDS)
    )
    assert improved >= 8


@pytest.mark.parametrize("seed", SEEDS)
def test_continuous_reward_is_more_stable_than_discrete(seed):
    continuous = _default_summary(seed)
    discrete = _default_summary(seed, "discrete")
    assert continuous["zero_advantage_fraction"] < discrete["zero_advantage_fraction"]
    assert continuous["proposer_reward_window_variance"] < discrete["proposer_reward_window_variance"]


def test_length_penalty_keeps_zero_advantage_contrast():
    world_config = WorldConfig(words=WordsConfig(kind="uniform", low=1, high=12))
    for seed in range(3):
        continuous = run(trainer_config(seed=seed, world=world_config)).summary
        discrete = run(trainer_config(seed=seed, world=world_config, solver_reward="discrete")).summary
        assert continuous["zero_advantage_fraction"] < discrete["zero_advantage_fraction"], seed


@pytest.mark.parametrize("seed", SEEDS)
def test_kl_control_in_default_runs(seed):
    config = trainer_config(seed=seed)
    result = run(config)
    for record in result.records:
        assert config.kl_solver.beta_min <= record.beta_solver <= config.kl_solver.beta_max
        assert config.kl_proposer.beta_min <= record.beta_proposer <= config.kl_proposer.beta_max
    target = config.kl_solver.target
    assert 0.5 * target <= result.summary["solver_kl_trailing_mean"] <= 2.0 * target
