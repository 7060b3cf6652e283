import itertools
import math

import numpy as np
import pytest

from app.config import ProposerRewardParams, SolverRewardParams, WordsConfig, WorldConfig
from app.domain.policy.service import CategoricalPolicy, grad_log_prob, sample
from app.domain.rewards.answers import AnswerSample
from app.domain.rewards.service import build_distribution, proposer_reward, score_samples
from app.domain.sim.oracle import (
    EnumerationCapExceeded,
    best_bin,
    composition_count,
    compositions,
    exact_expected_rewards,
    expected_proposer_gradient,
    expected_skill_gradient,
    reward_landscape,
)
from app.domain.sim.service import SimWorld, answer_labels, answer_probabilities, solve

SP = SolverRewardParams()
PP = ProposerRewardParams()


def _world(difficulty, skill=0.0, **kwargs):
    difficulty = tuple(float(d) for d in difficulty)
    return SimWorld(n_bins=len(difficulty), bin_difficulty=difficulty, solver_skill=skill, **kwargs)


def _ordered_outcomes(world, bin_index):
    """Every ordered answer tuple with its probability and its scored round."""

    probs = answer_probabilities(world, bin_index)
    labels = answer_labels(world)
    words = world.words.value
    for outcome in itertools.product(range(world.n_categories), repeat=world.n_answers):
        weight = math.prod(probs[c] for c in outcome)
        samples = [
            AnswerSample(raw_text="", canonical=labels[c], words_before_answer=words) for c in outcome
        ]
        yield outcome, weight, samples


def test_compositions_order_and_count():
    assert list(compositions(2, 3)) == [
        (2, 0, 0),
        (1, 1, 0),
        (1, 0, 1),
        (0, 2, 0),
        (0, 1, 1),
        (0, 0, 2),
    ]
    rows = list(compositions(5, 4))
    assert len(rows) == composition_count(5, 4) == 56
    assert all(sum(row) == 5 for row in rows)
    assert len(set(rows)) == 56


def test_cap_is_enforced():
    world = _world([0.0], n_answers=3, n_distractors=5)
    with pytest.raises(EnumerationCapExceeded) as exc_info:
        exact_expected_rewards(world, 0, SP, PP, cap=10)
    assert exc_info.value.count == 56
    assert exc_info.value.cap == 10


def test_certain_solver():
    expected = exact_expected_rewards(_world([0.0], skill=60.0), 0, SP, PP)
    assert expected.entropy == pytest.approx(0.0, abs=1e-12)
    assert expected.proposer == pytest.approx(proposer_reward(0.0, PP), abs=1e-12)
    assert expected.proposer == pytest.approx(0.036668, abs=1e-6)
    assert expected.solver_continuous == pytest.approx(1.0, abs=1e-12)
    assert expected.solver_discrete == pytest.approx(1.0, abs=1e-12)
    assert expected.proposer_discrete == pytest.approx(0.0, abs=1e-12)


def test_two_answers_coin_flip():
    world = _world([0.0], n_answers=2, n_distractors=1)
    assert exact_expected_rewards(world, 0, SP, PP).entropy == pytest.approx(0.5 * math.log(2.0), abs=1e-12)


def test_matches_brute_force_over_ordered_outcomes():
    world = _world([-1.0, 0.3, 2.0], n_answers=4, n_distractors=2)
    for b in range(world.n_bins):
        totals = dict(cont=0.0, disc=0.0, prop=0.0, prop_disc=0.0, entropy=0.0, mass=0.0)
        for _, weight, samples in _ordered_outcomes(world, b):
            cont = score_samples(samples, SP, PP)
            disc = score_samples(samples, SP, PP, solver_mode="discrete", proposer_mode="discrete")
            totals["cont"] += weight * np.mean(cont.solver_rewards)
            totals["disc"] += weight * np.mean(disc.solver_rewards)
            totals["prop"] += weight * cont.proposer_reward
            totals["prop_disc"] += weight * disc.proposer_reward
            totals["entropy"] += weight * cont.entropy_nats
            totals["mass"] += weight
        expected = exact_expected_rewards(world, b, SP, PP)
        assert totals["mass"] == pytest.approx(1.0, abs=1e-12)
        assert expected.solver_continuous == pytest.approx(totals["cont"], abs=1e-10)
        assert expected.solver_discrete == pytest.approx(totals["disc"], abs=1e-10)
        assert expected.proposer == pytest.approx(totals["prop"], abs=1e-10)
        assert expected.proposer_discrete == pytest.approx(totals["prop_disc"], abs=1e-10)
        assert expected.entropy == pytest.approx(totals["entropy"], abs=1e-10)


def test_expected_entropy_grows_with_difficulty_while_correct_is_likely():
    world = _world(np.linspace(-4.0, 0.0, 6))
    entropies = [exact_expected_rewards(world, b, SP, PP).entropy for b in range(world.n_bins)]
    assert all(a < b for a, b in zip(entropies, entropies[1:]))


def test_best_bin_is_interior_with_many_distractors():
    world = SimWorld.from_config(WorldConfig(n_distractors=9), n_answers=5)
    chosen = best_bin(world, PP)
    assert 0 < chosen < world.n_bins - 1


def test_best_bin_is_hardest_for_saturated_solver():
    world = _world(np.linspace(-4.0, 4.0, 8), skill=12.0)
    assert best_bin(world, PP) == 7


def test_best_bin_ties_go_to_lowest_index():
    assert best_bin(_world([0.5, 0.5, 0.5]), PP) == 0


def test_skill_gradient_matches_brute_force():
    world = _world([-0.5, 0.8], n_answers=4, n_distractors=2)
    for b in range(world.n_bins):
        p_correct = answer_probabilities(world, b)[0]
        brute = 0.0
        for outcome, weight, samples in _ordered_outcomes(world, b):
            rewards = score_samples(samples, SP, PP).solver_rewards
            brute += weight * sum(
                r * ((1.0 if c == 0 else 0.0) - p_correct) for c, r in zip(outcome, rewards)
            ) / world.n_answers
        assert expected_skill_gradient(world, b, SP) == pytest.approx(brute, abs=1e-10)


@pytest.mark.parametrize("p_correct", [0.5, 0.75, 0.9])
def test_skill_gradient_is_positive_when_correct_answer_leads(p_correct):
    world = _world([-math.log(p_correct / (1.0 - p_correct))])
    assert answer_probabilities(world, 0)[0] == pytest.approx(p_correct)
    assert expected_skill_gradient(world, 0, SP) > 0.0


def test_proposer_gradient_matches_finite_differences():
    world = SimWorld.from_config(WorldConfig(), n_answers=5)
    rewards = np.array([exact_expected_rewards(world, b, SP, PP).proposer for b in range(world.n_bins)])
    logits = np.random.default_rng(3).normal(size=world.n_bins)
    grad = expected_proposer_gradient(world, CategoricalPolicy.from_logits(logits), PP)

    def objective(theta):
        return float(CategoricalPolicy.from_logits(theta).probabilities @ rewards)

    h = 1e-6
    for i in range(world.n_bins):
        up, down = logits.copy(), logits.copy()
        up[i] += h
        down[i] -= h
        assert grad[i] == pytest.approx((objective(up) - objective(down)) / (2 * h), abs=1e-8)
    assert abs(grad.sum()) < 1e-12


def test_proposer_gradient_rejects_wrong_size():
    world = _world([0.0, 1.0])
    with pytest.raises(ValueError):
        expected_proposer_gradient(world, CategoricalPolicy.uniform(3), PP)


def test_reward_landscape_rows():
    frame = reward_landscape(5, 2, SP, PP)
    assert list(frame["composition"]) == ["5-0", "4-1", "3-2", "2-3", "1-4", "0-5"]
    rows = frame.set_index("composition")
    assert rows.loc["3-2", "entropy"] == pytest.approx(0.6730116670, abs=1e-9)
    assert rows.loc["3-2", "solver_continuous_mean"] == pytest.approx(0.63025, abs=5e-4)
    assert rows.loc["4-1", "solver_continuous_mean"] == pytest.approx(0.74915, abs=5e-4)
    assert rows.loc["3-2", "solver_discrete_mean"] == pytest.approx(0.6)
    assert rows.loc["5-0", "entropy"] == 0.0
    assert rows.loc["5-0", "proposer_reward_discrete"] == 0.0
    assert rows.loc["3-2", "proposer_reward_discrete"] == 1.0
    assert rows.loc["5-0", "majority_count"] == 5


def test_reward_landscape_applies_length_factor():
    short = reward_landscape(5, 2, SP, PP).set_index("composition")
    verbose = reward_landscape(5, 2, SP, PP, words=12).set_index("composition")
    assert verbose.loc["4-1", "solver_continuous_mean"] == pytest.approx(
        0.9 * short.loc["4-1", "solver_continuous_mean"]
    )
    assert verbose.loc["4-1", "solver_discrete_mean"] == short.loc["4-1", "solver_discrete_mean"]


@pytest.mark.slow
@pytest.mark.parametrize("gap", [-2.0, -0.5, 0.5, 2.0])
def test_monte_carlo_agrees_with_enumeration(gap):
    rng = np.random.default_rng(2025)
    draws = 100_000
    world = _world([-gap], words=WordsConfig(kind="uniform", low=1, high=12))
    proposer, solver, entropy = np.empty(draws), np.empty(draws), np.empty(draws)
    for i in range(draws):
        score = score_samples(solve(world, 0, rng), SP, PP)
        proposer[i] = score.proposer_reward
        solver[i] = np.mean(score.solver_rewards)
        entropy[i] = score.entropy_nats
    expected = exact_expected_rewards(world, 0, SP, PP)
    for values, target in (
        (proposer, expected.proposer),
        (solver, expected.solver_continuous),
        (entropy, expected.entropy),
    ):
        se = values.std() / math.sqrt(draws)
        assert abs(values.mean() - target) <= 3 * se + 1e-9


@pytest.mark.slow
def test_sampled_proposer_gradient_agrees_with_exact():
    world = _world([-1.0, 1.5])
    policy = CategoricalPolicy.from_logits([0.3, -0.2])
    rng = np.random.default_rng(8)
    baseline = 0.1
    draws = 100_000
    estimates = np.empty((draws, 2))
    for i in range(draws):
        action = sample(policy, rng)
        reward = proposer_reward(build_distribution(solve(world, action, rng)).entropy_nats, PP)
        estimates[i] = (reward - baseline) * grad_log_prob(policy, action)
    exact = expected_proposer_gradient(world, policy, PP)
    se = estimates.std(axis=0) / math.sqrt(draws)
    assert np.all(np.abs(estimates.mean(axis=0) - exact) <= 4 * se + 1e-9)
