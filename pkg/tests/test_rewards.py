import math
import random

import pytest

from app.config import ProposerRewardParams, SolverRewardParams
from app.domain.rewards.answers import AnswerSample
from app.domain.rewards.service import (
    NotInDistributionError,
    build_distribution,
    difficulty_tier,
    proposer_reward,
    proposer_reward_discrete,
    score_generations,
    score_samples,
    solver_reward_continuous,
    solver_reward_discrete,
)

SOLVER = SolverRewardParams()
PROPOSER = ProposerRewardParams()


def _sample(canonical, words=0):
    return AnswerSample(raw_text=f"<answer>{canonical}</answer>", canonical=canonical, words_before_answer=words)


def _group(*counts):
    samples = []
    for label, count in counts:
        samples.extend(_sample(label) for _ in range(count))
    return samples


def test_unanimous_distribution():
    dist = build_distribution(_group(("7", 5)), 5)
    assert dist.classes == (("7", 5),)
    assert dist.entropy_nats == 0.0
    assert dist.majority == "7"


def test_three_two_entropy():
    dist = build_distribution(_group(("a", 3), ("b", 2)))
    expected = -(0.6 * math.log(0.6) + 0.4 * math.log(0.4))
    assert dist.entropy_nats == pytest.approx(expected, abs=1e-12)
    assert dist.entropy_nats == pytest.approx(0.6730117, abs=1e-6)


def test_all_distinct_reaches_log_n():
    dist = build_distribution([_sample(c) for c in "abcde"])
    assert dist.entropy_nats == math.log(5)


def test_entropy_base_is_configurable():
    dist = build_distribution([_sample(c) for c in "abcd"], base=2.0)
    assert dist.entropy_nats == pytest.approx(2.0)


def test_majority_tie_breaks_lexicographically():
    dist = build_distribution(_group(("b", 2), ("a", 2), ("c", 1)))
    assert dist.classes == (("a", 2), ("b", 2), ("c", 1))
    assert dist.majority == "a"
    assert dist.majority_fraction == pytest.approx(0.4)


def test_distribution_ignores_sample_order():
    samples = _group(("x", 2), ("y", 2), ("z", 1), ("w", 3))
    shuffled = samples[:]
    random.Random(3).shuffle(shuffled)
    assert build_distribution(samples) == build_distribution(shuffled)


def test_distribution_input_errors():
    with pytest.raises(ValueError):
        build_distribution([])
    with pytest.raises(ValueError):
        build_distribution(_group(("a", 3)), n_expected=5)


def test_continuous_reward_values():
    unanimous = build_distribution(_group(("a", 5)))
    split = build_distribution(_group(("a", 3), ("b", 2)))
    assert solver_reward_continuous(_sample("a", 6), unanimous, SOLVER) == 1.0
    assert solver_reward_continuous(_sample("b"), split, SOLVER) == pytest.approx(0.4**0.7, abs=1e-12)
    assert solver_reward_continuous(_sample("b"), split, SOLVER) == pytest.approx(0.526376, abs=1e-6)
    assert solver_reward_continuous(_sample("a", 12), unanimous, SOLVER) == pytest.approx(0.90)


def test_length_penalty_floor():
    dist = build_distribution(_group(("a", 5)))
    harsh = SolverRewardParams(lambda_len=1.0, tau_words=1)
    assert solver_reward_continuous(_sample("a", 5), dist, harsh) == 0.0
    unfloored = SolverRewardParams(lambda_len=1.0, tau_words=1, floor_at_zero=False)
    assert solver_reward_continuous(_sample("a", 5), dist, unfloored) == pytest.approx(-3.0)


def test_continuous_reward_monotone():
    groups = [_group(("a", k), ("b", 8 - k)) for k in range(1, 8)]
    by_agreement = [
        solver_reward_continuous(_sample("a", 4), build_distribution(g), SOLVER) for g in groups
    ]
    assert by_agreement == sorted(by_agreement)

    dist = build_distribution(_group(("a", 3), ("b", 2)))
    by_length = [solver_reward_continuous(_sample("a", w), dist, SOLVER) for w in range(0, 80, 3)]
    assert by_length == sorted(by_length, reverse=True)
    assert all(0.0 <= r <= 1.0 for r in by_agreement + by_length)


def test_reward_for_unknown_answer_fails():
    dist = build_distribution(_group(("a", 5)))
    with pytest.raises(NotInDistributionError):
        solver_reward_continuous(_sample("z"), dist, SOLVER)
    with pytest.raises(KeyError):
        solver_reward_discrete(_sample("z"), dist)


def test_discrete_reward():
    split = build_distribution(_group(("a", 3), ("b", 2)))
    assert solver_reward_discrete(_sample("a"), split) == 1.0
    assert solver_reward_discrete(_sample("b"), split) == 0.0

    tie = build_distribution(_group(("a", 2), ("b", 2), ("c", 1)))
    assert [solver_reward_discrete(_sample(c), tie) for c in "abc"] == [1.0, 0.0, 0.0]


def test_proposer_reward_shape():
    assert proposer_reward(0.9, PROPOSER) == 1.0
    assert proposer_reward(0.0, PROPOSER) == pytest.approx(math.exp(-0.81 / 0.245), rel=1e-12)
    assert proposer_reward(0.0, PROPOSER) == pytest.approx(0.036668, abs=1e-6)
    assert proposer_reward(math.log(5), PROPOSER) == pytest.approx(0.12818, abs=1e-5)
    assert proposer_reward(1.8, PROPOSER) == pytest.approx(proposer_reward(0.0, PROPOSER), rel=1e-12)
    for d in (0.05, 0.3, 0.7):
        assert proposer_reward(0.9 + d, PROPOSER) == pytest.approx(proposer_reward(0.9 - d, PROPOSER), rel=1e-12)
        assert proposer_reward(0.9 + d, PROPOSER) < proposer_reward(0.9 + d / 2, PROPOSER)
    with pytest.raises(ValueError):
        proposer_reward(-0.1, PROPOSER)


def test_discrete_proposer_reward_plateau():
    assert proposer_reward_discrete(build_distribution(_group(("a", 5)))) == 0.0
    assert proposer_reward_discrete(build_distribution(_group(("a", 3), ("b", 2)))) == 1.0
    assert proposer_reward_discrete(build_distribution(_group(("a", 2), ("b", 1), ("c", 1), ("d", 1)))) == 1.0
    assert proposer_reward_discrete(build_distribution([_sample(c) for c in "abcde"])) == 0.0


@pytest.mark.parametrize(("entropy", "tier"), [(0.0, "easy"), (0.6, "moderate"), (1.2, "moderate"), (1.3, "hard")])
def test_difficulty_tier(entropy, tier):
    assert difficulty_tier(entropy, PROPOSER) == tier


def test_equal_discrete_means_with_different_continuous_means():
    wide = _group(("a", 2), ("b", 2), ("c", 1))
    spread = _group(("a", 2), ("b", 1), ("c", 1), ("d", 1))
    discrete = [score_samples(g, SOLVER, PROPOSER, solver_mode="discrete").solver_rewards for g in (wide, spread)]
    continuous = [score_samples(g, SOLVER, PROPOSER).solver_rewards for g in (wide, spread)]
    assert sum(discrete[0]) == sum(discrete[1])
    assert sum(continuous[0]) != pytest.approx(sum(continuous[1]))


def test_score_generations_unanimous():
    score = score_generations(["<answer>7</answer>"] * 5, SOLVER, PROPOSER)
    assert score.solver_rewards == (1.0,) * 5
    assert score.entropy_nats == 0.0
    assert score.proposer_reward == pytest.approx(0.036668, abs=1e-6)


def test_score_generations_drops_unparseable():
    score = score_generations(["<answer>a</answer>", "no tag", "so <answer>A</answer>"], SOLVER, PROPOSER)
    assert score.n_parsed == 2
    assert score.distribution.n_samples == 2
    assert score.solver_rewards == (1.0, 0.0, 1.0)


def test_score_generations_all_unparseable():
    score = score_generations(["nothing here"] * 5, SOLVER, PROPOSER)
    assert score.degenerate
    assert score.solver_rewards == (0.0,) * 5
    assert score.entropy_nats == pytest.approx(math.log(5))
    assert score.proposer_reward == pytest.approx(proposer_reward(math.log(5), PROPOSER))
    assert score.majority_fraction == 0.0
