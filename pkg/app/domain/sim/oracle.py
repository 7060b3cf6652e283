"""Exact expectations over every answer composition a solver group can produce."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
import pandas as pd

from app.config import ProposerRewardParams, SolverRewardParams, WordsConfig
from app.domain.policy.service import CategoricalPolicy
from app.domain.rewards.service import (
    entropy_from_counts,
    length_factor,
    proposer_reward,
)
from app.domain.sim.service import SimWorld, answer_probabilities, word_count_support

__all__ = [
    "DEFAULT_ENUMERATION_CAP",
    "EnumerationCapExceeded",
    "ExpectedRewards",
    "best_bin",
    "composition_count",
    "compositions",
    "exact_expected_rewards",
    "expected_length_factor",
    "expected_proposer_gradient",
    "expected_skill_gradient",
    "reward_landscape",
]

DEFAULT_ENUMERATION_CAP = 250_000


class EnumerationCapExceeded(RuntimeError):
    def __init__(self, count: int, cap: int) -> None:
        self.count = count
        self.cap = cap
        super().__init__(f"{count} compositions exceed the enumeration cap of {cap}")


def composition_count(n: int, k: int) -> int:
    """Number of ways to split ``n`` samples over ``k`` answer categories."""

    if n < 0 or k < 1:
        raise ValueError("need n >= 0 and k >= 1")
    return math.comb(n + k - 1, k - 1)


def compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """Yield every composition, first component descending from ``n`` to 0."""

    if k == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in compositions(n - first, k - 1):
            yield (first, *rest)


def _check_cap(n: int, k: int, cap: int) -> None:
    count = composition_count(n, k)
    if count > cap:
        raise EnumerationCapExceeded(count, cap)


@dataclass(frozen=True)
class _CompositionTable:
    counts: np.ndarray
    log_coef: np.ndarray
    entropy: np.ndarray
    agreement: np.ndarray
    correct_agreement: np.ndarray
    majority_count: np.ndarray
    proposer: np.ndarray
    proposer_discrete: np.ndarray


@lru_cache(maxsize=64)
def _composition_table(
    n: int,
    k: int,
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
) -> _CompositionTable:
    counts = np.array(list(compositions(n, k)), dtype=np.int64)
    log_coef = math.lgamma(n + 1) - np.array(
        [sum(math.lgamma(c + 1) for c in row) for row in counts.tolist()]
    )
    entropy = np.array(
        [entropy_from_counts(row, proposer_params.entropy_base) for row in counts.tolist()]
    )
    share = counts / n
    # sum over samples of p(own answer)^gamma, grouped by class
    per_class = counts * np.power(share, solver_params.gamma)
    majority = counts.max(axis=1)
    table = _CompositionTable(
        counts=counts,
        log_coef=log_coef,
        entropy=entropy,
        agreement=per_class.sum(axis=1),
        correct_agreement=per_class[:, 0],
        majority_count=majority,
        proposer=np.array([proposer_reward(h, proposer_params) for h in entropy]),
        proposer_discrete=((majority > 1) & (majority < n)).astype(np.float64),
    )
    for array in vars(table).values():
        array.setflags(write=False)
    return table


def _composition_probabilities(table: _CompositionTable, probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        log_probs = np.log(probs)
        weighted = np.where(table.counts > 0, table.counts * log_probs, 0.0)
    return np.exp(table.log_coef + weighted.sum(axis=1))


def expected_length_factor(words: WordsConfig, params: SolverRewardParams) -> float:
    return math.fsum(p * length_factor(w, params) for w, p in word_count_support(words))


@dataclass(frozen=True, slots=True)
class ExpectedRewards:
    solver_continuous: float
    solver_discrete: float
    proposer: float
    proposer_discrete: float
    entropy: float


def exact_expected_rewards(
    world: SimWorld,
    bin_index: int,
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ExpectedRewards:
    """Probability-weighted means of every reward over all answer compositions."""

    n, k = world.n_answers, world.n_categories
    _check_cap(n, k, cap)
    table = _composition_table(n, k, solver_params, proposer_params)
    weights = _composition_probabilities(table, answer_probabilities(world, bin_index))
    factor = expected_length_factor(world.words, solver_params)
    return ExpectedRewards(
        solver_continuous=float(weights @ table.agreement) * factor / n,
        solver_discrete=float(weights @ table.majority_count) / n,
        proposer=float(weights @ table.proposer),
        proposer_discrete=float(weights @ table.proposer_discrete),
        entropy=float(weights @ table.entropy),
    )


def _expected_proposer_rewards(
    world: SimWorld,
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    mode: str,
    cap: int,
) -> np.ndarray:
    values = []
    for index in range(world.n_bins):
        expected = exact_expected_rewards(world, index, solver_params, proposer_params, cap=cap)
        values.append(expected.proposer_discrete if mode == "discrete" else expected.proposer)
    return np.array(values)


def best_bin(
    world: SimWorld,
    proposer_params: ProposerRewardParams,
    solver_params: SolverRewardParams | None = None,
    *,
    mode: str = "continuous",
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> int:
    """Bin with the highest expected proposer reward; ties go to the lowest index."""

    rewards = _expected_proposer_rewards(
        world, solver_params or SolverRewardParams(), proposer_params, mode, cap
    )
    return int(np.argmax(rewards))


def expected_skill_gradient(
    world: SimWorld,
    bin_index: int,
    solver_params: SolverRewardParams,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> float:
    """Exact expectation of the mean per-sample REINFORCE gradient on the solver skill.

    Each sample contributes ``r_i * (1[correct] - p_correct) / N``; a constant
    baseline does not change the expectation.
    """

    n, k = world.n_answers, world.n_categories
    _check_cap(n, k, cap)
    table = _composition_table(n, k, solver_params, ProposerRewardParams())
    probs = answer_probabilities(world, bin_index)
    weights = _composition_probabilities(table, probs)
    factor = expected_length_factor(world.words, solver_params)
    per_composition = (table.correct_agreement - probs[0] * table.agreement) * factor / n
    return float(weights @ per_composition)


def expected_proposer_gradient(
    world: SimWorld,
    proposer: CategoricalPolicy,
    proposer_params: ProposerRewardParams,
    solver_params: SolverRewardParams | None = None,
    *,
    mode: str = "continuous",
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> np.ndarray:
    """Gradient of the expected proposer reward with respect to the proposer logits."""

    if proposer.n_actions != world.n_bins:
        raise ValueError("proposer must have one action per bin")
    rewards = _expected_proposer_rewards(
        world, solver_params or SolverRewardParams(), proposer_params, mode, cap
    )
    pi = proposer.probabilities
    return pi * (rewards - float(pi @ rewards))


def reward_landscape(
    n_answers: int,
    n_categories: int,
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    *,
    words: int = 0,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> pd.DataFrame:
    """One row per composition with its entropy and the mean of every reward.

    All samples are assumed to write ``words`` words before their answer.
    """

    _check_cap(n_answers, n_categories, cap)
    table = _composition_table(n_answers, n_categories, solver_params, proposer_params)
    factor = length_factor(words, solver_params)
    return pd.DataFrame(
        {
            "composition": ["-".join(str(c) for c in row) for row in table.counts.tolist()],
            "majority_count": table.majority_count,
            "entropy": table.entropy,
            "solver_continuous_mean": table.agreement * factor / n_answers,
            "solver_discrete_mean": table.majority_count / n_answers,
            "proposer_reward": table.proposer,
            "proposer_reward_discrete": table.proposer_discrete,
        }
    )
