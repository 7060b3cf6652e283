from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

from app.config import ProposerRewardParams, SolverRewardParams
from app.domain.rewards.answers import AnswerParseError, AnswerSample, parse_generation

logger = logging.getLogger(__name__)

DifficultyTier = Literal["easy", "moderate", "hard"]
RewardMode = Literal["continuous", "discrete"]

TIER_INDEX: dict[str, int] = {"easy": 0, "moderate": 1, "hard": 2}


class NotInDistributionError(KeyError):
    """Raised when a reward is requested for an answer the distribution never saw."""

    def __init__(self, canonical: str) -> None:
        self.canonical = canonical
        super().__init__(canonical)


@dataclass(frozen=True, slots=True)
class AnswerDistribution:
    """Empirical answer distribution of one solver group.

    ``classes`` is sorted by count descending, then canonical ascending, so the
    majority is always ``classes[0]``. ``entropy_nats`` is expressed in the base
    the distribution was built with (natural log unless configured otherwise).
    """

    n_samples: int
    classes: tuple[tuple[str, int], ...]
    majority: str
    entropy_nats: float

    def count(self, canonical: str) -> int:
        for name, count in self.classes:
            if name == canonical:
                return count
        raise NotInDistributionError(canonical)

    def probability(self, canonical: str) -> float:
        return self.count(canonical) / self.n_samples

    @property
    def majority_count(self) -> int:
        return self.classes[0][1]

    @property
    def majority_fraction(self) -> float:
        return self.majority_count / self.n_samples

    @property
    def is_unanimous(self) -> bool:
        return len(self.classes) == 1


def entropy_cap(n_samples: int, base: float = math.e) -> float:
    """Largest entropy a group of ``n_samples`` can reach (all answers distinct)."""

    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    return math.log(n_samples) / math.log(base)


def entropy_from_counts(counts: Sequence[int], base: float = math.e) -> float:
    """Shannon entropy of the empirical distribution given by class counts."""

    nonzero = [c for c in counts if c > 0]
    n_samples = sum(nonzero)
    if n_samples < 1:
        raise ValueError("counts must contain at least one sample")
    if len(nonzero) == 1:
        return 0.0
    if len(nonzero) == n_samples:
        return entropy_cap(n_samples, base)
    total = math.fsum((c / n_samples) * math.log(c / n_samples) for c in nonzero)
    return min(max(-total / math.log(base), 0.0), entropy_cap(n_samples, base))


def build_distribution(
    samples: Sequence[AnswerSample],
    n_expected: int | None = None,
    *,
    base: float = math.e,
) -> AnswerDistribution:
    if not samples:
        raise ValueError("cannot build a distribution from an empty sample list")
    n_samples = len(samples)
    if n_expected is not None and n_samples != n_expected:
        raise ValueError(f"expected {n_expected} samples, got {n_samples}")

    counts = Counter(sample.canonical for sample in samples)
    classes = tuple(sorted(counts.items(), key=lambda item: (-item[1], item[0])))

    entropy = entropy_from_counts([count for _, count in classes], base)

    return AnswerDistribution(
        n_samples=n_samples,
        classes=classes,
        majority=classes[0][0],
        entropy_nats=entropy,
    )


def length_factor(words_before_answer: int, params: SolverRewardParams) -> float:
    """Multiplicative brevity penalty; 1 for answers at or under the word target."""

    excess = max(0.0, (words_before_answer - params.tau_words) / params.tau_words)
    factor = 1.0 - params.lambda_len * excess
    return max(0.0, factor) if params.floor_at_zero else factor


def solver_reward_continuous(
    sample: AnswerSample,
    dist: AnswerDistribution,
    params: SolverRewardParams,
) -> float:
    p = dist.probability(sample.canonical)
    return (p**params.gamma) * length_factor(sample.words_before_answer, params)


def solver_reward_discrete(sample: AnswerSample, dist: AnswerDistribution) -> float:
    dist.count(sample.canonical)
    return 1.0 if sample.canonical == dist.majority else 0.0


def proposer_reward(entropy_nats: float, params: ProposerRewardParams) -> float:
    if entropy_nats < 0.0 or math.isnan(entropy_nats):
        raise ValueError("entropy must be non-negative")
    gap = entropy_nats - params.mu_h
    return math.exp(-(gap * gap) / (2.0 * params.sigma_h * params.sigma_h))


def proposer_reward_discrete(dist: AnswerDistribution) -> float:
    """Plateau reward: 1 when the group neither agrees fully nor splits completely."""

    return 1.0 if 1 < dist.majority_count < dist.n_samples else 0.0


def difficulty_tier(entropy_nats: float, params: ProposerRewardParams) -> DifficultyTier:
    if entropy_nats < params.mu_h - params.sigma_h:
        return "easy"
    if entropy_nats > params.mu_h + params.sigma_h:
        return "hard"
    return "moderate"


@dataclass(frozen=True, slots=True)
class RoundScore:
    """Rewards of one propose/solve round.

    ``solver_rewards`` keeps one entry per input generation in input order;
    generations without a usable answer score 0.
    """

    samples: tuple[AnswerSample | None, ...]
    distribution: AnswerDistribution | None
    solver_rewards: tuple[float, ...]
    entropy_nats: float
    proposer_reward: float
    majority_fraction: float

    @property
    def n_parsed(self) -> int:
        return sum(1 for sample in self.samples if sample is not None)

    @property
    def degenerate(self) -> bool:
        return self.distribution is None


def _solver_rewards(
    samples: Iterable[AnswerSample],
    dist: AnswerDistribution,
    params: SolverRewardParams,
    mode: RewardMode,
) -> list[float]:
    if mode == "discrete":
        return [solver_reward_discrete(sample, dist) for sample in samples]
    return [solver_reward_continuous(sample, dist, params) for sample in samples]


def _proposer_value(
    dist: AnswerDistribution, params: ProposerRewardParams, mode: RewardMode
) -> float:
    if mode == "discrete":
        return proposer_reward_discrete(dist)
    return proposer_reward(dist.entropy_nats, params)


def score_samples(
    samples: Sequence[AnswerSample],
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    *,
    solver_mode: RewardMode = "continuous",
    proposer_mode: RewardMode = "continuous",
) -> RoundScore:
    """Score a group in which every sample parsed."""

    dist = build_distribution(samples, base=proposer_params.entropy_base)
    return RoundScore(
        samples=tuple(samples),
        distribution=dist,
        solver_rewards=tuple(_solver_rewards(samples, dist, solver_params, solver_mode)),
        entropy_nats=dist.entropy_nats,
        proposer_reward=_proposer_value(dist, proposer_params, proposer_mode),
        majority_fraction=dist.majority_fraction,
    )


def score_generations(
    texts: Sequence[str],
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    *,
    solver_mode: RewardMode = "continuous",
    proposer_mode: RewardMode = "continuous",
) -> RoundScore:
    """Parse raw generations and score them.

    Unparseable generations are left out of the distribution and score 0. When
    nothing parses, every solver reward is 0 and the proposer is scored at the
    maximal entropy ``log N`` (``N`` = number of generations).
    """

    if not texts:
        raise ValueError("no generations to score")

    parsed: list[AnswerSample | None] = []
    for text in texts:
        try:
            parsed.append(parse_generation(text))
        except AnswerParseError as exc:
            logger.debug("unparseable generation: %s", exc)
            parsed.append(None)

    valid = [sample for sample in parsed if sample is not None]
    if not valid:
        entropy = entropy_cap(len(texts), proposer_params.entropy_base)
        reward = 0.0 if proposer_mode == "discrete" else proposer_reward(entropy, proposer_params)
        return RoundScore(
            samples=tuple(parsed),
            distribution=None,
            solver_rewards=tuple(0.0 for _ in texts),
            entropy_nats=entropy,
            proposer_reward=reward,
            majority_fraction=0.0,
        )

    dist = build_distribution(valid, base=proposer_params.entropy_base)
    rewards = iter(_solver_rewards(valid, dist, solver_params, solver_mode))
    per_text = tuple(next(rewards) if sample is not None else 0.0 for sample in parsed)
    return RoundScore(
        samples=tuple(parsed),
        distribution=dist,
        solver_rewards=per_text,
        entropy_nats=dist.entropy_nats,
        proposer_reward=_proposer_value(dist, proposer_params, proposer_mode),
        majority_fraction=dist.majority_fraction,
    )


__all__ = [
    "AnswerDistribution",
    "DifficultyTier",
    "NotInDistributionError",
    "RewardMode",
    "RoundScore",
    "TIER_INDEX",
    "build_distribution",
    "difficulty_tier",
    "entropy_cap",
    "entropy_from_counts",
    "length_factor",
    "proposer_reward",
    "proposer_reward_discrete",
    "score_generations",
    "score_samples",
    "solver_reward_continuous",
    "solver_reward_discrete",
]
