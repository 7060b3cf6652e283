from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from app.config import WordsConfig, WorldConfig
from app.domain.policy.service import CategoricalPolicy, kl_to_ref
from app.domain.rewards.answers import AnswerSample

__all__ = [
    "CORRECT_LABEL",
    "SimWorld",
    "SkillSolver",
    "WorldError",
    "answer_labels",
    "answer_probabilities",
    "draw_word_counts",
    "logistic",
    "solve",
    "word_count_support",
]

CORRECT_LABEL = "correct"


class WorldError(ValueError):
    """Raised for an inconsistent world or a bin outside the world."""


def logistic(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class SimWorld:
    """Latent-difficulty question world answered by a scalar-skill solver.

    Bin ``b`` is a question of difficulty ``bin_difficulty[b]``; the solver gets
    it right with probability ``logistic(solver_skill - difficulty)`` and
    otherwise picks one of ``n_distractors`` wrong answers uniformly.
    """

    n_bins: int
    bin_difficulty: tuple[float, ...]
    n_distractors: int = 3
    solver_skill: float = 0.0
    n_answers: int = 5
    words: WordsConfig = field(default_factory=WordsConfig)

    def __post_init__(self) -> None:
        difficulty = tuple(float(v) for v in self.bin_difficulty)
        object.__setattr__(self, "bin_difficulty", difficulty)
        if self.n_bins < 1:
            raise WorldError("n_bins must be positive")
        if len(difficulty) != self.n_bins:
            raise WorldError(f"expected {self.n_bins} bin difficulties, got {len(difficulty)}")
        if any(b < a for a, b in zip(difficulty, difficulty[1:])):
            raise WorldError("bin difficulties must be non-decreasing")
        if not all(math.isfinite(v) for v in difficulty):
            raise WorldError("bin difficulties must be finite")
        if self.n_distractors < 1:
            raise WorldError("n_distractors must be at least 1")
        if self.n_answers < 1:
            raise WorldError("n_answers must be at least 1")
        if not math.isfinite(self.solver_skill):
            raise WorldError("solver_skill must be finite")

    @classmethod
    def from_config(cls, config: WorldConfig, n_answers: int) -> SimWorld:
        if config.bin_difficulty is not None:
            difficulty = tuple(config.bin_difficulty)
        else:
            grid = np.linspace(
                config.solver_skill - config.difficulty_span,
                config.solver_skill + config.difficulty_span,
                config.n_bins,
            )
            difficulty = tuple(float(v) for v in grid)
        return cls(
            n_bins=config.n_bins,
            bin_difficulty=difficulty,
            n_distractors=config.n_distractors,
            solver_skill=config.solver_skill,
            n_answers=n_answers,
            words=config.words,
        )

    def with_skill(self, skill: float) -> SimWorld:
        return replace(self, solver_skill=float(skill))

    @property
    def n_categories(self) -> int:
        return 1 + self.n_distractors

    def check_bin(self, bin_index: int) -> int:
        index = int(bin_index)
        if not 0 <= index < self.n_bins:
            raise WorldError(f"bin {bin_index} outside [0, {self.n_bins})")
        return index


def answer_labels(world: SimWorld) -> tuple[str, ...]:
    return (CORRECT_LABEL,) + tuple(f"d{i}" for i in range(1, world.n_distractors + 1))


def answer_probabilities(world: SimWorld, bin_index: int) -> np.ndarray:
    index = world.check_bin(bin_index)
    p_correct = logistic(world.solver_skill - world.bin_difficulty[index])
    probs = np.full(world.n_categories, (1.0 - p_correct) / world.n_distractors)
    probs[0] = p_correct
    return probs


def word_count_support(words: WordsConfig) -> list[tuple[int, float]]:
    """Exact distribution of the pre-answer word count as ``(words, probability)`` pairs."""

    if words.kind == "constant":
        return [(words.value, 1.0)]
    span = words.high - words.low + 1
    return [(w, 1.0 / span) for w in range(words.low, words.high + 1)]


def draw_word_counts(words: WordsConfig, rng: np.random.Generator, size: int) -> np.ndarray:
    if words.kind == "constant":
        return np.full(size, words.value, dtype=np.int64)
    return rng.integers(words.low, words.high + 1, size=size)


def _render(label: str, n_words: int) -> str:
    prefix = " ".join(["so"] * n_words)
    return f"{prefix} <answer>{label}</answer>" if prefix else f"<answer>{label}</answer>"


def solve(world: SimWorld, bin_index: int, rng: np.random.Generator) -> list[AnswerSample]:
    """Draw the solver's ``n_answers`` independent answers to a question from ``bin_index``."""

    probs = answer_probabilities(world, bin_index)
    cumulative = np.cumsum(probs)
    draws = np.searchsorted(cumulative, rng.random(world.n_answers) * cumulative[-1], side="right")
    draws = np.minimum(draws, world.n_categories - 1)
    word_counts = draw_word_counts(world.words, rng, world.n_answers)

    labels = answer_labels(world)
    samples: list[AnswerSample] = []
    for category, n_words in zip(draws.tolist(), word_counts.tolist()):
        label = labels[category]
        samples.append(
            AnswerSample(raw_text=_render(label, n_words), canonical=label, words_before_answer=n_words)
        )
    return samples


@dataclass(frozen=True, slots=True)
class SkillSolver:
    """Solver parametrised by one scalar skill, anchored to a frozen reference skill.

    At a bin of difficulty ``d`` the solver's answer policy has logits
    ``[skill - d, -ln M, ..., -ln M]`` over (correct, M distractors), whose
    softmax is exactly the world's logistic answer model. Gradients with
    respect to the skill are the logit gradients' first component.
    """

    skill: float
    ref_skill: float

    @classmethod
    def from_world(cls, world: SimWorld) -> SkillSolver:
        return cls(skill=world.solver_skill, ref_skill=world.solver_skill)

    def answer_policy(self, world: SimWorld, bin_index: int) -> CategoricalPolicy:
        index = world.check_bin(bin_index)
        difficulty = world.bin_difficulty[index]
        distractor_logit = -math.log(world.n_distractors)
        logits = np.full(world.n_categories, distractor_logit)
        ref_logits = logits.copy()
        logits[0] = self.skill - difficulty
        ref_logits[0] = self.ref_skill - difficulty
        return CategoricalPolicy(logits, ref_logits)

    def kl(self, world: SimWorld, bin_index: int) -> float:
        return kl_to_ref(self.answer_policy(world, bin_index))

    def with_skill(self, skill: float) -> SkillSolver:
        return SkillSolver(skill=float(skill), ref_skill=self.ref_skill)

    def label_index(self, world: SimWorld, labels: Sequence[str]) -> list[int]:
        """Map answer labels back to categories of the answer policy."""

        lookup = {label: i for i, label in enumerate(answer_labels(world))}
        return [lookup[label] for label in labels]
