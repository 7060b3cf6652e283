from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from app.config import KlSettings, TrainerConfig
from app.domain.policy.service import (
    CategoricalPolicy,
    grad_log_prob,
    kl_grad,
    kl_to_ref,
    sample,
)
from app.domain.rewards.service import score_samples
from app.domain.sim.service import SimWorld, SkillSolver, solve
from app.domain.trainer.summary import summarize_records

logger = logging.getLogger(__name__)

__all__ = [
    "EmaBaseline",
    "KlController",
    "ReinforceResult",
    "RunResult",
    "StepRecord",
    "StepResult",
    "TrainerState",
    "clip_gradient",
    "initial_proposer",
    "ema_update",
    "kl_beta_update",
    "policy_gradient",
    "reinforce_step",
    "run",
    "train_step",
]


@dataclass(frozen=True, slots=True)
class EmaBaseline:
    value: float = 0.0
    decay: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("baseline decay must lie in [0, 1)")


def ema_update(baseline: EmaBaseline, reward: float) -> EmaBaseline:
    if not math.isfinite(reward):
        raise ValueError("reward must be finite")
    value = baseline.decay * baseline.value + (1.0 - baseline.decay) * reward
    return EmaBaseline(value=value, decay=baseline.decay)


@dataclass(frozen=True, slots=True)
class KlController:
    """Adaptive weight of the KL penalty, kept inside ``[beta_min, beta_max]``."""

    beta: float
    eta: float
    target: float
    beta_min: float
    beta_max: float

    def __post_init__(self) -> None:
        if not 0.0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not self.beta_min <= self.beta <= self.beta_max:
            raise ValueError("beta outside its clip bounds")
        if self.eta <= 0.0 or self.target <= 0.0:
            raise ValueError("eta and target must be positive")

    @classmethod
    def from_settings(cls, settings: KlSettings) -> KlController:
        return cls(
            beta=settings.beta,
            eta=settings.eta,
            target=settings.target,
            beta_min=settings.beta_min,
            beta_max=settings.beta_max,
        )


def kl_beta_update(controller: KlController, observed_kl: float) -> KlController:
    if observed_kl < 0.0 or math.isnan(observed_kl):
        raise ValueError("observed KL must be non-negative")
    exponent = controller.eta * (observed_kl - controller.target) / controller.target
    # exp overflows past ~709; the clip makes anything that large beta_max anyway
    beta = controller.beta * math.exp(min(exponent, 700.0))
    beta = min(max(beta, controller.beta_min), controller.beta_max)
    return replace(controller, beta=beta)


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm <= max_norm or norm == 0.0:
        return grad
    return grad * (max_norm / norm)


def policy_gradient(
    policy: CategoricalPolicy, action: int, advantage: float, beta: float
) -> np.ndarray:
    """Ascent direction on the logits: advantage-weighted score minus the KL pull."""

    return advantage * grad_log_prob(policy, action) - beta * kl_grad(policy)


@dataclass(frozen=True, slots=True)
class ReinforceResult:
    policy: CategoricalPolicy
    baseline: EmaBaseline
    controller: KlController
    gradient: np.ndarray
    kl: float


def reinforce_step(
    policy: CategoricalPolicy,
    action: int,
    reward: float,
    baseline: EmaBaseline,
    controller: KlController,
    learning_rate: float,
    grad_clip_norm: float,
) -> ReinforceResult:
    """One clipped REINFORCE ascent step with KL regularisation.

    The advantage uses the baseline as it was before this step; baseline and
    controller are advanced only after the gradient is formed.
    """

    observed_kl = kl_to_ref(policy)
    grad = policy_gradient(policy, action, reward - baseline.value, controller.beta)
    grad = clip_gradient(grad, grad_clip_norm)
    return ReinforceResult(
        policy=policy.with_logits(policy.logits + learning_rate * grad),
        baseline=ema_update(baseline, reward),
        controller=kl_beta_update(controller, observed_kl),
        gradient=grad,
        kl=observed_kl,
    )


@dataclass(frozen=True, slots=True)
class StepRecord:
    step: int
    difficulty_bin: int
    entropy_nats: float
    solver_rewards: list[float]
    proposer_reward: float
    solver_kl: float
    proposer_kl: float
    beta_solver: float
    beta_proposer: float
    baseline_solver: float
    baseline_proposer: float
    majority_fraction: float

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["solver_rewards"] = [float(r) for r in self.solver_rewards]
        return data


@dataclass(frozen=True)
class TrainerState:
    """Everything the loop carries from one step to the next.

    ``buffer`` holds the proposer's ``(action, advantage)`` pairs collected
    since its last update.
    """

    step: int
    proposer: CategoricalPolicy
    solver: SkillSolver
    baseline_solver: EmaBaseline
    baseline_proposer: EmaBaseline
    kl_solver: KlController
    kl_proposer: KlController
    buffer: tuple[tuple[int, float], ...] = ()

    @classmethod
    def initial(
        cls, config: TrainerConfig, proposer: CategoricalPolicy, solver: SkillSolver
    ) -> TrainerState:
        return cls(
            step=0,
            proposer=proposer,
            solver=solver,
            baseline_solver=EmaBaseline(0.0, config.baseline_decay),
            baseline_proposer=EmaBaseline(0.0, config.baseline_decay),
            kl_solver=KlController.from_settings(config.kl_solver),
            kl_proposer=KlController.from_settings(config.kl_proposer),
        )


@dataclass(frozen=True, slots=True)
class StepResult:
    record: StepRecord
    state: TrainerState


def _solver_update(
    config: TrainerConfig,
    world: SimWorld,
    solver: SkillSolver,
    bin_index: int,
    categories: list[int],
    rewards: tuple[float, ...],
    baseline: float,
    beta: float,
) -> SkillSolver:
    if config.learning_rate_solver == 0.0:
        return solver

    if config.solver_update == "sequential":
        for category, reward in zip(categories, rewards):
            policy = solver.answer_policy(world, bin_index)
            grad = policy_gradient(policy, category, reward - baseline, beta)[:1]
            grad = clip_gradient(grad, config.grad_clip_norm)
            solver = solver.with_skill(solver.skill + config.learning_rate_solver * float(grad[0]))
        return solver

    policy = solver.answer_policy(world, bin_index)
    score = np.mean(
        [(reward - baseline) * grad_log_prob(policy, c) for c, reward in zip(categories, rewards)],
        axis=0,
    )
    grad = (score - beta * kl_grad(policy))[:1]
    grad = clip_gradient(grad, config.grad_clip_norm)
    return solver.with_skill(solver.skill + config.learning_rate_solver * float(grad[0]))


def _proposer_update(
    config: TrainerConfig,
    proposer: CategoricalPolicy,
    buffer: tuple[tuple[int, float], ...],
    beta: float,
) -> CategoricalPolicy:
    batch = buffer[-1:] if config.proposer_update == "latest" else buffer
    score = np.mean([adv * grad_log_prob(proposer, action) for action, adv in batch], axis=0)
    grad = clip_gradient(score - beta * kl_grad(proposer), config.grad_clip_norm)
    return proposer.with_logits(proposer.logits + config.learning_rate_proposer * grad)


def train_step(
    config: TrainerConfig,
    world: SimWorld,
    state: TrainerState,
    rng: np.random.Generator,
) -> StepResult:
    """Run one propose / solve / score / update round.

    The solver is updated every step; the proposer buffers its advantage and
    is updated once every ``proposer_period`` steps. Both KL weights adapt
    every step from the KL observed before the update.
    """

    step = state.step + 1
    proposer_kl = kl_to_ref(state.proposer)
    bin_index = sample(state.proposer, rng)

    live_world = world.with_skill(state.solver.skill)
    samples = solve(live_world, bin_index, rng)
    score = score_samples(
        samples,
        config.solver_params,
        config.proposer_params,
        solver_mode=config.solver_reward,
        proposer_mode=config.proposer_reward,
    )

    solver_kl = state.solver.kl(world, bin_index)
    categories = state.solver.label_index(world, [s.canonical for s in samples])
    solver = _solver_update(
        config,
        world,
        state.solver,
        bin_index,
        categories,
        score.solver_rewards,
        state.baseline_solver.value,
        state.kl_solver.beta,
    )
    baseline_solver = ema_update(state.baseline_solver, float(np.mean(score.solver_rewards)))
    kl_solver = kl_beta_update(state.kl_solver, solver_kl)

    buffer = state.buffer + ((bin_index, score.proposer_reward - state.baseline_proposer.value),)
    proposer = state.proposer
    if step % config.proposer_period == 0:
        if config.learning_rate_proposer != 0.0:
            proposer = _proposer_update(config, proposer, buffer, state.kl_proposer.beta)
        buffer = ()
    baseline_proposer = ema_update(state.baseline_proposer, score.proposer_reward)
    kl_proposer = kl_beta_update(state.kl_proposer, proposer_kl)

    record = StepRecord(
        step=step,
        difficulty_bin=bin_index,
        entropy_nats=score.entropy_nats,
        solver_rewards=list(score.solver_rewards),
        proposer_reward=score.proposer_reward,
        solver_kl=solver_kl,
        proposer_kl=proposer_kl,
        beta_solver=kl_solver.beta,
        beta_proposer=kl_proposer.beta,
        baseline_solver=baseline_solver.value,
        baseline_proposer=baseline_proposer.value,
        majority_fraction=score.majority_fraction,
    )
    new_state = TrainerState(
        step=step,
        proposer=proposer,
        solver=solver,
        baseline_solver=baseline_solver,
        baseline_proposer=baseline_proposer,
        kl_solver=kl_solver,
        kl_proposer=kl_proposer,
        buffer=buffer,
    )
    return StepResult(record=record, state=new_state)


@dataclass(slots=True)
class RunResult:
    config: TrainerConfig
    world: SimWorld
    records: list[StepRecord] = field(default_factory=list)
    initial_state: TrainerState | None = None
    final_state: TrainerState | None = None
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def final_skill(self) -> float:
        state = self.final_state or self.initial_state
        return state.solver.skill if state is not None else self.world.solver_skill


def initial_proposer(config: TrainerConfig, n_bins: int, rng: np.random.Generator) -> CategoricalPolicy:
    """Starting proposer; its reference is a frozen copy of these logits."""

    if config.proposer_init_scale > 0.0:
        logits = rng.normal(0.0, config.proposer_init_scale, size=n_bins)
    else:
        logits = np.zeros(n_bins)
    return CategoricalPolicy.from_logits(logits)


def run(config: TrainerConfig, world: SimWorld | None = None) -> RunResult:
    """Train proposer and solver for ``config.steps`` steps from ``config.seed``."""

    world = world or SimWorld.from_config(config.world, config.n_answers)
    init_seq, loop_seq = np.random.SeedSequence(config.seed).spawn(2)
    proposer = initial_proposer(config, world.n_bins, np.random.default_rng(init_seq))
    rng = np.random.default_rng(loop_seq)

    state = TrainerState.initial(config, proposer, SkillSolver.from_world(world))
    result = RunResult(config=config, world=world, initial_state=state, final_state=state)
    logger.info(
        "run started: steps=%s seed=%s bins=%s distractors=%s",
        config.steps,
        config.seed,
        world.n_bins,
        world.n_distractors,
    )

    for _ in range(config.steps):
        step_result = train_step(config, world, state, rng)
        state = step_result.state
        result.records.append(step_result.record)
        if state.step % config.log_every == 0:
            record = step_result.record
            logger.info(
                "step %s: solver_reward=%.4f proposer_reward=%.4f beta_solver=%.4g beta_proposer=%.4g skill=%.4f",
                record.step,
                float(np.mean(record.solver_rewards)),
                record.proposer_reward,
                record.beta_solver,
                record.beta_proposer,
                state.solver.skill,
            )

    result.final_state = state
    result.summary = summarize_records(result.records, world.n_bins, config.proposer_params)
    logger.info("run finished: steps=%s final_skill=%.4f", state.step, state.solver.skill)
    return result
