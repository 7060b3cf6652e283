from __future__ import annotations

import asyncio
import base64
import logging
import mimetypes
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from urllib.parse import urlsplit

from app.config import BackendConfig, ProposerRewardParams, SolverRewardParams
from app.core.metrics import ORIGIN_FIELD
from app.domain.backend.client import (
    BackendConfigError,
    BackendError,
    BackendResponseError,
    BackendTransportError,
    ChatTransport,
    message_content,
)
from app.domain.rewards.service import (
    TIER_INDEX,
    RoundScore,
    difficulty_tier,
    score_generations,
)

logger = logging.getLogger(__name__)

BACKEND_ORIGIN = "backend"
_PROPOSER_FIELDS = {"image_ref"}
_SOLVER_FIELDS = {"question", "image_ref"}
_LOCAL_HOSTS = {"localhost", "127.0.0.1", "::1"}


def _template_fields(template: str, name: str) -> set[str]:
    try:
        parsed = list(string.Formatter().parse(template))
    except ValueError as exc:
        raise BackendConfigError(f"{name} is not a valid template: {exc}") from exc
    return {field for _, field, _, _ in parsed if field is not None}


def validate_templates(config: BackendConfig) -> None:
    proposer = _template_fields(config.proposer_prompt_template, "proposer_prompt_template")
    solver = _template_fields(config.solver_prompt_template, "solver_prompt_template")
    for name, fields, allowed in (
        ("proposer_prompt_template", proposer, _PROPOSER_FIELDS),
        ("solver_prompt_template", solver, _SOLVER_FIELDS),
    ):
        unknown = sorted(f for f in fields if f not in allowed)
        if unknown:
            raise BackendConfigError(f"{name} has placeholder(s) that cannot be filled: {', '.join(unknown)}")
    if "question" not in solver:
        raise BackendConfigError("solver_prompt_template must contain a {question} placeholder")


def is_remote(base_url: str) -> bool:
    host = (urlsplit(base_url).hostname or "").lower()
    return host not in _LOCAL_HOSTS


def ensure_ready(config: BackendConfig) -> None:
    """Fail before any request when templates or credentials are unusable."""

    validate_templates(config)
    if config.fixtures:
        return
    if is_remote(config.base_url) and not config.api_key:
        raise BackendConfigError(
            f"environment variable {config.api_key_env} is not set; it is required for {config.base_url}"
        )


def image_payload(image_ref: str) -> str:
    """URL for the image part of a request: remote and data URLs pass through, files are inlined."""

    if image_ref.startswith(("http://", "https://", "data:")):
        return image_ref
    path = Path(image_ref)
    if not path.is_file():
        raise BackendConfigError(f"image not found: {image_ref}")
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    encoded = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:{mime};base64,{encoded}"


def request_body(
    config: BackendConfig,
    prompt: str,
    image_url: str,
    *,
    temperature: float,
    seed: int,
) -> dict[str, Any]:
    return {
        "model": config.model_name,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": image_url}},
                ],
            }
        ],
        "temperature": temperature,
        "max_tokens": config.max_tokens,
        "seed": seed,
    }


async def propose_question(image_ref: str, config: BackendConfig, *, transport: ChatTransport) -> str:
    validate_templates(config)
    prompt = config.proposer_prompt_template.format(image_ref=image_ref)
    body = request_body(
        config, prompt, image_payload(image_ref), temperature=config.proposer_temperature, seed=0
    )
    question = message_content(await transport.complete(body))
    if not question.strip():
        raise BackendResponseError("proposer returned an empty question", payload=question)
    return question


@dataclass(frozen=True, slots=True)
class AnswerBatch:
    generations: tuple[str, ...]
    requested: int
    failures: tuple[str, ...] = ()

    @property
    def partial(self) -> bool:
        return len(self.generations) < self.requested


async def sample_answers(
    image_ref: str,
    question: str,
    config: BackendConfig,
    *,
    transport: ChatTransport,
) -> AnswerBatch:
    """Request ``n_answers`` solver completions; results keep request order."""

    validate_templates(config)
    prompt = config.solver_prompt_template.format(question=question, image_ref=image_ref)
    image_url = image_payload(image_ref)
    semaphore = asyncio.Semaphore(config.max_concurrency)

    async def _one(index: int) -> str:
        body = request_body(
            config, prompt, image_url, temperature=config.solver_temperature, seed=index + 1
        )
        async with semaphore:
            return message_content(await transport.complete(body))

    results = await asyncio.gather(
        *(_one(i) for i in range(config.n_answers)), return_exceptions=True
    )
    generations: list[str] = []
    failures: list[str] = []
    for index, result in enumerate(results):
        if isinstance(result, BackendError):
            logger.warning("answer %s of %s failed: %s", index + 1, config.n_answers, result)
            failures.append(str(result))
        elif isinstance(result, BaseException):
            raise result
        else:
            generations.append(result)
    return AnswerBatch(generations=tuple(generations), requested=config.n_answers, failures=tuple(failures))


@dataclass(frozen=True, slots=True)
class RoundOutcome:
    image_ref: str
    question: str
    batch: AnswerBatch
    score: RoundScore
    entry: dict[str, Any]


async def score_round(
    image_ref: str,
    config: BackendConfig,
    solver_params: SolverRewardParams,
    proposer_params: ProposerRewardParams,
    *,
    transport: ChatTransport,
    step: int = 1,
    baseline_solver: float = 0.0,
    baseline_proposer: float = 0.0,
    beta_solver: float = 0.0,
    beta_proposer: float = 0.0,
) -> RoundOutcome:
    """Propose, answer and score one image; nothing is trained.

    The entry has the simulator's step-log fields plus an ``origin`` tag.
    ``difficulty_bin`` holds the difficulty tier (0 easy, 1 moderate, 2 hard)
    and both KL fields are 0 since no policy moves.
    """

    question = await propose_question(image_ref, config, transport=transport)
    batch = await sample_answers(image_ref, question, config, transport=transport)
    if not batch.generations:
        raise BackendTransportError(
            f"all {batch.requested} answer requests failed",
            attempts=config.max_retries + 1,
            payload=list(batch.failures),
        )
    if batch.partial:
        logger.warning(
            "round for %s is partial: %s of %s answers", image_ref, len(batch.generations), batch.requested
        )

    score = score_generations(batch.generations, solver_params, proposer_params)
    entry: dict[str, Any] = {
        "step": step,
        "difficulty_bin": TIER_INDEX[difficulty_tier(score.entropy_nats, proposer_params)],
        "entropy_nats": score.entropy_nats,
        "solver_rewards": list(score.solver_rewards),
        "proposer_reward": score.proposer_reward,
        "solver_kl": 0.0,
        "proposer_kl": 0.0,
        "beta_solver": beta_solver,
        "beta_proposer": beta_proposer,
        "baseline_solver": baseline_solver,
        "baseline_proposer": baseline_proposer,
        "majority_fraction": score.majority_fraction,
        ORIGIN_FIELD: BACKEND_ORIGIN,
    }
    return RoundOutcome(image_ref=image_ref, question=question, batch=batch, score=score, entry=entry)


__all__ = [
    "AnswerBatch",
    "BACKEND_ORIGIN",
    "RoundOutcome",
    "ensure_ready",
    "image_payload",
    "is_remote",
    "propose_question",
    "request_body",
    "sample_answers",
    "score_round",
    "validate_templates",
]
