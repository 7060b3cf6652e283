from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CategoricalPolicy",
    "PolicyError",
    "grad_log_prob",
    "kl_grad",
    "kl_to_ref",
    "log_prob",
    "log_softmax",
    "sample",
    "softmax",
]


class PolicyError(ValueError):
    """Raised for malformed logits or actions outside the policy's range."""


def _as_logits(values: object, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(-1)
    if array.size == 0:
        raise PolicyError(f"{name} must be non-empty")
    if np.isnan(array).any() or np.isposinf(array).any():
        raise PolicyError(f"{name} must not contain NaN or +inf")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CategoricalPolicy:
    """Softmax policy over a finite action set with a frozen reference."""

    logits: np.ndarray
    ref_logits: np.ndarray

    def __post_init__(self) -> None:
        logits = _as_logits(self.logits, "logits")
        ref_logits = _as_logits(self.ref_logits, "ref_logits")
        if logits.shape != ref_logits.shape:
            raise PolicyError("logits and ref_logits must have the same length")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "ref_logits", ref_logits)

    @classmethod
    def uniform(cls, n_actions: int) -> CategoricalPolicy:
        if n_actions < 1:
            raise PolicyError("n_actions must be positive")
        zeros = np.zeros(n_actions)
        return cls(zeros, zeros)

    @classmethod
    def from_logits(cls, logits: object) -> CategoricalPolicy:
        """Policy whose reference is a frozen copy of its own starting logits."""

        return cls(logits, np.array(logits, dtype=np.float64))

    def with_logits(self, logits: object) -> CategoricalPolicy:
        return CategoricalPolicy(logits, self.ref_logits)

    @property
    def n_actions(self) -> int:
        return int(self.logits.size)

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)

    @property
    def ref_probabilities(self) -> np.ndarray:
        return softmax(self.ref_logits)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits))
    return shifted / np.sum(shifted)


def _check_action(policy: CategoricalPolicy, action: int) -> int:
    index = int(action)
    if not 0 <= index < policy.n_actions:
        raise PolicyError(f"action {action} outside [0, {policy.n_actions})")
    return index


def sample(policy: CategoricalPolicy, rng: np.random.Generator) -> int:
    """Draw one action by inverting the cumulative distribution."""

    cumulative = np.cumsum(policy.probabilities)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, policy.n_actions - 1)


def log_prob(policy: CategoricalPolicy, action: int) -> float:
    return float(log_softmax(policy.logits)[_check_action(policy, action)])


def grad_log_prob(policy: CategoricalPolicy, action: int) -> np.ndarray:
    """Score function with respect to the logits: one-hot(action) minus probabilities."""

    grad = -policy.probabilities
    grad[_check_action(policy, action)] += 1.0
    return grad


def kl_to_ref(policy: CategoricalPolicy) -> float:
    p = policy.probabilities
    log_ratio = log_softmax(policy.logits) - log_softmax(policy.ref_logits)
    mask = p > 0.0
    return max(0.0, float(np.sum(p[mask] * log_ratio[mask])))


def kl_grad(policy: CategoricalPolicy) -> np.ndarray:
    """Gradient of ``kl_to_ref`` with respect to the policy logits."""

    p = policy.probabilities
    log_ratio = log_softmax(policy.logits) - log_softmax(policy.ref_logits)
    mask = p > 0.0
    kl = float(np.sum(p[mask] * log_ratio[mask]))
    return np.where(mask, p * (log_ratio - kl), 0.0)
