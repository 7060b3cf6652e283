"""Run summaries computed from step records alone, so they can be rebuilt from logs."""

from __future__ import annotations

import math
from dataclasses import asdict, is_dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from app.config import ProposerRewardParams
from app.domain.rewards.service import difficulty_tier

__all__ = [
    "DEFAULT_WINDOW",
    "KL_TRAILING_STEPS",
    "compare_summaries",
    "records_frame",
    "summarize_records",
    "windowed_curve",
]

DEFAULT_WINDOW = 100
KL_TRAILING_STEPS = 1000
_TIERS = ("easy", "moderate", "hard")


def _as_mapping(record: Any) -> Mapping[str, Any]:
    if is_dataclass(record):
        return asdict(record)
    return record


def records_frame(records: Iterable[Any], proposer_params: ProposerRewardParams) -> pd.DataFrame:
    """Step records as a frame, with per-step derived columns."""

    frame = pd.DataFrame([_as_mapping(r) for r in records])
    if frame.empty:
        return frame
    rewards = frame["solver_rewards"]
    frame["solver_reward_mean"] = rewards.map(lambda r: float(np.mean(r)) if len(r) else 0.0)
    frame["zero_advantage"] = rewards.map(lambda r: len(r) == 0 or max(r) == min(r))
    frame["tier"] = frame["entropy_nats"].map(lambda h: difficulty_tier(h, proposer_params))
    frame["mid_band"] = frame["tier"] == "moderate"
    return frame


def _clean(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _histogram(frame: pd.DataFrame, n_bins: int) -> list[int]:
    counts = np.bincount(frame["difficulty_bin"].to_numpy(dtype=np.int64), minlength=n_bins)
    return counts[:n_bins].tolist()


def _tier_shares(frame: pd.DataFrame) -> dict[str, float]:
    shares = frame["tier"].value_counts(normalize=True)
    return {tier: float(shares.get(tier, 0.0)) for tier in _TIERS}


def _window_variance(series: pd.Series, window: int) -> float | None:
    n_windows = len(series) // window
    if n_windows < 2:
        return None
    trimmed = series.iloc[: n_windows * window].to_numpy(dtype=np.float64)
    means = trimmed.reshape(n_windows, window).mean(axis=1)
    return float(np.var(means))


def _empty_summary(n_bins: int) -> dict[str, Any]:
    return {
        "n_steps": 0,
        "decile_steps": 0,
        "difficulty_histogram_first": [0] * n_bins,
        "difficulty_histogram_last": [0] * n_bins,
        "mid_band_share_first": None,
        "mid_band_share_last": None,
        "tier_shares_first": {tier: None for tier in _TIERS},
        "tier_shares_last": {tier: None for tier in _TIERS},
        "mean_solver_reward": None,
        "mean_proposer_reward": None,
        "mean_solver_reward_first": None,
        "mean_solver_reward_last": None,
        "mean_proposer_reward_first": None,
        "mean_proposer_reward_last": None,
        "mean_entropy": None,
        "zero_advantage_fraction": None,
        "solver_reward_window_variance": None,
        "proposer_reward_window_variance": None,
        "solver_kl_trailing_mean": None,
        "beta_solver_range": None,
        "beta_proposer_range": None,
    }


def summarize_records(
    records: Sequence[Any],
    n_bins: int,
    proposer_params: ProposerRewardParams,
    *,
    window: int = DEFAULT_WINDOW,
) -> dict[str, Any]:
    """Summary of one run: decile histograms, reward means and stability figures.

    The first and last deciles are ``max(1, n // 10)`` steps each. Window
    variances are the population variance of the means of consecutive full
    windows and are ``None`` with fewer than two windows.
    """

    frame = records_frame(records, proposer_params)
    if frame.empty:
        return _empty_summary(n_bins)

    decile = max(1, len(frame) // 10)
    first, last = frame.head(decile), frame.tail(decile)
    trailing = frame.tail(KL_TRAILING_STEPS)
    summary = {
        "n_steps": len(frame),
        "decile_steps": decile,
        "difficulty_histogram_first": _histogram(first, n_bins),
        "difficulty_histogram_last": _histogram(last, n_bins),
        "mid_band_share_first": first["mid_band"].mean(),
        "mid_band_share_last": last["mid_band"].mean(),
        "tier_shares_first": _tier_shares(first),
        "tier_shares_last": _tier_shares(last),
        "mean_solver_reward": frame["solver_reward_mean"].mean(),
        "mean_proposer_reward": frame["proposer_reward"].mean(),
        "mean_solver_reward_first": first["solver_reward_mean"].mean(),
        "mean_solver_reward_last": last["solver_reward_mean"].mean(),
        "mean_proposer_reward_first": first["proposer_reward"].mean(),
        "mean_proposer_reward_last": last["proposer_reward"].mean(),
        "mean_entropy": frame["entropy_nats"].mean(),
        "zero_advantage_fraction": frame["zero_advantage"].mean(),
        "solver_reward_window_variance": _window_variance(frame["solver_reward_mean"], window),
        "proposer_reward_window_variance": _window_variance(frame["proposer_reward"], window),
        "solver_kl_trailing_mean": trailing["solver_kl"].mean(),
        "beta_solver_range": [frame["beta_solver"].min(), frame["beta_solver"].max()],
        "beta_proposer_range": [frame["beta_proposer"].min(), frame["beta_proposer"].max()],
    }
    return _clean(summary)


def windowed_curve(
    records: Sequence[Any],
    proposer_params: ProposerRewardParams,
    *,
    window: int = DEFAULT_WINDOW,
) -> pd.DataFrame:
    """Per-window means of the quantities compared between reward variants."""

    frame = records_frame(records, proposer_params)
    columns = ["window", "first_step", "solver_reward", "proposer_reward", "zero_advantage_fraction", "mid_band_share"]
    if frame.empty:
        return pd.DataFrame(columns=columns)
    frame["window"] = np.arange(len(frame)) // window
    grouped = frame.groupby("window", sort=True)
    curve = pd.DataFrame(
        {
            "first_step": grouped["step"].min(),
            "solver_reward": grouped["solver_reward_mean"].mean(),
            "proposer_reward": grouped["proposer_reward"].mean(),
            "zero_advantage_fraction": grouped["zero_advantage"].mean(),
            "mid_band_share": grouped["mid_band"].mean(),
        }
    ).reset_index()
    return curve[columns]


_COMPARED = (
    "zero_advantage_fraction",
    "solver_reward_window_variance",
    "proposer_reward_window_variance",
    "final_skill",
    "mean_solver_reward",
    "mean_proposer_reward",
)


def compare_summaries(rows: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Aggregate paired continuous/discrete run summaries.

    Each row carries ``seed``, ``variant`` (``continuous`` or ``discrete``) and
    the compared metrics.
    """

    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return {"n_seeds": 0, "n_runs": 0, "per_seed": [], "aggregate": {}}

    wide = frame.pivot(index="seed", columns="variant", values=list(_COMPARED))
    per_seed = []
    for seed in wide.index:
        entry: dict[str, Any] = {"seed": int(seed)}
        for metric in _COMPARED:
            entry[metric] = {variant: wide.loc[seed, (metric, variant)] for variant in ("continuous", "discrete")}
        zero = entry["zero_advantage_fraction"]
        entry["continuous_lower_zero_advantage"] = (
            zero["continuous"] is not None
            and zero["discrete"] is not None
            and zero["continuous"] < zero["discrete"]
        )
        per_seed.append(entry)

    aggregate = {
        metric: {
            variant: frame.loc[frame["variant"] == variant, metric].astype(float).mean()
            for variant in ("continuous", "discrete")
        }
        for metric in _COMPARED
    }
    result = {
        "n_seeds": int(wide.shape[0]),
        "n_runs": int(len(frame)),
        "per_seed": per_seed,
        "aggregate": aggregate,
        "seeds_continuous_lower_zero_advantage": sum(e["continuous_lower_zero_advantage"] for e in per_seed),
    }
    return _clean(result)
