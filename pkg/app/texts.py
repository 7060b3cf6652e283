from __future__ import annotations

PROPOSER_PROMPT = (
    "Look at the image and write one question about it that has a single short, "
    "verifiable answer (a number, a word or a short phrase). The question should be "
    "hard enough that a careful reader might disagree about the answer, but it must "
    "still be answerable from the image alone. Reply with the question only."
)

SOLVER_PROMPT = (
    "Answer the question about the image. Think briefly, then give the final answer "
    "inside <answer></answer> tags, for example <answer>3</answer>.\n\n"
    "Question: {question}"
)


def bullet_list(items: list[str]) -> str:
    """Join non-empty lines into a bulleted block."""

    return "\n".join(f"• {item}" for item in items if item)


def fmt_float(value: float | None, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


def simulate_done(out_dir: str, steps: int, final_skill: float, mid_band: float | None) -> str:
    return bullet_list(
        [
            f"simulation finished: {steps} steps",
            f"final solver skill: {fmt_float(final_skill)}",
            f"mid-band proposal share (last decile): {fmt_float(mid_band)}",
            f"outputs: {out_dir}",
        ]
    )


def compare_done(out_dir: str, n_seeds: int) -> str:
    return bullet_list([f"comparison finished over {n_seeds} seed(s)", f"outputs: {out_dir}"])


def backend_done(out_dir: str, rounds: int, failures: int) -> str:
    lines = [f"scored {rounds} round(s)", f"outputs: {out_dir}"]
    if failures:
        lines.insert(1, f"failed generations: {failures}")
    return bullet_list(lines)


def landscape_done(path: str, rows: int) -> str:
    return bullet_list([f"{rows} composition(s) written", f"table: {path}"])


def run_failed(reason: str) -> str:
    return f"error: {reason}"


__all__ = [
    "PROPOSER_PROMPT",
    "SOLVER_PROMPT",
    "bullet_list",
    "fmt_float",
    "simulate_done",
    "compare_done",
    "backend_done",
    "landscape_done",
    "run_failed",
]
