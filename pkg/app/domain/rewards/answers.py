from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass

__all__ = [
    "AnswerParseError",
    "AnswerSample",
    "canonicalize_answer",
    "extract_answer",
    "parse_generation",
]

_OPEN_TAG = re.compile(r"<answer>", re.IGNORECASE)
_CLOSE_TAG = re.compile(r"</answer>", re.IGNORECASE)
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")
_THOUSANDS = re.compile(r"^[+-]?\d{1,3}(,\d{3})+(\.\d+)?$")
_STRIP_CHARS = string.punctuation + string.whitespace
_EXACT_INT_LIMIT = 2**53


class AnswerParseError(ValueError):
    """Raised when a generation carries no usable answer."""

    def __init__(self, message: str, text: str = "") -> None:
        self.text = text
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class AnswerSample:
    """One parsed solver generation."""

    raw_text: str
    canonical: str
    words_before_answer: int

    def __post_init__(self) -> None:
        if not self.canonical:
            raise AnswerParseError("canonical answer must be non-empty", self.raw_text)
        if self.words_before_answer < 0:
            raise ValueError("words_before_answer must be non-negative")


def _strip_surrounding_punctuation(text: str) -> str:
    text = text.rstrip(_STRIP_CHARS)
    start = 0
    while start < len(text) and text[start] in _STRIP_CHARS:
        head = text[start]
        rest = text[start + 1 :]
        # keep a sign or a leading dot that belongs to a number ("-3", ".5", "-.5")
        if head in "+-." and rest[:1].isdigit():
            break
        if head in "+-" and rest[:1] == "." and rest[1:2].isdigit():
            break
        start += 1
    return text[start:]


def _canonical_number(text: str) -> str | None:
    if _THOUSANDS.match(text):
        text = text.replace(",", "")
    if not _NUMBER.match(text):
        return None
    if _INTEGER.match(text):
        return str(int(text))
    value = float(text)
    if not math.isfinite(value):
        return None
    if value.is_integer() and abs(value) < _EXACT_INT_LIMIT:
        return str(int(value))
    return repr(value)


def canonicalize_answer(text: str) -> str:
    """Normalise an answer so that two answers agree iff their canonicals are equal.

    Whitespace is trimmed, case folded and surrounding punctuation removed.
    Numbers are re-serialised: integers without a decimal point, everything
    else as the shortest round-trip decimal (``"3.50"`` -> ``"3.5"``).
    """

    trimmed = (text or "").strip()
    if not trimmed:
        raise AnswerParseError("answer is empty", text or "")

    lowered = _strip_surrounding_punctuation(trimmed.lower())
    if not lowered:
        raise AnswerParseError("answer has no content besides punctuation", text)

    number = _canonical_number(lowered)
    return number if number is not None else lowered


def extract_answer(generation: str) -> tuple[str, int]:
    """Return ``(canonical, words_before_answer)`` for the first answer span."""

    opening = _OPEN_TAG.search(generation or "")
    if opening is None:
        raise AnswerParseError("no <answer> tag", generation or "")

    body_start = opening.end()
    closing = _CLOSE_TAG.search(generation, body_start)
    body_end = closing.start() if closing is not None else len(generation)

    canonical = canonicalize_answer(generation[body_start:body_end])
    words = len(generation[: opening.start()].split())
    return canonical, words


def parse_generation(generation: str) -> AnswerSample:
    canonical, words = extract_answer(generation)
    return AnswerSample(raw_text=generation, canonical=canonical, words_before_answer=words)
