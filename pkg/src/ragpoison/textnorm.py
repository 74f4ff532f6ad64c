"""Text normalization shared by the answer matcher and the mock reader.

The rules are deliberately small and pinned: case-fold, collapse runs of
whitespace, and (where stated) strip punctuation hugging the ends of a
string. Everything downstream that compares text goes through here so the
whole pipeline agrees on what "equal" means.
"""

from __future__ import annotations

import unicodedata

_EDGE_STRIP = " \t\n\r"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def strip_edge_punctuation(text: str) -> str:
    """Remove punctuation characters from both ends of ``text``."""
    start, end = 0, len(text)
    while start < end and (_is_punct(text[start]) or text[start] in _EDGE_STRIP):
        start += 1
    while end > start and (_is_punct(text[end - 1]) or text[end - 1] in _EDGE_STRIP):
        end -= 1
    return text[start:end]


def collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


def normalize_loose(text: str) -> str:
    """Case-fold + whitespace collapse; used on generated answers."""
    return collapse_whitespace(text).casefold()


def normalize_phrase(text: str) -> str:
    """Case-fold + whitespace collapse + edge punctuation strip.

    Used for question identity in the statement grammar and for the target
    side of substring matching, where a stray "?" or trailing "." must not
    defeat an otherwise exact match.
    """
    return strip_edge_punctuation(collapse_whitespace(text)).casefold()


def substring_match(generated: str, target: str) -> bool:
    """True iff the normalized target occurs inside the normalized answer.

    The generated side keeps its interior punctuation; only the target has
    its surrounding punctuation stripped, so "Sam Altman" matches
    "The CEO of OpenAI is Sam Altman." Substring semantics are the declared
    metric, known edge cases included (a hedged answer that quotes the
    target still counts as a match).
    """
    target_norm = normalize_phrase(target)
    if not target_norm:
        return False
    return target_norm in normalize_loose(generated)
