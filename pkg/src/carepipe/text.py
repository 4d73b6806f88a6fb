"""Text normalisation shared by the parser and the retrieval indexes."""

from __future__ import annotations

import re
import unicodedata

_POSSESSIVE = re.compile(r"(?<=\w)['’]s\b", re.IGNORECASE)


def normalize(text: str) -> str:
    """Lowercase, drop possessive ``'s``, replace punctuation with nothing.

    Punctuation is removed rather than turned into a space so that ``don't``
    becomes ``dont`` and ``walking-frame`` becomes ``walkingframe``.
    """
    text = _POSSESSIVE.sub("", text.lower())
    out = []
    for ch in text:
        cat = unicodedata.category(ch)
        if cat.startswith("P") or cat.startswith("S"):
            continue
        out.append(" " if ch.isspace() else ch)
    return "".join(out)


def tokenize(text: str) -> list[str]:
    return normalize(text).split()


def levenshtein(a: str, b: str, limit: int | None = None) -> int:
    """Edit distance; with ``limit``, any value above it comes back as ``limit + 1``."""
    if a == b:
        return 0
    if limit is not None and abs(len(a) - len(b)) > limit:
        return limit + 1
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        curr = [i]
        for j, cb in enumerate(b, 1):
            cost = 0 if ca == cb else 1
            curr.append(min(curr[j - 1] + 1, prev[j] + 1, prev[j - 1] + cost))
        if limit is not None and min(curr) > limit:
            return limit + 1
        prev = curr
    return prev[-1] if limit is None else min(prev[-1], limit + 1)


def similarity(a: str, b: str, floor: float | None = None) -> float:
    """Normalised edit similarity ``1 - d(a, b) / max(|a|, |b|)``.

    With ``floor``, scores below it may be reported as 0.0, which lets the
    distance computation stop early.
    """
    if not a and not b:
        return 1.0
    longest = max(len(a), len(b))
    if floor is None:
        return 1.0 - levenshtein(a, b) / longest
    limit = int((1.0 - floor) * longest + 1e-9)
    d = levenshtein(a, b, limit)
    return 0.0 if d > limit else 1.0 - d / longest


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: str | bytes) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h
