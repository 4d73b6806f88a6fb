"""Reminder trigger detection and the small temporal grammar behind it.

Recognised time forms (case-insensitive)::

    at H[:MM] am|pm          at HH:MM (24 hour)
    in N minute(s)|hour(s)   tomorrow [at T | morning | afternoon | ...]
    [on] <weekday> at T      every morning|afternoon|evening|night [at T]
    every day at T           ... [for [the next] N days]

Anything else following a trigger resolves to :class:`~carepipe.model.Ambiguous`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .model import Ambiguous, OneShot, Recurring, ScheduleSpec
from .text import tokenize

DEFAULT_CANONICAL_TIMES = {
    "morning": "08:00",
    "afternoon": "14:00",
    "evening": "18:00",
    "night": "21:00",
}

_NUMBER_WORDS = {
    "a": 1, "an": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
    "twenty": 20, "thirty": 30,
}
_WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

TRIGGER_RE = re.compile(
    r"\b(?:set\s+a\s+reminder|don[’']?t\s+forget|do\s+not\s+forget|reminder|remind)\b",
    re.IGNORECASE,
)

_NUM = r"(?:\d{1,3}|" + "|".join(sorted(_NUMBER_WORDS, key=len, reverse=True)) + r")"
_PART = r"(?:morning|afternoon|evening|night)"
# "2 pm", "2:30pm", "14:30". Minutes may use "." as in "2.30 pm".
_TIME = r"(?:\d{1,2}(?:[:.]\d{2})?\s*(?:am|pm)\b|\d{1,2}[:.]\d{2}\b)"
_WD = "(?:" + "|".join(_WEEKDAYS) + ")"

_PATTERNS: list[tuple[str, re.Pattern[str]]] = [
    (
        "recurring",
        re.compile(
            rf"\bevery\s+(?P<part>day|{_PART})(?:\s+at\s+(?P<time>{_TIME}))?"
            rf"(?:\s+for\s+(?:the\s+next\s+)?(?P<n>{_NUM})\s+days?\b)?"
        ),
    ),
    (
        "relative",
        re.compile(rf"\bin\s+(?P<n>{_NUM})\s+(?P<unit>minutes?|mins?|hours?|hrs?)\b"),
    ),
    (
        "tomorrow",
        re.compile(
            rf"\btomorrow(?:\s+at\s+(?P<time>{_TIME})|\s+(?:in\s+the\s+)?(?P<part>{_PART}))?"
        ),
    ),
    ("tomorrow", re.compile(rf"\bat\s+(?P<time>{_TIME})\s+tomorrow\b")),
    ("weekday", re.compile(rf"\b(?:on\s+)?(?P<wd>{_WD})(?:\s+at\s+(?P<time>{_TIME}))?")),
    ("weekday", re.compile(rf"\bat\s+(?P<time>{_TIME})\s+on\s+(?P<wd>{_WD})\b")),
    ("at", re.compile(rf"\bat\s+(?P<time>{_TIME})")),
]

# recognised as a time phrase but never resolvable
_VAGUE = re.compile(r"\b(?:later(?:\s+on|\s+today)?|soon|at\s+some\s+point|some\s*time|next\s+week|whenever)\b")

_AMPM_DOTS = re.compile(r"\b([ap])\.\s?m\.?(?=\W|$)", re.IGNORECASE)
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?;])\s+")
_LEAD_IN = re.compile(
    r"^\s*(?:set\s+a\s+reminder|don[’']?t\s+forget|do\s+not\s+forget|reminder|remind)\b[\s,:-]*"
    r"(?:(?:for\s+)?(?:me|us|staff|the\s+team|everyone|her|him|them)\b\s*)?"
    r"(?:(?:to|about|that|for|of)\b\s*)?",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class TimeSettings:
    canonical_times: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CANONICAL_TIMES))
    default_recurrence_count: int = 7
    max_horizon_days: int = 31

    def canonical(self, part: str) -> tuple[int, int]:
        hh, mm = self.canonical_times[part].split(":")
        return int(hh), int(mm)


@dataclass(frozen=True)
class ReminderFields:
    """What :func:`extract_reminder` finds: a description and a schedule."""

    description: str
    schedule: ScheduleSpec
    sentence: str
    time_text: str | None = None

    @property
    def time_resolved(self) -> bool:
        return not isinstance(self.schedule, Ambiguous)


def _prepare(text: str) -> str:
    return _AMPM_DOTS.sub(lambda m: m.group(1) + "m", text)


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(_prepare(text).strip()) if s.strip()]


def find_trigger(text: str) -> re.Match[str] | None:
    return TRIGGER_RE.search(text)


def _number(token: str) -> int:
    return int(token) if token.isdigit() else _NUMBER_WORDS[token]


def _clock(text: str) -> tuple[int, int] | None:
    m = re.fullmatch(r"(\d{1,2})(?:[:.](\d{2}))?\s*(am|pm)?", text.strip())
    if not m:
        return None
    hour, minute = int(m.group(1)), int(m.group(2) or 0)
    ampm = m.group(3)
    if minute > 59:
        return None
    if ampm:
        if not 1 <= hour <= 12:
            return None
        hour = hour % 12 + (12 if ampm == "pm" else 0)
    elif hour > 23:
        return None
    return hour, minute


def _at(day: datetime, hm: tuple[int, int]) -> datetime:
    return day.replace(hour=hm[0], minute=hm[1], second=0)


def _next_occurrence(after: datetime, hm: tuple[int, int]) -> datetime:
    candidate = _at(after, hm)
    return candidate if candidate > after else candidate + timedelta(days=1)


def _resolve(kind: str, m: re.Match[str], ref: datetime, settings: TimeSettings) -> ScheduleSpec:
    groups = m.groupdict()
    hm = None
    if groups.get("time"):
        hm = _clock(groups["time"])
        if hm is None:
            return Ambiguous(f"invalid clock time {groups['time']!r}")

    if kind == "at":
        return OneShot(_next_occurrence(ref, hm))

    if kind == "relative":
        n = _number(groups["n"])
        minutes = n * 60 if groups["unit"].startswith("h") else n
        if minutes < 1 or minutes > settings.max_horizon_days * 24 * 60:
            return Ambiguous(f"relative offset out of range: {m.group(0)!r}")
        return OneShot(ref + timedelta(minutes=minutes))

    if kind == "tomorrow":
        if hm is None:
            part = groups.get("part")
            if not part:
                return Ambiguous("'tomorrow' without a time of day")
            hm = settings.canonical(part)
        return OneShot(_at(ref + timedelta(days=1), hm))

    if kind == "weekday":
        if hm is None:
            return Ambiguous(f"{groups['wd']!r} without a time of day")
        ahead = (_WEEKDAYS.index(groups["wd"]) - ref.weekday()) % 7 or 7
        return OneShot(_at(ref + timedelta(days=ahead), hm))

    if kind == "recurring":
        part = groups["part"]
        if hm is None:
            if part == "day":
                return Ambiguous("'every day' without a time of day")
            hm = settings.canonical(part)
        count = _number(groups["n"]) if groups.get("n") else settings.default_recurrence_count
        if not 1 <= count <= settings.max_horizon_days:
            return Ambiguous(f"recurrence count {count} outside 1..{settings.max_horizon_days}")
        return Recurring(_next_occurrence(ref, hm), count)

    raise AssertionError(kind)


def parse_time_phrase(
    sentence: str, reference_time: datetime, settings: TimeSettings | None = None
) -> tuple[ScheduleSpec, tuple[int, int] | None]:
    """Resolve the single time expression in ``sentence``.

    Returns the schedule and the character span of the expression (``None``
    when nothing was recognised). Two disjoint expressions are a conflict and
    resolve to ``Ambiguous``.
    """
    settings = settings or TimeSettings()
    lowered = sentence.lower()
    found = []
    for kind, pattern in _PATTERNS:
        for m in pattern.finditer(lowered):
            found.append((m.start(), m.end(), kind, m))
    if not found:
        vague = _VAGUE.search(lowered)
        if vague:
            return Ambiguous(f"underspecified time {vague.group(0)!r}"), vague.span()
        return Ambiguous("no recognisable time expression"), None
    # keep maximal spans; a shorter match inside a longer one is the same phrase
    found.sort(key=lambda f: (f[0], -(f[1] - f[0])))
    kept: list[tuple[int, int, str, re.Match[str]]] = []
    for item in found:
        if any(k[0] <= item[0] and item[1] <= k[1] for k in kept):
            continue
        kept = [k for k in kept if not (item[0] <= k[0] and k[1] <= item[1])]
        kept.append(item)
    if len(kept) > 1:
        return Ambiguous("more than one time expression"), None
    start, end, kind, m = kept[0]
    return _resolve(kind, m, reference_time, settings), (start, end)


def extract_reminder(
    text: str, reference_time: datetime, settings: TimeSettings | None = None
) -> ReminderFields | None:
    """Find a reminder instruction in ``text``; ``None`` means no reminder.

    Triggers are whole words, so "reminiscing" or "reminders" never fire.
    """
    for sentence in split_sentences(text):
        trigger = find_trigger(sentence)
        if trigger is None:
            continue
        schedule, span = parse_time_phrase(sentence, reference_time, settings)
        clause_start = trigger.start()
        clause = sentence[clause_start:]
        time_text = None
        if span is not None:
            time_text = sentence[span[0]:span[1]]
            if span[0] >= clause_start:
                a, b = span[0] - clause_start, span[1] - clause_start
                clause = clause[:a] + " " + clause[b:]
        # the time phrase may sit between the trigger and "to ..."; strip twice
        body = _LEAD_IN.sub("", clause, count=1)
        body = re.sub(r"^\s*(?:to|about|that)\b\s*", "", body)
        description = " ".join(tokenize(body)) or " ".join(tokenize(clause)) or "reminder"
        return ReminderFields(description, schedule, sentence, time_text)
    return None


def remove_sentence(text: str, sentence: str) -> str:
    """``text`` without ``sentence``; the whole text if nothing would remain."""
    parts = [s for s in split_sentences(text) if s != sentence]
    rest = " ".join(parts).strip()
    return rest or text.strip()
