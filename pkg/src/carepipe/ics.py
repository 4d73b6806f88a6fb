"""RFC 5545 export of scheduled events, plus a reader for round-trip checks."""

from __future__ import annotations

from collections.abc import Iterable
from datetime import datetime

from .model import UTC, EventStatus, ScheduledEvent

PRODID = "-//carepipe//care reminders//EN"
CRLF = "\r\n"


def ics_datetime(dt: datetime) -> str:
    return dt.astimezone(UTC).strftime("%Y%m%dT%H%M%SZ")


def escape_text(value: str) -> str:
    return (
        value.replace("\\", "\\\\")
        .replace(";", "\\;")
        .replace(",", "\\,")
        .replace("\r\n", "\\n")
        .replace("\n", "\\n")
    )


def unescape_text(value: str) -> str:
    out, i = [], 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append("\n" if nxt in "nN" else nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def fold(line: str, limit: int = 75) -> str:
    """Fold a content line at ``limit`` octets without splitting a UTF-8 character."""
    raw = line.encode("utf-8")
    if len(raw) <= limit:
        return line
    pieces, current, size = [], [], 0
    budget = limit
    for ch in line:
        width = len(ch.encode("utf-8"))
        if size + width > budget:
            pieces.append("".join(current))
            current, size = [], 0
            budget = limit - 1  # continuation lines start with a space
        current.append(ch)
        size += width
    pieces.append("".join(current))
    return (CRLF + " ").join(pieces)


def export_ics(events: Iterable[ScheduledEvent], prodid: str = PRODID) -> str:
    lines = ["BEGIN:VCALENDAR", "VERSION:2.0", f"PRODID:{prodid}", "CALSCALE:GREGORIAN"]
    for ev in events:
        stamp = ev.created_at or ev.fire_at
        lines += [
            "BEGIN:VEVENT",
            f"UID:{ev.event_id}",
            f"DTSTAMP:{ics_datetime(stamp)}",
            f"DTSTART:{ics_datetime(ev.fire_at)}",
            f"SUMMARY:{escape_text(ev.summary)}",
        ]
        if ev.status is EventStatus.CANCELLED:
            lines.append("STATUS:CANCELLED")
        lines.append("END:VEVENT")
    lines.append("END:VCALENDAR")
    return "".join(fold(line) + CRLF for line in lines)


def read_ics(text: str) -> list[dict[str, str]]:
    """Unfold and split ``text``; one ``{property: value}`` dict per VEVENT.

    TEXT values are unescaped. Parameters (``;TZID=...``) are dropped.
    """
    unfolded = text.replace(CRLF + " ", "").replace(CRLF + "\t", "")
    events: list[dict[str, str]] = []
    current: dict[str, str] | None = None
    for line in unfolded.split(CRLF):
        if not line:
            continue
        name, _, value = line.partition(":")
        name = name.split(";", 1)[0].upper()
        if name == "BEGIN" and value == "VEVENT":
            current = {}
        elif name == "END" and value == "VEVENT":
            events.append(current or {})
            current = None
        elif current is not None:
            current[name] = unescape_text(value) if name in ("SUMMARY", "DESCRIPTION") else value
    return events
