"""Seeded synthetic corpus generator.

Ground truth for every item comes from the template parameters that built
it (resident, category, task phrase, the number of firings the time phrase
implies); it never goes through the parser.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timedelta

from .model import UTC, GroundTruth, Registries, Resident, Transcript, default_registries
from .text import tokenize

# One observation pool and one task pool per category. Every phrase uses at
# least one lexicon entry of its own category and none of any other.
OBSERVATIONS = {
    "activities": [
        "{name} joined the bingo session and seemed to enjoy it.",
        "{name} spent an hour on the jigsaw in the conservatory.",
        "{name} took part in the painting group and finished a picture.",
        "{name} won the quiz and was very pleased.",
    ],
    "equipment": [
        "{name} needed a new battery for the hearing aid.",
        "{name} has been using the walker without any problems.",
        "{name}'s glasses were found near the window.",
        "The hoist sling for {name} has been checked and cleaned.",
    ],
    "goals": [
        "{name} is making good progress towards the independence goal.",
        "{name} reached a small milestone with the exercise target.",
        "We reviewed the care plan with {name} today.",
    ],
    "mobility": [
        "{name} walked to the garden with one member of staff.",
        "{name} managed the stairs slowly but safely.",
        "{name} needed help standing up from the armchair.",
        "{name} did the physio exercises well today.",
    ],
    "personal_hygiene": [
        "{name} had a shower and was happy afterwards.",
        "{name} had a warm bath and a change of clothes.",
        "{name} brushed their teeth independently.",
        "Staff helped {name} wash and style the hair.",
    ],
    "medication": [
        "{name} took the morning tablets with no issues.",
        "Gave {name} the 8am tablets.",
        "{name} used the inhaler twice during the day.",
        "{name} had the eye drops as prescribed.",
        "Blood pressure for {name} was a little high today.",
    ],
    "nutrition": [
        "{name} ate all the porridge at breakfast.",
        "{name} had a small appetite at lunch today.",
        "{name} enjoyed the fish for dinner.",
    ],
    "hydration": [
        "{name} drank two full cups of juice.",
        "{name} was encouraged to drink more water.",
        "Updated the fluid chart for {name}.",
    ],
    "sleep": [
        "{name} slept well through the night.",
        "{name} had a short nap in the afternoon.",
        "{name} was restless at bedtime.",
    ],
    "social_engagement": [
        "{name} chatted with friends in the lounge.",
        "{name} had visitors from the family today.",
        "{name} enjoyed a phone call with the grandchildren.",
    ],
    "skin_care": [
        "Applied cream to {name}'s heels.",
        "{name} has a small rash on the left arm.",
        "Checked {name} for any pressure sore and the skin looked healthy.",
    ],
}

TASKS = {
    "activities": ["book a place at the crafts table for {name}", "bring the jigsaw over to {name}"],
    "equipment": ["check the call bell in {name}'s room", "clean {name}'s glasses", "test the sensor mat beside {name}"],
    "goals": ["review the care plan for {name}", "update the progress notes for {name}"],
    "mobility": ["help {name} with the physio exercises", "take {name} for a short walk"],
    "personal_hygiene": ["help {name} with a shave", "book a shower for {name}"],
    "medication": ["check blood pressure for {name}", "give {name} the next dose", "collect the new prescription for {name}"],
    "nutrition": ["offer {name} a snack", "check that {name} has had supper"],
    "hydration": ["top up {name}'s water jug", "offer {name} a drink"],
    "sleep": ["settle {name} down for a nap", "check whether {name} has slept"],
    "social_engagement": ["arrange a phone call for {name}", "invite {name}'s family over"],
    "skin_care": ["apply moisturiser for {name}", "check the bruise on {name}'s arm"],
}

TRAPS = [
    "{name} spent a while reminiscing about the old seaside holidays.",
    "{name} reminisced about working at the mill.",
    "The reminders board outside {name}'s room was tidied.",
    "{name} was a little forgetful but cheerful.",
]

UNDERSPECIFIED = ["later", "soon", "at some point", "next week", "tomorrow", "every day", "on Friday"]

WEEKDAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"]
NUMBER_WORDS = ["two", "three", "four", "five"]

# single-deletion spellings, each well clear of every other resident name
MISSPELLINGS = {
    "Margaret": "Margret",
    "Dorothy": "Dorthy",
    "Reginald": "Reginld",
    "Florence": "Florenc",
    "Clifford": "Cliford",
    "Geoffrey": "Geofrey",
    "Beatrice": "Beatrce",
    "Winifred": "Winifed",
}

KINDS = ("plain", "reminder", "reminder_trap", "ambiguous_resident", "underspecified_time")


@dataclass(frozen=True)
class TimePhrase:
    text: str
    events: int


def _time_phrase(rng: random.Random) -> TimePhrase:
    form = rng.randrange(8)
    if form == 0:
        return TimePhrase(f"at {rng.randint(1, 11)} pm", 1)
    if form == 1:
        return TimePhrase(f"at {rng.randint(6, 11)}:{rng.choice(['00', '15', '30', '45'])} am", 1)
    if form == 2:
        return TimePhrase(f"at {rng.randint(13, 22)}:{rng.choice(['00', '30'])}", 1)
    if form == 3:
        n = rng.choice([10, 15, 20, 30, 45])
        return TimePhrase(f"in {n} minutes", 1) if rng.random() < 0.6 else TimePhrase(f"in {rng.randint(1, 4)} hours", 1)
    if form == 4:
        return TimePhrase(rng.choice(["tomorrow at 9 am", "tomorrow morning", "tomorrow at 3 pm", "tomorrow evening"]), 1)
    if form == 5:
        return TimePhrase(f"on {rng.choice(WEEKDAYS)} at {rng.randint(1, 5)} pm", 1)
    if form == 6:
        n = rng.randint(2, 5)
        part = rng.choice(["morning", "afternoon", "evening", "night"])
        count = rng.choice([str(n), NUMBER_WORDS[n - 2]])
        lead = rng.choice(["for the next", "for"])
        return TimePhrase(f"every {part} {lead} {count} days", n)
    n = rng.randint(2, 7)
    return TimePhrase(f"every day at {rng.randint(7, 10)} am for {n} days", n)


def _sentence(template: str, name: str) -> str:
    if template.startswith("{name}") and name[0].islower():
        name = name[0].upper() + name[1:]
    return template.format(name=name)


def _reminder_sentence(rng: random.Random, task: str, time_text: str) -> str:
    form = rng.randrange(4)
    if form == 0:
        return f"Remind me to {task} {time_text}."
    if form == 1:
        return f"Remind me {time_text} to {task}."
    if form == 2:
        return f"Don't forget to {task} {time_text}."
    return f"Set a reminder to {task} {time_text}."


def _mention(resident: Resident, registries: Registries, rng: random.Random, allow_typo: bool) -> str:
    first = resident.aliases[0] if resident.aliases else resident.full_name
    shared = any(first in other.aliases for other in registries.residents if other.id != resident.id)
    if shared:
        return resident.full_name
    if allow_typo and first in MISSPELLINGS and rng.random() < 0.25:
        return MISSPELLINGS[first]
    return resident.full_name if rng.random() < 0.2 else first


def _plan(size: int, reminder_fraction: float, adversarial_fraction: float) -> list[str]:
    n_adv = min(size, round(size * adversarial_fraction))
    n_rem = min(size, round(size * reminder_fraction))
    under = min(n_adv // 3, n_rem)
    amb = n_adv // 3
    trap = n_adv - under - amb
    regular = max(0, min(n_rem - under, size - n_adv))
    plain = size - n_adv - regular
    return (
        ["reminder"] * regular + ["plain"] * plain + ["reminder_trap"] * trap
        + ["ambiguous_resident"] * amb + ["underspecified_time"] * under
    )


def generate_corpus(
    seed: int,
    size: int = 330,
    reminder_fraction: float = 184 / 330,
    adversarial_fraction: float = 0.1,
    registries: Registries | None = None,
    start: datetime = datetime(2025, 3, 1, 7, 0, tzinfo=UTC),
) -> list[Transcript]:
    """Deterministic corpus: categories rotate, three residents per category."""
    if size < 1:
        raise ValueError("size must be at least 1")
    if not (0 <= reminder_fraction <= 1 and 0 <= adversarial_fraction <= 1):
        raise ValueError("fractions must lie in [0, 1]")
    registries = registries or default_registries()
    rng = random.Random(seed)
    kinds = _plan(size, reminder_fraction, adversarial_fraction)
    rng.shuffle(kinds)

    categories = [c for c in registries.categories if c.id in OBSERVATIONS]
    residents = list(registries.residents)
    per_category = {c.id: residents[3 * i:3 * i + 3] or residents[:3] for i, c in enumerate(categories)}

    out: list[Transcript] = []
    when = start
    for i, kind in enumerate(kinds):
        cat = categories[i % len(categories)]
        group = per_category[cat.id]
        resident = group[(i // len(categories)) % len(group)]
        when = when + timedelta(minutes=rng.randint(50, 130))
        obs = rng.choice(OBSERVATIONS[cat.id])
        tags: tuple[str, ...] = ()
        rem_desc = None
        count = None
        is_reminder = False

        if kind in ("plain", "reminder"):
            name = _mention(resident, registries, rng, allow_typo=True)
            obs_text = _sentence(obs, name)
            if kind == "plain":
                text, note = obs_text, obs_text
            else:
                is_reminder = True
                phrase = _time_phrase(rng)
                task_name = _mention(resident, registries, rng, allow_typo=False)
                task = rng.choice(TASKS[cat.id]).format(name=task_name)
                rem = _reminder_sentence(rng, task, phrase.text)
                rem_desc = " ".join(tokenize(task))
                count = phrase.events
                if rng.random() < 0.7:
                    text, note = f"{obs_text} {rem}", obs_text
                else:
                    text = note = rem
        elif kind == "reminder_trap":
            tags = ("reminder_trap",)
            name = _mention(resident, registries, rng, allow_typo=False)
            obs_text = _sentence(obs, name)
            trap = _sentence(rng.choice(TRAPS), name)
            text = f"{trap} {obs_text}" if rng.random() < 0.5 else f"{obs_text} {trap}"
            note = text
        elif kind == "ambiguous_resident":
            tags = ("ambiguous_resident",)
            first = resident.aliases[0] if resident.aliases else resident.full_name
            if any(first in o.aliases for o in residents if o.id != resident.id):
                name = first
            elif i % 2:
                other = group[(group.index(resident) + 1) % len(group)]
                name = f"{first} and {other.aliases[0] if other.aliases else other.full_name}"
            else:
                name = "the new resident"
            text = note = _sentence(obs, name)
        else:
            tags = ("underspecified_time",)
            is_reminder = True
            name = _mention(resident, registries, rng, allow_typo=False)
            obs_text = _sentence(obs, name)
            task = rng.choice(TASKS[cat.id]).format(name=name)
            rem = f"Remind me to {task} {rng.choice(UNDERSPECIFIED)}."
            rem_desc = " ".join(tokenize(task))
            text, note = f"{obs_text} {rem}", obs_text

        truth = GroundTruth(
            resident_id=resident.id,
            category_id=cat.id,
            note=note,
            reminder=is_reminder,
            reminder_description=rem_desc,
            expected_event_count=count,
        )
        out.append(Transcript(f"T{i + 1:04d}", text, when, truth, tags))
    return out
