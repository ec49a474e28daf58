"""Shot taxonomy, template captions and keyword prompt parsing."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from .errors import AmbiguousPrompt, DomainError

MOTIONS = (
    "boom_up", "boom_down", "rotate", "truck_left", "truck_right", "push_in", "pull_out",
    "zoom_in", "zoom_out", "dolly_zoom_in", "dolly_zoom_out", "pan", "tilt", "static",
)
SCALES = ("extreme_close", "close", "medium_close_up", "medium", "long", "extreme_long")
DIRECTIONS = ("front", "back", "left", "right", "left_front", "right_front", "left_back", "right_back")
ANGLES = ("high", "eye_level", "low")
SCREENS = (
    "up_left", "up_center", "up_right",
    "middle_left", "middle_center", "middle_right",
    "bottom_left", "bottom_center", "bottom_right",
)

VOCAB: dict[str, tuple[str, ...]] = {
    "motion": MOTIONS,
    "scale": SCALES,
    "direction": DIRECTIONS,
    "angle": ANGLES,
    "screen": SCREENS,
}
DIMENSIONS = tuple(VOCAB)

# flat index over every taxonomy value, dimension-major
TAG_INDEX: dict[tuple[str, str], int] = {}
for _dim, _values in VOCAB.items():
    for _v in _values:
        TAG_INDEX[(_dim, _v)] = len(TAG_INDEX)
N_TAG_VALUES = len(TAG_INDEX)

LEXICON_VERSION = 1


@dataclass(frozen=True)
class ShotTags:
    """One value per taxonomy dimension; ``None`` marks an unspecified dimension."""

    motion: str | None = None
    scale: str | None = None
    direction: str | None = None
    angle: str | None = None
    screen: str | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and v not in VOCAB[f.name]:
                raise DomainError(f"illegal {f.name} value {v!r}")

    @property
    def is_complete(self) -> bool:
        return all(getattr(self, d) is not None for d in DIMENSIONS)

    @property
    def specified(self) -> dict[str, str]:
        return {d: getattr(self, d) for d in DIMENSIONS if getattr(self, d) is not None}

    def to_dict(self) -> dict[str, str | None]:
        return {d: getattr(self, d) for d in DIMENSIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "ShotTags":
        return cls(**{k: d.get(k) for k in DIMENSIONS})

    def matches(self, other: "ShotTags") -> int:
        """Number of dimensions specified here that ``other`` reproduces."""
        return sum(getattr(other, d) == v for d, v in self.specified.items())


def sample_tags(rng: np.random.Generator, weights: dict[str, list[float]] | None = None) -> ShotTags:
    values = {}
    for dim, vocab in VOCAB.items():
        w = None
        if weights and dim in weights:
            w = np.asarray(weights[dim], dtype=float)
            w = w / w.sum()
        values[dim] = vocab[int(rng.choice(len(vocab), p=w))]
    return ShotTags(**values)


# ---------------------------------------------------------------------------
# lexicon
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LexiconEntry:
    dimension: str
    value: str
    phrase: str
    alternates: tuple[str, ...]

    @property
    def phrases(self) -> tuple[str, ...]:
        return (self.phrase,) + self.alternates


@functools.lru_cache(maxsize=1)
def load_lexicon() -> tuple[LexiconEntry, ...]:
    text = resources.files("shotpref.resources").joinpath(f"lexicon_v{LEXICON_VERSION}.txt").read_text()
    entries = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        dim, value, phrase, alts = (p.strip() for p in line.split("|"))
        alternates = tuple(a.strip() for a in alts.split(",") if a.strip())
        entries.append(LexiconEntry(dim, value, phrase, alternates))
    return tuple(entries)


def canonical_phrase(dimension: str, value: str) -> str:
    for e in load_lexicon():
        if e.dimension == dimension and e.value == value:
            return e.phrase
    raise KeyError((dimension, value))


@functools.lru_cache(maxsize=1)
def _patterns() -> tuple[tuple[str, str, str, re.Pattern], ...]:
    out = []
    for e in load_lexicon():
        for p in e.phrases:
            pat = re.compile(r"(?<![a-z0-9])" + re.escape(p.lower()) + r"(?![a-z0-9])")
            out.append((e.dimension, e.value, p.lower(), pat))
    return tuple(out)


def lexicon_matches(text: str) -> dict[str, list[tuple[str, str]]]:
    """All (value, phrase) hits per dimension in lower-cased ``text``."""
    low = text.lower()
    hits: dict[str, list[tuple[str, str]]] = {}
    for dim, value, phrase, pat in _patterns():
        if pat.search(low):
            hits.setdefault(dim, []).append((value, phrase))
    return hits


def parse_tags_from_prompt(text: str) -> ShotTags:
    """Keyword-lexicon parse; the longest phrase wins, unrelated double hits are ambiguous."""
    result = {}
    for dim, hits in lexicon_matches(text).items():
        kept = [
            (v, p) for v, p in hits
            if not any(p != q and p in q and v != w for w, q in hits)
        ]
        values = {v for v, _ in kept}
        if len(values) > 1:
            raise AmbiguousPrompt(f"{dim} matched {sorted(values)}")
        result[dim] = values.pop()
    return ShotTags(**result)


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------

_MOTION_TEMPLATES = ("The camera {p}", "Slowly, the camera {p}", "In this shot the camera {p}")
_SCALE_TEMPLATES = ("framing {a} {p}", "holding {a} {p}", "composed as {a} {p}")
_DIRECTION_TEMPLATES = ("{p}", "seen {p}", "captured {p}")
_ANGLE_TEMPLATES = ("at {a} {p} view", "using {a} {p} perspective", "with {a} {p} camera position")
_SCREEN_TEMPLATES = (
    "with the subject in the {p} of the frame",
    "keeping the subject at the {p} of the screen",
    "placing the subject {p} on screen",
)
_TEMPLATES = {
    "motion": _MOTION_TEMPLATES,
    "scale": _SCALE_TEMPLATES,
    "direction": _DIRECTION_TEMPLATES,
    "angle": _ANGLE_TEMPLATES,
    "screen": _SCREEN_TEMPLATES,
}


def _article(word: str) -> str:
    return "an" if word[:1] in "aeiou" else "a"


def caption_from_tags(tags: ShotTags, rng_seed: int = 0) -> str:
    """English caption with one canonical lexicon phrase per specified dimension."""
    rng = np.random.default_rng(rng_seed)
    picks = {d: int(rng.integers(len(_TEMPLATES[d]))) for d in DIMENSIONS}
    clauses = []
    for dim in DIMENSIONS:
        value = getattr(tags, dim)
        if value is None:
            continue
        phrase = canonical_phrase(dim, value)
        clauses.append(_TEMPLATES[dim][picks[dim]].format(p=phrase, a=_article(phrase)))
    if not clauses:
        return "An unspecified camera shot."
    if tags.motion is None:
        clauses[0] = "The shot is " + clauses[0]
    text = ", ".join(clauses)
    return text[0].upper() + text[1:] + "."
