"""Rule-based Vietnamese syllable parser.

A toneless syllable follows the onset–medial–nucleus–coda template. The
component inventories (26 onsets, 2 medials, 23 nuclei, 12 codas) and the
named phonotactic constraint rules live in a bundled JSON data file so they
can be corrected or overridden without code changes; the counts are asserted
at load time.

``decompose`` parses greedily, longest onset first, backtracking across all
structural splits until one satisfies every constraint rule (this resolves
the gi/g+i ambiguity in favour of the parse with a valid nucleus). If only
rule-violating splits exist, the first structural split is returned so that
``validate`` can name the violated rules; ``is_vietnamese`` folds the whole
pipeline into a total predicate.
"""

from __future__ import annotations

import json
import string
import unicodedata
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from itertools import product
from pathlib import Path

from .orthography import MultipleToneMarks, Tone, extract_tone, normalize

__all__ = [
    "Syllable",
    "SyllableInventory",
    "ConstraintRule",
    "NotASyllable",
    "load_inventory",
    "default_inventory",
    "decompose",
    "validate",
    "is_vietnamese",
    "enumerate_valid_syllables",
]

EXPECTED_COUNTS = {"onsets": 26, "medials": 2, "nuclei": 23, "codas": 12}
MIN_RULES = 35

_TONE_KEYS = {
    "ngang": Tone.NGANG,
    "huyen": Tone.HUYEN,
    "sac": Tone.SAC,
    "hoi": Tone.HOI,
    "nga": Tone.NGA,
    "nang": Tone.NANG,
}


class NotASyllable(ValueError):
    """No structural parse of the input against the inventory exists."""


@dataclass(frozen=True)
class Syllable:
    """Decomposed syllable; empty slots are empty strings, tone may be unset."""

    onset: str
    medial: str
    nucleus: str
    coda: str
    tone: Tone | None = None

    @property
    def rhyme(self) -> str:
        return self.medial + self.nucleus + self.coda

    @property
    def toneless(self) -> str:
        return self.onset + self.medial + self.nucleus + self.coda

    def _slot(self, name: str) -> str | None:
        if name == "tone":
            return None if self.tone is None else self.tone.name.lower()
        return getattr(self, name)


@dataclass(frozen=True)
class ConstraintRule:
    """One named phonotactic constraint.

    ``forbid`` rules are violated when every listed slot value matches;
    ``when``/``require`` rules are violated when the when-clause matches and
    a required slot does not. Conditions on the tone are skipped while the
    tone is unknown.
    """

    name: str
    description: str
    when: dict[str, frozenset[str]]
    require: dict[str, frozenset[str]]
    forbid: dict[str, frozenset[str]]

    def violated_by(self, syllable: Syllable) -> bool:
        def matches(conditions: dict[str, frozenset[str]]) -> bool | None:
            for slot, allowed in conditions.items():
                value = syllable._slot(slot)
                if value is None:
                    return None  # tone unknown: not evaluable
                if value not in allowed:
                    return False
            return True

        if self.forbid:
            return matches(self.forbid) is True
        hit = matches(self.when)
        if hit is not True:
            return False
        return matches(self.require) is False


@dataclass(frozen=True)
class SyllableInventory:
    onsets: frozenset[str]
    medials: frozenset[str]
    nuclei: frozenset[str]
    codas: frozenset[str]
    rules: tuple[ConstraintRule, ...]

    def __post_init__(self) -> None:
        counts = {
            "onsets": len(self.onsets),
            "medials": len(self.medials),
            "nuclei": len(self.nuclei),
            "codas": len(self.codas),
        }
        if counts != EXPECTED_COUNTS:
            raise ValueError(f"inventory counts {counts} != {EXPECTED_COUNTS}")
        if len(self.rules) < MIN_RULES:
            raise ValueError(f"{len(self.rules)} rules < required {MIN_RULES}")
        # precomputed longest-first candidate orders, empty slot last
        object.__setattr__(self, "_onset_order", _ordered(self.onsets))
        object.__setattr__(self, "_medial_order", ("o", "u", ""))
        object.__setattr__(self, "_nucleus_order", _ordered(self.nuclei, empty=False))
        object.__setattr__(self, "_coda_order", _ordered(self.codas))

    def violations(self, syllable: Syllable) -> list[str]:
        return [rule.name for rule in self.rules if rule.violated_by(syllable)]


def _ordered(values: frozenset[str], empty: bool = True) -> tuple[str, ...]:
    ranked = sorted(values, key=lambda v: (-len(v), v))
    return tuple(ranked + [""]) if empty else tuple(ranked)


def _parse_rule(raw: dict) -> ConstraintRule:
    def freeze(block: dict | None) -> dict[str, frozenset[str]]:
        if not block:
            return {}
        return {slot: frozenset(values) for slot, values in block.items()}

    for block in ("when", "require", "forbid"):
        for tone_key in (raw.get(block) or {}).get("tone", []):
            if tone_key not in _TONE_KEYS:
                raise ValueError(f"unknown tone key {tone_key!r} in rule {raw.get('name')}")
    return ConstraintRule(
        name=raw["name"],
        description=raw.get("description", ""),
        when=freeze(raw.get("when")),
        require=freeze(raw.get("require")),
        forbid=freeze(raw.get("forbid")),
    )


def load_inventory(path: str | Path | None = None) -> SyllableInventory:
    """Load an inventory file; defaults to the bundled one."""
    if path is None:
        data = resources.files("phonotext.data").joinpath("syllable_inventory.json").read_text("utf-8")
    else:
        data = Path(path).read_text("utf-8")
    raw = json.loads(data)
    return SyllableInventory(
        onsets=frozenset(unicodedata.normalize("NFC", o) for o in raw["onsets"]),
        medials=frozenset(unicodedata.normalize("NFC", m) for m in raw["medials"]),
        nuclei=frozenset(unicodedata.normalize("NFC", n) for n in raw["nuclei"]),
        codas=frozenset(unicodedata.normalize("NFC", c) for c in raw["codas"]),
        rules=tuple(_parse_rule(r) for r in raw["rules"]),
    )


@lru_cache(maxsize=1)
def default_inventory() -> SyllableInventory:
    return load_inventory()


def _structural_parses(text: str, inv: SyllableInventory):
    for onset in inv._onset_order:
        if not text.startswith(onset):
            continue
        after_onset = text[len(onset):]
        for medial in inv._medial_order:
            if not after_onset.startswith(medial):
                continue
            after_medial = after_onset[len(medial):]
            for nucleus in inv._nucleus_order:
                if not after_medial.startswith(nucleus):
                    continue
                coda = after_medial[len(nucleus):]
                if coda == "" or coda in inv.codas:
                    yield Syllable(onset, medial, nucleus, coda)


def decompose(toneless: str, inventory: SyllableInventory | None = None) -> Syllable:
    """Parse a toneless, lowercase syllable into its components.

    Raises :class:`NotASyllable` when no structural parse exists. When
    structural parses exist but all violate some constraint, the first one
    is returned so callers can inspect the violations via :func:`validate`.
    """
    inv = inventory or default_inventory()
    text = unicodedata.normalize("NFC", toneless)
    fallback: Syllable | None = None
    for candidate in _structural_parses(text, inv):
        if not inv.violations(candidate):
            return candidate
        if fallback is None:
            fallback = candidate
    if fallback is not None:
        return fallback
    raise NotASyllable(f"{toneless!r} does not match the syllable template")


def validate(syllable: Syllable, inventory: SyllableInventory | None = None) -> list[str]:
    """Names of all constraint rules the syllable violates (empty = valid)."""
    inv = inventory or default_inventory()
    names = inv.violations(syllable)
    for slot, member, pool in (
        ("onset", syllable.onset, inv.onsets),
        ("medial", syllable.medial, inv.medials),
        ("nucleus", syllable.nucleus, inv.nuclei),
        ("coda", syllable.coda, inv.codas),
    ):
        if member and member not in pool:
            names.append(f"{slot}-not-in-inventory")
    if not syllable.nucleus:
        names.append("nucleus-required")
    return names


_LATIN_BASES = frozenset(string.ascii_lowercase) | {"đ"}


def is_vietnamese(token: str, inventory: SyllableInventory | None = None) -> bool:
    """Total predicate: true iff the token is a well-formed Vietnamese
    syllable under the inventory and every constraint rule. Case-insensitive;
    digits, punctuation, and non-Latin letters are rejected outright.
    """
    inv = inventory or default_inventory()
    if not token:
        return False
    folded = normalize(token.casefold())
    for ch in folded:
        if unicodedata.combining(ch):
            continue
        if ch not in _LATIN_BASES:
            return False
    try:
        tone, toneless = extract_tone(folded)
    except MultipleToneMarks:
        return False
    try:
        parsed = decompose(unicodedata.normalize("NFC", toneless), inv)
    except NotASyllable:
        return False
    return not validate(replace(parsed, tone=tone), inv)


def enumerate_valid_syllables(inventory: SyllableInventory | None = None) -> frozenset[str]:
    """Brute-force oracle: the full onset×medial×nucleus×coda product
    filtered by the toneless constraint rules, as NFC strings.
    """
    inv = inventory or default_inventory()
    valid: set[str] = set()
    onsets = sorted(inv.onsets) + [""]
    medials = sorted(inv.medials) + [""]
    nuclei = sorted(inv.nuclei)
    codas = sorted(inv.codas) + [""]
    for onset, medial, nucleus, coda in product(onsets, medials, nuclei, codas):
        candidate = Syllable(onset, medial, nucleus, coda)
        if not inv.violations(candidate):
            valid.add(candidate.toneless)
    return frozenset(valid)
