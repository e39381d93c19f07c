"""Pairwise phonological features over OCR token sets.

Every token is analysed once (valid-syllable flag, tone, tone-stripped base,
onset/medial/nucleus/coda, rhyme, tone class) and cached, then each ordered
pair is mapped to an 8-bit vector of equality flags:

====  =============================================
p1    onset match
p2    nucleus match
p3    coda match
p4    rhyme match (medial + nucleus + coda)
p5    tone match
p6    tone-class match (bằng/trắc)
p7    base-form match (tone stripped, quality marks kept)
p8    both tokens are valid Vietnamese syllables
====  =============================================

p8 gates the rest: when either token is not Vietnamese, all eight flags are
zero. Because every flag is an equality predicate the tensor is symmetric
with an all-ones diagonal on Vietnamese tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .orthography import (
    MultipleToneMarks,
    Tone,
    ToneClass,
    extract_tone,
    normalize,
    strip_tone,
    tone_class,
)
from .syllable import NotASyllable, Syllable, SyllableInventory, decompose, default_inventory, is_vietnamese, validate

__all__ = ["TokenAnalysis", "PhonoPairFeatures", "PhonoTensor", "analyze_token", "extract_pair", "build_tensor"]

FEATURE_NAMES = (
    "onset_match",
    "nucleus_match",
    "coda_match",
    "rhyme_match",
    "tone_match",
    "tone_class_match",
    "base_form_match",
    "both_vietnamese",
)


@dataclass(frozen=True)
class TokenAnalysis:
    """Single-token analysis record; syllable fields are unset when the
    token is not a valid Vietnamese syllable."""

    token: str
    vietnamese: bool
    tone: Tone | None = None
    tone_class: ToneClass | None = None
    base: str | None = None          # tone-stripped, quality marks kept
    syllable: Syllable | None = None

    @property
    def rhyme(self) -> str | None:
        return None if self.syllable is None else self.syllable.rhyme


@lru_cache(maxsize=65536)
def _analyze_cached(token: str) -> TokenAnalysis:
    if not is_vietnamese(token):
        return TokenAnalysis(token=token, vietnamese=False)
    folded = normalize(token.casefold())
    tone, _ = extract_tone(folded)
    base = strip_tone(folded)
    syl = decompose(base)
    return TokenAnalysis(
        token=token,
        vietnamese=True,
        tone=tone,
        tone_class=tone_class(tone),
        base=base,
        syllable=Syllable(syl.onset, syl.medial, syl.nucleus, syl.coda, tone),
    )


def analyze_token(token: str, inventory: SyllableInventory | None = None) -> TokenAnalysis:
    """Analyse one token. Results for the default inventory are cached per
    unique string; a custom inventory bypasses the cache."""
    if inventory is None:
        return _analyze_cached(token)
    if not is_vietnamese(token, inventory):
        return TokenAnalysis(token=token, vietnamese=False)
    folded = normalize(token.casefold())
    tone, _ = extract_tone(folded)
    base = strip_tone(folded)
    syl = decompose(base, inventory)
    return TokenAnalysis(
        token=token,
        vietnamese=True,
        tone=tone,
        tone_class=tone_class(tone),
        base=base,
        syllable=Syllable(syl.onset, syl.medial, syl.nucleus, syl.coda, tone),
    )


@dataclass(frozen=True)
class PhonoPairFeatures:
    onset_match: int
    nucleus_match: int
    coda_match: int
    rhyme_match: int
    tone_match: int
    tone_class_match: int
    base_form_match: int
    both_vietnamese: int

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.onset_match,
            self.nucleus_match,
            self.coda_match,
            self.rhyme_match,
            self.tone_match,
            self.tone_class_match,
            self.base_form_match,
            self.both_vietnamese,
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.uint8)


_ZERO = PhonoPairFeatures(0, 0, 0, 0, 0, 0, 0, 0)


def extract_pair(a: str, b: str, inventory: SyllableInventory | None = None) -> PhonoPairFeatures:
    """The 8 pairwise equality flags for a token pair."""
    ai = analyze_token(a, inventory)
    bi = analyze_token(b, inventory)
    if not (ai.vietnamese and bi.vietnamese):
        return _ZERO
    sa, sb = ai.syllable, bi.syllable
    return PhonoPairFeatures(
        onset_match=int(sa.onset == sb.onset),
        nucleus_match=int(sa.nucleus == sb.nucleus),
        coda_match=int(sa.coda == sb.coda),
        rhyme_match=int(sa.rhyme == sb.rhyme),
        tone_match=int(ai.tone is bi.tone),
        tone_class_match=int(ai.tone_class is bi.tone_class),
        base_form_match=int(ai.base == bi.base),
        both_vietnamese=1,
    )


@dataclass(frozen=True)
class PhonoTensor:
    """N×N×8 pairwise feature tensor; computed once, reused across layers."""

    tokens: tuple[str, ...]
    array: np.ndarray  # (N, N, 8) uint8

    @property
    def token_count(self) -> int:
        return len(self.tokens)

    def pair(self, i: int, j: int) -> PhonoPairFeatures:
        return PhonoPairFeatures(*(int(v) for v in self.array[i, j]))


def build_tensor(tokens, inventory: SyllableInventory | None = None) -> PhonoTensor:
    """Pairwise features for a whole token sequence.

    Per-token analysis is shared across all pairs, so cost is linear in
    unique tokens plus a cheap quadratic flag comparison.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise ValueError("token sequence must be non-empty")
    n = len(tokens)
    arr = np.zeros((n, n, 8), dtype=np.uint8)
    infos = [analyze_token(t, inventory) for t in tokens]
    for i in range(n):
        if not infos[i].vietnamese:
            continue
        for j in range(i, n):
            if not infos[j].vietnamese:
                continue
            sa, sb = infos[i].syllable, infos[j].syllable
            row = (
                sa.onset == sb.onset,
                sa.nucleus == sb.nucleus,
                sa.coda == sb.coda,
                sa.rhyme == sb.rhyme,
                infos[i].tone is infos[j].tone,
                infos[i].tone_class is infos[j].tone_class,
                infos[i].base == infos[j].base,
                True,
            )
            arr[i, j] = row
            arr[j, i] = row
    arr.setflags(write=False)
    return PhonoTensor(tokens=tokens, array=arr)
