"""Dataset-level linguistic diagnostics.

Covers the vocabulary collision analysis (base-form groups, rate, danger
ranking), instance-level caption-OCR diacritic divergence stratified by OCR
confidence, the five-type OCR error taxonomy with confusion matrices, the
four-way text-usage taxonomy, per-caption OCR coverage, and copy/generate
classification of caption tokens.

Two base forms are in play and must not be conflated: collision grouping
and divergence matching strip everything (tone + quality marks, đ→d), while
the error taxonomy additionally inspects the tone-stripped skeleton where
quality marks survive.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset_io import ImageRecord
from .metrics import syllable_tokenize
from .orthography import (
    MultipleToneMarks,
    QUALITY_MARKS,
    TONE_MARKS,
    Tone,
    extract_tone,
    normalize,
    strip_diacritics,
    strip_tone,
)
from .syllable import is_vietnamese

__all__ = [
    "EmptyVocabulary",
    "NotComparable",
    "NoValidOcrTokens",
    "CollisionGroup",
    "collision_rate",
    "DivergenceRecord",
    "StratumStats",
    "DivergenceTable",
    "divergence_analysis",
    "ErrorLabel",
    "classify_error",
    "ConfusionMatrices",
    "confusion_matrices",
    "UsageLabel",
    "usage_taxonomy",
    "coverage_rate",
    "copy_classification",
    "load_stopwords",
    "default_stopwords",
    "token_match_kinds",
]

ERROR_TYPES = ("T1", "T2", "T3", "T4", "T5")
TONE_ORDER = (Tone.NGANG, Tone.HUYEN, Tone.SAC, Tone.HOI, Tone.NGA, Tone.NANG)
VOWEL_FAMILIES = ({"a", "â", "ă"}, {"o", "ô", "ơ"}, {"u", "ư"}, {"e", "ê"})
_FAMILY_OF = {ch: fam for fam in VOWEL_FAMILIES for ch in fam}
VOWEL_ORDER = ("a", "â", "ă", "e", "ê", "o", "ô", "ơ", "u", "ư")
USAGE_CATEGORIES = ("verbatim-heavy", "paraphrase-heavy", "partial-reference", "contextual-inference")

MIN_TOKEN_LENGTH = 2


class EmptyVocabulary(ValueError):
    pass


class NotComparable(ValueError):
    """Token pair unrelated under the five diacritic transformations."""


class NoValidOcrTokens(ValueError):
    pass


def _canon(token: str) -> str:
    return unicodedata.normalize("NFC", normalize(token.casefold()))


def _full_base(token: str) -> str:
    return strip_diacritics(_canon(token))


# ---------------------------------------------------------------------------
# collision analysis

@dataclass(frozen=True)
class CollisionGroup:
    base: str
    members: tuple[str, ...]
    total_frequency: int
    danger_score: int

    @property
    def size(self) -> int:
        return len(self.members)


def collision_rate(vocabulary) -> tuple[float, list[CollisionGroup]]:
    """Fraction of Vietnamese vocabulary words whose full-strip base form is
    shared with at least one other word, plus the groups ranked by danger
    score (group size x total member frequency)."""
    vn_words = {w: int(f) for w, f in vocabulary.items() if is_vietnamese(w)}
    if not vn_words:
        raise EmptyVocabulary("no Vietnamese words in the vocabulary")
    by_base: dict[str, list[str]] = {}
    for word in vn_words:
        by_base.setdefault(_full_base(word), []).append(word)
    groups = []
    in_collision = 0
    for base, members in by_base.items():
        if len(members) < 2:
            continue
        in_collision += len(members)
        total = sum(vn_words[m] for m in members)
        groups.append(
            CollisionGroup(
                base=base,
                members=tuple(sorted(members)),
                total_frequency=total,
                danger_score=len(members) * total,
            )
        )
    groups.sort(key=lambda g: (-g.danger_score, g.base))
    return in_collision / len(vn_words), groups


# ---------------------------------------------------------------------------
# caption-OCR diacritic divergence

@dataclass(frozen=True)
class DivergenceRecord:
    image_id: str
    caption_token: str
    ocr_token: str
    ocr_confidence: float
    agrees: bool


@dataclass
class StratumStats:
    matches: int = 0
    divergences: int = 0

    @property
    def rate(self) -> float:
        return self.divergences / self.matches if self.matches else 0.0


@dataclass
class DivergenceTable:
    strata: dict[str, StratumStats]
    overall: StratumStats
    records: list[DivergenceRecord]


STRATA = ("low", "medium", "high")


def _stratum(confidence: float) -> str:
    if confidence < 0.5:
        return "low"
    if confidence < 0.8:
        return "medium"
    return "high"


def divergence_analysis(records) -> DivergenceTable:
    """Match caption tokens to OCR tokens of the same image by full-strip
    base form; every matched pair counts once in the OCR token's confidence
    stratum, and diverges when the normalized surface forms differ."""
    strata = {name: StratumStats() for name in STRATA}
    overall = StratumStats()
    out: list[DivergenceRecord] = []
    for record in records:
        ocr = [(t, _canon(t.text), _full_base(t.text)) for t in record.ocr_tokens]
        for caption in record.captions:
            for cap_token in syllable_tokenize(caption.caption):
                cap_base = _full_base(cap_token)
                if not cap_base:
                    continue
                cap_norm = _canon(cap_token)
                for ocr_token, ocr_norm, ocr_base in ocr:
                    if ocr_base != cap_base:
                        continue
                    agrees = cap_norm == ocr_norm
                    stats = strata[_stratum(ocr_token.confidence)]
                    stats.matches += 1
                    overall.matches += 1
                    if not agrees:
                        stats.divergences += 1
                        overall.divergences += 1
                    out.append(
                        DivergenceRecord(
                            image_id=record.image_id,
                            caption_token=cap_token,
                            ocr_token=ocr_token.text,
                            ocr_confidence=ocr_token.confidence,
                            agrees=agrees,
                        )
                    )
    return DivergenceTable(strata=strata, overall=overall, records=out)


# ---------------------------------------------------------------------------
# OCR error taxonomy

@dataclass(frozen=True)
class ErrorLabel:
    types: frozenset[str]
    compound: bool

    def __contains__(self, item: str) -> bool:
        return item in self.types


def _tone_bearing_quality(token_norm: str) -> bool:
    """True when the vowel carrying the tone mark also carries a quality
    mark (the composed glyph then moves within the extended vowel alphabet
    when the tone changes, e.g. ễ→ê)."""
    groups: list[list] = []
    for ch in normalize(token_norm):
        if unicodedata.combining(ch) and groups:
            groups[-1][1].append(ch)
        else:
            groups.append([ch, []])
    for _, marks in groups:
        if any(m in TONE_MARKS for m in marks):
            return any(m in QUALITY_MARKS for m in marks)
    return False


def classify_error(reference: str, ocr: str) -> ErrorLabel:
    """Classify one divergent reference/OCR token pair into the five-type
    taxonomy: T1 tone drop, T2 tone substitution, T3 vowel-variant
    confusion, T4 đ/d confusion, T5 tone insertion; compound when several
    co-occur. A tone change realized on a quality-marked vowel counts as
    touching the vowel-variant axis as well (ễ→ê), so e.g. a tilde dropped
    from ễ labels both T1 and T3."""
    ref_norm, ocr_norm = _canon(reference), _canon(ocr)
    if ref_norm == ocr_norm:
        raise NotComparable("tokens are identical after normalization")
    if _full_base(ref_norm) != _full_base(ocr_norm):
        raise NotComparable("tokens do not share a stripped base form")
    try:
        ref_tone, _ = extract_tone(ref_norm)
        ocr_tone, _ = extract_tone(ocr_norm)
    except MultipleToneMarks as exc:
        raise NotComparable(f"malformed token: {exc}") from exc
    types: set[str] = set()
    if ref_tone is not ocr_tone:
        if ocr_tone is Tone.NGANG:
            types.add("T1")
        elif ref_tone is Tone.NGANG:
            types.add("T5")
        else:
            types.add("T2")
        toned = ocr_norm if ref_tone is Tone.NGANG else ref_norm
        if _tone_bearing_quality(toned):
            types.add("T3")
    ref_skel = strip_tone(ref_norm)
    ocr_skel = strip_tone(ocr_norm)
    if len(ref_skel) == len(ocr_skel):
        for ca, cb in zip(ref_skel, ocr_skel):
            if ca == cb:
                continue
            if {ca, cb} == {"đ", "d"}:
                types.add("T4")
            elif _FAMILY_OF.get(ca) is not None and _FAMILY_OF.get(ca) is _FAMILY_OF.get(cb):
                types.add("T3")
    if not types:
        raise NotComparable("tokens differ but not under the five transformations")
    return ErrorLabel(types=frozenset(types), compound=len(types) >= 2)


@dataclass
class ConfusionMatrices:
    """Directed confusion counts: reference reading → OCR reading."""

    tone: np.ndarray          # 6x6, TONE_ORDER x TONE_ORDER
    vowel: np.ndarray         # 10x10, VOWEL_ORDER x VOWEL_ORDER
    dd: np.ndarray            # 2x2, (d, đ) x (d, đ)

    tone_labels = tuple(t.name.lower() for t in TONE_ORDER)
    vowel_labels = VOWEL_ORDER
    dd_labels = ("d", "đ")

    def tone_count(self, ref: Tone, ocr: Tone) -> int:
        return int(self.tone[TONE_ORDER.index(ref), TONE_ORDER.index(ocr)])


def confusion_matrices(errors) -> ConfusionMatrices:
    """Aggregate labelled divergence pairs into directed tone, vowel-family,
    and đ/d matrices. ``errors`` yields (reference, ocr, ErrorLabel). The
    vowel matrix counts quality-mark substitutions visible in the
    tone-stripped skeletons; tone-change-on-marked-vowel T3 labels carry no
    skeleton substitution and do not appear in it."""
    tone = np.zeros((6, 6), dtype=np.int64)
    vowel = np.zeros((len(VOWEL_ORDER), len(VOWEL_ORDER)), dtype=np.int64)
    dd = np.zeros((2, 2), dtype=np.int64)
    tone_ix = {t: i for i, t in enumerate(TONE_ORDER)}
    vowel_ix = {v: i for i, v in enumerate(VOWEL_ORDER)}
    for reference, ocr, label in errors:
        ref_norm, ocr_norm = _canon(reference), _canon(ocr)
        if {"T1", "T2", "T5"} & label.types:
            ref_tone, _ = extract_tone(ref_norm)
            ocr_tone, _ = extract_tone(ocr_norm)
            if ref_tone is not ocr_tone:
                tone[tone_ix[ref_tone], tone_ix[ocr_tone]] += 1
        ref_skel = strip_tone(ref_norm)
        ocr_skel = strip_tone(ocr_norm)
        if len(ref_skel) != len(ocr_skel):
            continue
        for ca, cb in zip(ref_skel, ocr_skel):
            if ca == cb:
                continue
            if {ca, cb} == {"đ", "d"}:
                dd[0 if ca == "d" else 1, 0 if cb == "d" else 1] += 1
            elif ca in vowel_ix and cb in vowel_ix and _FAMILY_OF.get(ca) is _FAMILY_OF.get(cb):
                vowel[vowel_ix[ca], vowel_ix[cb]] += 1
    return ConfusionMatrices(tone=tone, vowel=vowel, dd=dd)


# ---------------------------------------------------------------------------
# text usage, coverage, copy classification

def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("phonotext.data").joinpath("stopwords_vi.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(_canon(line))
    return frozenset(words)


_DEFAULT_STOPWORDS: frozenset[str] | None = None


def default_stopwords() -> frozenset[str]:
    global _DEFAULT_STOPWORDS
    if _DEFAULT_STOPWORDS is None:
        _DEFAULT_STOPWORDS = load_stopwords()
    return _DEFAULT_STOPWORDS


def _valid_ocr_tokens(record: ImageRecord, stopwords: frozenset[str]) -> list[str]:
    valid = []
    for token in record.ocr_tokens:
        norm = _canon(token.text)
        if len(norm) >= MIN_TOKEN_LENGTH and norm not in stopwords:
            valid.append(norm)
    return valid


def token_match_kinds(record: ImageRecord, caption_index: int, stopwords: frozenset[str] | None = None):
    """Per valid OCR token, the strongest match against one caption:
    'exact' (normalized equality), 'base' (full-strip equality), 'substring'
    (OCR token contained in a caption token), or None. The reverse
    containment (caption token inside the OCR token) is reported separately
    as a count since its direction is a documented open choice."""
    stop = default_stopwords() if stopwords is None else stopwords
    valid = _valid_ocr_tokens(record, stop)
    if not valid:
        raise NoValidOcrTokens(f"image {record.image_id!r} has no valid OCR tokens")
    caption = record.captions[caption_index].caption
    cap_tokens = [_canon(t) for t in syllable_tokenize(caption)]
    cap_bases = [_full_base(t) for t in cap_tokens]
    kinds: dict[str, str | None] = {}
    reverse_hits = 0
    for token in valid:
        base = _full_base(token)
        if token in cap_tokens:
            kinds[token] = "exact"
        elif base and base in cap_bases:
            kinds[token] = "base"
        elif any(token in ct for ct in cap_tokens):
            kinds[token] = "substring"
        else:
            kinds[token] = None
        if any(ct in token for ct in cap_tokens if ct):
            reverse_hits += 1
    return kinds, reverse_hits


@dataclass(frozen=True)
class UsageLabel:
    category: str
    coverage: float


def coverage_rate(record: ImageRecord, caption_index: int, stopwords: frozenset[str] | None = None) -> float:
    """Fraction of valid OCR tokens referenced by the caption (each OCR
    token counts once however many caption tokens touch it)."""
    kinds, _ = token_match_kinds(record, caption_index, stopwords)
    return sum(1 for k in kinds.values() if k is not None) / len(kinds)


def usage_taxonomy(record: ImageRecord, caption_index: int, stopwords: frozenset[str] | None = None) -> UsageLabel:
    """Four-way caption classification. Coverage below 15% is contextual
    inference; 15-30% (inclusive) is partial reference; above 30% the
    caption is paraphrase-heavy when approximate matches (base + substring)
    outnumber exact copies, verbatim-heavy otherwise."""
    kinds, _ = token_match_kinds(record, caption_index, stopwords)
    matched = [k for k in kinds.values() if k is not None]
    coverage = len(matched) / len(kinds)
    if coverage < 0.15:
        category = "contextual-inference"
    elif coverage <= 0.30:
        category = "partial-reference"
    else:
        exact = sum(1 for k in matched if k == "exact")
        approx = len(matched) - exact
        category = "paraphrase-heavy" if approx > exact else "verbatim-heavy"
    return UsageLabel(category=category, coverage=coverage)


def copy_classification(record: ImageRecord) -> list[list[tuple[str, str]]]:
    """Per caption, label each caption token exact-copy (normalized equality
    with an OCR token of the same image), base-form-copy (equality after
    full diacritic stripping), or generated."""
    ocr_norms = {_canon(t.text) for t in record.ocr_tokens}
    ocr_bases = {_full_base(t.text) for t in record.ocr_tokens}
    ocr_bases.discard("")
    out = []
    for caption in record.captions:
        labels = []
        for token in syllable_tokenize(caption.caption):
            norm = _canon(token)
            if norm in ocr_norms:
                labels.append((token, "exact-copy"))
            elif _full_base(token) in ocr_bases:
                labels.append((token, "base-form-copy"))
            else:
                labels.append((token, "generated"))
        out.append(labels)
    return out


def copy_statistics(records) -> Counter:
    """Corpus-level counts of the three copy labels."""
    counts: Counter = Counter()
    for record in records:
        for labels in copy_classification(record):
            counts.update(label for _, label in labels)
    return counts
