"""Character-level Vietnamese orthography.

Vietnamese stacks up to two combining marks on a vowel: a vowel-quality mark
(circumflex, breve, or horn) and a tone mark (grave, acute, hook above,
tilde, or dot below). Plain Unicode NFD does not keep those two layers in a
fixed order (the dot below has a lower combining class than the circumflex),
so this module normalizes to NFD and then reorders each combining run so the
quality mark always precedes the tone mark. All other functions assume that
ordering.

Two different "base form" notions coexist and are both exposed:

* :func:`strip_tone` removes tone marks only (quality marks and đ kept) --
  the base used by pairwise phonological features.
* :func:`strip_diacritics` removes every combining mark and folds đ→d --
  the base used by collision-group analysis.
"""

from __future__ import annotations

import enum
import unicodedata

__all__ = [
    "Tone",
    "ToneClass",
    "MultipleToneMarks",
    "normalize",
    "extract_tone",
    "apply_tone",
    "strip_tone",
    "strip_diacritics",
    "tone_class",
]


class MultipleToneMarks(ValueError):
    """More than one tone mark in a single token (malformed OCR output)."""


class Tone(enum.Enum):
    """The six lexical tones; NGANG is the absence of a combining mark."""

    NGANG = ""
    HUYEN = "̀"   # grave
    SAC = "́"     # acute
    HOI = "̉"     # hook above
    NGA = "̃"     # tilde
    NANG = "̣"    # dot below

    @property
    def mark(self) -> str:
        return self.value


class ToneClass(enum.Enum):
    BANG = "bằng"   # level register: ngang, huyền
    TRAC = "trắc"   # oblique register: sắc, hỏi, ngã, nặng


#: combining marks that change vowel quality (â/ê/ô, ă, ơ/ư)
QUALITY_MARKS = frozenset({"̂", "̆", "̛"})

#: combining marks that carry tone
TONE_MARKS = {
    "̀": Tone.HUYEN,
    "́": Tone.SAC,
    "̃": Tone.NGA,
    "̉": Tone.HOI,
    "̣": Tone.NANG,
}

_VOWEL_BASES = frozenset("aeiouyAEIOUY")


def _is_combining(ch: str) -> bool:
    return unicodedata.combining(ch) != 0


def normalize(text: str) -> str:
    """NFD-decompose *text* and order each combining run quality-before-tone.

    Total over arbitrary Unicode input; non-letters pass through. Idempotent.
    """
    decomposed = unicodedata.normalize("NFD", text)
    out: list[str] = []
    run: list[str] = []

    def flush() -> None:
        if not run:
            return
        quality = [c for c in run if c in QUALITY_MARKS]
        tones = [c for c in run if c in TONE_MARKS]
        other = [c for c in run if c not in QUALITY_MARKS and c not in TONE_MARKS]
        out.extend(quality + tones + other)
        run.clear()

    for ch in decomposed:
        if _is_combining(ch):
            run.append(ch)
        else:
            flush()
            out.append(ch)
    flush()
    return "".join(out)


def extract_tone(text: str) -> tuple[Tone, str]:
    """Return the tone of a normalized token and the token with tone removed.

    Vowel-quality marks are retained. Raises :class:`MultipleToneMarks` when
    more than one tone mark is present; NGANG is returned when none is.
    """
    text = normalize(text)
    found: list[Tone] = []
    kept: list[str] = []
    for ch in text:
        tone = TONE_MARKS.get(ch)
        if tone is not None:
            found.append(tone)
        else:
            kept.append(ch)
    if len(found) > 1:
        raise MultipleToneMarks(f"{text!r} carries {len(found)} tone marks")
    return (found[0] if found else Tone.NGANG), "".join(kept)


def _vowel_groups(text: str) -> list[tuple[int, str, list[str]]]:
    """Group a normalized string into (index, base char, combining marks)."""
    groups: list[tuple[int, str, list[str]]] = []
    for i, ch in enumerate(text):
        if _is_combining(ch) and groups:
            groups[-1][2].append(ch)
        else:
            groups.append((i, ch, []))
    return groups


def apply_tone(toneless: str, tone: Tone) -> str:
    """Place *tone*'s combining mark on the carrying vowel of a toneless
    syllable, modern style: the rightmost quality-marked vowel if any;
    otherwise the last vowel when a consonant follows the vowel run, the
    second vowel of oa/oe/uy, the middle vowel of an open three-vowel run,
    and the first vowel of the remaining open pairs (ia/ua/ưa, ai/ao/...).

    The onset glides of "qu" and "gi" are skipped. Returns normalized text;
    NGANG returns the input unchanged (re-normalized).
    """
    text = normalize(toneless)
    if tone is Tone.NGANG:
        return text

    groups = _vowel_groups(text)
    vowel_ix = [gi for gi, (_, base, _) in enumerate(groups) if base in _VOWEL_BASES]
    if not vowel_ix:
        raise ValueError(f"no vowel in {toneless!r} to carry a tone mark")

    # first maximal contiguous run of vowel groups
    run = [vowel_ix[0]]
    for gi in vowel_ix[1:]:
        if gi != run[-1] + 1:
            break
        run.append(gi)

    def base_at(gi: int) -> str:
        return groups[gi][1].lower()

    # "qu"/"gi" onset glides are not tone carriers
    if len(run) >= 2:
        first = run[0]
        if first >= 1:
            prev = groups[first - 1][1].lower()
            if prev == "q" and base_at(first) == "u" and not groups[first][2]:
                run = run[1:]
            elif prev == "g" and base_at(first) == "i" and not groups[first][2]:
                run = run[1:]

    marked = [gi for gi in run if any(m in QUALITY_MARKS for m in groups[gi][2])]
    if marked:
        target = marked[-1]
    else:
        after = groups[run[-1]][0] + len(groups[run[-1]][2]) + 1
        closed = after < len(text)
        if closed or len(run) == 1:
            target = run[-1]
        elif len(run) == 3:
            target = run[1]
        else:
            pair = base_at(run[0]) + base_at(run[1])
            target = run[1] if pair in ("oa", "oe", "uy") else run[0]

    pos, _, marks = groups[target]
    insert_at = pos + 1 + len(marks)
    return normalize(text[:insert_at] + tone.mark + text[insert_at:])


def strip_tone(text: str) -> str:
    """Tone-stripped form in NFC: quality marks and đ/d retained.

    This is the base form behind the p7 pairwise feature ("Trường" and
    "Trương" both map to "Trương"-sans-tone).
    """
    _, toneless = extract_tone(text)
    return unicodedata.normalize("NFC", toneless)


def strip_diacritics(text: str) -> str:
    """Full strip: all combining marks in U+0300–U+036F removed and đ→d.

    This is the base(w) of the collision-rate analysis ("đồng" → "dong").
    Idempotent; ASCII-range Latin out when the input is Vietnamese.
    """
    decomposed = unicodedata.normalize("NFD", text)
    kept = [ch for ch in decomposed if not ("̀" <= ch <= "ͯ")]
    folded = "".join(kept).replace("đ", "d").replace("Đ", "D")
    return unicodedata.normalize("NFC", folded)


_BANG = frozenset({Tone.NGANG, Tone.HUYEN})


def tone_class(tone: Tone) -> ToneClass:
    """bằng = {ngang, huyền}; trắc = {sắc, hỏi, ngã, nặng}."""
    return ToneClass.BANG if tone in _BANG else ToneClass.TRAC
