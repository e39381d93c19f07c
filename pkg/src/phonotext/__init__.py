"""Vietnamese scene-text analysis toolkit.

Orthography and syllable phonology, pairwise phonological features over OCR
token sets, dataset-level linguistic diagnostics, graph-attention fusion
kernels with finite-difference-verified gradients, and caption metrics with
pluggable tokenizers.
"""

from .orthography import (
    MultipleToneMarks,
    Tone,
    ToneClass,
    apply_tone,
    extract_tone,
    normalize,
    strip_diacritics,
    strip_tone,
    tone_class,
)
from .syllable import (
    NotASyllable,
    Syllable,
    SyllableInventory,
    decompose,
    default_inventory,
    enumerate_valid_syllables,
    is_vietnamese,
    load_inventory,
    validate,
)
from .phono_features import PhonoPairFeatures, PhonoTensor, analyze_token, build_tensor, extract_pair

__version__ = "0.1.0"

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
    "Syllable",
    "SyllableInventory",
    "NotASyllable",
    "decompose",
    "validate",
    "is_vietnamese",
    "enumerate_valid_syllables",
    "load_inventory",
    "default_inventory",
    "PhonoPairFeatures",
    "PhonoTensor",
    "analyze_token",
    "extract_pair",
    "build_tensor",
    "__version__",
]
