"""Versioned prompt templates for conditional generation.

Each generated image's metadata records the exact prompt used, so the
downstream validator can trace provenance.
"""

PROMPTS_VERSION = "genlab-prompts v1"

TEMPLATES = {
    "melanocytic": (
        "dermoscopy photograph of a melanocytic lesion on dark brown skin, "
        "Fitzpatrick type {fst}, clinical close-up, sharp focus"
    ),
    "non-melanocytic": (
        "dermoscopy photograph of a non-melanocytic skin lesion on dark "
        "brown skin, Fitzpatrick type {fst}, clinical close-up, sharp focus"
    ),
}

NEGATIVE_PROMPT = "blurry, text, watermark, frame, cartoon"


def build_prompt(superclass: str, fst: str = "VI") -> str:
    if superclass not in TEMPLATES:
        raise ValueError(f"no prompt template for superclass {superclass!r}")
    return TEMPLATES[superclass].format(fst=fst)
