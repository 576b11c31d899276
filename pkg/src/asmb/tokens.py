"""Deterministic token estimate used when an endpoint reports no usage."""

import math

# Sub-word tokenizers split punctuation and long words; 1.3 tokens per
# whitespace unit is the usual rule of thumb for English-like text.
TOKENS_PER_WORD = 1.3


def estimate_tokens(text: str) -> int:
    if not text:
        return 0
    # round() first so float noise can never push an exact product past an integer
    return math.ceil(round(len(text.split()) * TOKENS_PER_WORD, 6))
