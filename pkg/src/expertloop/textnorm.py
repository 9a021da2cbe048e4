"""Tiny text normalization shared by the mock providers.

Intentionally minimal: lowercase word tokens plus a crude suffix stemmer
(plural/gerund/past), just enough to make lexical matching resilient to
inflection without pulling in an NLP dependency.
"""
from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def light_stem(word: str) -> str:
    if word.endswith("ing") and len(word) > 5:
        word = word[:-3]
    elif word.endswith("ed") and len(word) > 4:
        word = word[:-2]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")) and len(word) > 3:
        word = word[:-1]
    return word
