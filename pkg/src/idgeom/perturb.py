"""Seeded text transformations that keep or destroy surface identity.

``type1`` swaps letters for homoglyphs independently, ``type2`` does the same
but decides once per (word type, character position) so repeated words stay
identical, and ``type3`` shuffles word interiors with one permutation per word
type. A word is a maximal run of alphabetic characters; everything else is
copied through untouched.
"""

from __future__ import annotations

import hashlib
import re
from importlib import resources
from typing import Mapping

import numpy as np

from .core import RngSpec
from .errors import InvalidArgument, InvalidInput

KINDS = ("type1", "type2", "type3")
DEFAULT_P = 0.2

_WORD = re.compile(r"[^\W\d_]+")


class HomoglyphMap(dict):
    """Injective character substitution table with no fixed points."""

    def __init__(self, mapping: Mapping[str, str]):
        super().__init__(mapping)
        for src, dst in self.items():
            if len(src) != 1 or len(dst) != 1:
                raise InvalidInput(f"homoglyph entries must be single characters: {src!r} -> {dst!r}")
            if src == dst:
                raise InvalidInput(f"character {src!r} maps to itself")
        if len(set(self.values())) != len(self):
            raise InvalidInput("homoglyph map is not injective")

    @classmethod
    def parse(cls, text: str) -> "HomoglyphMap":
        """Read one ``source<TAB>replacement`` pair per line."""
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 2:
                raise InvalidInput(f"homoglyph map line {lineno}: expected two tab-separated characters")
            if parts[0] in mapping:
                raise InvalidInput(f"homoglyph map line {lineno}: duplicate source {parts[0]!r}")
            mapping[parts[0]] = parts[1]
        return cls(mapping)

    @classmethod
    def load(cls, path) -> "HomoglyphMap":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())


def default_homoglyphs() -> HomoglyphMap:
    return HomoglyphMap.parse(
        resources.files("idgeom.data").joinpath("homoglyphs.tsv").read_text("utf-8"))


def _word_key(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")


def _word_rng(rng: RngSpec, word: str) -> np.random.Generator:
    # depends only on (seed, stream, word), so equal words get equal draws
    return rng.generator(_word_key(word))


def _homoglyph_word(word: str, p: float, mapping: HomoglyphMap, gen) -> str:
    draws = gen.random(len(word))
    return "".join(mapping[c] if c in mapping and u < p else c for c, u in zip(word, draws))


def _shuffle_word(word: str, gen) -> str:
    if len(word) < 4:
        return word
    interior = list(word[1:-1])
    gen.shuffle(interior)
    return word[0] + "".join(interior) + word[-1]


def transform(text: str, kind: str, p: float = DEFAULT_P, rng: RngSpec = RngSpec(),
              mapping: HomoglyphMap | None = None) -> str:
    """Apply one of the three perturbations to ``text``.

    Args:
        text: input string.
        kind: ``type1``, ``type2`` or ``type3``.
        p: per-letter replacement probability (types 1 and 2).
        rng: seed; identical inputs and seed give identical output.
        mapping: homoglyph table (types 1 and 2); the bundled table by default.
    """
    if kind not in KINDS:
        raise InvalidArgument(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == "type3":
        cache: dict[str, str] = {}

        def shuffled(m: re.Match) -> str:
            w = m.group()
            if w not in cache:
                cache[w] = _shuffle_word(w, _word_rng(rng, w))
            return cache[w]

        return _WORD.sub(shuffled, text)

    if not 0 <= p <= 1:
        raise InvalidArgument(f"p must lie in [0, 1], got {p}")
    mapping = default_homoglyphs() if mapping is None else mapping
    if kind == "type1":
        gen = rng.generator()
        out = []
        for c in text:
            if c in mapping and c.isalpha():
                out.append(mapping[c] if gen.random() < p else c)
            else:
                out.append(c)
        return "".join(out)

    cache = {}

    def replaced(m: re.Match) -> str:
        w = m.group()
        if w not in cache:
            cache[w] = _homoglyph_word(w, p, mapping, _word_rng(rng, w))
        return cache[w]

    return _WORD.sub(replaced, text)
