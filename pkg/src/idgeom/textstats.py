"""Text-level complexity metrics.

DEFLATE compression ratio of raw bytes or POS-tag strings, and a subset of
TAACO-style lexical diversity / cohesion indices computed from lemma
annotations supplied at ingestion time.
"""

from __future__ import annotations

import gzip
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from .errors import DegenerateInput, InvalidArgument, InvalidInput, MissingAnnotation

# RFC 1952 container: level 9, mtime 0; CPython writes OS byte 255 (unknown).
GZIP_LEVEL = 9


@dataclass
class Document:
    """One text with optional token-aligned annotations.

    ``sentences`` are half-open token index ranges ``(start, end)`` that must
    partition the token sequence.
    """

    id: str
    text: str = ""
    tokens: list[str] | None = None
    lemmas: list[str] | None = None
    pos: list[str] | None = None
    sentences: list[tuple[int, int]] | None = None
    function_words: frozenset[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.n_tokens
        for name in ("lemmas", "pos"):
            layer = getattr(self, name)
            if layer is not None and self.tokens is not None and len(layer) != len(self.tokens):
                raise InvalidInput(f"document {self.id}: {name} length {len(layer)} "
                                   f"differs from tokens length {len(self.tokens)}")
        if self.sentences is not None:
            self.sentences = [(int(a), int(b)) for a, b in self.sentences]
            pos = 0
            for a, b in self.sentences:
                if a != pos or b <= a:
                    raise InvalidInput(f"document {self.id}: sentence ranges must partition the tokens")
                pos = b
            if n is not None and pos != n:
                raise InvalidInput(f"document {self.id}: sentence ranges cover {pos} of {n} tokens")

    @property
    def n_tokens(self) -> int | None:
        for layer in (self.tokens, self.lemmas, self.pos):
            if layer is not None:
                return len(layer)
        return None

    @classmethod
    def from_dict(cls, rec: dict) -> "Document":
        if "id" not in rec:
            raise InvalidInput("document record has no 'id'")
        fw = rec.get("function_words")
        return cls(
            id=str(rec["id"]),
            text=rec.get("text", ""),
            tokens=rec.get("tokens"),
            lemmas=rec.get("lemmas"),
            pos=rec.get("pos"),
            sentences=rec.get("sentences"),
            function_words=frozenset(fw) if fw is not None else None,
        )


def default_function_words() -> frozenset[str]:
    text = resources.files("idgeom.data").joinpath("function_words.txt").read_text("utf-8")
    return parse_word_list(text)


def parse_word_list(text: str) -> frozenset[str]:
    words = (line.strip() for line in text.splitlines())
    return frozenset(w for w in words if w and not w.startswith("#"))


def gzip_bytes(payload: bytes) -> bytes:
    return gzip.compress(payload, compresslevel=GZIP_LEVEL, mtime=0)


def compression_ratio(payload: bytes | str) -> float:
    """Compressed size over original size (lower means more redundant)."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    if len(payload) == 0:
        raise InvalidArgument("cannot compress an empty payload")
    return len(gzip_bytes(payload)) / len(payload)


def pos_compression_ratio(doc: Document) -> float:
    if not doc.pos:
        raise MissingAnnotation(f"document {doc.id} has no POS tags")
    return compression_ratio(" ".join(doc.pos).encode("utf-8"))


def _require_lemmas(doc: Document) -> list[str]:
    if doc.lemmas is None:
        raise MissingAnnotation(f"document {doc.id} has no lemmas")
    return doc.lemmas


def ngram_ttr(items: Sequence[str], n: int) -> float:
    """Distinct n-grams over n-gram count; NaN when the sequence is shorter than n."""
    grams = [tuple(items[i:i + n]) for i in range(len(items) - n + 1)]
    if not grams:
        return float("nan")
    return len(set(grams)) / len(grams)


def mattr(items: Sequence[str], window: int) -> float:
    """Moving-average type-token ratio over every full window."""
    if window < 1:
        raise InvalidArgument("window must be positive")
    n = len(items)
    if window >= n:
        return len(set(items)) / n
    counts = Counter(items[:window])
    total = len(counts)
    for i in range(window, n):
        out, inc = items[i - window], items[i]
        counts[out] -= 1
        if counts[out] == 0:
            del counts[out]
        counts[inc] += 1
        total += len(counts)
    return total / (n - window + 1) / window


def ttr_family(doc: Document, mattr_window: int = 50) -> dict[str, float]:
    lemmas = _require_lemmas(doc)
    if not lemmas:
        raise InvalidArgument(f"document {doc.id} has no lemmas")
    return {
        "lemma_ttr": len(set(lemmas)) / len(lemmas),
        "bigram_lemma_ttr": ngram_ttr(lemmas, 2),
        "trigram_lemma_ttr": ngram_ttr(lemmas, 3),
        "lemma_mattr": mattr(lemmas, mattr_window),
    }


def _function_words(doc: Document, function_words) -> frozenset[str]:
    fw = function_words if function_words is not None else doc.function_words
    if fw is None:
        raise MissingAnnotation(f"document {doc.id}: content scope needs a function-word list")
    return frozenset(fw)


def _sentence_lemmas(doc: Document, scope: str, function_words) -> list[list[str]]:
    lemmas = _require_lemmas(doc)
    if doc.sentences is None:
        raise MissingAnnotation(f"document {doc.id} has no sentence ranges")
    sents = [lemmas[a:b] for a, b in doc.sentences]
    if scope == "content":
        fw = _function_words(doc, function_words)
        sents = [[w for w in s if w not in fw] for s in sents]
    elif scope != "all":
        raise InvalidArgument(f"scope must be 'all' or 'content', got {scope!r}")
    return sents


DENOMINATORS = ("next", "prev", "union")


def _pair_overlap(a: list[str], b: list[str], counting: str, denominator: str) -> float | None:
    ta, tb = set(a), set(b)
    if counting == "binary":
        shared = len(ta & tb)
        denom = {"next": len(tb), "prev": len(ta), "union": len(ta | tb)}[denominator]
    elif counting == "counted":
        in_a = sum(1 for w in b if w in ta)
        in_b = sum(1 for w in a if w in tb)
        shared, denom = {"next": (in_a, len(b)), "prev": (in_b, len(a)),
                         "union": (in_a + in_b, len(a) + len(b))}[denominator]
    else:
        raise InvalidArgument(f"counting must be 'binary' or 'counted', got {counting!r}")
    return shared / denom if denom else None


def adjacent_overlap(doc: Document, scope: str = "all", counting: str = "binary",
                     function_words=None, denominator: str = "next") -> float:
    """Mean lexical overlap between consecutive sentences.

    ``denominator`` picks what each pair is normalised by: the following
    sentence (default), the preceding one, or their union. Pairs with an empty
    denominator (e.g. a sentence of only function words) are skipped.
    """
    if denominator not in DENOMINATORS:
        raise InvalidArgument(f"denominator must be one of {DENOMINATORS}")
    if doc.sentences is not None and len(doc.sentences) < 2:
        raise InvalidArgument(f"document {doc.id} needs at least 2 sentences")
    sents = _sentence_lemmas(doc, scope, function_words)
    if len(sents) < 2:
        raise InvalidArgument(f"document {doc.id} needs at least 2 sentences")
    vals = [v for a, b in zip(sents, sents[1:])
            if (v := _pair_overlap(a, b, counting, denominator)) is not None]
    if not vals:
        raise DegenerateInput(f"document {doc.id}: no sentence pair with content")
    return sum(vals) / len(vals)


def repeated_content_lemmas(doc: Document, function_words=None) -> float:
    """Share of content-lemma types that occur at least twice."""
    lemmas = _require_lemmas(doc)
    fw = _function_words(doc, function_words)
    counts = Counter(w for w in lemmas if w not in fw)
    if not counts:
        raise DegenerateInput(f"document {doc.id} has no content lemmas")
    return sum(1 for c in counts.values() if c >= 2) / len(counts)


def document_metrics(doc: Document, function_words=None, mattr_window: int = 50) -> dict:
    """Every metric the document's annotations allow; the rest are None."""
    fw = function_words if function_words is not None else doc.function_words
    out: dict[str, float | None] = {"n_tokens": doc.n_tokens}
    out["cr"] = compression_ratio(doc.text) if doc.text else None

    def attempt(key, fn, *args, **kwargs):
        try:
            out[key] = fn(*args, **kwargs)
        except (MissingAnnotation, InvalidArgument, DegenerateInput):
            out[key] = None

    attempt("pos_cr", pos_compression_ratio, doc)
    try:
        out.update(ttr_family(doc, mattr_window))
    except (MissingAnnotation, InvalidArgument):
        out.update(dict.fromkeys(("lemma_ttr", "bigram_lemma_ttr", "trigram_lemma_ttr",
                                  "lemma_mattr")))
    for scope, tag in (("all", "all"), ("content", "cw")):
        for counting, prefix in (("binary", "adjacent_overlap"), ("counted", "adjacent_overlap_2")):
            attempt(f"{prefix}_{tag}_sent", adjacent_overlap, doc, scope, counting, fw)
    attempt("repeated_content_lemmas", repeated_content_lemmas, doc, fw)
    return out
