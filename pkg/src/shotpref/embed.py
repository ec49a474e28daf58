"""Deterministic caption embedding: lexicon-tag indicators plus hashed word bigrams."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .taxonomy import N_TAG_VALUES, TAG_INDEX, lexicon_matches

N_BUCKETS = 256
W_TAG = 1.0
W_TXT = 0.25
RESERVED_AXIS = N_TAG_VALUES + N_BUCKETS
DIM = RESERVED_AXIS + 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1
_WORD = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*")


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True, eq=False)
class CaptionEmbedding:
    vector: np.ndarray

    @property
    def tag_block(self) -> np.ndarray:
        return self.vector[:N_TAG_VALUES]

    @property
    def bigram_block(self) -> np.ndarray:
        return self.vector[N_TAG_VALUES:RESERVED_AXIS]

    def cosine(self, other: "CaptionEmbedding") -> float:
        return float(np.clip(self.vector @ other.vector, -1.0, 1.0))


def tag_indicators(text: str) -> np.ndarray:
    """1 for every taxonomy value whose phrase survives longest-match suppression."""
    out = np.zeros(N_TAG_VALUES)
    for dim, hits in lexicon_matches(text).items():
        for v, p in hits:
            if not any(p != q and p in q and v != w for w, q in hits):
                out[TAG_INDEX[(dim, v)]] = 1.0
    return out


def bigram_counts(text: str) -> np.ndarray:
    words = _WORD.findall(text.lower())
    out = np.zeros(N_BUCKETS)
    for a, b in zip(words, words[1:]):
        out[fnv1a64(f"{a} {b}".encode("utf-8")) % N_BUCKETS] += 1.0
    return out


def embed_text(text: str) -> CaptionEmbedding:
    v = np.zeros(DIM)
    v[:N_TAG_VALUES] = W_TAG * tag_indicators(text)
    v[N_TAG_VALUES:RESERVED_AXIS] = W_TXT * bigram_counts(text)
    n = np.linalg.norm(v)
    if n == 0:
        v[RESERVED_AXIS] = 1.0
    else:
        v /= n
    v.setflags(write=False)
    return CaptionEmbedding(v)
