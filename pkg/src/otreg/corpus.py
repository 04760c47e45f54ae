"""Deterministic synthetic corpus: token table, linear "speech" mixing, utterances.

All randomness comes from SplitMix64 so a (seed, config) pair reproduces the
same corpus bit for bit.  Draw order is part of the format:

* uniform in [0, 1): ``(x >> 11) * 2**-53``
* signed uniform in [-1, 1): ``2u - 1``
* integer below n: ``floor(u * n)``
* normal: Box-Muller on two consecutive uniforms,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (the sine branch is discarded)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ContractError

__all__ = [
    "SplitMix64",
    "EmbeddingTable",
    "CorpusConfig",
    "UtteranceSample",
    "Corpus",
    "make_embedding_table",
    "make_mixing",
    "synthesize_utterance",
    "make_corpus",
]

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return _mix(self.state)

    def next_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as uint64 (same values as ``n`` calls to next_u64)."""
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        return z ^ (z >> np.uint64(31))

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _INV53

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.next_array(n) >> np.uint64(11)).astype(np.float64) * _INV53

    def signed_array(self, n: int) -> np.ndarray:
        return 2.0 * self.uniform_array(n) - 1.0

    def below(self, n: int) -> int:
        return int(self.uniform() * n)

    def normal_array(self, n: int) -> np.ndarray:
        u = self.uniform_array(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


@dataclass
class EmbeddingTable:
    rows: np.ndarray
    pad_id: int

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def pad(self) -> np.ndarray:
        return self.rows[self.pad_id : self.pad_id + 1]


def _table_from(rng: SplitMix64, vocab_size: int, dim: int) -> EmbeddingTable:
    if vocab_size < 2 or dim < 2:
        raise ContractError("need vocab_size >= 2 and dim >= 2")
    rows = np.empty((vocab_size, dim))
    for i in range(vocab_size):
        while True:
            r = rng.signed_array(dim)
            norm = np.linalg.norm(r)
            if norm > 0:
                break
        rows[i] = r / norm
    return EmbeddingTable(rows, vocab_size - 1)


def make_embedding_table(seed: int, vocab_size: int, dim: int) -> EmbeddingTable:
    """Unit-norm token table; the last id is the pad token."""
    return _table_from(SplitMix64(seed), vocab_size, dim)


def make_mixing(rng: SplitMix64, d_l: int, d_s: int) -> np.ndarray:
    return rng.normal_array(d_l * d_s).reshape(d_l, d_s) / math.sqrt(d_l)


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 20240601
    vocab_size: int = 30
    d_l: int = 16
    d_s: int = 24
    utterance_count: int = 200
    token_len_range: Tuple[int, int] = (3, 8)
    repeat_range: Tuple[int, int] = (2, 4)
    pad_insert_prob: float = 0.3
    noise_sigma: float = 0.05
    eval_count: int = 50

    def __post_init__(self):
        for name in ("token_len_range", "repeat_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ContractError(f"{name} must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        if not 0.0 <= self.pad_insert_prob <= 1.0:
            raise ContractError("pad_insert_prob must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        if self.vocab_size < 2 or self.d_l < 2 or self.d_s < 2:
            raise ContractError("vocab_size, d_l and d_s must be >= 2")
        if self.utterance_count < 0 or self.eval_count < 0:
            raise ContractError("utterance counts must be >= 0")


@dataclass
class UtteranceSample:
    tokens: List[int]
    raw_speech: np.ndarray
    frame_to_token: List[int]


@dataclass
class Corpus:
    config: CorpusConfig
    table: EmbeddingTable
    mixing: np.ndarray
    train: List[UtteranceSample] = field(default_factory=list)
    eval: List[UtteranceSample] = field(default_factory=list)


def _draw_range(rng: SplitMix64, lo: int, hi: int) -> int:
    return lo + rng.below(hi - lo + 1)


def synthesize_utterance(
    table: EmbeddingTable, mixing: np.ndarray, cfg: CorpusConfig, rng: SplitMix64
) -> UtteranceSample:
    n_t = _draw_range(rng, *cfg.token_len_range)
    tokens = [rng.below(table.vocab_size - 1) for _ in range(n_t)]
    frame_to_token: List[int] = []
    for i, tok in enumerate(tokens):
        if i > 0 and rng.uniform() < cfg.pad_insert_prob:
            frame_to_token += [table.pad_id] * _draw_range(rng, *cfg.repeat_range)
        frame_to_token += [tok] * _draw_range(rng, *cfg.repeat_range)
    raw = table.rows[frame_to_token] @ mixing
    if cfg.noise_sigma > 0:
        raw = raw + cfg.noise_sigma * rng.normal_array(raw.size).reshape(raw.shape)
    return UtteranceSample(tokens, raw, frame_to_token)


def make_corpus(cfg: CorpusConfig) -> Corpus:
    """Table, mixing, training utterances, then eval utterances, all from one stream."""
    rng = SplitMix64(cfg.seed)
    table = _table_from(rng, cfg.vocab_size, cfg.d_l)
    mixing = make_mixing(rng, cfg.d_l, cfg.d_s)
    train = [synthesize_utterance(table, mixing, cfg, rng) for _ in range(cfg.utterance_count)]
    ev = [synthesize_utterance(table, mixing, cfg, rng) for _ in range(cfg.eval_count)]
    return Corpus(cfg, table, mixing, train, ev)
