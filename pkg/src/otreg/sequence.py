"""Frame stacking, the two-layer adapter, unique targets and OT-based compression."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateInputError, DimensionError, EmptyOutputError

__all__ = [
    "AdapterParams",
    "UniqueTargetSet",
    "CompressionReport",
    "stack_frames",
    "adapter_forward",
    "unique_targets",
    "ot_compress",
    "pairwise_distance_map",
    "PAD_MARKER",
]

PAD_MARKER = -1


@dataclass
class AdapterParams:
    """``F = relu(H w1 + b1) w2 + b2``.  Biases are stored as 1 x d rows.

    Fields hold ndarrays, or ``Var`` handles after :meth:`track`.
    """

    w1: object
    b1: object
    w2: object
    b2: object

    NAMES = ("w1", "b1", "w2", "b2")

    def __post_init__(self):
        w1, b1, w2, b2 = (ad.value_of(getattr(self, n)) for n in self.NAMES)
        if b1.shape != (1, w1.shape[1]) or w2.shape[0] != w1.shape[1] or b2.shape != (1, w2.shape[1]):
            raise DimensionError(
                f"inconsistent adapter shapes w1{w1.shape} b1{b1.shape} w2{w2.shape} b2{b2.shape}"
            )

    @classmethod
    def zeros(cls, d_in: int, d_h: int, d_out: int) -> "AdapterParams":
        return cls(np.zeros((d_in, d_h)), np.zeros((1, d_h)), np.zeros((d_h, d_out)), np.zeros((1, d_out)))

    @classmethod
    def initialize(cls, rng, d_in: int, d_h: int, d_out: int) -> "AdapterParams":
        """He-scaled Gaussian weights, zero biases.  ``rng`` is a :class:`~otreg.corpus.SplitMix64`."""
        w1 = rng.normal_array(d_in * d_h).reshape(d_in, d_h) * np.sqrt(2.0 / d_in)
        w2 = rng.normal_array(d_h * d_out).reshape(d_h, d_out) * np.sqrt(1.0 / d_h)
        return cls(w1, np.zeros((1, d_h)), w2, np.zeros((1, d_out)))

    @property
    def dims(self):
        w1, w2 = ad.value_of(self.w1), ad.value_of(self.w2)
        return w1.shape[0], w1.shape[1], w2.shape[1]

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in self.NAMES}

    def track(self, tape: ad.Tape, prefix: str = "") -> "AdapterParams":
        return AdapterParams(*(tape.param(ad.value_of(getattr(self, n)), prefix + n) for n in self.NAMES))

    def values(self) -> "AdapterParams":
        return AdapterParams(*(ad.value_of(getattr(self, n)).copy() for n in self.NAMES))

    def step(self, grads: dict, lr: float, prefix: str = "") -> "AdapterParams":
        return AdapterParams(
            *(ad.value_of(getattr(self, n)) - lr * grads[prefix + n] for n in self.NAMES)
        )


@dataclass
class UniqueTargetSet:
    embeddings: np.ndarray
    token_ids: List[int]
    pad_row_index: int
    source_rows: List[int]

    @property
    def n_g(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class CompressionReport:
    input_length: int
    after_merge: int
    after_drop: int
    merged_pair_indices: List[tuple] = field(default_factory=list)
    dropped_indices: List[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.after_drop == 0

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["merged_pair_indices"] = [list(p) for p in self.merged_pair_indices]
        d["empty"] = self.empty
        return d


def stack_frames(raw, k: int) -> np.ndarray:
    """Concatenate every ``k`` consecutive rows; trailing ``n % k`` rows are dropped."""
    if k < 1:
        raise ContractError("k must be >= 1")
    r = ad.value_of(raw)
    n, d = r.shape
    if n < k:
        raise EmptyOutputError(f"{n} frames cannot form a stack of {k}")
    keep = (n // k) * k
    return r[:keep].reshape(n // k, d * k).copy()


def adapter_forward(h, p: AdapterParams):
    d_in = ad.value_of(p.w1).shape[0]
    if ad.value_of(h).shape[1] != d_in:
        raise DimensionError(f"adapter expects {d_in} input columns, got {ad.value_of(h).shape[1]}")
    hidden = ad.relu(ad.add(ad.matmul(h, p.w1), p.b1))
    return ad.add(ad.matmul(hidden, p.w2), p.b2)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("zero-norm row")
    return m / norms


def unique_targets(
    transcript_embeddings,
    pad,
    uniqueness_threshold: float = 0.999,
    token_ids: Optional[Sequence[int]] = None,
    pad_id: int = PAD_MARKER,
) -> UniqueTargetSet:
    """Deduplicate ``[E; pad]`` by cosine similarity, keeping first occurrences.

    ``token_ids`` label the transcript rows (defaults to row indices); the
    appended pad row is labelled ``pad_id``.
    """
    if not 0 < uniqueness_threshold <= 1:
        raise ContractError("uniqueness_threshold must be in (0, 1]")
    e = ad.value_of(transcript_embeddings)
    pad = ad.value_of(pad).reshape(1, -1)
    if pad.shape[1] != e.shape[1]:
        raise DimensionError(f"pad dim {pad.shape[1]} != embedding dim {e.shape[1]}")
    rows = np.vstack([e, pad])
    ids = list(range(e.shape[0])) if token_ids is None else [int(t) for t in token_ids]
    if len(ids) != e.shape[0]:
        raise DimensionError("token_ids length must match transcript rows")
    ids.append(pad_id)
    unit = _unit_rows(rows)

    kept: List[int] = []
    pad_row = None
    for i in range(rows.shape[0]):
        sims = unit[kept] @ unit[i] if kept else np.empty(0)
        if sims.size and sims.max() >= uniqueness_threshold:
            if i == rows.shape[0] - 1:
                pad_row = int(np.argmax(sims))
            continue
        kept.append(i)
    if pad_row is None:
        pad_row = len(kept) - 1
    return UniqueTargetSet(
        embeddings=rows[kept].copy(),
        token_ids=[ids[i] for i in kept],
        pad_row_index=pad_row,
        source_rows=kept,
    )


def ot_compress(f, pad, merge_threshold: float = 0.9, drop_threshold: float = 0.9):
    """Merge similar adjacent pairs (0,1), (2,3), ... by their mean, then drop pad-like rows.

    Selection is expressed as a constant matrix times ``f`` so a tracked
    input stays differentiable.  Returns ``(compressed, CompressionReport)``.
    """
    for name, t in (("merge_threshold", merge_threshold), ("drop_threshold", drop_threshold)):
        if not 0 < t <= 1:
            raise ContractError(f"{name} must be in (0, 1]")
    fv = ad.value_of(f)
    n, d = fv.shape
    pad = ad.value_of(pad).reshape(1, -1)
    if pad.shape[1] != d:
        raise DimensionError(f"pad dim {pad.shape[1]} != frame dim {d}")
    unit = _unit_rows(fv) if n else fv

    select = []
    merged = []
    for i in range(0, n - 1, 2):
        if float(unit[i] @ unit[i + 1]) > merge_threshold:
            row = np.zeros(n)
            row[i] = row[i + 1] = 0.5
            select.append(row)
            merged.append((i, i + 1))
        else:
            for j in (i, i + 1):
                row = np.zeros(n)
                row[j] = 1.0
                select.append(row)
    if n % 2:
        row = np.zeros(n)
        row[n - 1] = 1.0
        select.append(row)
    s = np.array(select).reshape(len(select), n)
    after_merge = s.shape[0]

    merged_vals = s @ fv
    pad_unit = _unit_rows(pad)[0]
    dropped = []
    keep = []
    for j in range(after_merge):
        norm = np.linalg.norm(merged_vals[j])
        if norm > 0 and float(merged_vals[j] @ pad_unit) / norm > drop_threshold:
            dropped.append(j)
        else:
            keep.append(j)
    s = s[keep]
    out = ad.matmul(s, f) if s.shape[0] else np.zeros((0, d))
    report = CompressionReport(n, after_merge, len(keep), merged, dropped)
    return out, report


def pairwise_distance_map(f, t) -> np.ndarray:
    """``1 - cos(f_i, t_j)`` on values (no tape)."""
    return 1.0 - ad.value_of(ad.cosine_similarity_matrix(ad.value_of(f), ad.value_of(t)))
