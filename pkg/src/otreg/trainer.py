"""Two-stage adapter training on the synthetic corpus.

Stage 1 fits the adapter with a frame-level cross-entropy only.  Stage 2 adds
``lambda_ot * L_OT`` computed from a Sinkhorn plan between the adapter
outputs and the utterance's unique target embeddings.  The cross-entropy is
a stand-in for an LLM's next-token loss: softmax over scaled cosine
similarities to the embedding table, against per-frame ground-truth labels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Corpus, CorpusConfig, EmbeddingTable, UtteranceSample, make_corpus
from .errors import ConfigError, ContractError, DivergenceError
from .losses import ot_loss
from .ot import SinkhornConfig, build_cost, sinkhorn
from .sequence import (
    AdapterParams,
    UniqueTargetSet,
    adapter_forward,
    ot_compress,
    stack_frames,
    unique_targets,
)

__all__ = [
    "TrainConfig",
    "ExperimentConfig",
    "StepReport",
    "EvalReport",
    "frame_labels",
    "ce_loss",
    "sample_targets",
    "stage1_step",
    "stage2_step",
    "stage1_train",
    "stage2_train",
    "evaluate",
    "init_params",
    "oracle_adapter",
    "run_experiment",
    "compare_warm_start",
    "parse_config",
    "format_config",
    "cosine_lr",
]


@dataclass(frozen=True)
class TrainConfig:
    lambda_ot: float = 0.3
    lambda_spr: float = 0.1
    stage1_epochs: int = 2
    stage2_epochs: int = 3
    learning_rate: float = 0.05
    lr_min: float = 1e-4
    k: int = 5
    d_h: int = 2048
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    merge_threshold: float = 0.9
    drop_threshold: float = 0.9
    uniqueness_threshold: float = 0.999
    logit_scale: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.lr_min <= 0:
            raise ContractError("learning rates must be positive")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ContractError("epoch counts must be >= 0")
        if self.lambda_ot < 0 or self.lambda_spr < 0:
            raise ContractError("loss weights must be >= 0")
        if self.k < 1 or self.d_h < 1:
            raise ContractError("k and d_h must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    @classmethod
    def toy(cls) -> "ExperimentConfig":
        """The desk-scale setup: default corpus with 2-frame stacking."""
        return cls(TrainConfig(k=2), CorpusConfig())


@dataclass
class StepReport:
    stage: int
    epoch: int
    sample_index: int
    learning_rate: float
    l_ce: float
    l_total: float
    # None in stage 1, where no plan is computed
    l_cost: Optional[float] = None
    l_spr: Optional[float] = None
    l_ot: Optional[float] = None
    sinkhorn_iterations: Optional[int] = None
    marginal_error: Optional[float] = None
    sinkhorn_converged: Optional[bool] = None
    compressed_length: Optional[int] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    alignment_accuracy: float
    mean_transport_cost: float
    mean_sparsity_loss: float
    token_error_rate_after_compression: float
    mean_compression_ratio: float
    chance_accuracy: float
    # share of pad-labelled frames whose plan row peaks on the pad target
    pad_frame_accuracy: float
    sample_count: int
    empty_samples: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


# -- labels and losses ---------------------------------------------------------


def frame_labels(frame_to_token: Sequence[int], k: int) -> List[int]:
    """Majority token within each k-frame stack; ties go to the earliest token."""
    out = []
    for j in range(len(frame_to_token) // k):
        chunk = list(frame_to_token[j * k : (j + 1) * k])
        counts = {}
        for t in chunk:
            counts[t] = counts.get(t, 0) + 1
        best = max(counts.values())
        out.append(next(t for t in chunk if counts[t] == best))
    return out


def ce_loss(f, table: EmbeddingTable, labels: Sequence[int], scale: float = 20.0):
    """Mean softmax cross-entropy with logits ``scale * cos(f_i, table rows)``."""
    n = ad.value_of(f).shape[0]
    if len(labels) != n:
        raise ContractError(f"{len(labels)} labels for {n} frames")
    if any(not 0 <= t < table.vocab_size for t in labels):
        raise ContractError("label outside vocabulary")
    logits = ad.scale(ad.cosine_similarity_matrix(f, table.rows), scale)
    picked = ad.take(logits, range(n), labels)
    return ad.mean_all(ad.sub(ad.logsumexp(logits, axis=1), picked))


def sample_targets(sample: UtteranceSample, table: EmbeddingTable, cfg: TrainConfig) -> UniqueTargetSet:
    return unique_targets(
        table.rows[sample.tokens],
        table.pad,
        cfg.uniqueness_threshold,
        token_ids=sample.tokens,
        pad_id=table.pad_id,
    )


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    if total <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * step / (total - 1)))


# -- single steps ----------------------------------------------------------------


def _forward(sample, params, k):
    return adapter_forward(stack_frames(sample.raw_speech, k), params)


def stage1_step(sample: UtteranceSample, params: AdapterParams, table: EmbeddingTable, cfg: TrainConfig):
    tape = ad.Tape()
    f = _forward(sample, params.track(tape), cfg.k)
    l_ce = ce_loss(f, table, frame_labels(sample.frame_to_token, cfg.k), cfg.logit_scale)
    grads = ad.backward(l_ce)
    v = float(l_ce)
    return grads, StepReport(1, 0, 0, 0.0, v, v)


def stage2_step(sample: UtteranceSample, params: AdapterParams, table: EmbeddingTable, cfg: TrainConfig):
    tape = ad.Tape()
    tracked = params.track(tape)
    # (1) transformed speech embeddings
    f = _forward(sample, tracked, cfg.k)
    # (2) condensed embeddings; the toy CE does not consume them
    compressed, creport = ot_compress(f, table.pad, cfg.merge_threshold, cfg.drop_threshold)
    # (3-4) frame-level CE on the uncompressed frames
    l_ce = ce_loss(f, table, frame_labels(sample.frame_to_token, cfg.k), cfg.logit_scale)
    # (5) plan against the unique transcript targets
    targets = sample_targets(sample, table, cfg)
    cost = build_cost(f, targets.embeddings)
    plan = sinkhorn(cost, cfg.sinkhorn)
    # (6) regularization loss
    losses = ot_loss(plan, cost, cfg.lambda_spr)
    # (7) total loss
    total = ad.add(l_ce, ad.scale(losses.l_ot, cfg.lambda_ot))
    grads = ad.backward(total)
    parts = losses.floats()
    report = StepReport(
        stage=2,
        epoch=0,
        sample_index=0,
        learning_rate=0.0,
        l_ce=float(l_ce),
        l_total=float(total),
        l_cost=parts["l_cost"],
        l_spr=parts["l_spr"],
        l_ot=parts["l_ot"],
        sinkhorn_iterations=plan.iterations_used,
        marginal_error=plan.marginal_error,
        sinkhorn_converged=plan.converged,
        compressed_length=creport.after_drop,
    )
    return grads, report


# -- loops --------------------------------------------------------------------------


def _train(stage, step_fn, corpus, params, cfg, epochs, on_report):
    samples = corpus.train
    total = epochs * len(samples)
    reports = []
    t = 0
    for epoch in range(epochs):
        for i, sample in enumerate(samples):
            lr = cosine_lr(t, total, cfg.learning_rate, cfg.lr_min)
            grads, rep = step_fn(sample, params, corpus.table, cfg)
            if not math.isfinite(rep.l_total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(
                    f"stage {stage}: non-finite loss/gradient at epoch {epoch}, sample {i}",
                    sample_index=i,
                )
            params = params.step(grads, lr)
            rep.epoch, rep.sample_index, rep.learning_rate = epoch, i, lr
            reports.append(rep)
            if on_report is not None:
                on_report(rep)
            t += 1
    return params, reports


def stage1_train(corpus: Corpus, params: AdapterParams, cfg: TrainConfig, on_report=None):
    """CE-only fine-tuning; returns ``(params, reports)``."""
    return _train(1, stage1_step, corpus, params, cfg, cfg.stage1_epochs, on_report)


def stage2_train(corpus: Corpus, params: AdapterParams, cfg: TrainConfig, on_report=None):
    """CE + lambda_ot * L_OT; returns ``(params, reports)``."""
    return _train(2, stage2_step, corpus, params, cfg, cfg.stage2_epochs, on_report)


# -- evaluation -------------------------------------------------------------------------


def _edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _collapse(seq):
    out = []
    for t in seq:
        if not out or out[-1] != t:
            out.append(t)
    return out


def evaluate(samples: Sequence[UtteranceSample], params: AdapterParams, table: EmbeddingTable, cfg: TrainConfig) -> EvalReport:
    """Alignment and compression diagnostics on fixed parameters.

    Compressed frames are decoded by nearest table row (cosine); pad decodes
    are removed and repeats collapsed before comparing with the collapsed
    token sequence.  The edit distance is normalized by the longer sequence.
    """
    params = params.values()
    unit_table = table.rows / np.linalg.norm(table.rows, axis=1, keepdims=True)
    acc, costs, sprs, errs, ratios, chance = [], [], [], [], [], []
    pad_hits = pad_total = 0
    empty = []
    for idx, sample in enumerate(samples):
        f = _forward(sample, params, cfg.k)
        labels = frame_labels(sample.frame_to_token, cfg.k)
        targets = sample_targets(sample, table, cfg)
        cost = build_cost(f, targets.embeddings)
        plan = sinkhorn(cost, cfg.sinkhorn)
        parts = ot_loss(plan, cost, cfg.lambda_spr).floats()
        costs.append(parts["l_cost"])
        sprs.append(parts["l_spr"])
        best = plan.value.argmax(axis=1)
        acc.append(float(np.mean([targets.token_ids[j] == lab for j, lab in zip(best, labels)])))
        for j, lab in zip(best, labels):
            if lab == table.pad_id:
                pad_total += 1
                pad_hits += targets.token_ids[j] == lab
        chance.append(1.0 / targets.n_g)

        compressed, rep = ot_compress(f, table.pad, cfg.merge_threshold, cfg.drop_threshold)
        ratios.append(rep.after_drop / rep.input_length)
        ref = _collapse(sample.tokens)
        if rep.empty:
            empty.append(idx)
            errs.append(1.0)
            continue
        unit = compressed / np.linalg.norm(compressed, axis=1, keepdims=True)
        decoded = [int(t) for t in (unit @ unit_table.T).argmax(axis=1) if t != table.pad_id]
        hyp = _collapse(decoded)
        errs.append(_edit_distance(hyp, ref) / max(len(ref), len(hyp)))
    n = len(samples)
    mean = (lambda xs: float(np.mean(xs))) if n else (lambda xs: float("nan"))
    return EvalReport(
        alignment_accuracy=mean(acc),
        mean_transport_cost=mean(costs),
        mean_sparsity_loss=mean(sprs),
        token_error_rate_after_compression=mean(errs),
        mean_compression_ratio=mean(ratios),
        chance_accuracy=mean(chance),
        pad_frame_accuracy=pad_hits / pad_total if pad_total else float("nan"),
        sample_count=n,
        empty_samples=empty,
    )


# -- parameter construction -----------------------------------------------------------------


def init_params(corpus_cfg: CorpusConfig, cfg: TrainConfig) -> AdapterParams:
    from .corpus import SplitMix64

    return AdapterParams.initialize(SplitMix64(cfg.seed), corpus_cfg.d_s * cfg.k, cfg.d_h, corpus_cfg.d_l)


def oracle_adapter(mixing: np.ndarray, k: int, d_h: int) -> AdapterParams:
    """Adapter that inverts the mixing on the first frame of each stack.

    Uses ``relu(x) - relu(-x) = x``, so ``d_h >= 2 * d_l`` is required.
    """
    d_l, d_s = mixing.shape
    if d_h < 2 * d_l:
        raise ContractError(f"oracle adapter needs d_h >= {2 * d_l}")
    inv = np.linalg.pinv(mixing)
    w1 = np.zeros((d_s * k, d_h))
    w1[:d_s, :d_l] = inv
    w1[:d_s, d_l : 2 * d_l] = -inv
    w2 = np.zeros((d_h, d_l))
    w2[:d_l] = np.eye(d_l)
    w2[d_l : 2 * d_l] = -np.eye(d_l)
    return AdapterParams(w1, np.zeros((1, d_h)), w2, np.zeros((1, d_l)))


# -- experiment driver ---------------------------------------------------------------------


@dataclass
class ExperimentResult:
    corpus: Corpus
    initial: AdapterParams
    stage1: AdapterParams
    final: AdapterParams
    stage1_reports: List[StepReport]
    stage2_reports: List[StepReport]
    eval_stage1: EvalReport
    eval_final: EvalReport


def run_experiment(
    exp: ExperimentConfig,
    on_report: Optional[Callable[[StepReport], None]] = None,
    warm_start: bool = True,
    corpus: Optional[Corpus] = None,
) -> ExperimentResult:
    """Generate the corpus, run Stage 1 then Stage 2, evaluate both checkpoints.

    ``warm_start=False`` skips Stage 1 (Stage 2 from the random init); the
    "stage 1" checkpoint is then the initialization.
    """
    corpus = corpus or make_corpus(exp.corpus)
    cfg = exp.train
    initial = init_params(exp.corpus, cfg)
    if warm_start:
        p1, r1 = stage1_train(corpus, initial, cfg, on_report)
    else:
        p1, r1 = initial, []
    p2, r2 = stage2_train(corpus, p1, cfg, on_report)
    return ExperimentResult(
        corpus=corpus,
        initial=initial,
        stage1=p1,
        final=p2,
        stage1_reports=r1,
        stage2_reports=r2,
        eval_stage1=evaluate(corpus.eval, p1, corpus.table, cfg),
        eval_final=evaluate(corpus.eval, p2, corpus.table, cfg),
    )


def compare_warm_start(exp: ExperimentConfig) -> dict:
    """Stage 2 after Stage 1 vs. Stage 2 from scratch; no outcome is assumed."""
    corpus = make_corpus(exp.corpus)
    warm = run_experiment(exp, corpus=corpus)
    cold = run_experiment(exp, corpus=corpus, warm_start=False)
    return {"warm_start": warm.eval_final, "from_scratch": cold.eval_final}


# -- key=value config files ------------------------------------------------------------------

_SECTIONS = {"sinkhorn": SinkhornConfig, "corpus": CorpusConfig}


def _convert(raw: str, default, lineno: int, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [int(p) for p in raw.replace(" ", "").split(",")]
            if len(parts) != len(default):
                raise ValueError(raw)
            return tuple(parts)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}", line=lineno) from None
    raise ConfigError(f"line {lineno}: {key} is not settable", line=lineno)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``sinkhorn.*`` and ``corpus.*`` address sub-configs."""
    base = ExperimentConfig()
    values = {"train": {}, "sinkhorn": {}, "corpus": {}}
    defaults = {
        "train": {f.name: getattr(base.train, f.name) for f in fields(TrainConfig) if f.name != "sinkhorn"},
        "sinkhorn": asdict(base.train.sinkhorn),
        "corpus": asdict(base.corpus),
    }
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value", line=lineno)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        section, _, name = key.rpartition(".")
        section = section or "train"
        if section not in defaults or name not in defaults[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", line=lineno)
        default = defaults[section][name]
        if isinstance(default, list):
            default = tuple(default)
        values[section][name] = _convert(raw, default, lineno, key)
    try:
        sink = replace(base.train.sinkhorn, **values["sinkhorn"])
        train = replace(base.train, sinkhorn=sink, **values["train"])
        corpus = replace(base.corpus, **values["corpus"])
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(train, corpus)


def format_config(exp: ExperimentConfig) -> str:
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return ",".join(str(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = []
    for f in fields(TrainConfig):
        if f.name != "sinkhorn":
            lines.append(f"{f.name} = {fmt(getattr(exp.train, f.name))}")
    for name, v in asdict(exp.train.sinkhorn).items():
        lines.append(f"sinkhorn.{name} = {fmt(v)}")
    for name, v in asdict(exp.corpus).items():
        lines.append(f"corpus.{name} = {fmt(v)}")
    return "\n".join(lines) + "\n"
