"""Optimization loops for the intention encoder and the classification head.

Pretraining minimizes the summed pair loss over co-click samples; fine-tuning
continues from pretrained encoder weights and minimizes mean cross-entropy of
a linear head over the penultimate vector. The task-specific embedding used
downstream is the L2-normalized penultimate vector of the fine-tuned model,
and the same extraction applies to queries and page titles alike.

Train/eval splits are decided by a stable hash of the sample text so the
split never depends on input order or process state. All shuffling comes
from a seeded generator; two runs with one seed produce identical curves.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import model
from .ingest import normalize_query
from .metric import QueryPairSample
from .model import ModelConfig
from .tokenizer import TokenSequence, Vocabulary, extract_facets, tokenize_query

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite-loss parameters."""

    def __init__(self, message: str, params: dict[str, np.ndarray], epoch: int):
        super().__init__(message)
        self.params = params
        self.epoch = epoch


@dataclass
class TrainConfig:
    optimizer: str = "adam"  # or "sgd"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    weight_decay: float = 0.0
    eval_fraction: float = 0.1

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in [0, 1)")


@dataclass(frozen=True)
class LabeledQuery:
    query: str
    label: int


@dataclass
class Optimizer:
    """Constant-rate sgd or adam with decoupled weight decay."""

    cfg: TrainConfig
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            for name, g in grads.items():
                params[name] -= lr * g
        else:
            self.t += 1
            bc1 = 1.0 - ADAM_BETA1 ** self.t
            bc2 = 1.0 - ADAM_BETA2 ** self.t
            for name, g in grads.items():
                if name not in self.m:
                    self.m[name] = np.zeros_like(g)
                    self.v[name] = np.zeros_like(g)
                self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * g
                self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * g ** 2
                params[name] -= lr * (self.m[name] / bc1) / (
                    np.sqrt(self.v[name] / bc2) + ADAM_EPS)
        if self.cfg.weight_decay:
            for name in grads:
                params[name] -= lr * self.cfg.weight_decay * params[name]


def _stable_hash_fraction(text: str) -> float:
    """Map text to [0, 1) via blake2b; stable across runs and platforms."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0 ** 64


def split_eval(keys: Sequence[str], eval_fraction: float) -> list[bool]:
    """True marks eval membership, decided per key by stable hash."""
    return [_stable_hash_fraction(k) < eval_fraction for k in keys]


class _TokenCache:
    """Queries repeat heavily across pair samples; tokenize each text once."""

    def __init__(self, vocab: Vocabulary, seq_len: int,
                 facet_lexicon: Mapping[str, set[str]] | None):
        self.vocab = vocab
        self.seq_len = seq_len
        self.facet_lexicon = facet_lexicon
        self._cache: dict[str, TokenSequence] = {}

    def get(self, text: str) -> TokenSequence:
        seq = self._cache.get(text)
        if seq is None:
            facets = extract_facets(text, self.facet_lexicon) if self.facet_lexicon else {}
            seq = tokenize_query(text, facets, self.vocab, self.seq_len)
            self._cache[text] = seq
        return seq


def _mean_pair_loss(params, cfg: ModelConfig, pairs) -> float:
    if not pairs:
        return float("nan")
    total = 0.0
    for start in range(0, len(pairs), 256):
        chunk = pairs[start:start + 256]
        seqs = [s for p in chunk for s in (p[0], p[1])]
        e = model.embed_batch(params, cfg, seqs)
        _, losses, _ = model._pair_losses(e[0::2], e[1::2],
                                          [p[2] for p in chunk],
                                          cfg.negative_loss)
        total += float(losses.sum())
    return total / len(pairs)


def train_intention_model(
    samples: Sequence[QueryPairSample],
    vocab: Vocabulary,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    facet_lexicon: Mapping[str, set[str]] | None = None,
    init: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Pretrain on pair samples; returns (params, per-epoch history).

    History rows carry ``epoch``, ``mean_loss`` (train) and, when the stable
    hash split leaves any eval pairs, ``eval_loss``. On a non-finite loss the
    run aborts with :class:`TrainingDiverged` holding the last parameters
    that still produced finite losses.
    """
    if not any(s.interactive > 0 for s in samples):
        raise ValueError("need at least one positive sample")
    cache = _TokenCache(vocab, cfg.seq_len, facet_lexicon)
    tokenized = [(cache.get(s.query_a), cache.get(s.query_b), s.interactive)
                 for s in samples]
    is_eval = split_eval([f"{s.query_a}\x1f{s.query_b}" for s in samples],
                         train_cfg.eval_fraction)
    train_set = [t for t, ev in zip(tokenized, is_eval) if not ev]
    eval_set = [t for t, ev in zip(tokenized, is_eval) if ev]
    if not train_set:
        raise ValueError("eval split consumed every sample")

    params = ({k: v.copy() for k, v in init.items()} if init is not None
              else model.init_params(cfg, seed=train_cfg.seed))
    opt = Optimizer(train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history: list[dict] = []
    last_good = {k: v.copy() for k, v in params.items()}
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                batch = [train_set[i] for i in order[start:start + train_cfg.batch_size]]
                loss, grads = model.batch_loss_and_grad(params, cfg, batch)
                loss_sum += loss
                opt.step(params, grads)
        except model.NonFiniteLossError as exc:
            raise TrainingDiverged(
                f"diverged during epoch {epoch}: {exc}", last_good, epoch) from exc
        if not model.check_finite(params):
            raise TrainingDiverged(
                f"parameters went non-finite during epoch {epoch}", last_good, epoch)
        row = {"epoch": epoch, "mean_loss": loss_sum / len(train_set)}
        if eval_set:
            row["eval_loss"] = _mean_pair_loss(params, cfg, eval_set)
        history.append(row)
        last_good = {k: v.copy() for k, v in params.items()}
        logger.info("epoch %d mean_loss %.6f", epoch, row["mean_loss"])
    return params, history


def finetune_classifier(
    pretrained: dict[str, np.ndarray],
    labeled: Sequence[LabeledQuery],
    vocab: Vocabulary,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    facet_lexicon: Mapping[str, set[str]] | None = None,
    freeze_encoder: bool = False,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Fine-tune a classification head (and, unless frozen, the encoder).

    ``cfg.num_classes`` must be set; the encoder starts from ``pretrained``
    and the head is freshly initialized. History rows carry ``epoch``,
    ``mean_loss`` and training ``accuracy``.
    """
    if cfg.num_classes < 2:
        raise ValueError("need num_classes >= 2")
    present = {s.label for s in labeled}
    if len(present) < 2:
        raise ValueError("labeled data must contain at least two classes")
    if max(present) >= cfg.num_classes or min(present) < 0:
        raise ValueError("label out of range for num_classes")
    missing = sorted(set(range(cfg.num_classes)) - present)
    if missing:
        logger.warning("classes absent from training data: %s", missing)

    cache = _TokenCache(vocab, cfg.seq_len, facet_lexicon)
    seqs = [cache.get(s.query) for s in labeled]
    labels = [s.label for s in labeled]
    params = model.init_head(pretrained, cfg, seed=train_cfg.seed)
    opt = Optimizer(train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history: list[dict] = []
    last_good = {k: v.copy() for k, v in params.items()}
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(seqs))
        loss_sum = 0.0
        n_batches = 0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                idx = order[start:start + train_cfg.batch_size]
                loss, grads = model.classify_batch_loss_and_grad(
                    params, cfg, [seqs[i] for i in idx], [labels[i] for i in idx],
                    freeze_encoder=freeze_encoder)
                loss_sum += loss
                n_batches += 1
                opt.step(params, grads)
        except model.NonFiniteLossError as exc:
            raise TrainingDiverged(
                f"diverged during epoch {epoch}: {exc}", last_good, epoch) from exc
        logits, _ = model.classify_batch_logits(params, cfg, seqs)
        accuracy = float((logits.argmax(axis=1) == np.asarray(labels)).mean())
        history.append({"epoch": epoch, "mean_loss": loss_sum / n_batches,
                        "accuracy": accuracy})
        last_good = {k: v.copy() for k, v in params.items()}
        logger.info("epoch %d mean_loss %.6f accuracy %.3f",
                    epoch, history[-1]["mean_loss"], accuracy)
    return params, history


def extract_task_embedding(
    finetuned: dict[str, np.ndarray],
    cfg: ModelConfig,
    vocab: Vocabulary,
    text: str,
    facet_lexicon: Mapping[str, set[str]] | None = None,
) -> np.ndarray:
    """L2-normalized penultimate vector of the fine-tuned model for any text.

    Applies the same normalization and tokenization to queries and page
    titles, so both live in one comparable space.
    """
    if "head.w" not in finetuned:
        raise ValueError("expected fine-tuned parameters with a classification head")
    normalized = normalize_query(text)
    facets = extract_facets(normalized, facet_lexicon) if facet_lexicon else {}
    seq = tokenize_query(normalized, facets, vocab, cfg.seq_len)
    _, z = model.classify_logits(finetuned, cfg, seq)
    return z / np.linalg.norm(z)


def make_embed_fn(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    vocab: Vocabulary,
    facet_lexicon: Mapping[str, set[str]] | None = None,
    task_specific: bool = True,
) -> Callable[[str], np.ndarray]:
    """Bind model and vocabulary into a text -> unit vector callable.

    ``task_specific`` selects the fine-tuned penultimate extraction; with it
    off the pretrained intention embedding is used instead (no head needed).
    """
    if task_specific:
        return lambda text: extract_task_embedding(
            params, cfg, vocab, text, facet_lexicon)

    def intention(text: str) -> np.ndarray:
        normalized = normalize_query(text)
        facets = extract_facets(normalized, facet_lexicon) if facet_lexicon else {}
        seq = tokenize_query(normalized, facets, vocab, cfg.seq_len)
        return model.embed(params, cfg, seq)

    return intention


def write_training_curve(history: Sequence[Mapping], path: str | Path) -> None:
    """CSV curve: epoch,mean_loss plus accuracy when recorded."""
    with_acc = any("accuracy" in row for row in history)
    fields = ["epoch", "mean_loss"] + (["accuracy"] if with_acc else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in history:
            writer.writerow({k: row.get(k) for k in fields})


def mean_pairwise_cosine(vectors: Sequence[np.ndarray]) -> float:
    """Mean cosine over all unordered pairs; NaN for fewer than 2 vectors."""
    n = len(vectors)
    if n < 2:
        return float("nan")
    stacked = np.stack(vectors)
    gram = stacked @ stacked.T
    upper = gram[np.triu_indices(n, k=1)]
    return float(upper.mean())
