"""Corpus/feature ingestion, decoder training and checkpointing.

Training is sequential: the backward decoder is fit first on reversed
captions, then frozen while the attention-bridged forward decoder learns on
top of its state sequences.  A plain forward decoder (no attention) trains
the same way and serves as the prefix-only baseline.

Checkpoints are single JSON documents carrying named parameter tensors,
the vocabulary and the decoder config, versioned with a magic header.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .backprop import attention_loss, teacher_forced_loss
from .completion import BidiModel, CompletionRequest, ShowTellModel
from .decoders import (
    AttentionParams,
    BackwardStateSequence,
    DecoderConfig,
    DecoderParams,
    backward_states,
)
from .evaluation import cider
from .textcore import Vocabulary, build_vocab, encode

CHECKPOINT_MAGIC = "VCSC1"


@dataclass(frozen=True)
class CorpusRecord:
    image_id: str
    caption: str


@dataclass
class FeatureStore:
    dim: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.vectors

    def __getitem__(self, image_id: str) -> np.ndarray:
        return self.vectors[image_id]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0005
    max_epochs: int = 80
    batch_size: int = 16
    seed: int = 0
    N: int = 30
    d: int = 128
    d_embed: int = 64
    feature_dim: Optional[int] = None  # taken from the feature store when unset
    min_count: int = 1
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    selection_metric: str = "cider"  # "cider" or "loss"
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr <= 0 or self.max_epochs < 1 or self.batch_size < 1 or self.N < 1:
            raise ValueError("invalid training configuration")
        if self.selection_metric not in ("cider", "loss"):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")

    def to_doc(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_doc(cls, doc: dict) -> "TrainConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    """Read a JSON-lines corpus of {"image_id", "caption"} records."""
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {e}") from None
            if not doc.get("caption"):
                raise ValueError(f"{path}:{lineno}: empty caption")
            if "image_id" not in doc:
                raise ValueError(f"{path}:{lineno}: missing image_id")
            records.append(CorpusRecord(image_id=str(doc["image_id"]), caption=doc["caption"]))
    if not records:
        raise ValueError(f"{path}: empty corpus")
    return records


def load_features(path: str | Path) -> FeatureStore:
    """Read a JSON-lines feature table of {"image_id", "feature"} rows."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            vec = np.asarray(doc["feature"], dtype=np.float64)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"{path}:{lineno}: feature row {doc['image_id']!r} has "
                    f"dimension {vec.shape[0]}, expected {dim}"
                )
            vectors[str(doc["image_id"])] = vec
    if dim is None:
        raise ValueError(f"{path}: empty feature file")
    return FeatureStore(dim=dim, vectors=vectors)


def check_feature_coverage(corpus: list[CorpusRecord], features: FeatureStore) -> None:
    missing = sorted({r.image_id for r in corpus if r.image_id not in features})
    if missing:
        raise ValueError(f"missing features for image ids: {missing}")


def _split_bucket(image_id: str) -> float:
    digest = hashlib.md5(image_id.encode("utf-8")).hexdigest()
    return int(digest[:8], 16) / 0xFFFFFFFF


def split_corpus(
    corpus: list[CorpusRecord], val_fraction: float, test_fraction: float
) -> tuple[list[CorpusRecord], list[CorpusRecord], list[CorpusRecord]]:
    """Deterministic train/val/test split by image-id hash, so every run
    (and every model) sees the same partition."""
    train, val, test = [], [], []
    for r in corpus:
        u = _split_bucket(r.image_id)
        if u < val_fraction:
            val.append(r)
        elif u < val_fraction + test_fraction:
            test.append(r)
        else:
            train.append(r)
    return train, val, test


@dataclass
class Checkpoint:
    """A trained model: named tensors plus everything needed to run them."""

    kind: str  # "forward" | "backward" | "bidi"
    config: DecoderConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    epoch: int
    history: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "magic": CHECKPOINT_MAGIC,
            "kind": self.kind,
            "config": self.config.to_doc(),
            "vocab": json.loads(self.vocab.to_json()),
            "epoch": self.epoch,
            "history": self.history,
            "params": {name: nn.tensor_to_doc(t) for name, t in self.params.items()},
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, ensure_ascii=False)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        if doc.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        return cls(
            kind=doc["kind"],
            config=DecoderConfig.from_doc(doc["config"]),
            vocab=Vocabulary.from_json(json.dumps(doc["vocab"])),
            params={name: nn.tensor_from_doc(t) for name, t in doc["params"].items()},
            epoch=doc["epoch"],
            history=doc.get("history", {}),
        )

    def decoder_params(self, prefix: str = "") -> DecoderParams:
        return DecoderParams.from_named(self.params, prefix)

    def to_model(self):
        """Materialize a completion model; backward-only checkpoints have no
        completion mode of their own."""
        if self.kind == "forward":
            return ShowTellModel(self.vocab, self.config, self.decoder_params())
        if self.kind == "bidi":
            return BidiModel(
                self.vocab,
                self.config,
                fwd=self.decoder_params("fwd."),
                bwd=self.decoder_params("bwd."),
                att=AttentionParams.from_named(self.params, "att."),
            )
        raise ValueError(f"checkpoint kind {self.kind!r} is not a completion model")


def greedy_caption(model, feature: np.ndarray) -> str:
    """Automated captioning: completion of the empty input, width 1."""
    return model.complete(CompletionRequest(feature, "", 0, k=1))[0].text


def _forward_targets(vocab: Vocabulary, caption: str) -> list[int]:
    return encode(vocab, caption) + [vocab.end_id]


def _backward_targets(vocab: Vocabulary, caption: str) -> list[int]:
    # right-to-left generation terminates at the sentence start marker
    return encode(vocab, caption)[::-1] + [vocab.start_id]


def _resolve_config(config: TrainConfig, features: FeatureStore, vocab: Vocabulary) -> DecoderConfig:
    feature_dim = config.feature_dim or features.dim
    if feature_dim != features.dim:
        raise ValueError(
            f"configured feature_dim {feature_dim} does not match feature store dim {features.dim}"
        )
    return DecoderConfig(
        m=vocab.m, d=config.d, d_embed=config.d_embed, feature_dim=feature_dim, N=config.N
    )


def _check_lengths(records: list[CorpusRecord], N: int) -> None:
    too_long = [r.image_id for r in records if len(r.caption) > N]
    if too_long:
        raise ValueError(
            f"captions longer than N={N} cannot be encoded by the fixed-length "
            f"backward pass: {too_long[:5]}"
        )


class _Trainer:
    """Shared epoch loop: batching, gradient accumulation, Adam, selection."""

    def __init__(
        self,
        named: dict[str, np.ndarray],
        config: TrainConfig,
        loss_fn,  # loss_fn(record, grads | None) -> (loss_sum, token_count)
    ):
        self.named = named
        self.config = config
        self.loss_fn = loss_fn
        self.adam = nn.AdamState(lr=config.lr)
        self.rng = np.random.default_rng(config.seed)

    def run_epoch(self, records: list[CorpusRecord], epoch: int) -> float:
        order = self.rng.permutation(len(records))
        total_loss = 0.0
        total_tokens = 0
        bs = self.config.batch_size
        for start in range(0, len(records), bs):
            batch = [records[i] for i in order[start : start + bs]]
            grads = nn.zero_grads(self.named)
            batch_loss = 0.0
            batch_tokens = 0
            for record in batch:
                loss, tokens = self.loss_fn(record, grads)
                batch_loss += loss
                batch_tokens += tokens
            if not math.isfinite(batch_loss):
                raise RuntimeError(
                    f"training diverged (non-finite loss) at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            nn.scale_grads(grads, 1.0 / max(batch_tokens, 1))
            nn.clip_global_norm(grads, self.config.clip_norm)
            nn.adam_update(self.named, grads, self.adam)
            total_loss += batch_loss
            total_tokens += batch_tokens
        return total_loss / max(total_tokens, 1)

    def eval_loss(self, records: list[CorpusRecord]) -> float:
        total = 0.0
        tokens = 0
        for record in records:
            loss, n = self.loss_fn(record, None)
            total += loss
            tokens += n
        return total / max(tokens, 1)


def _select_and_track(
    epoch: int,
    metric: float,
    higher_is_better: bool,
    best: dict,
    named: dict[str, np.ndarray],
) -> None:
    if best["epoch"] < 0:
        better = True
    elif higher_is_better:
        better = metric > best["metric"]
    else:
        better = metric < best["metric"]
    if better:
        best["epoch"] = epoch
        best["metric"] = metric
        best["params"] = {k: v.copy() for k, v in named.items()}


def _references_by_image(records: list[CorpusRecord]) -> dict[str, list[list[str]]]:
    refs: dict[str, list[list[str]]] = {}
    for r in records:
        refs.setdefault(r.image_id, []).append(list(r.caption))
    return refs


def _validation_cider(model, val: list[CorpusRecord], features: FeatureStore) -> float:
    refs = _references_by_image(val)
    candidates = []
    references = []
    for image_id, ref_group in refs.items():
        candidates.append(list(greedy_caption(model, features[image_id])))
        references.append(ref_group)
    return cider(candidates, references)


def _train_plain(
    corpus: list[CorpusRecord],
    features: FeatureStore,
    config: TrainConfig,
    direction: str,
) -> Checkpoint:
    """Train a single decoder; direction 'forward' or 'backward'."""
    check_feature_coverage(corpus, features)
    train, val, _test = split_corpus(corpus, config.val_fraction, config.test_fraction)
    if not train:
        raise ValueError("empty training split")
    vocab = build_vocab([r.caption for r in train], config.min_count)
    cfg = _resolve_config(config, features, vocab)
    _check_lengths(corpus, cfg.N)
    params = DecoderParams.create(np.random.default_rng(config.seed), cfg)
    named = params.named()
    make_targets = _forward_targets if direction == "forward" else _backward_targets

    def loss_fn(record: CorpusRecord, grads):
        targets = make_targets(vocab, record.caption)
        loss = teacher_forced_loss(params, features[record.image_id], targets, grads)
        return loss, len(targets)

    trainer = _Trainer(named, config, loss_fn)
    history: dict = {"train_loss": [], "val_loss": [], "val_cider": []}
    best = {"epoch": -1, "metric": 0.0, "params": named}
    use_cider = direction == "forward" and config.selection_metric == "cider" and bool(val)
    for epoch in range(config.max_epochs):
        history["train_loss"].append(trainer.run_epoch(train, epoch))
        if val:
            history["val_loss"].append(trainer.eval_loss(val))
        if use_cider:
            model = ShowTellModel(vocab, cfg, params)
            score = _validation_cider(model, val, features)
            history["val_cider"].append(score)
            _select_and_track(epoch, score, True, best, named)
        elif val:
            _select_and_track(epoch, history["val_loss"][-1], False, best, named)
        else:
            _select_and_track(epoch, history["train_loss"][-1], False, best, named)
    return Checkpoint(
        kind=direction,
        config=cfg,
        vocab=vocab,
        params=best["params"],
        epoch=best["epoch"],
        history=history,
    )


def train_backward(
    corpus: list[CorpusRecord], features: FeatureStore, config: TrainConfig
) -> Checkpoint:
    """Teacher-forced training on reversed captions (terminal: start token);
    best epoch by validation loss."""
    return _train_plain(corpus, features, config, "backward")


def train_show_and_tell(
    corpus: list[CorpusRecord], features: FeatureStore, config: TrainConfig
) -> Checkpoint:
    """The prefix-only baseline decoder (terminal: end token)."""
    return _train_plain(corpus, features, config, "forward")


def train_forward_abd(
    corpus: list[CorpusRecord],
    features: FeatureStore,
    config: TrainConfig,
    frozen_backward: Checkpoint,
) -> Checkpoint:
    """Train the attention-bridged forward decoder over a frozen backward
    decoder.

    Each caption's backward state sequence is built once up front by forcing
    the full gold caption through the frozen decoder (the same code path
    inference uses when the typed input is complete) and reused every epoch.
    """
    if frozen_backward.kind != "backward":
        raise ValueError("frozen_backward must be a backward-decoder checkpoint")
    check_feature_coverage(corpus, features)
    vocab = frozen_backward.vocab
    cfg = frozen_backward.config
    if (config.d, config.d_embed, config.N) != (cfg.d, cfg.d_embed, cfg.N):
        raise ValueError(
            "train config dims must match the backward checkpoint: "
            f"got (d={config.d}, d_embed={config.d_embed}, N={config.N}), "
            f"checkpoint has (d={cfg.d}, d_embed={cfg.d_embed}, N={cfg.N})"
        )
    _check_lengths(corpus, cfg.N)
    train, val, _test = split_corpus(corpus, config.val_fraction, config.test_fraction)
    if not train:
        raise ValueError("empty training split")
    bparams = frozen_backward.decoder_params()
    rng = np.random.default_rng(config.seed)
    fparams = DecoderParams.create(rng, cfg, attention_input=True)
    aparams = AttentionParams.create(rng, cfg)
    named = {**fparams.named("fwd."), **aparams.named("att.")}

    state_cache: dict[str, BackwardStateSequence] = {}
    for r in corpus:
        if r.image_id not in state_cache:
            state_cache[r.image_id] = backward_states(
                bparams, features[r.image_id], encode(vocab, r.caption), cfg.N
            )

    def loss_fn(record: CorpusRecord, grads):
        targets = _forward_targets(vocab, record.caption)
        loss = attention_loss(
            fparams,
            aparams,
            state_cache[record.image_id],
            features[record.image_id],
            targets,
            grads,
            fwd_prefix="fwd.",
            att_prefix="att.",
        )
        return loss, len(targets)

    trainer = _Trainer(named, config, loss_fn)
    history: dict = {"train_loss": [], "val_loss": [], "val_cider": []}
    best = {"epoch": -1, "metric": 0.0, "params": named}
    use_cider = config.selection_metric == "cider" and bool(val)
    for epoch in range(config.max_epochs):
        history["train_loss"].append(trainer.run_epoch(train, epoch))
        if val:
            history["val_loss"].append(trainer.eval_loss(val))
        if use_cider:
            model = BidiModel(vocab, cfg, fwd=fparams, bwd=bparams, att=aparams)
            score = _validation_cider(model, val, features)
            history["val_cider"].append(score)
            _select_and_track(epoch, score, True, best, named)
        elif val:
            _select_and_track(epoch, history["val_loss"][-1], False, best, named)
        else:
            _select_and_track(epoch, history["train_loss"][-1], False, best, named)
    params = dict(best["params"])
    params.update(copy.deepcopy(frozen_backward.decoder_params().named("bwd.")))
    return Checkpoint(
        kind="bidi",
        config=cfg,
        vocab=vocab,
        params=params,
        epoch=best["epoch"],
        history=history,
    )
