"""Cursor-aware caption completion: prefix forcing, beam search, candidates.

Given an image feature, the typed text and a cursor offset, both completers
force the decoder through the text left of the cursor and beam-search the
rest.  The prefix-only completer ignores text right of the cursor entirely;
the bidirectional completer first encodes the whole input with the backward
decoder and attends over those states, so the right-hand text conditions
the completion softly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import nn
from .decoders import (
    AttentionParams,
    BackwardStateSequence,
    DecodeState,
    DecoderConfig,
    DecoderParams,
    _advance,
    _emit,
    _emit_attention,
    backward_states,
    init_state,
)
from .textcore import Vocabulary, decode, encode

# step_fn(state) -> (log-probability vector, advance(token) -> next state)
StepFn = Callable[..., tuple[np.ndarray, Callable[[int], object]]]


@dataclass(frozen=True)
class CompletionRequest:
    image_feature: np.ndarray
    text: str
    cursor: int
    k: int = 5

    def __post_init__(self):
        if not 0 <= self.cursor <= len(self.text):
            raise ValueError(f"cursor out of bounds: {self.cursor} for length {len(self.text)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class Candidate:
    text: str
    score: float
    rank: int


def split_at_cursor(text: str, cursor: int) -> tuple[str, str]:
    """Split into (left, right) at a code-point offset."""
    if not 0 <= cursor <= len(text):
        raise ValueError(f"cursor out of bounds: {cursor} for length {len(text)}")
    return text[:cursor], text[cursor:]


def _beam_search_pool(
    step_fn: StepFn,
    init: object,
    k: int,
    max_len: int,
    end_id: int,
    shadow_cap: Optional[int] = None,
) -> tuple[list[tuple[list[int], float]], list[tuple[list[int], float]]]:
    """Width-k beam search with slot semantics.

    The search keeps k hypothesis slots; a slot finalizes when its beam
    emits ``end_id`` (the end token is not part of the returned sequence)
    or survives to ``max_len``, and finalized slots stop expanding (so
    width 1 is exactly greedy decoding).  Scores are sums of token
    log-probabilities relative to ``init``; no length normalization; ties
    sort deterministically by token sequence.

    Returns (primary, shadow): primary is the up-to-k finalized beams,
    best first; shadow holds end-token expansions that fell outside the
    slots, kept solely so callers can backfill after text deduplication.
    """
    if shadow_cap is None:
        shadow_cap = 3 * k
    live: list[tuple[float, tuple[int, ...], object]] = [(0.0, (), init)]
    primary: list[tuple[float, tuple[int, ...]]] = []
    shadow: list[tuple[float, tuple[int, ...]]] = []
    for _ in range(max_len):
        remaining = k - len(primary)
        if remaining <= 0 or not live:
            break
        expansions = []
        for score, tokens, state in live:
            logp, advance = step_fn(state)
            top = np.argpartition(-logp, min(remaining, logp.shape[0] - 1))[: remaining + 1]
            for tok in top:
                expansions.append((score + float(logp[tok]), int(tok), tokens, advance))
        expansions.sort(key=lambda e: (-e[0], e[2], e[1]))
        next_live = []
        for rank, (score, tok, tokens, advance) in enumerate(expansions):
            if rank < remaining:
                if tok == end_id:
                    primary.append((score, tokens))
                else:
                    next_live.append((score, tokens + (tok,), advance(tok)))
            elif tok == end_id and len(shadow) < shadow_cap:
                shadow.append((score, tokens))
        live = next_live
    primary.extend((score, tokens) for score, tokens, _ in live)
    primary.sort(key=lambda e: (-e[0], e[1]))
    shadow.sort(key=lambda e: (-e[0], e[1]))
    return (
        [(list(tokens), score) for score, tokens in primary],
        [(list(tokens), score) for score, tokens in shadow],
    )


def beam_search(
    step_fn: StepFn, init: object, k: int, max_len: int, end_id: int
) -> list[tuple[list[int], float]]:
    """The k best finalized beams (fewer if the model cannot produce k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return _beam_search_pool(step_fn, init, k, max_len, end_id)[0]


def _plain_step(params: DecoderParams) -> StepFn:
    def step(state: DecodeState):
        p, h2, c2 = _emit(params, state)
        logp = nn.log_probs(p)

        def advance(token: int) -> DecodeState:
            return _advance(params, state, h2, c2, token, float(logp[token]))

        return logp, advance

    return step


def _attention_stepper(aparams: AttentionParams, fparams: DecoderParams, hb: BackwardStateSequence) -> StepFn:
    def step(state: DecodeState):
        p, h2, c2, _ = _emit_attention(aparams, fparams, state, hb)
        logp = nn.log_probs(p)

        def advance(token: int) -> DecodeState:
            return _advance(fparams, state, h2, c2, token, float(logp[token]))

        return logp, advance

    return step


def _force_prefix(
    step_fn: StepFn, state: object, prefix_ids: list[int]
) -> tuple[object, float]:
    score = 0.0
    for tok in prefix_ids:
        logp, advance = step_fn(state)
        score += float(logp[tok])
        state = advance(tok)
    return state, score


def _assemble(
    vocab: Vocabulary,
    left: str,
    prefix_score: float,
    primary: list[tuple[list[int], float]],
    shadow: list[tuple[list[int], float]],
    k: int,
) -> list[Candidate]:
    """Decode beams to text and keep the k best distinct candidates.

    Primary beams are taken first; duplicate texts (distinct token
    sequences can render identically) are dropped and backfilled from the
    shadow pool.  The original left-of-cursor text is preserved verbatim
    (decoding the prefix would mangle out-of-vocabulary user input).
    """
    chosen: list[tuple[str, float]] = []
    seen: set[str] = set()
    for tokens, score in primary + shadow:
        text = left + decode(vocab, tokens)
        if text in seen:
            continue
        seen.add(text)
        chosen.append((text, prefix_score + score))
        if len(chosen) == k:
            break
    chosen.sort(key=lambda c: (-c[1], c[0]))
    return [Candidate(text=t, score=s, rank=i + 1) for i, (t, s) in enumerate(chosen)]


def complete_show_and_tell(
    params: DecoderParams,
    req: CompletionRequest,
    vocab: Vocabulary,
    config: DecoderConfig,
) -> list[Candidate]:
    """Prefix-only completion: text right of the cursor is discarded."""
    left, _ = split_at_cursor(req.text, req.cursor)
    prefix_ids = encode(vocab, left)
    if len(prefix_ids) > config.N:
        raise ValueError(f"prefix exceeds maximum length: {len(prefix_ids)} > {config.N}")
    step_fn = _plain_step(params)
    state = init_state(params, req.image_feature, max_steps=config.N)
    state, prefix_score = _force_prefix(step_fn, state, prefix_ids)
    max_len = config.N - len(prefix_ids)
    if max_len == 0:
        return [Candidate(text=left, score=prefix_score, rank=1)]
    primary, shadow = _beam_search_pool(step_fn, state, req.k, max_len, vocab.end_id)
    return _assemble(vocab, left, prefix_score, primary, shadow, req.k)


def complete_abd(
    fparams: DecoderParams,
    bparams: DecoderParams,
    aparams: AttentionParams,
    req: CompletionRequest,
    vocab: Vocabulary,
    config: DecoderConfig,
) -> list[Candidate]:
    """Bidirectional completion: the whole input (both sides of the cursor)
    is encoded by the backward decoder; completion attends over its states."""
    left, _ = split_at_cursor(req.text, req.cursor)
    full_ids = encode(vocab, req.text)
    if len(full_ids) > config.N:
        raise ValueError(f"input exceeds maximum length: {len(full_ids)} > {config.N}")
    hb = backward_states(bparams, req.image_feature, full_ids, config.N)
    prefix_ids = encode(vocab, left)
    step_fn = _attention_stepper(aparams, fparams, hb)
    state = init_state(fparams, req.image_feature, max_steps=config.N)
    state, prefix_score = _force_prefix(step_fn, state, prefix_ids)
    max_len = config.N - len(prefix_ids)
    if max_len == 0:
        return [Candidate(text=left, score=prefix_score, rank=1)]
    primary, shadow = _beam_search_pool(step_fn, state, req.k, max_len, vocab.end_id)
    return _assemble(vocab, left, prefix_score, primary, shadow, req.k)


class ShowTellModel:
    """Bundle of vocabulary, config and weights for prefix-only completion."""

    kind = "forward"

    def __init__(self, vocab: Vocabulary, config: DecoderConfig, params: DecoderParams):
        self.vocab = vocab
        self.config = config
        self.params = params

    def complete(self, req: CompletionRequest) -> list[Candidate]:
        return complete_show_and_tell(self.params, req, self.vocab, self.config)


class BidiModel:
    """Backward encoder + attention-bridged forward decoder."""

    kind = "bidi"

    def __init__(
        self,
        vocab: Vocabulary,
        config: DecoderConfig,
        fwd: DecoderParams,
        bwd: DecoderParams,
        att: AttentionParams,
    ):
        self.vocab = vocab
        self.config = config
        self.fwd = fwd
        self.bwd = bwd
        self.att = att

    def complete(self, req: CompletionRequest) -> list[Candidate]:
        return complete_abd(self.fwd, self.bwd, self.att, req, self.vocab, self.config)
