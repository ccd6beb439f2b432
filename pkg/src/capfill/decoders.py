"""Decoding networks for caption completion.

Three pieces live here:

* a plain forward decoder (image embedding in, one character out per step),
* the same network run right-to-left as a backward decoder, producing a
  fixed-length sequence of hidden states whatever the input length,
* an attention bridge that lets a forward decoder condition each step on
  those backward states, so text on both sides of the cursor can steer the
  completion.

All step functions are pure: they never mutate parameters or the incoming
state, so any number of decodes may share one parameter set concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as K
from . import nn
from .nn import LinearParams, LstmParams


@dataclass(frozen=True)
class DecoderConfig:
    m: int  # vocabulary size
    d: int = 128  # LSTM hidden size
    d_embed: int = 64  # character embedding size
    feature_dim: int = 2048  # image feature dimensionality
    N: int = 30  # maximum sequence length

    def __post_init__(self):
        for name in ("d", "d_embed", "feature_dim", "N", "m"):
            if getattr(self, name) < 1:
                raise ValueError(f"DecoderConfig.{name} must be positive")

    def to_doc(self) -> dict:
        return {
            "d": self.d,
            "d_embed": self.d_embed,
            "feature_dim": self.feature_dim,
            "N": self.N,
            "m": self.m,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DecoderConfig":
        return cls(**doc)


@dataclass
class DecoderParams:
    """Weights for one decoder (used forward, backward, or with attention).

    ``lstm.d_in`` is the embedding size for plain decoding and the hidden
    size when the step input is an attention mix.
    """

    embed: np.ndarray  # (m, d_embed)
    img_proj: LinearParams  # feature_dim -> d_embed
    lstm: LstmParams
    out: LinearParams  # d -> m

    @classmethod
    def create(
        cls, rng: np.random.Generator, cfg: DecoderConfig, attention_input: bool = False
    ) -> "DecoderParams":
        d_in = cfg.d if attention_input else cfg.d_embed
        return cls(
            embed=rng.uniform(-nn.INIT_SCALE, nn.INIT_SCALE, (cfg.m, cfg.d_embed)),
            img_proj=nn.init_linear(rng, cfg.feature_dim, cfg.d_embed),
            lstm=nn.init_lstm(rng, d_in, cfg.d),
            out=nn.init_linear(rng, cfg.d, cfg.m),
        )

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {
            f"{prefix}embed": self.embed,
            f"{prefix}img_proj.w": self.img_proj.w,
            f"{prefix}img_proj.b": self.img_proj.b,
            f"{prefix}lstm.wx": self.lstm.wx,
            f"{prefix}lstm.wh": self.lstm.wh,
            f"{prefix}lstm.b": self.lstm.b,
            f"{prefix}out.w": self.out.w,
            f"{prefix}out.b": self.out.b,
        }

    @classmethod
    def from_named(cls, t: dict[str, np.ndarray], prefix: str = "") -> "DecoderParams":
        return cls(
            embed=t[f"{prefix}embed"],
            img_proj=LinearParams(t[f"{prefix}img_proj.w"], t[f"{prefix}img_proj.b"]),
            lstm=LstmParams(t[f"{prefix}lstm.wx"], t[f"{prefix}lstm.wh"], t[f"{prefix}lstm.b"]),
            out=LinearParams(t[f"{prefix}out.w"], t[f"{prefix}out.b"]),
        )


# The forward and backward decoders share one weight layout.
ForwardDecoderParams = DecoderParams
BackwardDecoderParams = DecoderParams


@dataclass
class AttentionParams:
    """Pre-weight layer mapping [token embedding ; hidden] to N scores."""

    att: LinearParams  # (d_embed + d) -> N

    @classmethod
    def create(cls, rng: np.random.Generator, cfg: DecoderConfig) -> "AttentionParams":
        return cls(att=nn.init_linear(rng, cfg.d_embed + cfg.d, cfg.N))

    @property
    def N(self) -> int:
        return self.att.d_out

    def named(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}att.w": self.att.w, f"{prefix}att.b": self.att.b}

    @classmethod
    def from_named(cls, t: dict[str, np.ndarray], prefix: str = "") -> "AttentionParams":
        return cls(att=LinearParams(t[f"{prefix}att.w"], t[f"{prefix}att.b"]))


@dataclass(frozen=True)
class DecodeState:
    """One hypothesis during decoding.

    ``x`` is the input vector for the next LSTM step: the projected image
    feature before any token was emitted, afterwards the embedding of
    ``last_token``.
    """

    h: np.ndarray
    c: np.ndarray
    x: np.ndarray
    last_token: Optional[int]
    step: int
    log_prob: float
    max_steps: Optional[int] = None


@dataclass
class BackwardStateSequence:
    """Fixed-length right-to-left hidden states.

    ``states[0]`` is the initial (zero) hidden vector; ``states[1..N]`` are
    the N step outputs in generation order.  ``tokens``/``forced`` record,
    per step, which token was emitted and whether it was forced — kept for
    instrumentation and tests.
    """

    states: np.ndarray  # (N + 1, d)
    tokens: list[int] = field(default_factory=list)
    forced: list[bool] = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def num_forced(self) -> int:
        return sum(self.forced)

    @property
    def num_free(self) -> int:
        return len(self.forced) - self.num_forced


def init_state(
    params: DecoderParams, image_feature: np.ndarray, max_steps: Optional[int] = None
) -> DecodeState:
    """Fresh decode state: zero hidden/cell, image embedding queued as input."""
    feature = np.asarray(image_feature, dtype=np.float64)
    if feature.ndim != 1 or feature.shape[0] != params.img_proj.d_in:
        raise ValueError(
            f"init_state: image feature has shape {feature.shape}, "
            f"expected ({params.img_proj.d_in},)"
        )
    d = params.lstm.d
    return DecodeState(
        h=np.zeros(d),
        c=np.zeros(d),
        x=nn.linear(params.img_proj, feature),
        last_token=None,
        step=0,
        log_prob=0.0,
        max_steps=max_steps,
    )


def _check_step(state: DecodeState) -> None:
    if state.max_steps is not None and state.step >= state.max_steps:
        raise ValueError(f"decode step overflow: step {state.step} at limit")


def _emit(params: DecoderParams, state: DecodeState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the LSTM one step from ``state`` and compute the next-token
    distribution.  Returns (p, h_next, c_next)."""
    h2, c2 = nn.lstm_step(params.lstm, state.h, state.c, state.x)
    p = K.softmax(K.affine(h2, params.out.w, params.out.b))
    return p, h2, c2


def _advance(
    params: DecoderParams,
    state: DecodeState,
    h2: np.ndarray,
    c2: np.ndarray,
    token: int,
    log_p_token: float,
) -> DecodeState:
    return DecodeState(
        h=h2,
        c=c2,
        x=params.embed[token],
        last_token=token,
        step=state.step + 1,
        log_prob=state.log_prob + log_p_token,
        max_steps=state.max_steps,
    )


def _floored_log(p: np.ndarray, token: int) -> float:
    return float(np.log(max(float(p[token]), nn.PROB_FLOOR)))


def forward_step(params: DecoderParams, state: DecodeState) -> tuple[np.ndarray, DecodeState]:
    """Greedy step: ties in the argmax break toward the lowest token id."""
    _check_step(state)
    p, h2, c2 = _emit(params, state)
    token = int(np.argmax(p))
    return p, _advance(params, state, h2, c2, token, _floored_log(p, token))


def forced_step(params: DecoderParams, state: DecodeState, token: int) -> DecodeState:
    """Same LSTM update as :func:`forward_step` with the emitted token
    overridden; the override's log-probability still accrues to the score."""
    _check_step(state)
    if not 0 <= token < params.embed.shape[0]:
        raise ValueError(f"forced_step: token {token} out of range")
    p, h2, c2 = _emit(params, state)
    return _advance(params, state, h2, c2, token, _floored_log(p, token))


def backward_states(
    bparams: DecoderParams,
    image_feature: np.ndarray,
    input_ids: list[int],
    N: int,
) -> BackwardStateSequence:
    """Run the backward decoder for exactly N steps and collect all states.

    The first N - n steps sample greedily (the not-yet-typed tail of the
    sentence, generated right to left); the last n steps are forced with the
    user input reversed.  Output length is always N + 1.
    """
    n = len(input_ids)
    if n > N:
        raise ValueError(f"input exceeds maximum length: {n} > {N}")
    state = init_state(bparams, image_feature, max_steps=N)
    d = bparams.lstm.d
    seq = BackwardStateSequence(states=np.zeros((N + 1, d)))
    reversed_ids = input_ids[::-1]
    free_steps = N - n
    for s in range(N):
        if s < free_steps:
            _, state = forward_step(bparams, state)
            seq.forced.append(False)
        else:
            state = forced_step(bparams, state, reversed_ids[s - free_steps])
            seq.forced.append(True)
        seq.states[s + 1] = state.h
        seq.tokens.append(state.last_token)
    return seq


def _attend(
    aparams: AttentionParams, state: DecodeState, hb: BackwardStateSequence
) -> tuple[np.ndarray, np.ndarray]:
    """Mix the backward step outputs (rows 1..N; the initial zero state is
    excluded) with weights from the current token embedding and hidden."""
    if hb.states.shape[0] != aparams.N + 1:
        raise ValueError(
            f"backward state sequence has {hb.states.shape[0]} vectors, "
            f"expected {aparams.N + 1}"
        )
    q = np.concatenate([state.x, state.h])
    mixed, a, _ = K.attention_fwd(q, hb.states[1:], aparams.att.w, aparams.att.b)
    return mixed, a


def _emit_attention(
    aparams: AttentionParams,
    fparams: DecoderParams,
    state: DecodeState,
    hb: BackwardStateSequence,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    mixed, a = _attend(aparams, state, hb)
    h2, c2 = nn.lstm_step(fparams.lstm, state.h, state.c, mixed)
    p = K.softmax(K.affine(h2, fparams.out.w, fparams.out.b))
    return p, h2, c2, a


def attention_step(
    aparams: AttentionParams,
    fparams: DecoderParams,
    state: DecodeState,
    hb: BackwardStateSequence,
) -> tuple[np.ndarray, DecodeState]:
    """Greedy decoding step where the LSTM input is the attention mix
    (the token embedding steers only the attention weights)."""
    _check_step(state)
    p, h2, c2, _ = _emit_attention(aparams, fparams, state, hb)
    token = int(np.argmax(p))
    return p, _advance(fparams, state, h2, c2, token, _floored_log(p, token))


def attention_forced_step(
    aparams: AttentionParams,
    fparams: DecoderParams,
    state: DecodeState,
    hb: BackwardStateSequence,
    token: int,
) -> DecodeState:
    _check_step(state)
    if not 0 <= token < fparams.embed.shape[0]:
        raise ValueError(f"attention_forced_step: token {token} out of range")
    p, h2, c2, _ = _emit_attention(aparams, fparams, state, hb)
    return _advance(fparams, state, h2, c2, token, _floored_log(p, token))


def attention_weights(
    aparams: AttentionParams,
    state: DecodeState,
    hb: BackwardStateSequence,
) -> np.ndarray:
    """The attention weight vector for the current state (for inspection)."""
    _, a = _attend(aparams, state, hb)
    return a
