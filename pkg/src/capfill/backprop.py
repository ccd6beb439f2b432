"""Exact gradients for the two trainable decoder topologies.

Reverse-mode passes are written out by hand against the kernel layer; there
is no general autodiff here, just the two fixed graphs the trainer needs:

* plain teacher-forced decoding (forward or reversed captions), and
* attention-bridged decoding over a frozen backward state sequence.

Both functions return the summed cross-entropy over the target sequence and,
when a gradient dict is supplied, accumulate d(sum loss)/d(param) into it.
The finite-difference suite in the tests pins these against central
differences.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels as K
from . import nn
from .decoders import AttentionParams, BackwardStateSequence, DecoderParams


def teacher_forced_loss(
    params: DecoderParams,
    image_feature: np.ndarray,
    targets: list[int],
    grads: Optional[dict[str, np.ndarray]] = None,
    prefix: str = "",
) -> float:
    """Sum of per-step cross-entropies for one caption.

    Step t consumes the embedding of target t-1 (the projected image feature
    at t=0) and is scored against target t.  Passing ``grads`` runs the
    backward pass; keys follow ``DecoderParams.named(prefix)``.
    """
    T = len(targets)
    if T == 0:
        return 0.0
    feature = np.asarray(image_feature, dtype=np.float64)
    xs = [nn.linear(params.img_proj, feature)]
    hs = [np.zeros(params.lstm.d)]
    cs = [np.zeros(params.lstm.d)]
    gates_seq = []
    ps = []
    loss = 0.0
    for t in range(T):
        h2, c2, gates = K.lstm_fwd(
            xs[t], hs[t], cs[t], params.lstm.wx, params.lstm.wh, params.lstm.b
        )
        logits = K.affine(h2, params.out.w, params.out.b)
        if not np.isfinite(logits).all():
            raise FloatingPointError(f"non-finite logits at step {t}")
        p = K.softmax(logits)
        loss += nn.cross_entropy(p, targets[t])
        hs.append(h2)
        cs.append(c2)
        gates_seq.append(gates)
        ps.append(p)
        if t + 1 < T:
            xs.append(params.embed[targets[t]])
    if grads is None:
        return loss

    g = grads
    dh_next = np.zeros(params.lstm.d)
    dc_next = np.zeros(params.lstm.d)
    for t in range(T - 1, -1, -1):
        dlogits = ps[t].copy()
        dlogits[targets[t]] -= 1.0
        dh = K.affine_bwd(dlogits, hs[t + 1], params.out.w, g[f"{prefix}out.w"], g[f"{prefix}out.b"])
        dh += dh_next
        dx, dh_next, dc_next = K.lstm_bwd(
            dh,
            dc_next,
            xs[t],
            hs[t],
            cs[t],
            cs[t + 1],
            gates_seq[t],
            params.lstm.wx,
            params.lstm.wh,
            g[f"{prefix}lstm.wx"],
            g[f"{prefix}lstm.wh"],
            g[f"{prefix}lstm.b"],
        )
        if t == 0:
            K.affine_bwd(dx, feature, params.img_proj.w, g[f"{prefix}img_proj.w"], g[f"{prefix}img_proj.b"])
        else:
            g[f"{prefix}embed"][targets[t - 1]] += dx
    return loss


def attention_loss(
    fparams: DecoderParams,
    aparams: AttentionParams,
    hb: BackwardStateSequence,
    image_feature: np.ndarray,
    targets: list[int],
    grads: Optional[dict[str, np.ndarray]] = None,
    fwd_prefix: str = "",
    att_prefix: str = "",
) -> float:
    """Like :func:`teacher_forced_loss` but the LSTM input at each step is
    the attention mix over ``hb`` (whose vectors are constants here: no
    gradient flows into the backward decoder)."""
    T = len(targets)
    if T == 0:
        return 0.0
    feature = np.asarray(image_feature, dtype=np.float64)
    states = hb.states[1:]  # the N step outputs; the zero initial is excluded
    xs = [nn.linear(fparams.img_proj, feature)]
    hs = [np.zeros(fparams.lstm.d)]
    cs = [np.zeros(fparams.lstm.d)]
    qs, mix_as, mix_zs, mixes, gates_seq, ps = [], [], [], [], [], []
    loss = 0.0
    for t in range(T):
        q = np.concatenate([xs[t], hs[t]])
        mixed, a, z = K.attention_fwd(q, states, aparams.att.w, aparams.att.b)
        h2, c2, gates = K.lstm_fwd(
            mixed, hs[t], cs[t], fparams.lstm.wx, fparams.lstm.wh, fparams.lstm.b
        )
        logits = K.affine(h2, fparams.out.w, fparams.out.b)
        if not np.isfinite(logits).all():
            raise FloatingPointError(f"non-finite logits at step {t}")
        p = K.softmax(logits)
        loss += nn.cross_entropy(p, targets[t])
        qs.append(q)
        mix_as.append(a)
        mix_zs.append(z)
        mixes.append(mixed)
        hs.append(h2)
        cs.append(c2)
        gates_seq.append(gates)
        ps.append(p)
        if t + 1 < T:
            xs.append(fparams.embed[targets[t]])
    if grads is None:
        return loss

    g = grads
    d_embed = fparams.embed.shape[1]
    dh_next = np.zeros(fparams.lstm.d)
    dc_next = np.zeros(fparams.lstm.d)
    for t in range(T - 1, -1, -1):
        dlogits = ps[t].copy()
        dlogits[targets[t]] -= 1.0
        dh = K.affine_bwd(dlogits, hs[t + 1], fparams.out.w, g[f"{fwd_prefix}out.w"], g[f"{fwd_prefix}out.b"])
        dh += dh_next
        dmix, dh_prev, dc_next = K.lstm_bwd(
            dh,
            dc_next,
            mixes[t],
            hs[t],
            cs[t],
            cs[t + 1],
            gates_seq[t],
            fparams.lstm.wx,
            fparams.lstm.wh,
            g[f"{fwd_prefix}lstm.wx"],
            g[f"{fwd_prefix}lstm.wh"],
            g[f"{fwd_prefix}lstm.b"],
        )
        dq = K.attention_bwd(
            dmix,
            qs[t],
            states,
            aparams.att.w,
            mix_as[t],
            mix_zs[t],
            g[f"{att_prefix}att.w"],
            g[f"{att_prefix}att.b"],
        )
        dx = dq[:d_embed]
        dh_next = dh_prev + dq[d_embed:]
        if t == 0:
            K.affine_bwd(
                dx, feature, fparams.img_proj.w, g[f"{fwd_prefix}img_proj.w"], g[f"{fwd_prefix}img_proj.b"]
            )
        else:
            g[f"{fwd_prefix}embed"][targets[t - 1]] += dx
    return loss
