"""Numerical core: parameter containers, layer ops and the Adam optimizer.

Tensors are plain float64 C-contiguous numpy arrays.  The LSTM is the
standard peephole-free variant; fused gate matrices (see
:mod:`capfill.kernels.numpy_backend` for the layout) keep the hot loop to a
couple of kernel calls, while the per-gate views below expose the classic
parameterization for inspection and tests.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K

#: Floor applied to probabilities before taking logs.
PROB_FLOOR = 1e-12

#: Initialization range for weights (forget-gate bias excepted).
INIT_SCALE = 0.08

#: Global-norm gradient clipping threshold used during training.
GRAD_CLIP_NORM = 5.0


def _check_dim(op: str, name: str, got: int, want: int) -> None:
    if got != want:
        raise ValueError(f"{op}: operand {name} has dim {got}, expected {want}")


@dataclass
class LstmParams:
    """Fused LSTM weights: gate blocks ordered (input, forget, output, cand)."""

    wx: np.ndarray  # (d_in, 4d)
    wh: np.ndarray  # (d, 4d)
    b: np.ndarray  # (4d,)

    @property
    def d(self) -> int:
        return self.wh.shape[0]

    @property
    def d_in(self) -> int:
        return self.wx.shape[0]

    def _gate(self, mat: np.ndarray, idx: int) -> np.ndarray:
        d = self.d
        return mat[..., idx * d : (idx + 1) * d]

    # Per-gate views onto the fused tensors (read as the classic W/U/b form).
    @property
    def W_i(self):
        return self._gate(self.wx, 0)

    @property
    def W_f(self):
        return self._gate(self.wx, 1)

    @property
    def W_o(self):
        return self._gate(self.wx, 2)

    @property
    def W_g(self):
        return self._gate(self.wx, 3)

    @property
    def U_i(self):
        return self._gate(self.wh, 0)

    @property
    def U_f(self):
        return self._gate(self.wh, 1)

    @property
    def U_o(self):
        return self._gate(self.wh, 2)

    @property
    def U_g(self):
        return self._gate(self.wh, 3)

    @property
    def b_i(self):
        return self._gate(self.b, 0)

    @property
    def b_f(self):
        return self._gate(self.b, 1)

    @property
    def b_o(self):
        return self._gate(self.b, 2)

    @property
    def b_g(self):
        return self._gate(self.b, 3)


@dataclass
class LinearParams:
    w: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]


def init_lstm(rng: np.random.Generator, d_in: int, d: int) -> LstmParams:
    """Uniform init in [-INIT_SCALE, INIT_SCALE]; forget-gate bias at 1.0."""
    p = LstmParams(
        wx=rng.uniform(-INIT_SCALE, INIT_SCALE, (d_in, 4 * d)),
        wh=rng.uniform(-INIT_SCALE, INIT_SCALE, (d, 4 * d)),
        b=np.zeros(4 * d),
    )
    p.b[d : 2 * d] = 1.0
    return p


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> LinearParams:
    return LinearParams(
        w=rng.uniform(-INIT_SCALE, INIT_SCALE, (d_in, d_out)),
        b=np.zeros(d_out),
    )


def lstm_step(
    p: LstmParams, h: np.ndarray, c: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM cell update; returns (h_next, c_next)."""
    _check_dim("lstm_step", "x", x.shape[0], p.d_in)
    _check_dim("lstm_step", "h", h.shape[0], p.d)
    _check_dim("lstm_step", "c", c.shape[0], p.d)
    h2, c2, _ = K.lstm_fwd(x, h, c, p.wx, p.wh, p.b)
    return h2, c2


def linear(p: LinearParams, x: np.ndarray) -> np.ndarray:
    _check_dim("linear", "x", x.shape[0], p.d_in)
    return K.affine(x, p.w, p.b)


def softmax(v: np.ndarray) -> np.ndarray:
    if v.size == 0:
        raise ValueError("softmax: empty input")
    return K.softmax(np.asarray(v, dtype=np.float64))


def cross_entropy(p: np.ndarray, target: int) -> float:
    """-log p[target], floored so an impossible target stays finite."""
    if not 0 <= target < p.shape[0]:
        raise ValueError(f"cross_entropy: target {target} out of range for {p.shape[0]}")
    return -math.log(max(float(p[target]), PROB_FLOOR))


def log_probs(p: np.ndarray) -> np.ndarray:
    """Elementwise floored log of a probability vector."""
    return np.log(np.maximum(p, PROB_FLOOR))


@dataclass
class AdamState:
    """Per-tensor first/second moments plus the shared step counter."""

    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> AdamState:
    """One Adam step over every named tensor, mutating params in place."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"adam_update: grad {name} has shape {g.shape}, expected {p.shape}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        K.adam_step(
            p.ravel(),
            g.ravel(),
            state.m[name].ravel(),
            state.v[name].ravel(),
            state.t,
            state.lr,
            state.beta1,
            state.beta2,
            state.eps,
        )
    return state


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in params.items()}


def scale_grads(grads: dict[str, np.ndarray], factor: float) -> None:
    for g in grads.values():
        g *= factor


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale_grads(grads, max_norm / total)
    return total


def tensor_to_doc(a: np.ndarray) -> dict:
    """Lossless JSON-safe encoding of a float64 tensor."""
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype=np.float64).tobytes()).decode(
            "ascii"
        ),
    }


def tensor_from_doc(doc: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(doc["data"]), dtype=np.float64).copy()
    return a.reshape(doc["shape"])
