"""Shared test oracles, kept deliberately independent of the package code."""

from __future__ import annotations

import itertools
from functools import lru_cache


@lru_cache(maxsize=None)
def lev_oracle(a: str, b: str) -> int:
    """Edit distance by exhaustive recursion over edit scripts.

    At every position we branch over match/substitute, delete and insert,
    exactly mirroring the definition.  The cache is keyed on the actual
    suffix pair, so it shares work across calls but stays a different
    algorithm from the iterative matrix in the package.
    """
    if not a:
        return len(b)
    if not b:
        return len(a)
    keep = lev_oracle(a[1:], b[1:]) + (0 if a[0] == b[0] else 1)
    delete = lev_oracle(a[1:], b) + 1
    insert = lev_oracle(a, b[1:]) + 1
    return min(keep, delete, insert)


def all_strings(alphabet: str, max_len: int):
    """Every string over ``alphabet`` with length 0..max_len."""
    for length in range(max_len + 1):
        for combo in itertools.product(alphabet, repeat=length):
            yield "".join(combo)


class TableModel:
    """Fake decoder: a probability table keyed by the emitted-token history."""

    def __init__(self, table, default):
        self.table = table
        self.default = default

    def step(self, state):
        import numpy as np

        probs = np.array(self.table.get(state, self.default), dtype=np.float64)
        logp = np.log(probs)

        def advance(token):
            return state + (token,)

        return logp, advance


def enumerate_paths(model, end_id, max_len):
    """Exhaustively score every finalized path of a table model."""
    done = []

    def walk(state, score, length):
        logp, _ = model.step(state)
        if length == max_len:
            done.append((list(state), score))
            return
        for tok in range(logp.shape[0]):
            s = score + float(logp[tok])
            if tok == end_id:
                done.append((list(state), s))
            else:
                walk(state + (tok,), s, length + 1)

    walk((), 0.0, 0)
    done.sort(key=lambda e: (-e[1], e[0]))
    return done


def max_grad_error(loss_fn, named, grads, eps=1e-5, floor=1e-3):
    """Worst zero-guarded relative error between analytic gradients and
    central finite differences, over every element of every tensor.

    The guard keeps near-zero gradients (where the finite difference is
    pure cancellation noise) from dominating the metric; anything of
    honest magnitude is compared fully relatively.
    """
    worst = 0.0
    for name, arr in named.items():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp = loss_fn()
            flat[idx] = orig - eps
            lm = loss_fn()
            flat[idx] = orig
            numeric = (lp - lm) / (2 * eps)
            rel = abs(numeric - gflat[idx]) / max(abs(numeric), abs(gflat[idx]), floor)
            worst = max(worst, rel)
    return worst
