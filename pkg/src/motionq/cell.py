"""Queue-gated recurrent cell.

A tree-style LSTM step whose children are the q queued past frames: the input
gate, output gate and candidate are driven by the mean of the queued hidden
vectors, while each queued cell vector enters the new cell state through its
own forget gate (one shared set of forget weights evaluated against each
queued hidden entry). With q=1 the step reduces exactly to a vanilla LSTM
cell.

    g = sigmoid(W_g m + U_g mean(hidden) + b_g)      input gate
    o = sigmoid(W_o m + U_o mean(hidden) + b_o)      output gate
    u = tanh   (W_u m + U_u mean(hidden) + b_u)      candidate
    f_l = sigmoid(W_f m + U_f hidden[l] + b_f)       one forget gate per slot
    c = g*u + sum_l f_l * cell[l]
    h = o * tanh(c)
"""

from __future__ import annotations

import numpy as np

from .numkit import sigmoid

__all__ = ["CellParams", "CellCache", "cell_forward", "cell_backward"]

GATES = ("g", "f", "o", "u")


class CellParams:
    """Gate weights of the queue-gated cell, registered in a ParamStore.

    Weights are uniform in [-1/sqrt(h), 1/sqrt(h)], biases zero except the
    forget bias, which defaults to +1.0 (standard recurrent-cell practice;
    configurable).
    """

    def __init__(self, store, rng, d=2, h=32, prefix="cell", forget_bias=1.0):
        self.d = d
        self.h = h
        self.prefix = prefix
        bound = 1.0 / np.sqrt(h)
        self.W = {}
        self.U = {}
        self.b = {}
        self.dW = {}
        self.dU = {}
        self.db = {}
        for gate in GATES:
            b = np.zeros(h)
            if gate == "f":
                b += forget_bias
            self.W[gate] = store.add(f"{prefix}.W_{gate}", rng.uniform(-bound, bound, (h, d)))
            self.U[gate] = store.add(f"{prefix}.U_{gate}", rng.uniform(-bound, bound, (h, h)))
            self.b[gate] = store.add(f"{prefix}.b_{gate}", b)
            self.dW[gate] = store.grad(f"{prefix}.W_{gate}")
            self.dU[gate] = store.grad(f"{prefix}.U_{gate}")
            self.db[gate] = store.grad(f"{prefix}.b_{gate}")


class CellCache:
    """Forward intermediates retained for one backward call."""

    __slots__ = ("params", "m", "hidden", "cell", "h_tilde", "g", "o", "u", "f", "tanh_c", "used")

    def __init__(self, params, m, hidden, cell, h_tilde, g, o, u, f, tanh_c):
        self.params = params
        self.m = m
        self.hidden = hidden
        self.cell = cell
        self.h_tilde = h_tilde
        self.g = g
        self.o = o
        self.u = u
        self.f = f
        self.tanh_c = tanh_c
        self.used = False


def cell_forward(m_t, queue, params):
    """One gated step; returns (h_t, c_t, cache).

    Queue entries are indexed oldest first; the newest entry hidden[q-1] is
    the previous frame. Reads the queue, never mutates it.
    """
    m_t = np.asarray(m_t, dtype=np.float64)
    if m_t.shape != (params.d,):
        raise ValueError(f"input width {m_t.shape} does not match cell d={params.d}")
    if queue.h != params.h:
        raise ValueError(f"queue width {queue.h} does not match cell h={params.h}")
    H = queue.hidden
    C = queue.cell
    q = queue.q
    h_tilde = H.mean(axis=0)

    g = sigmoid(params.W["g"] @ m_t + params.U["g"] @ h_tilde + params.b["g"])
    o = sigmoid(params.W["o"] @ m_t + params.U["o"] @ h_tilde + params.b["o"])
    u = np.tanh(params.W["u"] @ m_t + params.U["u"] @ h_tilde + params.b["u"])

    f = np.empty_like(H)
    c_t = g * u
    for idx in range(q - 1, -1, -1):  # newest slot first
        f_idx = sigmoid(params.W["f"] @ m_t + params.U["f"] @ H[idx] + params.b["f"])
        f[idx] = f_idx
        c_t = c_t + f_idx * C[idx]
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c

    cache = CellCache(params, m_t, H, C, h_tilde, g, o, u, f, tanh_c)
    return h_t, c_t, cache


def cell_backward(cache, d_h, d_c, params):
    """Exact reverse-mode gradients of one cell step.

    Given upstream gradients for (h_t, c_t), accumulates parameter gradients
    into the ParamStore slots and returns (d_m, d_hidden, d_cell) where the
    queue gradients are (q, h) arrays aligned with the forward queue slots.
    A cache can back a single backward call; reuse raises.
    """
    if cache.used:
        raise ValueError("stale cache: backward already consumed this forward pass")
    if cache.params is not params:
        raise ValueError("cache does not belong to these parameters")
    cache.used = True

    H, C = cache.hidden, cache.cell
    q = H.shape[0]
    d_h = np.asarray(d_h, dtype=np.float64)
    d_c = np.asarray(d_c, dtype=np.float64)

    do = d_h * cache.tanh_c
    da_o = do * cache.o * (1.0 - cache.o)
    dc = d_c + d_h * cache.o * (1.0 - cache.tanh_c ** 2)
    dg = dc * cache.u
    da_g = dg * cache.g * (1.0 - cache.g)
    du = dc * cache.g
    da_u = du * (1.0 - cache.u ** 2)

    d_htilde = params.U["g"].T @ da_g + params.U["o"].T @ da_o + params.U["u"].T @ da_u
    inv_q = 1.0 / q

    d_hidden = np.empty_like(H)
    d_cell = np.empty_like(C)
    da_f_sum = np.zeros_like(da_g)
    for idx in range(q):
        f_idx = cache.f[idx]
        da_f = (dc * C[idx]) * f_idx * (1.0 - f_idx)
        d_cell[idx] = dc * f_idx
        d_hidden[idx] = d_htilde * inv_q + params.U["f"].T @ da_f
        params.dU["f"] += np.outer(da_f, H[idx])
        da_f_sum += da_f

    d_m = (
        params.W["g"].T @ da_g
        + params.W["o"].T @ da_o
        + params.W["u"].T @ da_u
        + params.W["f"].T @ da_f_sum
    )

    for gate, da in (("g", da_g), ("o", da_o), ("u", da_u)):
        params.dW[gate] += np.outer(da, cache.m)
        params.dU[gate] += np.outer(da, cache.h_tilde)
        params.db[gate] += da
    params.dW["f"] += np.outer(da_f_sum, cache.m)
    params.db["f"] += da_f_sum

    return d_m, d_hidden, d_cell
