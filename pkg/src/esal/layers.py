"""Parameter store, initializers, and the neural building blocks.

The LSTM runs as one fused graph node per direction: forward caches the gate
activations and the backward closure replays them through hand-written BPTT.
That keeps graphs small enough to train on CPU while staying inside the same
autodiff contract as every other op.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add_rowvec,
    concat,
    gather_rows,
    matmul,
    node,
    reshape,
    softmax,
    tanh,
    transpose,
)


@dataclass(frozen=True)
class LayerDims:
    """Width settings shared by the model and checkpoint code."""

    embed_dim: int = 24
    hidden_dim: int = 20  # per direction; BiLSTM outputs are 2x this
    gate_hidden: int = 20
    ffn_hidden: int = 40

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim, self.gate_hidden, self.ffn_hidden) < 1:
            raise ValueError("dims must be positive")


class ParamStore:
    """Named parameter registry with deterministic creation order."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; names and shapes must match."""
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise KeyError(
                f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=self.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: shape {arr.shape} != {t.data.shape}"
                )
            t.data = arr.copy()

    def export_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}


# ---------------------------------------------------------------------------
# Initializers


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_linear(store: ParamStore, rng, name: str, in_dim: int, out_dim: int):
    w = store.add(f"{name}.W", xavier_uniform(rng, in_dim, out_dim, (in_dim, out_dim)))
    b = store.add(f"{name}.b", np.zeros(out_dim))
    return w, b


def init_lstm(store: ParamStore, rng, name: str, in_dim: int, hid: int):
    """Gate blocks ordered i, f, g, o; forget-gate bias starts at one."""
    w_ih = store.add(
        f"{name}.W_ih", xavier_uniform(rng, in_dim, 4 * hid, (4 * hid, in_dim))
    )
    w_hh = store.add(
        f"{name}.W_hh", xavier_uniform(rng, hid, 4 * hid, (4 * hid, hid))
    )
    b = np.zeros(4 * hid)
    b[hid : 2 * hid] = 1.0
    bias = store.add(f"{name}.b", b)
    return w_ih, w_hh, bias


def init_embedding(store: ParamStore, rng, name: str, vocab: int, dim: int, pad_id: int = 0):
    w = rng.standard_normal((vocab, dim))
    w[pad_id] = 0.0
    return store.add(name, w)


# ---------------------------------------------------------------------------
# Linear / FFN


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[m,in] @ W[in,out] + b[out]."""
    return add_rowvec(matmul(x, w), b)


def ffn_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer feed-forward with tanh between."""
    return linear(tanh(linear(x, w1, b1)), w2, b2)


# ---------------------------------------------------------------------------
# Fused LSTM


def lstm_run(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over x[T,in]; returns the hidden sequence [T,hid].

    Single fused node: forward caches per-step gate activations, backward
    replays them in reverse (BPTT) and emits dense parameter gradients.
    """
    xd = x.data
    if xd.ndim != 2:
        raise ShapeError(f"lstm_run: expected [T,in], got {x.shape}")
    hid4, in_dim = w_ih.shape
    hid = hid4 // 4
    if in_dim != xd.shape[1] or w_hh.shape != (hid4, hid) or b.shape != (hid4,):
        raise ShapeError(
            f"lstm_run: weight shapes {w_ih.shape}/{w_hh.shape}/{b.shape} "
            f"do not match input {x.shape}"
        )
    T = xd.shape[0]
    dt = xd.dtype

    pre_x = xd @ w_ih.data.T + b.data  # [T, 4h]
    gates = np.empty((T, hid4), dtype=dt)  # activated i,f,g,o
    cs = np.empty((T, hid), dtype=dt)
    tcs = np.empty((T, hid), dtype=dt)
    hs = np.empty((T, hid), dtype=dt)
    h = np.zeros(hid, dtype=dt)
    c = np.zeros(hid, dtype=dt)
    w_hh_d = w_hh.data
    # One fused sigmoid per step; overflow in exp(-z) saturates to exactly 0.
    with np.errstate(over="ignore"):
        for t in range(T):
            z = pre_x[t] + w_hh_d @ h
            act = 1.0 / (1.0 + np.exp(-z))
            act[2 * hid : 3 * hid] = np.tanh(z[2 * hid : 3 * hid])
            i = act[:hid]
            f = act[hid : 2 * hid]
            g = act[2 * hid : 3 * hid]
            o = act[3 * hid :]
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[t] = act
            cs[t] = c
            tcs[t] = tc
            hs[t] = h

    def backward(g_out):
        # Gate-derivative factors have no recurrent dependency: precompute
        # them for all steps, leaving only dh/dc chaining in the loop.
        i = gates[:, :hid]
        f = gates[:, hid : 2 * hid]
        gg = gates[:, 2 * hid : 3 * hid]
        o = gates[:, 3 * hid :]
        c_prev = np.zeros_like(cs)
        c_prev[1:] = cs[:-1]
        dtc = o * (1.0 - tcs * tcs)
        di_fac = gg * i * (1.0 - i)
        df_fac = c_prev * f * (1.0 - f)
        dg_fac = i * (1.0 - gg * gg)
        do_fac = tcs * o * (1.0 - o)
        dZ = np.empty((T, hid4), dtype=dt)
        dh_next = np.zeros(hid, dtype=dt)
        dc_next = np.zeros(hid, dtype=dt)
        w_hh_t = np.ascontiguousarray(w_hh.data.T)
        for t in range(T - 1, -1, -1):
            zt = dZ[t]
            dh = g_out[t] + dh_next
            dc = dh * dtc[t] + dc_next
            np.multiply(dc, di_fac[t], out=zt[:hid])
            np.multiply(dc, df_fac[t], out=zt[hid : 2 * hid])
            np.multiply(dc, dg_fac[t], out=zt[2 * hid : 3 * hid])
            np.multiply(dh, do_fac[t], out=zt[3 * hid :])
            dh_next = w_hh_t @ zt
            dc_next = dc * f[t]
        h_prev = np.zeros((T, hid), dtype=dt)
        if T > 1:
            h_prev[1:] = hs[:-1]
        g_w_ih = dZ.T @ xd
        g_w_hh = dZ.T @ h_prev
        g_b = dZ.sum(axis=0)
        g_x = dZ @ w_ih.data
        return g_x, g_w_ih, g_w_hh, g_b

    return node(hs, (x, w_ih, w_hh, b), backward)


def reverse_rows(x: Tensor) -> Tensor:
    data = x.data[::-1].copy()
    return node(data, (x,), lambda g: (g[::-1].copy(),))


def bilstm_forward(x: Tensor, fwd_params, bwd_params) -> Tensor:
    """Bidirectional LSTM over x[T,in] -> [T, 2*hid] (forward ++ backward)."""
    hf = lstm_run(x, *fwd_params)
    hb = reverse_rows(lstm_run(reverse_rows(x), *bwd_params))
    return concat([hf, hb], axis=1)


# ---------------------------------------------------------------------------
# Attention pieces


def self_attn_pool(h: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Pool a sequence h[T,d] into one vector with a learned scorer.

    Scores are w @ h_t + b per step, softmaxed over steps, then used as
    mixing weights.  Returns (pooled [d], weights [T]).
    """
    if h.data.ndim != 2:
        raise ShapeError(f"self_attn_pool: expected [T,d], got {h.shape}")
    if w.data.ndim != 2 or w.shape[0] != 1:
        raise ShapeError(f"self_attn_pool: scorer weight must be [1,d], got {w.shape}")
    scores = add_rowvec(matmul(h, transpose(w)), b)  # [T,1]
    alpha = softmax(reshape(scores, (scores.shape[0],)))  # [T]
    return matmul(alpha, h), alpha


def attn_weights(queries: Tensor, keys: Tensor) -> Tensor:
    """Dot-product attention weights: softmax over keys for each query row.

    queries[m,d] x keys[T,d] -> [m,T]; no scaling factor is applied.
    """
    return softmax(matmul(queries, transpose(keys)))


def attn_apply(weights: Tensor, values: Tensor) -> Tensor:
    """weights[m,T] @ values[T,d] -> [m,d]."""
    return matmul(weights, values)


def attn_query(h: Tensor, q: Tensor) -> tuple[Tensor, Tensor]:
    """Attend over h[n,d] with query q[d]: returns (mix [d], weights [n])."""
    if h.data.ndim != 2 or q.data.ndim != 1 or h.shape[1] != q.shape[0]:
        raise ShapeError(f"attn_query: shapes {h.shape} and {q.shape} incompatible")
    p = softmax(matmul(h, q))  # [n]
    return matmul(p, h), p


def bilinear_score(w: Tensor, q: Tensor, k: Tensor) -> Tensor:
    """q @ W @ k for vectors q,k and square-ish W; scalar output."""
    return matmul(matmul(q, w), k)


def embedding_forward(table: Tensor, ids) -> Tensor:
    """Trainable row lookup: table[V,d] gathered at the given token ids."""
    return gather_rows(table, ids)
