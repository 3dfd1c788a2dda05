"""Differentiable operations.

Granular ops (matmul, softmax, layer_norm, l2_distance, relu_hinge,
cross_entropy_tokens, ...) plus fused residual sublayers used by the
encoder/decoder stacks. Each op validates shapes, runs the active kernel
lane forward, and records a backward closure when a Graph is active.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import Tensor, active_graph, check_finite

LN_EPS = 1e-5


def _wrap(kind, data, inputs, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    check_finite(kind, out.data)
    graph = active_graph()
    if graph is not None and out.requires_grad:
        graph.record(kind, inputs, out, backward_fn)
    return out


def _same_dtype(*tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ValueError(f"mixed dtypes in op: {dt} vs {t.dtype}")
    return dt


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(dout):
        return [(a, dout @ b.data.T), (b, a.data.T @ dout)]

    return _wrap("matmul", data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _wrap("add", a.data + b.data, (a, b), lambda dout: [(a, dout), (b, dout)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return _wrap("sub", a.data - b.data, (a, b), lambda dout: [(a, dout), (b, -dout)])


def scale(a: Tensor, c: float) -> Tensor:
    return _wrap("scale", a.data * c, (a,), lambda dout: [(a, dout * c)])


def add_const(a: Tensor, c: float) -> Tensor:
    return _wrap("add_const", a.data + c, (a,), lambda dout: [(a, dout)])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    _same_dtype(x, b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias expects [n,d] + [d], got {x.shape} + {b.shape}")
    return _wrap(
        "add_bias",
        x.data + b.data,
        (x, b),
        lambda dout: [(x, dout), (b, dout.sum(axis=0))],
    )


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape [n, d] or [d]."""
    _same_dtype(x, w, b)
    if x.ndim == 1:
        if x.shape[0] != w.shape[0] or b.shape[0] != w.shape[1]:
            raise ValueError(f"affine shape mismatch: {x.shape}, {w.shape}, {b.shape}")
        data = x.data @ w.data + b.data

        def bwd(dout):
            return [(x, dout @ w.data.T), (w, np.outer(x.data, dout)), (b, dout)]

        return _wrap("affine", data, (x, w, b), bwd)
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape[0] != w.shape[1]:
        raise ValueError(f"affine shape mismatch: {x.shape}, {w.shape}, {b.shape}")
    data = x.data @ w.data + b.data

    def bwd(dout):
        return [
            (x, dout @ w.data.T),
            (w, x.data.T @ dout),
            (b, dout.sum(axis=0)),
        ]

    return _wrap("affine", data, (x, w, b), bwd)


def relu_hinge(x: Tensor) -> Tensor:
    """max(x, 0); subgradient at 0 is 0."""
    data = np.maximum(x.data, 0)

    def bwd(dout):
        return [(x, dout * (x.data > 0))]

    return _wrap("relu_hinge", data, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    flat = x.data.reshape(-1, x.data.shape[-1]) if x.ndim > 1 else x.data.reshape(1, -1)
    y = kernels.gelu_fwd(flat)

    def bwd(dout):
        dx = kernels.gelu_bwd(flat, np.ascontiguousarray(dout.reshape(flat.shape)))
        return [(x, dx.reshape(x.shape))]

    return _wrap("gelu", y.reshape(x.shape), (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along an axis; slices sum to 1."""
    if not np.all(np.isfinite(x.data)):
        raise ValueError("softmax requires finite input")
    moved = np.moveaxis(x.data, axis, -1)
    shape = moved.shape
    flat = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    p = kernels.softmax_fwd(flat)
    out_data = np.moveaxis(p.reshape(shape), -1, axis)

    def bwd(dout):
        dp = np.ascontiguousarray(np.moveaxis(dout, axis, -1).reshape(-1, shape[-1]))
        dx = kernels.softmax_bwd(p, dp)
        return [(x, np.moveaxis(dx.reshape(shape), -1, axis))]

    return _wrap("softmax", out_data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    _same_dtype(x, gain, bias)
    if x.ndim != 2 or gain.ndim != 1 or x.shape[1] != gain.shape[0] or gain.shape != bias.shape:
        raise ValueError(f"layer_norm expects [n,d], [d], [d]; got {x.shape}, {gain.shape}, {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    y, xhat, inv_std = kernels.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def bwd(dout):
        dx, dgain, dbias = kernels.layer_norm_bwd(
            np.ascontiguousarray(dout), xhat, inv_std, gain.data
        )
        return [(x, dx), (gain, dgain), (bias, dbias)]

    return _wrap("layer_norm", y, (x, gain, bias), bwd)


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance between equal-length vectors; grad 0 at a == b."""
    _same_dtype(a, b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"l2_distance expects equal-length vectors, got {a.shape} vs {b.shape}")
    diff = a.data - b.data
    dist = float(np.sqrt(np.sum(diff * diff)))

    def bwd(dout):
        if dist == 0.0:
            z = np.zeros_like(diff)
            return [(a, z), (b, z)]
        g = (diff / dist) * float(dout)
        return [(a, g.astype(a.dtype)), (b, (-g).astype(a.dtype))]

    return _wrap("l2_distance", np.asarray(dist, dtype=a.dtype), (a, b), bwd)


def l2_normalize(x: Tensor) -> Tensor:
    """x / ||x||; zero vector maps to zero with zero gradient."""
    if x.ndim != 1:
        raise ValueError("l2_normalize expects a vector")
    r = float(np.sqrt(np.sum(x.data * x.data)))
    out_data = x.data / r if r > 0.0 else np.zeros_like(x.data)

    def bwd(dout):
        if r == 0.0:
            return [(x, np.zeros_like(x.data))]
        dx = (dout - out_data * np.dot(out_data, dout)) / r
        return [(x, dx.astype(x.dtype))]

    return _wrap("l2_normalize", out_data, (x,), bwd)


def cross_entropy_tokens(logits: Tensor, targets, pad_mask) -> Tensor:
    """Mean over non-pad positions of -log softmax(logits)[target]."""
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    mask = np.ascontiguousarray(pad_mask, dtype=np.bool_)
    if logits.ndim != 2:
        raise ValueError("cross_entropy_tokens expects [T, V] logits")
    t_len, vocab = logits.shape
    if targets.shape != (t_len,) or mask.shape != (t_len,):
        raise ValueError("targets/pad_mask must have one entry per logit row")
    if not np.any(mask):
        raise ValueError("cross_entropy_tokens: every position is padded")
    valid_targets = targets[mask]
    if valid_targets.min() < 0 or valid_targets.max() >= vocab:
        raise ValueError("target id out of vocabulary range")
    loss, probs, n_valid = kernels.ce_fwd(logits.data, targets, mask)

    def bwd(dout):
        dlogits = kernels.ce_bwd(probs, targets, mask, n_valid, float(dout))
        return [(logits, dlogits)]

    return _wrap("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), bwd)


def embed_add_pos(emb: Tensor, pos: Tensor, ids) -> Tensor:
    """Token embedding lookup plus learned positional rows: emb[ids] + pos[:L]."""
    _same_dtype(emb, pos)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("ids must be a 1-D array")
    if len(ids) > pos.shape[0]:
        raise ValueError(f"sequence of {len(ids)} tokens exceeds max length {pos.shape[0]}")
    if len(ids) and (ids.min() < 0 or ids.max() >= emb.shape[0]):
        raise ValueError("token id out of embedding range")
    data = emb.data[ids] + pos.data[: len(ids)]

    def bwd(dout):
        demb = np.zeros_like(emb.data)
        np.add.at(demb, ids, dout)
        dpos = np.zeros_like(pos.data)
        dpos[: len(ids)] = dout
        return [(emb, demb), (pos, dpos)]

    return _wrap("embed_add_pos", data, (emb, pos), bwd)


def mean_pool_rows(x: Tensor, mask) -> Tensor:
    """Mean of the rows of x selected by a boolean mask."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if x.ndim != 2 or mask.shape != (x.shape[0],):
        raise ValueError("mean_pool_rows expects [n,d] and a length-n mask")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mean_pool_rows: empty mask")
    data = x.data[mask].sum(axis=0) / n

    def bwd(dout):
        dx = np.zeros_like(x.data)
        dx[mask] = dout / n
        return [(x, dx.astype(x.dtype))]

    return _wrap("mean_pool_rows", data, (x,), bwd)


def attn_block(x: Tensor, kv, gain: Tensor, bias: Tensor,
               wq: Tensor, bq: Tensor, wk: Tensor, bk: Tensor,
               wv: Tensor, bv: Tensor, wo: Tensor, bo: Tensor,
               n_heads: int, causal: bool = False) -> Tensor:
    """Fused pre-norm residual attention sublayer (one tape node).

    kv=None gives self-attention over LN(x); a Tensor kv gives
    cross-attention with keys/values from kv. Causal masking only makes
    sense for self-attention.
    """
    is_self = kv is None
    if causal and not is_self:
        raise ValueError("causal masking applies to self-attention only")
    kv_t = x if is_self else kv
    tensors = (x, gain, bias, wq, bq, wk, bk, wv, bv, wo, bo) if is_self else (
        x, kv_t, gain, bias, wq, bq, wk, bk, wv, bv, wo, bo)
    _same_dtype(*tensors)
    y, xhat, inv_std, q, k, v, attn, ctx = kernels.attn_sublayer_fwd(
        x.data, kv_t.data, gain.data, bias.data,
        wq.data, bq.data, wk.data, bk.data, wv.data, bv.data, wo.data, bo.data,
        n_heads, causal, LN_EPS, is_self,
    )

    def bwd(dout):
        (dx, dkv, dgain, dbias, dwq, dbq, dwk, dbk,
         dwv, dbv, dwo, dbo) = kernels.attn_sublayer_bwd(
            np.ascontiguousarray(dout), kv_t.data, gain.data, bias.data,
            wq.data, wk.data, wv.data, wo.data,
            xhat, inv_std, q, k, v, attn, ctx,
            n_heads, LN_EPS, is_self,
        )
        grads = [(x, dx), (gain, dgain), (bias, dbias),
                 (wq, dwq), (bq, dbq), (wk, dwk), (bk, dbk),
                 (wv, dwv), (bv, dbv), (wo, dwo), (bo, dbo)]
        if not is_self:
            grads.append((kv_t, dkv))
        return grads

    return _wrap("attn_block", y, tensors, bwd)


def ffn_block(x: Tensor, gain: Tensor, bias: Tensor,
              w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Fused pre-norm residual feed-forward sublayer (one tape node)."""
    _same_dtype(x, gain, bias, w1, b1, w2, b2)
    y, xhat, inv_std, h_pre, h_act = kernels.ffn_sublayer_fwd(
        x.data, gain.data, bias.data, w1.data, b1.data, w2.data, b2.data, LN_EPS
    )

    def bwd(dout):
        dx, dgain, dbias, dw1, db1, dw2, db2 = kernels.ffn_sublayer_bwd(
            np.ascontiguousarray(dout), gain.data, bias.data, w1.data, w2.data,
            xhat, inv_std, h_pre, h_act, LN_EPS,
        )
        return [(x, dx), (gain, dgain), (bias, dbias),
                (w1, dw1), (b1, db1), (w2, dw2), (b2, db2)]

    return _wrap("ffn_block", y, (x, gain, bias, w1, b1, w2, b2), bwd)


def take_rows(x: Tensor, n: int) -> Tensor:
    """First n rows of a 2-D tensor; gradient scatters back into those rows."""
    if x.ndim != 2 or not 0 < n <= x.shape[0]:
        raise ValueError(f"cannot take {n} rows from shape {x.shape}")

    def bwd(dout):
        dx = np.zeros_like(x.data)
        dx[:n] = dout
        return [(x, dx)]

    return _wrap("take_rows", x.data[:n].copy(), (x,), bwd)


def mean_of(scalars: list[Tensor]) -> Tensor:
    """Mean of scalar tensors, composed from add/scale nodes."""
    if not scalars:
        raise ValueError("mean_of: empty list")
    acc = scalars[0]
    for t in scalars[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(scalars))
