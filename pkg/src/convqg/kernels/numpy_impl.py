"""Pure-numpy kernel lane.

Reference semantics for every hot kernel; the numba lane mirrors these
signatures exactly. Arrays in, arrays out, no autodiff types.
"""

import numpy as np

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

try:
    from scipy.special import erf as _erf
except ImportError:  # pragma: no cover
    _erf = np.vectorize(__import__("math").erf)


def softmax_fwd(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(p, dp):
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm over the last axis of a 2-D array.

    Returns (y, xhat, inv_std) with xhat and inv_std saved for backward.
    """
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def layer_norm_bwd(dy, xhat, inv_std, gain):
    dxhat = dy * gain
    dx = (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    ) * inv_std[:, None]
    dgain = np.sum(dy * xhat, axis=0)
    dbias = np.sum(dy, axis=0)
    return dx, dgain, dbias


def gelu_fwd(x):
    return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dy * (cdf + x * pdf)


def attention_fwd(q, k, v, n_heads, scale, causal):
    """Multi-head scaled dot-product attention.

    q: [Lq, d]; k, v: [Lk, d]. Returns (out [Lq, d], attn [H, Lq, Lk]).
    Causal masking uses -inf scores so masked weights are exactly zero and
    position i is bit-exactly independent of positions > i.
    """
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // n_heads
    attn = np.zeros((n_heads, lq, lk), dtype=q.dtype)
    out = np.zeros((lq, d), dtype=q.dtype)
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) * scale
        if causal:
            scores = np.where(
                np.arange(lk)[None, :] > np.arange(lq)[:, None], -np.inf, scores
            )
        a = softmax_fwd(scores)
        attn[h] = a
        out[:, sl] = a @ v[:, sl]
    return out, attn


def attention_bwd(q, k, v, attn, dout, n_heads, scale):
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dh = q.shape[1] // n_heads
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        a = attn[h]
        da = dout[:, sl] @ v[:, sl].T
        ds = softmax_bwd(a, da)  # masked entries have a == 0, hence ds == 0
        dq[:, sl] = (ds @ k[:, sl]) * scale
        dk[:, sl] = (ds.T @ q[:, sl]) * scale
        dv[:, sl] = a.T @ dout[:, sl]
    return dq, dk, dv


def ce_fwd(logits, targets, mask):
    """Mean negative log-likelihood over masked positions.

    Returns (loss, probs, n_valid); probs saved for the backward pass.
    """
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.sum(np.exp(shifted), axis=-1))
    logp = shifted[np.arange(logits.shape[0]), targets] - lse
    n_valid = int(np.sum(mask))
    loss = -np.sum(logp * mask) / n_valid
    probs = np.exp(shifted - lse[:, None])
    return float(loss), probs, n_valid


def ce_bwd(probs, targets, mask, n_valid, dloss):
    dlogits = probs * (mask.astype(probs.dtype) * (dloss / n_valid))[:, None]
    rows = np.arange(probs.shape[0])
    dlogits[rows, targets] -= mask.astype(probs.dtype) * (dloss / n_valid)
    return dlogits


def attn_sublayer_fwd(x, kv, gain, bias, wq, bq, wk, bk, wv, bv, wo, bo,
                      n_heads, causal, eps, is_self):
    """Pre-norm residual attention sublayer: x + MHA(LN(x), src) @ wo + bo.

    Self-attention takes keys/values from the normed x; cross-attention
    takes them from kv unchanged (kv is an encoder output, already normed).
    """
    xn, xhat, inv_std = layer_norm_fwd(x, gain, bias, eps)
    src = xn if is_self else kv
    q = xn @ wq + bq
    k = src @ wk + bk
    v = src @ wv + bv
    scale = 1.0 / np.sqrt(x.dtype.type(wq.shape[1] // n_heads))
    ctx, attn = attention_fwd(q, k, v, n_heads, scale, causal)
    y = x + ctx @ wo + bo
    return y, xhat, inv_std, q, k, v, attn, ctx


def attn_sublayer_bwd(dy, kv, gain, bias, wq, wk, wv, wo,
                      xhat, inv_std, q, k, v, attn, ctx,
                      n_heads, eps, is_self):
    scale = 1.0 / np.sqrt(dy.dtype.type(wq.shape[1] // n_heads))
    xn = xhat * gain + bias
    src = xn if is_self else kv

    dctx = dy @ wo.T
    dwo = ctx.T @ dy
    dbo = np.sum(dy, axis=0)

    dq, dk, dv = attention_bwd(q, k, v, attn, dctx, n_heads, scale)

    dwq = xn.T @ dq
    dbq = np.sum(dq, axis=0)
    dxn = dq @ wq.T
    dwk = src.T @ dk
    dbk = np.sum(dk, axis=0)
    dsrc = dk @ wk.T
    dwv = src.T @ dv
    dbv = np.sum(dv, axis=0)
    dsrc = dsrc + dv @ wv.T

    if is_self:
        dxn = dxn + dsrc
        dkv = np.zeros_like(kv)
    else:
        dkv = dsrc
    dx_ln, dgain, dbias = layer_norm_bwd(dxn, xhat, inv_std, gain)
    dx = dy + dx_ln
    return dx, dkv, dgain, dbias, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo


def ffn_sublayer_fwd(x, gain, bias, w1, b1, w2, b2, eps):
    """Pre-norm residual feed-forward sublayer: x + gelu(LN(x) @ w1) @ w2."""
    xn, xhat, inv_std = layer_norm_fwd(x, gain, bias, eps)
    h_pre = xn @ w1 + b1
    h_act = gelu_fwd(h_pre)
    y = x + h_act @ w2 + b2
    return y, xhat, inv_std, h_pre, h_act


def ffn_sublayer_bwd(dy, gain, bias, w1, w2, xhat, inv_std, h_pre, h_act, eps):
    dh_act = dy @ w2.T
    dw2 = h_act.T @ dy
    db2 = np.sum(dy, axis=0)
    dh_pre = gelu_bwd(h_pre, dh_act)
    xn = xhat * gain + bias
    dw1 = xn.T @ dh_pre
    db1 = np.sum(dh_pre, axis=0)
    dxn = dh_pre @ w1.T
    dx_ln, dgain, dbias = layer_norm_bwd(dxn, xhat, inv_std, gain)
    dx = dy + dx_ln
    return dx, dgain, dbias, dw1, db1, dw2, db2


def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    """Decoupled-weight-decay Adam step, in place on p/m/v."""
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p[:] = p - lr * mhat / (np.sqrt(vhat) + eps) - lr * wd * p
