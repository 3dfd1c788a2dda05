"""Numba @njit kernel lane.

Mirrors numpy_impl signatures. Fused sublayers cross the Python boundary
once per call; GEMMs go through np.dot (BLAS), small reductions are loops.
All kernels are single-threaded and deterministic.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


@njit(cache=True)
def softmax_fwd(x):
    out = np.empty_like(x)
    n, d = x.shape
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(d):
            out[i, j] /= s
    return out


@njit(cache=True)
def softmax_bwd(p, dp):
    dx = np.empty_like(p)
    n, d = p.shape
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += dp[i, j] * p[i, j]
        for j in range(d):
            dx[i, j] = p[i, j] * (dp[i, j] - dot)
    return dx


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv_std = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        istd = 1.0 / np.sqrt(var + eps)
        inv_std[i] = istd
        for j in range(d):
            h = (x[i, j] - mu) * istd
            xhat[i, j] = h
            y[i, j] = h * gain[j] + bias[j]
    return y, xhat, inv_std


@njit(cache=True)
def layer_norm_bwd(dy, xhat, inv_std, gain):
    n, d = dy.shape
    dx = np.empty_like(dy)
    dgain = np.zeros(d, dtype=dy.dtype)
    dbias = np.zeros(d, dtype=dy.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * inv_std[i]
            dgain[j] += dy[i, j] * xhat[i, j]
            dbias[j] += dy[i, j]
    return dx, dgain, dbias


@njit(cache=True)
def gelu_fwd(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in range(n):
        for j in range(d):
            y[i, j] = 0.5 * x[i, j] * (1.0 + math.erf(x[i, j] * _INV_SQRT2))
    return y


@njit(cache=True)
def gelu_bwd(x, dy):
    n, d = x.shape
    dx = np.empty_like(x)
    for i in range(n):
        for j in range(d):
            cdf = 0.5 * (1.0 + math.erf(x[i, j] * _INV_SQRT2))
            pdf = np.exp(-0.5 * x[i, j] * x[i, j]) * _INV_SQRT2PI
            dx[i, j] = dy[i, j] * (cdf + x[i, j] * pdf)
    return dx


@njit(cache=True)
def attention_fwd(q, k, v, n_heads, scale, causal):
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // n_heads
    attn = np.zeros((n_heads, lq, lk), dtype=q.dtype)
    out = np.zeros((lq, d), dtype=q.dtype)
    for h in range(n_heads):
        off = h * dh
        for i in range(lq):
            jmax = i + 1 if causal else lk
            m = -np.inf
            for j in range(jmax):
                s = 0.0
                for l in range(dh):
                    s += q[i, off + l] * k[j, off + l]
                s *= scale
                attn[h, i, j] = s
                if s > m:
                    m = s
            z = 0.0
            for j in range(jmax):
                e = np.exp(attn[h, i, j] - m)
                attn[h, i, j] = e
                z += e
            for j in range(jmax):
                a = attn[h, i, j] / z
                attn[h, i, j] = a
                for l in range(dh):
                    out[i, off + l] += a * v[j, off + l]
    return out, attn


@njit(cache=True)
def attention_bwd(q, k, v, attn, dout, n_heads, scale):
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // n_heads
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(n_heads):
        off = h * dh
        for i in range(lq):
            dot = 0.0
            # dA[i, j] needed twice; recompute to avoid an Lq x Lk buffer
            for j in range(lk):
                a = attn[h, i, j]
                if a != 0.0:
                    da = 0.0
                    for l in range(dh):
                        da += dout[i, off + l] * v[j, off + l]
                    dot += da * a
            for j in range(lk):
                a = attn[h, i, j]
                if a == 0.0:
                    continue
                da = 0.0
                for l in range(dh):
                    da += dout[i, off + l] * v[j, off + l]
                    dv[j, off + l] += a * dout[i, off + l]
                ds = a * (da - dot) * scale
                for l in range(dh):
                    dq[i, off + l] += ds * k[j, off + l]
                    dk[j, off + l] += ds * q[i, off + l]
    return dq, dk, dv


@njit(cache=True)
def ce_fwd(logits, targets, mask):
    n, vsz = logits.shape
    probs = np.empty_like(logits)
    n_valid = 0
    loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, vsz):
            if logits[i, j] > m:
                m = logits[i, j]
        z = 0.0
        for j in range(vsz):
            e = np.exp(logits[i, j] - m)
            probs[i, j] = e
            z += e
        for j in range(vsz):
            probs[i, j] /= z
        if mask[i]:
            n_valid += 1
            loss -= logits[i, targets[i]] - m - np.log(z)
    return loss / n_valid, probs, n_valid


@njit(cache=True)
def ce_bwd(probs, targets, mask, n_valid, dloss):
    n, vsz = probs.shape
    dlogits = np.zeros_like(probs)
    w = dloss / n_valid
    for i in range(n):
        if not mask[i]:
            continue
        for j in range(vsz):
            dlogits[i, j] = probs[i, j] * w
        dlogits[i, targets[i]] -= w
    return dlogits


@njit(cache=True)
def _add_bias(x, b):
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            x[i, j] += b[j]
    return x


@njit(cache=True)
def _t(a):
    out = np.empty((a.shape[1], a.shape[0]), dtype=a.dtype)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j, i] = a[i, j]
    return out


@njit(cache=True)
def _colsum(a):
    out = np.zeros(a.shape[1], dtype=a.dtype)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]
    return out


@njit(cache=True)
def attn_sublayer_fwd(x, kv, gain, bias, wq, bq, wk, bk, wv, bv, wo, bo,
                      n_heads, causal, eps, is_self):
    xn, xhat, inv_std = layer_norm_fwd(x, gain, bias, eps)
    if is_self:
        src = xn
    else:
        src = kv
    q = _add_bias(np.dot(xn, wq), bq)
    k = _add_bias(np.dot(src, wk), bk)
    v = _add_bias(np.dot(src, wv), bv)
    scale = 1.0 / np.sqrt(np.float64(wq.shape[1] // n_heads))
    ctx, attn = attention_fwd(q, k, v, n_heads, scale, causal)
    y = _add_bias(np.dot(ctx, wo), bo)
    y += x
    return y, xhat, inv_std, q, k, v, attn, ctx


@njit(cache=True)
def attn_sublayer_bwd(dy, kv, gain, bias, wq, wk, wv, wo,
                      xhat, inv_std, q, k, v, attn, ctx,
                      n_heads, eps, is_self):
    scale = 1.0 / np.sqrt(np.float64(wq.shape[1] // n_heads))
    n, d = xhat.shape
    xn = np.empty_like(xhat)
    for i in range(n):
        for j in range(d):
            xn[i, j] = xhat[i, j] * gain[j] + bias[j]
    if is_self:
        src = xn
    else:
        src = kv

    dctx = np.dot(dy, _t(wo))
    dwo = np.dot(_t(ctx), dy)
    dbo = _colsum(dy)

    dq, dk, dv = attention_bwd(q, k, v, attn, dctx, n_heads, scale)

    dwq = np.dot(_t(xn), dq)
    dbq = _colsum(dq)
    dxn = np.dot(dq, _t(wq))
    dwk = np.dot(_t(src), dk)
    dbk = _colsum(dk)
    dsrc = np.dot(dk, _t(wk))
    dwv = np.dot(_t(src), dv)
    dbv = _colsum(dv)
    dsrc += np.dot(dv, _t(wv))

    dkv = np.zeros_like(kv)
    if is_self:
        dxn += dsrc
    else:
        dkv += dsrc
    dx, dgain, dbias = layer_norm_bwd(dxn, xhat, inv_std, gain)
    dx += dy
    return dx, dkv, dgain, dbias, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo


@njit(cache=True)
def ffn_sublayer_fwd(x, gain, bias, w1, b1, w2, b2, eps):
    xn, xhat, inv_std = layer_norm_fwd(x, gain, bias, eps)
    h_pre = _add_bias(np.dot(xn, w1), b1)
    h_act = gelu_fwd(h_pre)
    y = _add_bias(np.dot(h_act, w2), b2)
    y += x
    return y, xhat, inv_std, h_pre, h_act


@njit(cache=True)
def ffn_sublayer_bwd(dy, gain, bias, w1, w2, xhat, inv_std, h_pre, h_act, eps):
    dh_act = np.dot(dy, _t(w2))
    dw2 = np.dot(_t(h_act), dy)
    db2 = _colsum(dy)
    dh_pre = gelu_bwd(h_pre, dh_act)
    n, d = xhat.shape
    xn = np.empty_like(xhat)
    for i in range(n):
        for j in range(d):
            xn[i, j] = xhat[i, j] * gain[j] + bias[j]
    dw1 = np.dot(_t(xn), dh_pre)
    db1 = _colsum(dh_pre)
    dxn = np.dot(dh_pre, _t(w1))
    dx, dgain, dbias = layer_norm_bwd(dxn, xhat, inv_std, gain)
    dx += dy
    return dx, dgain, dbias, dw1, db1, dw2, db2


@njit(cache=True)
def adamw_update(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    # caller passes 1-D views over contiguous parameter storage
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] = p[i] - lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps) - lr * wd * p[i]
