"""Raw-array forward evaluator for finite-difference probes.

Mirrors objective.batch_loss step for step (same kernels, same accumulation
order) without any tape machinery, so a batch-loss value costs a fraction of
the op-layer path. Stage caches skip recomputing encoder outputs that a
perturbed parameter cannot affect:

  stage 0 (img.*):            recompute everything
  stage 1 (tok_emb, txt.*):   reuse cached E_i
  stage 2 (dec/out/sent.*):   reuse cached E_it

Exactness is asserted against batch_loss at the base point before use.
"""

import numpy as np

from convqg import kernels
from convqg.objective import beta_at

LN_EPS = 1e-5


def _attn(P, prefix, x, kv, n_heads, causal):
    is_self = kv is None
    out = kernels.attn_sublayer_fwd(
        x, x if is_self else kv,
        P[f"{prefix}.ln_g"], P[f"{prefix}.ln_b"],
        P[f"{prefix}.wq"], P[f"{prefix}.bq"],
        P[f"{prefix}.wk"], P[f"{prefix}.bk"],
        P[f"{prefix}.wv"], P[f"{prefix}.bv"],
        P[f"{prefix}.wo"], P[f"{prefix}.bo"],
        n_heads, causal, LN_EPS, is_self,
    )
    return out[0]


def _ffn(P, prefix, x):
    out = kernels.ffn_sublayer_fwd(
        x, P[f"{prefix}.ln_g"], P[f"{prefix}.ln_b"],
        P[f"{prefix}.w1"], P[f"{prefix}.b1"],
        P[f"{prefix}.w2"], P[f"{prefix}.b2"], LN_EPS,
    )
    return out[0]


def _ln(P, prefix, x):
    return kernels.layer_norm_fwd(x, P[f"{prefix}.ln_g"], P[f"{prefix}.ln_b"], LN_EPS)[0]


def encode_image(P, cfg, patches):
    x = patches @ P["img.proj.w"] + P["img.proj.b"]
    x = x + P["img.pos"][: len(patches)].copy()
    for i in range(cfg.n_layers):
        x = _attn(P, f"img.{i}.attn", x, None, cfg.n_heads, False)
        x = _ffn(P, f"img.{i}.ffn", x)
    return _ln(P, "img.final", x)


def encode_text(P, cfg, ids, e_i):
    x = P["tok_emb"][ids] + P["txt.pos"][: len(ids)]
    for i in range(cfg.n_layers):
        x = _attn(P, f"txt.{i}.self", x, None, cfg.n_heads, False)
        x = _attn(P, f"txt.{i}.cross", x, e_i, cfg.n_heads, False)
        x = _ffn(P, f"txt.{i}.ffn", x)
    return _ln(P, "txt.final", x)


def decoder_hidden(P, cfg, ids, e_it):
    x = P["tok_emb"][ids] + P["dec.pos"][: len(ids)]
    for i in range(cfg.n_layers):
        x = _attn(P, f"dec.{i}.self", x, None, cfg.n_heads, True)
        x = _attn(P, f"dec.{i}.cross", x, e_it, cfg.n_heads, False)
        x = _ffn(P, f"dec.{i}.ffn", x)
    return _ln(P, "dec.final", x)


def _hinge(d_pos, d_neg, margin):
    return max((d_pos - d_neg) + margin, 0.0)


def _dist(a, b):
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def _mean(values):
    acc = values[0]
    for v in values[1:]:
        acc = acc + v
    return acc * (1.0 / len(values))


def batch_total(model, batch, loss_cfg, epoch, e_i_cache=None, e_it_cache=None):
    """Scalar Eq-6 total; numerically identical to batch_loss's forward."""
    P = {name: t.data for name, t in model.params.items()}
    cfg = model.config
    alpha_eff = {"B": loss_cfg.alpha, "I": 0.0, "T": 1.0, "IT": loss_cfg.alpha}[loss_cfg.variant]
    beta_used = 0.0 if loss_cfg.variant == "B" else beta_at(loss_cfg.beta_schedule, epoch)

    cels, cl_is, cl_ts = [], [], []
    for idx, ex in enumerate(batch):
        if e_it_cache is not None:
            e_it = e_it_cache[idx]
        else:
            e_i = e_i_cache[idx] if e_i_cache is not None else encode_image(P, cfg, ex.patches)
            e_it = encode_text(P, cfg, ex.txt_ids, e_i)
        h = decoder_hidden(P, cfg, ex.dec_input, e_it)
        logits = h @ P["out.w"] + P["out.b"]
        mask = np.ones(len(ex.labels), dtype=np.bool_)
        cels.append(kernels.ce_fwd(logits, ex.labels, mask)[0])

        pooled = h[mask].sum(axis=0) / len(ex.labels)
        z = pooled @ P["sent.w"] + P["sent.b"]
        r = float(np.sqrt(np.sum(z * z)))
        q_it = z / r if r > 0.0 else np.zeros_like(z)
        q_gt = np.asarray(ex.q_gt, dtype=model.dtype)
        d_pos = _dist(q_it, q_gt)
        cl_ts.append(_hinge(d_pos, _dist(q_it, np.asarray(ex.q_t, dtype=model.dtype)), loss_cfg.margin))
        cl_is.append(_hinge(d_pos, _dist(q_it, np.asarray(ex.q_i, dtype=model.dtype)), loss_cfg.margin))

    cel = _mean(cels)
    cl = (_mean(cl_ts) * alpha_eff) + (_mean(cl_is) * (1.0 - alpha_eff))
    return ((cl * beta_used) + cel) * 0.5


def stage_caches(model, batch):
    """(E_i, E_it) caches for the current parameters."""
    P = {name: t.data for name, t in model.params.items()}
    cfg = model.config
    e_i = [encode_image(P, cfg, ex.patches) for ex in batch]
    e_it = [encode_text(P, cfg, ex.txt_ids, ei) for ex, ei in zip(batch, e_i)]
    return e_i, e_it


def stage_of(param_name: str) -> int:
    if param_name.startswith("img."):
        return 0
    if param_name == "tok_emb" or param_name.startswith("txt."):
        return 1
    return 2
