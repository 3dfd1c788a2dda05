"""The trainable multimodal branch.

Patch-embedding image encoder, cross-attention text encoder, causal question
decoder, and the pooled projection head that places decoder output into the
shared sentence-embedding space. Pre-norm blocks, GELU feed-forward.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .autodiff import Tensor
from .toyworld import D_IN
from .vocab import BOS_ID


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 32
    d_sent: int = 64
    dropout: float = 0.0
    d_in: int = D_IN

    def __post_init__(self):
        for f in fields(self):
            if f.name != "dropout" and getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.dropout != 0.0:
            raise ValueError("only dropout=0.0 is supported (deterministic runs)")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})


# the production-scale preset uses 12 heads x 12 layers; recorded for
# parameter accounting only, toy defaults above are what actually runs
LARGE_PRESET = ModelConfig(
    d_model=768, n_layers=12, n_heads=12, d_ff=3072, max_len=32, d_sent=768
)

_ATTN_PARAM_NAMES = ("ln_g", "ln_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
_FFN_PARAM_NAMES = ("ln_g", "ln_b", "w1", "b1", "w2", "b2")


def parameter_count(config: ModelConfig, vocab_size: int) -> int:
    """Closed-form trainable parameter count for a config and vocab size."""
    d, f, v = config.d_model, config.d_ff, vocab_size
    attn = 4 * (d * d + d) + 2 * d
    ffn = d * f + f + f * d + d + 2 * d
    per_img_layer = attn + ffn
    per_txt_layer = 2 * attn + ffn  # self + cross
    total = v * d  # shared token embedding
    total += 3 * config.max_len * d  # image/text/decoder positions
    total += config.d_in * d + d  # patch projection
    total += config.n_layers * (per_img_layer + 2 * per_txt_layer)
    total += 3 * 2 * d  # final layer norms
    total += d * v + v  # output projection
    total += d * config.d_sent + config.d_sent  # sentence head
    return total


class QuestionModel:
    """Encoder-decoder over one example at a time (sequences stay unpadded).

    Float32 by default for training; tests pass float64 for gradient checks.
    """

    def __init__(self, config: ModelConfig, vocab_size: int, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.vocab_size = vocab_size
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- parameter construction (order fixed for reproducibility) --

    def _add(self, name, array):
        self.params[name] = Tensor(array.astype(self.dtype), requires_grad=True)

    def _add_weight(self, rng, name, shape):
        self._add(name, rng.normal(0.0, 0.02, size=shape))

    def _add_attn(self, rng, prefix):
        d = self.config.d_model
        self._add(f"{prefix}.ln_g", np.ones(d))
        self._add(f"{prefix}.ln_b", np.zeros(d))
        for w, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
            self._add_weight(rng, f"{prefix}.{w}", (d, d))
            self._add(f"{prefix}.{b}", np.zeros(d))

    def _add_ffn(self, rng, prefix):
        d, f = self.config.d_model, self.config.d_ff
        self._add(f"{prefix}.ln_g", np.ones(d))
        self._add(f"{prefix}.ln_b", np.zeros(d))
        self._add_weight(rng, f"{prefix}.w1", (d, f))
        self._add(f"{prefix}.b1", np.zeros(f))
        self._add_weight(rng, f"{prefix}.w2", (f, d))
        self._add(f"{prefix}.b2", np.zeros(d))

    def _build(self, rng):
        cfg = self.config
        d = cfg.d_model
        self._add_weight(rng, "tok_emb", (self.vocab_size, d))
        self._add_weight(rng, "img.pos", (cfg.max_len, d))
        self._add_weight(rng, "txt.pos", (cfg.max_len, d))
        self._add_weight(rng, "dec.pos", (cfg.max_len, d))
        self._add_weight(rng, "img.proj.w", (cfg.d_in, d))
        self._add("img.proj.b", np.zeros(d))
        for i in range(cfg.n_layers):
            self._add_attn(rng, f"img.{i}.attn")
            self._add_ffn(rng, f"img.{i}.ffn")
        self._add("img.final.ln_g", np.ones(d))
        self._add("img.final.ln_b", np.zeros(d))
        for i in range(cfg.n_layers):
            self._add_attn(rng, f"txt.{i}.self")
            self._add_attn(rng, f"txt.{i}.cross")
            self._add_ffn(rng, f"txt.{i}.ffn")
        self._add("txt.final.ln_g", np.ones(d))
        self._add("txt.final.ln_b", np.zeros(d))
        for i in range(cfg.n_layers):
            self._add_attn(rng, f"dec.{i}.self")
            self._add_attn(rng, f"dec.{i}.cross")
            self._add_ffn(rng, f"dec.{i}.ffn")
        self._add("dec.final.ln_g", np.ones(d))
        self._add("dec.final.ln_b", np.zeros(d))
        self._add_weight(rng, "out.w", (d, self.vocab_size))
        self._add("out.b", np.zeros(self.vocab_size))
        self._add_weight(rng, "sent.w", (d, cfg.d_sent))
        self._add("sent.b", np.zeros(cfg.d_sent))
        assert sum(t.data.size for t in self.params.values()) == parameter_count(
            cfg, self.vocab_size
        )

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # -- forward passes --

    def _attn(self, x, kv, prefix, causal=False):
        p = self.params
        return ops.attn_block(
            x, kv,
            p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"],
            p[f"{prefix}.wq"], p[f"{prefix}.bq"],
            p[f"{prefix}.wk"], p[f"{prefix}.bk"],
            p[f"{prefix}.wv"], p[f"{prefix}.bv"],
            p[f"{prefix}.wo"], p[f"{prefix}.bo"],
            n_heads=self.config.n_heads, causal=causal,
        )

    def _ffn(self, x, prefix):
        p = self.params
        return ops.ffn_block(
            x,
            p[f"{prefix}.ln_g"], p[f"{prefix}.ln_b"],
            p[f"{prefix}.w1"], p[f"{prefix}.b1"],
            p[f"{prefix}.w2"], p[f"{prefix}.b2"],
        )

    def encode_image(self, patches) -> Tensor:
        """Patch rows -> contextual patch embeddings E_i."""
        if not isinstance(patches, Tensor):
            patches = Tensor(np.asarray(patches, dtype=self.dtype))
        n, d_in = patches.shape
        if d_in != self.config.d_in:
            raise ValueError(f"patch dim {d_in} != configured d_in {self.config.d_in}")
        if n > self.config.max_len:
            raise ValueError(f"{n} patches exceed max_len {self.config.max_len}")
        x = ops.affine(patches, self.params["img.proj.w"], self.params["img.proj.b"])
        x = ops.add(x, ops.take_rows(self.params["img.pos"], n))
        for i in range(self.config.n_layers):
            x = self._attn(x, None, f"img.{i}.attn")
            x = self._ffn(x, f"img.{i}.ffn")
        return ops.layer_norm(x, self.params["img.final.ln_g"], self.params["img.final.ln_b"])

    def encode_text(self, token_ids, e_i: Tensor) -> Tensor:
        """Constraint tokens + E_i -> joint embedding E_it (one row per token)."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if len(token_ids) == 0:
            raise ValueError("encode_text needs at least one token")
        if len(token_ids) > self.config.max_len:
            raise ValueError(f"{len(token_ids)} tokens exceed max_len {self.config.max_len}")
        x = ops.embed_add_pos(self.params["tok_emb"], self.params["txt.pos"], token_ids)
        for i in range(self.config.n_layers):
            x = self._attn(x, None, f"txt.{i}.self")
            x = self._attn(x, e_i, f"txt.{i}.cross")
            x = self._ffn(x, f"txt.{i}.ffn")
        return ops.layer_norm(x, self.params["txt.final.ln_g"], self.params["txt.final.ln_b"])

    def decoder_hidden(self, e_it: Tensor, target_ids) -> Tensor:
        """Causal decoder states under teacher forcing; targets start with [BOS]."""
        target_ids = np.asarray(target_ids, dtype=np.int64)
        if len(target_ids) == 0 or target_ids[0] != BOS_ID:
            raise ValueError("decoder target must begin with [BOS]")
        if len(target_ids) > self.config.max_len:
            raise ValueError(f"{len(target_ids)} tokens exceed max_len {self.config.max_len}")
        x = ops.embed_add_pos(self.params["tok_emb"], self.params["dec.pos"], target_ids)
        for i in range(self.config.n_layers):
            x = self._attn(x, None, f"dec.{i}.self", causal=True)
            x = self._attn(x, e_it, f"dec.{i}.cross")
            x = self._ffn(x, f"dec.{i}.ffn")
        return ops.layer_norm(x, self.params["dec.final.ln_g"], self.params["dec.final.ln_b"])

    def logits_from_hidden(self, hidden: Tensor) -> Tensor:
        return ops.affine(hidden, self.params["out.w"], self.params["out.b"])

    def decode_question(self, e_it: Tensor, target_ids) -> Tensor:
        """Teacher-forced next-token logits [T, V]."""
        return self.logits_from_hidden(self.decoder_hidden(e_it, target_ids))

    def question_embedding_from_hidden(self, hidden: Tensor, pad_mask=None) -> Tensor:
        """Mean-pool decoder states over non-pad positions, project to the
        sentence space, L2-normalize: the trainable question embedding Q_it."""
        if pad_mask is None:
            pad_mask = np.ones(hidden.shape[0], dtype=bool)
        pooled = ops.mean_pool_rows(hidden, pad_mask)
        z = ops.affine(pooled, self.params["sent.w"], self.params["sent.b"])
        return ops.l2_normalize(z)

    def question_embedding(self, e_it: Tensor, target_ids, pad_mask=None) -> Tensor:
        return self.question_embedding_from_hidden(
            self.decoder_hidden(e_it, target_ids), pad_mask
        )
