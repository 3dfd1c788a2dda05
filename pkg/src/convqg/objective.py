"""Training objective: dual margin-contrastive losses over sentence-space
question embeddings, combined with token cross-entropy.

Per example, the trainable question embedding is pulled toward the frozen
ground-truth embedding and pushed a margin away from the frozen image-only
and text-only question embeddings. Per-example terms are averaged over the
batch; the weighted contrastive sum and the cross-entropy combine as
(beta * cl + cel) / 2 with beta following a fixed or x10-per-epoch schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor
from .auxiliary import FrozenSentenceEmbedder, iqgm, iqgm_from_caption, tqgm
from .constraints import render
from .model import QuestionModel
from .toyworld import Example, scene_to_patches
from .vocab import BOS_ID, EOS_ID, Vocab

VARIANTS = ("B", "I", "T", "IT")


@dataclass(frozen=True)
class Fixed:
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("fixed beta must be >= 0")


@dataclass(frozen=True)
class Geometric10:
    start: float = 10.0

    def __post_init__(self):
        if self.start <= 0:
            raise ValueError("geometric beta start must be > 0")


def beta_at(schedule, epoch: int) -> float:
    """Contrastive weight at an epoch: fixed, or grown x10 every epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if isinstance(schedule, Fixed):
        return schedule.value
    if isinstance(schedule, Geometric10):
        return schedule.start * 10.0 ** epoch
    raise TypeError(f"not a beta schedule: {schedule!r}")


def schedule_to_json(schedule):
    return "geometric10" if isinstance(schedule, Geometric10) else schedule.value


def schedule_from_json(obj):
    if isinstance(obj, str):
        if obj.lower() == "geometric10":
            return Geometric10()
        raise ValueError(f"unknown beta schedule {obj!r}")
    return Fixed(float(obj))


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.2
    margin: float = 0.5
    beta_schedule: object = Geometric10()
    variant: str = "IT"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        beta_at(self.beta_schedule, 0)  # type check


@dataclass
class LossBreakdown:
    cl_img: float
    cl_txt: float
    cl: float
    cel: float
    total: float
    beta_used: float


def cl_img(q_it: Tensor, q_gt: Tensor, q_i: Tensor, margin: float) -> Tensor:
    """max(||q_it - q_gt|| - ||q_it - q_i|| + margin, 0) with the image-only
    question embedding as the negative."""
    gap = ops.sub(ops.l2_distance(q_it, q_gt), ops.l2_distance(q_it, q_i))
    return ops.relu_hinge(ops.add_const(gap, margin))


def cl_txt(q_it: Tensor, q_gt: Tensor, q_t: Tensor, margin: float) -> Tensor:
    """Same hinge with the text-only question embedding as the negative."""
    gap = ops.sub(ops.l2_distance(q_it, q_gt), ops.l2_distance(q_it, q_t))
    return ops.relu_hinge(ops.add_const(gap, margin))


def combine_cl(cl_txt_term: Tensor, cl_img_term: Tensor, alpha: float) -> Tensor:
    """alpha * CL_txt + (1 - alpha) * CL_img."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return ops.add(ops.scale(cl_txt_term, alpha), ops.scale(cl_img_term, 1.0 - alpha))


def total_loss(cl: Tensor, cel: Tensor, beta: float) -> Tensor:
    """(beta * CL + CEL) / 2."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return ops.scale(ops.add(ops.scale(cl, beta), cel), 0.5)


@dataclass
class PreparedExample:
    """An Example with every frozen quantity precomputed: patch features,
    token ids, and the three constant sentence embeddings."""

    id: str
    patches: np.ndarray
    txt_ids: np.ndarray
    dec_input: np.ndarray
    labels: np.ndarray
    q_gt: np.ndarray
    q_t: np.ndarray
    q_i: np.ndarray | None
    t_prime: str
    question: str


def prepare_example(ex: Example, vocab: Vocab, embedder: FrozenSentenceEmbedder,
                    dtype=np.float32) -> PreparedExample:
    t_prime = render(ex.constraint)
    if ex.scene is not None:
        patches = scene_to_patches(ex.scene, dtype=dtype)
    elif ex.features is not None:
        patches = np.asarray(ex.features, dtype=dtype)
    else:
        raise ValueError(f"example {ex.id}: no scene and no features")

    if ex.constraint.kind == "caption":
        # captioning step skipped: image-only and text-only branches coincide
        _, q_i_emb = iqgm_from_caption(ex.constraint.payload, embedder)
        q_i = q_i_emb.vector
    elif ex.scene is not None:
        _, q_i_emb = iqgm(ex.scene, embedder)
        q_i = q_i_emb.vector
    else:
        q_i = None  # image-only branch needs a scene to caption

    _, q_t_emb = tqgm(t_prime, embedder)
    q_ids = vocab.encode(ex.question)
    return PreparedExample(
        id=ex.id,
        patches=patches,
        txt_ids=np.asarray(vocab.encode(t_prime), dtype=np.int64),
        dec_input=np.asarray([BOS_ID] + q_ids, dtype=np.int64),
        labels=np.asarray(q_ids + [EOS_ID], dtype=np.int64),
        q_gt=embedder.embed(ex.question),
        q_t=q_t_emb.vector,
        q_i=q_i,
        t_prime=t_prime,
        question=ex.question,
    )


def batch_loss(batch: list[PreparedExample], model: QuestionModel,
               cfg: LossConfig, epoch: int):
    """Scalar training loss and its diagnostic breakdown for one batch.

    Variant gating: B drops the contrastive term via beta = 0; I keeps only
    the image hinge (effective alpha 0); T only the text hinge (alpha 1);
    IT the full weighted sum. Contrastive values are always computed and
    reported; only the gated combination reaches the total. Examples without
    a scene have no image-only negative: variants I and IT reject them, and
    the reported cl_img falls back to 0 elsewhere.
    """
    if not batch:
        raise ValueError("batch_loss: empty batch")
    dtype = model.dtype
    alpha_eff = {"B": cfg.alpha, "I": 0.0, "T": 1.0, "IT": cfg.alpha}[cfg.variant]
    beta_used = 0.0 if cfg.variant == "B" else beta_at(cfg.beta_schedule, epoch)

    cels, cl_imgs, cl_txts = [], [], []
    for ex in batch:
        e_i = model.encode_image(ex.patches)
        e_it = model.encode_text(ex.txt_ids, e_i)
        hidden = model.decoder_hidden(e_it, ex.dec_input)
        logits = model.logits_from_hidden(hidden)
        cels.append(
            ops.cross_entropy_tokens(logits, ex.labels, np.ones(len(ex.labels), bool))
        )
        q_it = model.question_embedding_from_hidden(hidden)
        q_gt = Tensor(ex.q_gt, dtype=dtype)
        cl_txts.append(cl_txt(q_it, q_gt, Tensor(ex.q_t, dtype=dtype), cfg.margin))
        if ex.q_i is not None:
            cl_imgs.append(cl_img(q_it, q_gt, Tensor(ex.q_i, dtype=dtype), cfg.margin))
        elif cfg.variant in ("I", "IT"):
            raise ValueError(
                f"example {ex.id} has no scene: the image contrastive term "
                f"of variant {cfg.variant} needs one"
            )

    cel_mean = ops.mean_of(cels)
    cl_txt_mean = ops.mean_of(cl_txts)
    if cl_imgs:
        cl_img_mean = ops.mean_of(cl_imgs)
    else:
        cl_img_mean = Tensor(np.zeros((), dtype=dtype))
    cl_mean = combine_cl(cl_txt_mean, cl_img_mean, alpha_eff)
    total = total_loss(cl_mean, cel_mean, beta_used)

    breakdown = LossBreakdown(
        cl_img=cl_img_mean.item(),
        cl_txt=cl_txt_mean.item(),
        cl=cl_mean.item(),
        cel=cel_mean.item(),
        total=total.item(),
        beta_used=beta_used,
    )
    return total, breakdown
