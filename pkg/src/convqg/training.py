"""Deterministic single-process training loop with per-step loss logging,
per-epoch checkpoints, and best-by-validation-CEL selection.

Timestamps live only in the one-line log header, so fixed-seed runs produce
byte-identical logs below it and bit-identical checkpoints.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

import numpy as np

from .autodiff import Graph, backward
from .auxiliary import FrozenSentenceEmbedder
from .checkpoint import load_checkpoint, save_checkpoint
from .constraints import render
from .model import ModelConfig, QuestionModel
from .objective import (
    LossConfig,
    batch_loss,
    beta_at,
    prepare_example,
    schedule_from_json,
    schedule_to_json,
)
from .optim import AdamWState, sgd_adamw_step
from .toyworld import load_examples
from .vocab import Vocab

EMBEDDER_SEED = 1234
META_FILE = "model_meta.json"


@dataclass
class RunConfig:
    seed: int = 7
    epochs: int = 5
    batch_size: int = 16
    lr: float = 2e-5  # starting value; see lr_schedule
    weight_decay: float = 0.05
    lr_schedule: str = "cosine"  # per-epoch cosine decay, or "constant"
    select_by: str = "cel"  # best-checkpoint criterion: "cel" or "bleu"
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"lr_schedule must be cosine or constant, got {self.lr_schedule!r}")
        if self.select_by not in ("cel", "bleu"):
            raise ValueError(f"select_by must be cel or bleu, got {self.select_by!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "constant":
            return self.lr
        return self.lr * 0.5 * (1.0 + float(np.cos(np.pi * epoch / self.epochs)))

    def to_json(self) -> dict:
        out = {
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "lr_schedule": self.lr_schedule,
            "select_by": self.select_by,
            "alpha": self.loss.alpha,
            "margin": self.loss.margin,
            "beta": schedule_to_json(self.loss.beta_schedule),
            "variant": self.loss.variant,
            "train": self.train_path,
            "val": self.val_path,
            "test": self.test_path,
            "out": self.out_dir,
        }
        out.update(self.model.to_json())
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known_model = {f.name for f in fields(ModelConfig)}
        loss = LossConfig(
            alpha=obj.get("alpha", 0.2),
            margin=obj.get("margin", 0.5),
            beta_schedule=schedule_from_json(obj.get("beta", "geometric10")),
            variant=obj.get("variant", "IT"),
        )
        model = ModelConfig.from_json({k: v for k, v in obj.items() if k in known_model})
        return cls(
            seed=obj.get("seed", 7),
            epochs=obj.get("epochs", 5),
            batch_size=obj.get("batch_size", 16),
            lr=obj.get("lr", 2e-5),
            weight_decay=obj.get("weight_decay", 0.05),
            lr_schedule=obj.get("lr_schedule", "cosine"),
            select_by=obj.get("select_by", "cel"),
            loss=loss,
            model=model,
            train_path=obj.get("train", ""),
            val_path=obj.get("val", ""),
            test_path=obj.get("test", ""),
            out_dir=obj.get("out", ""),
        )


def build_vocab(examples) -> Vocab:
    texts = []
    for ex in examples:
        texts.append(ex.question)
        texts.append(render(ex.constraint))
    return Vocab.from_texts(texts)


def save_model_meta(out_dir: str, model: QuestionModel, vocab: Vocab) -> None:
    meta = {
        "model": model.config.to_json(),
        "vocab": vocab.to_json(),
        "embedder_seed": EMBEDDER_SEED,
    }
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)


def load_model(checkpoint_path: str):
    """Rebuild (model, vocab) from a checkpoint plus its sidecar metadata."""
    meta_path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), META_FILE)
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"missing {META_FILE} next to {checkpoint_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    vocab = Vocab.from_json(meta["vocab"])
    config = ModelConfig.from_json(meta["model"])
    model = QuestionModel(config, len(vocab), seed=0, dtype=np.float32)
    tensors = load_checkpoint(checkpoint_path)
    if set(tensors) != set(model.params):
        raise ValueError("checkpoint tensors do not match the model parameter set")
    for name, arr in tensors.items():
        param = model.params[name]
        if arr.shape != param.data.shape:
            raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, expected {param.data.shape}")
        param.data[:] = arr
    return model, vocab


def mean_validation_cel(model: QuestionModel, prepared) -> float:
    """Forward-only mean per-example cross-entropy (the default selection metric)."""
    from . import ops

    total = 0.0
    for ex in prepared:
        e_i = model.encode_image(ex.patches)
        e_it = model.encode_text(ex.txt_ids, e_i)
        logits = model.decode_question(e_it, ex.dec_input)
        cel = ops.cross_entropy_tokens(logits, ex.labels, np.ones(len(ex.labels), bool))
        total += cel.item()
    return total / len(prepared)


def validation_bleu4(model: QuestionModel, vocab: Vocab, examples, beams: int = 3) -> float:
    """Decode the validation split and score BLEU-4 (opt-in selection metric)."""
    from .decode import generate_scored
    from .metrics import bleu, make_corpus

    candidates = {}
    references: dict[str, list[str]] = {}
    for ex in examples:
        payload = ex.scene if ex.scene is not None else ex.features
        question, _ = generate_scored(payload, ex.constraint, model, vocab, beams)
        candidates[ex.id] = question
        references.setdefault(ex.id, []).append(ex.question)
    return bleu(make_corpus(candidates, references), 4)


@dataclass
class TrainResult:
    out_dir: str
    epoch_mean_total: list
    val_cel: list
    best_epoch: int
    best_checkpoint: str
    vocab_size: int
    n_parameters: int


def train_run(config: RunConfig, quiet: bool = False) -> TrainResult:
    train_examples = load_examples(config.train_path)
    if not train_examples:
        raise ValueError(f"no training examples in {config.train_path}")
    val_examples = load_examples(config.val_path) if config.val_path else []
    os.makedirs(config.out_dir, exist_ok=True)

    vocab = build_vocab(train_examples)
    embedder = FrozenSentenceEmbedder(vocab.id_to_token, config.model.d_sent, EMBEDDER_SEED)
    model = QuestionModel(config.model, len(vocab), seed=config.seed, dtype=np.float32)
    save_model_meta(config.out_dir, model, vocab)
    save_checkpoint(os.path.join(config.out_dir, "ckpt_init.cvqg"), model.params)
    with open(os.path.join(config.out_dir, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, sort_keys=True, indent=2)

    prepared = [prepare_example(ex, vocab, embedder, model.dtype) for ex in train_examples]
    prepared_val = [prepare_example(ex, vocab, embedder, model.dtype) for ex in val_examples]

    opt_state = AdamWState(model.params)
    rng = np.random.default_rng(config.seed)
    log_path = os.path.join(config.out_dir, "train_log.jsonl")
    epochs_path = os.path.join(config.out_dir, "epochs.jsonl")
    best_score = float("inf") if config.select_by == "cel" else float("-inf")
    best_epoch = -1
    epoch_means = []
    val_cels = []
    step = 0
    best_path = os.path.join(config.out_dir, "ckpt_best.cvqg")

    with open(log_path, "w", encoding="utf-8") as log_fh, \
            open(epochs_path, "w", encoding="utf-8") as ep_fh:
        header = {
            "started_at": datetime.now(timezone.utc).isoformat(),
            "seed": config.seed,
            "variant": config.loss.variant,
            "n_train": len(prepared),
            "n_parameters": model.n_parameters(),
        }
        log_fh.write(json.dumps(header, sort_keys=True) + "\n")

        for epoch in range(config.epochs):
            order = rng.permutation(len(prepared))
            totals, cels, cls = [], [], []
            for start in range(0, len(order), config.batch_size):
                batch = [prepared[i] for i in order[start : start + config.batch_size]]
                with Graph():
                    loss, bd = batch_loss(batch, model, config.loss, epoch)
                backward(loss)
                sgd_adamw_step(model.params, config.lr_at(epoch), config.weight_decay, opt_state)
                step += 1
                log_fh.write(json.dumps({
                    "step": step, "epoch": epoch,
                    "cl_img": bd.cl_img, "cl_txt": bd.cl_txt, "cl": bd.cl,
                    "cel": bd.cel, "beta": bd.beta_used, "total": bd.total,
                }, sort_keys=True) + "\n")
                totals.append(bd.total)
                cels.append(bd.cel)
                cls.append(bd.cl)

            epoch_ckpt = os.path.join(config.out_dir, f"ckpt_epoch{epoch}.cvqg")
            save_checkpoint(epoch_ckpt, model.params)
            mean_total = float(np.mean(totals))
            epoch_means.append(mean_total)
            val_cel = mean_validation_cel(model, prepared_val) if prepared_val else float("nan")
            val_cels.append(val_cel)
            epoch_record = {
                "epoch": epoch,
                "mean_total": mean_total,
                "mean_cel": float(np.mean(cels)),
                "mean_cl": float(np.mean(cls)),
                "val_cel": val_cel,
                "beta": 0.0 if config.loss.variant == "B" else beta_at(config.loss.beta_schedule, epoch),
            }
            if prepared_val:
                if config.select_by == "bleu":
                    score = validation_bleu4(model, vocab, val_examples)
                    epoch_record["val_bleu4"] = score
                    improved = score > best_score
                else:
                    score = val_cel
                    improved = score < best_score
                if improved:
                    best_score = score
                    best_epoch = epoch
                    shutil.copyfile(epoch_ckpt, best_path)
            ep_fh.write(json.dumps(epoch_record, sort_keys=True) + "\n")
            if not quiet:
                print(f"epoch {epoch}: mean total {mean_total:.4f}, val cel {val_cel:.4f}")

    if not prepared_val:
        # no validation data: the final epoch checkpoint stands in for best
        best_epoch = config.epochs - 1
        shutil.copyfile(os.path.join(config.out_dir, f"ckpt_epoch{best_epoch}.cvqg"), best_path)

    return TrainResult(
        out_dir=config.out_dir,
        epoch_mean_total=epoch_means,
        val_cel=val_cels,
        best_epoch=best_epoch,
        best_checkpoint=best_path,
        vocab_size=len(vocab),
        n_parameters=model.n_parameters(),
    )
