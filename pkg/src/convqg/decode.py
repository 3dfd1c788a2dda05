"""Autoregressive question generation.

At inference only the multimodal encoder-decoder runs: encode the scene,
encode the rendered constraint against it, then beam-search the decoder.
Scores are sums of token log-probabilities with no length normalization;
ties break deterministically toward the lexicographically smaller token
sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import Constraint, render
from .model import QuestionModel
from .toyworld import Scene, scene_to_patches
from .vocab import BOS_ID, EOS_ID, Vocab


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple  # generated ids, [BOS] excluded; ends with [EOS] unless truncated
    score: float  # sum of token log-probabilities, non-increasing in length


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    m = np.max(x)
    return x - m - np.log(np.sum(np.exp(x - m)))


def beam_search_core(step_logits, vocab_size: int, beams: int, max_len: int,
                     bos_id: int = BOS_ID, eos_id: int = EOS_ID) -> list[BeamHypothesis]:
    """Length-wise beam expansion over a step function.

    step_logits(prefix_ids including bos) -> logits over the vocabulary.
    Selection happens over all live extensions jointly; a selected beam that
    emits eos retires to the finished pool (so beams=1 is exactly greedy).
    max_len bounds the generated length; survivors are truncated into
    hypotheses without a terminal eos.
    """
    if beams < 1:
        raise ValueError("beams must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    live = [((), 0.0)]
    finished: list[tuple[tuple, float]] = []
    for _ in range(max_len):
        candidates = []
        for tokens, score in live:
            prefix = np.array((bos_id,) + tokens, dtype=np.int64)
            logp = _log_softmax(step_logits(prefix))
            for v in range(vocab_size):
                candidates.append((tokens + (v,), score + float(logp[v])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for tokens, score in candidates[:beams]:
            if tokens[-1] == eos_id:
                finished.append((tokens, score))
            else:
                live.append((tokens, score))
        if not live:
            break
    finished.extend(live)  # max_len truncation
    finished.sort(key=lambda c: (-c[1], c[0]))
    return [BeamHypothesis(tokens, score) for tokens, score in finished[:beams]]


def beam_search(e_it, model: QuestionModel, vocab: Vocab, beams: int = 3,
                max_len: int | None = None) -> list[tuple[str, float]]:
    """Decode E_it into up to `beams` (question, score) pairs, best first."""
    if max_len is None:
        max_len = model.config.max_len - 1  # [BOS] occupies one decoder slot

    def step_logits(prefix):
        hidden = model.decoder_hidden(e_it, prefix)
        return model.logits_from_hidden(hidden).data[-1]

    hyps = beam_search_core(step_logits, model.vocab_size, beams, max_len)
    return [(vocab.decode_generated(h.tokens), h.score) for h in hyps]


def generate_scored(scene, constraint: Constraint, model: QuestionModel,
                    vocab: Vocab, beams: int = 3) -> tuple[str, float]:
    """Full inference path: scene + constraint -> (best question, score)."""
    if isinstance(scene, Scene):
        patches = scene_to_patches(scene, dtype=model.dtype)
    else:
        patches = np.asarray(scene, dtype=model.dtype)
    e_i = model.encode_image(patches)
    t_prime = render(constraint)
    e_it = model.encode_text(np.asarray(vocab.encode(t_prime), dtype=np.int64), e_i)
    return beam_search(e_it, model, vocab, beams=beams)[0]


def generate(scene, constraint: Constraint, model: QuestionModel, vocab: Vocab,
             beams: int = 3) -> str:
    """Best decoded question for a scene and constraint."""
    return generate_scored(scene, constraint, model, vocab, beams=beams)[0]
