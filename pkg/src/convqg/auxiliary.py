"""Frozen single-modality question branches and the shared sentence embedder.

The image-only branch captions a scene and turns the caption into a question;
the text-only branch turns the constraint sentence into a question. Both feed
the same frozen hashed-embedding sentence encoder that also embeds ground
truth questions. Everything here is deterministic and carries no gradients;
a pretrained embedder can replace FrozenSentenceEmbedder behind the same
interface.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .constraints import MASK_TOKEN, RELATION_TEMPLATES
from .toyworld import Scene
from .vocab import tokenize

_MASK_RE = re.compile(re.escape(MASK_TOKEN), re.IGNORECASE)

SOURCES = ("joint", "image_only", "text_only", "ground_truth")

# Near-ubiquitous tokens carry pooling weight LOW_CONTENT_WEIGHT instead of 1:
# plain function words plus the relation-template vocabulary, which shows up
# in nearly every constraint and question of this world. This mirrors the
# content dominance (IDF-like weighting) of real sentence encoders; with a
# plain mean, question pairs differing only in rare content words sit too
# close on the unit sphere and contrastive margins become unsatisfiable.
_FUNCTION_WORDS = "the a an is are of for to at in on what which thing has it and by not"
LOW_CONTENT_WORDS = frozenset(_FUNCTION_WORDS.split()).union(
    *(tokenize(t) for t in RELATION_TEMPLATES.values())
)
LOW_CONTENT_WEIGHT = 0.15


@dataclass(frozen=True)
class QuestionEmbedding:
    vector: np.ndarray
    source: str


class FrozenSentenceEmbedder:
    """Deterministic sentence encoder: per-token hashed Gaussian vectors,
    pooled by a weighted mean (function words downweighted) and L2-normalized
    to unit length.

    Token vectors depend only on (seed, d_sent, token string), so equal vocab
    and seed give bit-identical tables across runs, and out-of-vocabulary
    tokens embed consistently on the fly.
    """

    def __init__(self, vocab_tokens, d_sent: int, seed: int = 1234):
        self.d_sent = int(d_sent)
        self.seed = int(seed)
        self._table: dict[str, np.ndarray] = {}
        for token in vocab_tokens:
            self._table[token] = self._vec(token)

    def _vec(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{self.d_sent}:{token}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.d_sent)

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._table.get(token)
        if vec is None:
            vec = self._table[token] = self._vec(token)
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError(f"cannot embed empty sentence: {text!r}")
        acc = np.zeros(self.d_sent)
        total = 0.0
        for t in tokens:
            w = LOW_CONTENT_WEIGHT if t in LOW_CONTENT_WORDS else 1.0
            acc += w * self.token_vector(t)
            total += w
        acc /= total
        norm = np.sqrt(np.sum(acc * acc))
        return acc / norm if norm > 0 else acc

    def sentence_embed(self, text: str, source: str = "ground_truth") -> QuestionEmbedding:
        if source not in SOURCES:
            raise ValueError(f"unknown embedding source {source!r}")
        return QuestionEmbedding(self.embed(text), source)


def scene_caption(scene: Scene) -> str:
    """Rule-based caption over objects in row-major order."""
    phrases = [f"{o.color} {o.category}" for o in scene.objects_row_major()]
    return "a scene with " + ", ".join(phrases)


def question_from_sentence(sentence: str) -> str:
    """Rule-based question generation shared by both frozen branches.

    A masked sentence becomes a question by substituting "what" for the
    mask; an unmasked one gets a wh-frame around its leading phrase.
    """
    if not sentence or not sentence.strip():
        raise ValueError("cannot generate a question from an empty sentence")
    if _MASK_RE.search(sentence):
        return _MASK_RE.sub("what", sentence)
    lead = sentence.split(",")[0].strip()
    lowered = lead.lower()
    for boilerplate in ("a scene with ", "the ", "a ", "an "):
        if lowered.startswith(boilerplate):
            lead = lead[len(boilerplate):]
            break
    return f"what is near the {lead}"


def iqgm(scene: Scene, embedder: FrozenSentenceEmbedder):
    """Image-only branch: caption the scene, question the caption, embed."""
    question = question_from_sentence(scene_caption(scene))
    return question, embedder.sentence_embed(question, source="image_only")


def iqgm_from_caption(caption: str, embedder: FrozenSentenceEmbedder):
    """Caption-constraint shortcut: the captioning step is skipped and the
    question is generated straight from the given caption, so the image-only
    and text-only branches coincide."""
    question = question_from_sentence(caption)
    return question, embedder.sentence_embed(question, source="image_only")


def tqgm(t_prime: str, embedder: FrozenSentenceEmbedder):
    """Text-only branch: question the constraint sentence, embed."""
    question = question_from_sentence(t_prime)
    return question, embedder.sentence_embed(question, source="text_only")
