"""Tokenizer and closed vocabulary.

Lowercase, punctuation-stripped, whitespace-split tokens; the bracketed
mask token survives as the single canonical token [MASK]. Specials hold
fixed ids 0..4 and regular tokens follow in sorted order.
"""

from __future__ import annotations

import re

PAD, BOS, EOS, UNK, MASK = "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[MASK]"
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = 0, 1, 2, 3, 4
SPECIALS = (PAD, BOS, EOS, UNK, MASK)

_MASK_RE = re.compile(r"\[mask\]", re.IGNORECASE)
_STRIP_RE = re.compile(r"[^a-z0-9\x00 ]+")


def tokenize(text: str) -> list[str]:
    s = _MASK_RE.sub(" \x00 ", text).lower()
    s = _STRIP_RE.sub(" ", s)
    return [MASK if t == "\x00" else t for t in s.split()]


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def normalize(text: str) -> str:
    return detokenize(tokenize(text))


class Vocab:
    """token <-> dense id map; decode(encode(s)) == normalize(s) for in-vocab s."""

    def __init__(self, tokens):
        regular = sorted(set(tokens) - set(SPECIALS))
        self.id_to_token = list(SPECIALS) + regular
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @classmethod
    def from_texts(cls, texts) -> "Vocab":
        seen = set()
        for text in texts:
            seen.update(tokenize(text))
        return cls(seen)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokenize(text)]

    def decode(self, ids) -> str:
        return detokenize([self.id_to_token[i] for i in ids])

    def decode_generated(self, ids) -> str:
        """Decode beam output: drop PAD/BOS/EOS framing tokens."""
        keep = [i for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]
        return detokenize([self.id_to_token[i] for i in keep])

    def to_json(self) -> dict:
        return {"tokens": self.id_to_token[len(SPECIALS):]}

    @classmethod
    def from_json(cls, obj) -> "Vocab":
        return cls(obj["tokens"])
