"""Corpus-level question evaluation and preference-histogram analysis.

BLEU-n (clipped precision, brevity penalty, no smoothing), ROUGE-L
(LCS F-measure, recall-weighted), METEOR-lite (exact + suffix-stem
matching, chunk penalty, no synonym resource), and CIDEr (TF-IDF n-gram
cosine, x10). All pure functions of the corpus.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .vocab import tokenize

_SUFFIXES = ("ing", "es", "ed", "s")


def stem(token: str) -> str:
    """Shared suffix stripper for METEOR-lite and CIDEr."""
    for suffix in _SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 2:
            return token[: -len(suffix)]
    return token


@dataclass(frozen=True)
class EvalInstance:
    id: str
    candidate: str
    references: tuple

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"instance {self.id}: needs at least one reference")


def make_corpus(candidates: dict, references: dict) -> list[EvalInstance]:
    """Join id-keyed candidates with id-keyed reference lists.

    Every candidate id must have references; ids are reported otherwise.
    """
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise ValueError(f"ids without references: {', '.join(missing)}")
    return [
        EvalInstance(i, candidates[i], tuple(references[i]))
        for i in sorted(candidates)
    ]


def _validate(corpus):
    if not corpus:
        raise ValueError("empty evaluation corpus")


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu(corpus, n: int) -> float:
    """Corpus BLEU-n: geometric mean of clipped k-gram precisions (k=1..n)
    times the brevity penalty. No smoothing: a zero precision zeroes BLEU."""
    _validate(corpus)
    if not 1 <= n <= 4:
        raise ValueError("bleu order must be in 1..4")
    clipped = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for inst in corpus:
        c = tokenize(inst.candidate)
        refs = [tokenize(r) for r in inst.references]
        cand_len += len(c)
        # closest reference length; ties prefer the shorter reference
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(c)), L))
        for k in range(1, n + 1):
            counts = Counter(_ngrams(c, k))
            max_ref: Counter = Counter()
            for r in refs:
                for gram, cnt in Counter(_ngrams(r, k)).items():
                    if cnt > max_ref[gram]:
                        max_ref[gram] = cnt
            clipped[k - 1] += sum(min(cnt, max_ref[g]) for g, cnt in counts.items())
            totals[k - 1] += max(len(c) - k + 1, 0)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for k in range(n):
        if totals[k] == 0 or clipped[k] == 0:
            return 0.0
        log_p += math.log(clipped[k] / totals[k])
    bp = math.exp(min(0.0, 1.0 - ref_len / cand_len))
    return bp * math.exp(log_p / n)


def sentence_bleu1(candidate: str, reference: str) -> float:
    """BLEU-1 of a single sentence pair (used for preference similarity)."""
    return bleu([EvalInstance("pair", candidate, (reference,))], 1)


def _lcs_len(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


_ROUGE_BETA2 = 1.2 ** 2


def rouge_l(corpus) -> float:
    """Mean over the corpus of the best LCS F-measure against any reference,
    with recall weighted by beta^2 = 1.44."""
    _validate(corpus)
    total = 0.0
    for inst in corpus:
        c = tokenize(inst.candidate)
        best = 0.0
        for ref in inst.references:
            r = tokenize(ref)
            lcs = _lcs_len(c, r) if c and r else 0
            if lcs == 0:
                continue
            p = lcs / len(c)
            rec = lcs / len(r)
            f = (1 + _ROUGE_BETA2) * rec * p / (rec + _ROUGE_BETA2 * p)
            best = max(best, f)
        total += best
    return total / len(corpus)


def _meteor_pair(c, r) -> float:
    matched_c = [-1] * len(c)
    matched_r = [False] * len(r)
    # exact matches first, then suffix-stem matches on what remains
    for key in (lambda t: t, stem):
        r_keys = [key(t) for t in r]
        for ci, ct in enumerate(c):
            if matched_c[ci] >= 0:
                continue
            want = key(ct)
            for ri, rk in enumerate(r_keys):
                if not matched_r[ri] and rk == want:
                    matched_c[ci] = ri
                    matched_r[ri] = True
                    break
    pairs = [(ci, ri) for ci, ri in enumerate(matched_c) if ri >= 0]
    m = len(pairs)
    if m == 0:
        return 0.0
    p = m / len(c)
    rec = m / len(r)
    f_mean = 10 * p * rec / (rec + 9 * p)
    chunks = 1
    for (ci0, ri0), (ci1, ri1) in zip(pairs, pairs[1:]):
        if not (ci1 == ci0 + 1 and ri1 == ri0 + 1):
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


def meteor_lite(corpus) -> float:
    """Unigram-alignment harmonic mean weighted toward recall, with the
    fragmentation penalty; exact + stem matching only (no synonyms)."""
    _validate(corpus)
    total = 0.0
    for inst in corpus:
        c = tokenize(inst.candidate)
        best = 0.0
        for ref in inst.references:
            r = tokenize(ref)
            if c and r:
                best = max(best, _meteor_pair(c, r))
        total += best
    return total / len(corpus)


def _stemmed(text):
    return [stem(t) for t in tokenize(text)]


def cider(corpus) -> float:
    """TF-IDF weighted n-gram cosine (n = 1..4), averaged over n and over
    references, scaled x10, then averaged over the corpus.

    Document frequency counts instances whose reference set contains the
    n-gram, clamped to >= 1 so reference-unseen n-grams weigh log N.
    """
    _validate(corpus)
    if len(corpus) < 2:
        raise ValueError("cider needs at least 2 instances for a meaningful IDF")
    n_orders = 4
    df = [Counter() for _ in range(n_orders)]
    for inst in corpus:
        seen = [set() for _ in range(n_orders)]
        for ref in inst.references:
            toks = _stemmed(ref)
            for k in range(n_orders):
                seen[k].update(_ngrams(toks, k + 1))
        for k in range(n_orders):
            df[k].update(seen[k])

    log_n = math.log(len(corpus))

    def tfidf(tokens, k):
        vec = Counter(_ngrams(tokens, k + 1))
        return {
            g: cnt * (log_n - math.log(max(1.0, df[k][g])))
            for g, cnt in vec.items()
        }

    def cosine(u, v):
        num = sum(w * v[g] for g, w in u.items() if g in v)
        nu = math.sqrt(sum(w * w for w in u.values()))
        nv = math.sqrt(sum(w * w for w in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return num / (nu * nv)

    total = 0.0
    for inst in corpus:
        c_toks = _stemmed(inst.candidate)
        score_n = 0.0
        for k in range(n_orders):
            c_vec = tfidf(c_toks, k)
            sim = 0.0
            for ref in inst.references:
                sim += cosine(c_vec, tfidf(_stemmed(ref), k))
            score_n += sim / len(inst.references)
        total += 10.0 * score_n / n_orders
    return total / len(corpus)


def metric_report(corpus) -> dict:
    """All seven metric values for a corpus."""
    return {
        "bleu1": bleu(corpus, 1),
        "bleu2": bleu(corpus, 2),
        "bleu3": bleu(corpus, 3),
        "bleu4": bleu(corpus, 4),
        "rouge_l": rouge_l(corpus),
        "meteor_lite": meteor_lite(corpus),
        "cider": cider(corpus),
    }


@dataclass(frozen=True)
class PreferenceRecord:
    question_a: str
    question_b: str
    choice: str

    def __post_init__(self):
        if not self.question_a.strip() or not self.question_b.strip():
            raise ValueError("preference record questions must be non-empty")
        if self.choice not in ("A", "B", "Similar"):
            raise ValueError(f"choice must be A, B or Similar, got {self.choice!r}")


@dataclass
class HistogramBin:
    low: float
    high: float
    n_a: int = 0
    n_b: int = 0
    n_similar: int = 0

    @property
    def total(self) -> int:
        return self.n_a + self.n_b + self.n_similar

    def proportions(self):
        t = self.total
        if t == 0:
            return 0.0, 0.0, 0.0
        return self.n_a / t, self.n_b / t, self.n_similar / t


@dataclass
class PreferenceHistogram:
    bins: list
    n_a: int
    n_b: int
    n_similar: int


def preference_histogram(records, bins: int = 10) -> PreferenceHistogram:
    """Bucket pairwise-preference records by the BLEU-1 similarity of the two
    questions; report per-bin counts/proportions of each choice plus totals."""
    if not records:
        raise ValueError("no preference records")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    table = [HistogramBin(i / bins, (i + 1) / bins) for i in range(bins)]
    totals = Counter()
    for rec in records:
        sim = sentence_bleu1(rec.question_a, rec.question_b)
        idx = min(int(sim * bins), bins - 1)
        b = table[idx]
        if rec.choice == "A":
            b.n_a += 1
        elif rec.choice == "B":
            b.n_b += 1
        else:
            b.n_similar += 1
        totals[rec.choice] += 1
    return PreferenceHistogram(
        bins=table, n_a=totals["A"], n_b=totals["B"], n_similar=totals["Similar"]
    )
