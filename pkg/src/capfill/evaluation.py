"""Caption quality metrics and the simulated replay comparison.

Metrics operate on token lists; at desk scale tokens are characters
(``list(text)``), which sidesteps external word segmenters.  The CIDEr
variant implemented here is the count-clipped TF-IDF cosine without any
length penalty; the report header records that, since published CIDEr-D
numbers include a gaussian length term that this engine deliberately omits.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

BLEU_EPSILON = 1e-9
ROUGE_BETA_SQ = 1.2
CIDER_MAX_N = 4
CIDER_SCALE = 10.0

Tokens = list[str]


def char_tokens(text: str) -> Tokens:
    """Character-level tokenization (one token per code point)."""
    return list(text)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Tokens, references: list[Tokens]) -> float:
    """Sentence BLEU-4: clipped n-gram precisions (n=1..4), geometric mean,
    brevity penalty; zero counts fall back to a tiny epsilon so short desk-
    scale sentences stay comparable."""
    if not references:
        raise ValueError("bleu4 requires at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        total = max(c - n + 1, 0)
        if total == 0:
            log_sum += math.log(BLEU_EPSILON)
            continue
        counts = _ngram_counts(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for gram, cnt in _ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        clipped = sum(min(cnt, max_ref[gram]) for gram, cnt in counts.items())
        log_sum += math.log(max(clipped, BLEU_EPSILON) / total)
    # closest reference length; ties go to the shorter one
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


def _lcs_length(a: Tokens, b: Tokens) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, references: list[Tokens]) -> float:
    """LCS-based F-measure; precision/recall are maximized over references."""
    if not references:
        raise ValueError("rouge_l requires at least one reference")
    if not candidate:
        return 0.0
    prec, rec = 0.0, 0.0
    for ref in references:
        lcs = _lcs_length(candidate, ref)
        prec = max(prec, lcs / len(candidate))
        rec = max(rec, lcs / len(ref) if ref else 0.0)
    if prec == 0.0 and rec == 0.0:
        return 0.0
    return ((1 + ROUGE_BETA_SQ) * prec * rec) / (rec + ROUGE_BETA_SQ * prec)


def _tfidf_vec(counts: Counter, idf: dict, M: int) -> tuple[dict, float]:
    vec = {}
    norm_sq = 0.0
    for gram, cnt in counts.items():
        w = cnt * idf.get(gram, math.log(M))
        vec[gram] = w
        norm_sq += w * w
    return vec, math.sqrt(norm_sq)


def cider(
    candidates: list[Tokens],
    references: list[list[Tokens]],
    corpus: Optional[list[list[Tokens]]] = None,
) -> float:
    """Consensus metric: count-clipped TF-IDF n-gram cosine, averaged over
    n = 1..4 and references, scaled by 10.  No length penalty.

    ``corpus`` supplies the reference groups for document frequencies and
    defaults to ``references`` itself.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must align")
    if corpus is None:
        corpus = references
    if not corpus:
        raise ValueError("cider requires a non-empty reference corpus")
    M = len(corpus)
    idf: list[dict] = []
    for n in range(1, CIDER_MAX_N + 1):
        df: Counter = Counter()
        for group in corpus:
            grams = set()
            for ref in group:
                grams.update(_ngram_counts(ref, n))
            df.update(grams)
        idf.append({gram: math.log(M / max(cnt, 1)) for gram, cnt in df.items()})

    scores = []
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        per_n = []
        for n in range(1, CIDER_MAX_N + 1):
            cand_counts = _ngram_counts(cand, n)
            cand_vec, cand_norm = _tfidf_vec(cand_counts, idf[n - 1], M)
            sim = 0.0
            for ref in refs:
                ref_counts = _ngram_counts(ref, n)
                ref_vec, ref_norm = _tfidf_vec(ref_counts, idf[n - 1], M)
                if cand_norm == 0.0 or ref_norm == 0.0:
                    continue
                num = 0.0
                for gram, w_ref in ref_vec.items():
                    w_cand = cand_vec.get(gram)
                    if w_cand is not None:
                        num += min(w_cand, w_ref) * w_ref
                sim += num / (cand_norm * ref_norm)
            per_n.append(CIDER_SCALE * sim / len(refs))
        scores.append(sum(per_n) / CIDER_MAX_N)
    return sum(scores) / len(scores) if scores else 0.0


def oov_rate(sequences: list[list[int]], unk_id: int) -> float:
    """Percentage of generated sequences containing the unknown token."""
    if not sequences:
        raise ValueError("oov_rate of an empty list")
    hits = sum(1 for seq in sequences if unk_id in seq)
    return 100.0 * hits / len(sequences)


@dataclass(frozen=True)
class MetricReport:
    bleu4: float
    rouge_l: float
    cider: float
    oov_rate: float

    def to_doc(self) -> dict:
        return {
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "oov_rate": self.oov_rate,
            "tokenization": "character",
            "cider_variant": "tfidf-cosine-clipped-no-length-penalty",
        }


@dataclass(frozen=True)
class ReplayCase:
    """One logged completion moment: the text before a candidate was picked,
    where the cursor stood, and the session's final annotation."""

    image_id: str
    text: str
    cursor: int
    final: str


def one_sided_sign_test(wins: int, losses: int) -> float:
    """P(X >= wins) for X ~ Binomial(wins + losses, 1/2); ties excluded."""
    n = wins + losses
    if n == 0:
        return 1.0
    total = sum(math.comb(n, i) for i in range(wins, n + 1))
    return total / 2.0**n


def simulated_compare(
    cases: list[ReplayCase],
    model_a,
    model_b,
    k: int,
    features,
) -> dict:
    """Replay logged completion moments through two models.

    For every case each model proposes k candidates from (image feature,
    text, cursor); the edit distance of each candidate to the final
    annotation is tallied per rank.  Cases whose image has no feature
    vector are skipped and counted.
    """
    from .completion import CompletionRequest
    from .textcore import levenshtein

    if k < 1:
        raise ValueError("k must be >= 1")
    sums = {"a": [0.0] * k, "b": [0.0] * k}
    counts = {"a": [0] * k, "b": [0] * k}
    rank1 = []
    skipped = 0
    for case in cases:
        if case.image_id not in features:
            skipped += 1
            continue
        feature = features[case.image_id]
        req = CompletionRequest(feature, case.text, case.cursor, k=k)
        pair = {}
        for key, model in (("a", model_a), ("b", model_b)):
            for cand in model.complete(req):
                dist = levenshtein(cand.text, case.final)
                sums[key][cand.rank - 1] += dist
                counts[key][cand.rank - 1] += 1
                if cand.rank == 1:
                    pair[key] = dist
        if "a" in pair and "b" in pair:
            rank1.append((pair["a"], pair["b"]))
    report = {"k": k, "cases": len(cases) - skipped, "skipped": skipped}
    for key, label in (("a", "model_a"), ("b", "model_b")):
        report[label] = {
            "mean_levd": [
                (sums[key][i] / counts[key][i]) if counts[key][i] else None for i in range(k)
            ],
            "count": counts[key],
        }
    report["per_case_rank1"] = rank1
    return report


def evaluate_checkpoint(checkpoint, corpus, features, split: str = "test") -> MetricReport:
    """Greedy-decode every image of the chosen split and score the output
    against that image's reference captions."""
    from .textcore import encode
    from .training import greedy_caption, split_corpus

    if split not in ("train", "val", "test", "all"):
        raise ValueError(f"unknown split {split!r}")
    if split == "all":
        records = corpus
    else:
        train, val, test = split_corpus(corpus, 0.1, 0.1)
        records = {"train": train, "val": val, "test": test}[split]
    if not records:
        raise ValueError(f"split {split!r} is empty")
    refs: dict[str, list[Tokens]] = {}
    for r in records:
        refs.setdefault(r.image_id, []).append(char_tokens(r.caption))
    model = checkpoint.to_model()
    candidates, references, generated_ids = [], [], []
    for image_id, ref_group in refs.items():
        text = greedy_caption(model, features[image_id])
        candidates.append(char_tokens(text))
        references.append(ref_group)
        generated_ids.append(encode(checkpoint.vocab, text))
    mean = lambda xs: sum(xs) / len(xs)
    return MetricReport(
        bleu4=mean([bleu4(c, r) for c, r in zip(candidates, references)]),
        rouge_l=mean([rouge_l(c, r) for c, r in zip(candidates, references)]),
        cider=cider(candidates, references),
        oov_rate=oov_rate(generated_ids, checkpoint.vocab.unk_id),
    )
