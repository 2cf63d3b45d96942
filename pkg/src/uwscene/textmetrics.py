"""Caption-quality metrics: BLEU-4, CIDEr-D, and a METEOR-style score.

All metrics share one deterministic tokenizer (lowercase, alphanumeric
tokens, apostrophes kept inside words). No smoothing, no external lexical
resources; the METEOR variant uses exact + Porter-stem matching only and is
reported as ``meteor_lite`` to make the simplification explicit.
"""

from __future__ import annotations

import math
from collections import Counter

from .errors import ValidationError
from .stemming import porter_stem
import re

TOKENIZER_VERSION = "lower-alnum-v1"

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")

CIDER_SIGMA = 6.0
CIDER_MAX_N = 4
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


def tokenize(text: str) -> list:
    """Lowercased alphanumeric tokens; punctuation acts as a separator."""
    if not isinstance(text, str):
        raise ValidationError("tokenizer expects text")
    return _TOKEN.findall(text.lower())


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU-4


def corpus_bleu4(candidates, references_list) -> float:
    """Corpus BLEU with uniform 1-4-gram weights and brevity penalty.

    ``references_list[i]`` is the list of reference strings for candidate i.
    No smoothing: any n-gram order with zero matches zeroes the score.
    """
    if len(candidates) != len(references_list):
        raise ValidationError("candidate/reference count mismatch")
    if not candidates:
        return 0.0
    match = [0] * 4
    total = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references_list):
        if not refs:
            raise ValidationError("every candidate needs at least one reference")
        ct = tokenize(cand)
        rts = [tokenize(r) for r in refs]
        cand_len += len(ct)
        # closest reference length; ties resolved toward the shorter
        ref_len += min((abs(len(rt) - len(ct)), len(rt)) for rt in rts)[1]
        for n in range(1, 5):
            cgrams = _ngrams(ct, n)
            if not cgrams:
                continue
            cap = Counter()
            for rt in rts:
                rgrams = _ngrams(rt, n)
                for g, c in rgrams.items():
                    if c > cap[g]:
                        cap[g] = c
            match[n - 1] += sum(min(c, cap[g]) for g, c in cgrams.items())
            total[n - 1] += sum(cgrams.values())
    if cand_len == 0 or any(t == 0 for t in total) or any(m == 0 for m in match):
        return 0.0
    log_prec = sum(0.25 * math.log(m / t) for m, t in zip(match, total))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_prec)


def bleu4(candidate: str, references) -> float:
    """Single-sentence convenience wrapper around corpus_bleu4."""
    return corpus_bleu4([candidate], [list(references)])


# ---------------------------------------------------------------------------
# CIDEr-D


def _cider_vector(tokens, idf) -> tuple:
    """Per-n tf-idf vectors and their norms for one sentence."""
    vecs = []
    norms = []
    for n in range(1, CIDER_MAX_N + 1):
        counts = _ngrams(tokens, n)
        vec = {g: c * idf.get(g, 0.0) for g, c in counts.items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d(candidates, references_list) -> float:
    """CIDEr-D over a corpus; result lies in [0, 10].

    IDF comes from reference-set document frequency: idf(g) =
    log(N / max(1, df(g))) with N images. Candidate counts are clipped to
    the reference counts per n-gram, similarity is the cosine of tf-idf
    vectors, a Gaussian length penalty (sigma 6) multiplies each reference
    comparison, n = 1..4 are averaged, and the mean over references is
    scaled by 10.
    """
    if len(candidates) != len(references_list):
        raise ValidationError("candidate/reference count mismatch")
    if not candidates:
        return 0.0
    n_docs = len(references_list)
    df = Counter()
    for refs in references_list:
        seen = set()
        for ref in refs:
            rt = tokenize(ref)
            for n in range(1, CIDER_MAX_N + 1):
                seen.update(_ngrams(rt, n).keys())
        df.update(seen)
    idf = {g: math.log(n_docs / max(1.0, c)) for g, c in df.items()}

    total = 0.0
    for cand, refs in zip(candidates, references_list):
        if not refs:
            raise ValidationError("every candidate needs at least one reference")
        ct = tokenize(cand)
        cvecs, cnorms = _cider_vector(ct, idf)
        acc = [0.0] * CIDER_MAX_N
        for ref in refs:
            rt = tokenize(ref)
            rvecs, rnorms = _cider_vector(rt, idf)
            delta = float(len(ct) - len(rt))
            penalty = math.exp(-(delta ** 2) / (2.0 * CIDER_SIGMA ** 2))
            for n in range(CIDER_MAX_N):
                num = sum(min(cvecs[n].get(g, 0.0), rv) * rv
                          for g, rv in rvecs[n].items())
                if cnorms[n] > 0 and rnorms[n] > 0:
                    acc[n] += penalty * num / (cnorms[n] * rnorms[n])
        score = sum(acc) / CIDER_MAX_N / len(refs) * 10.0
        total += score
    result = total / len(candidates)
    if not (0.0 <= result <= 10.0 + 1e-9):
        raise ValidationError(f"consensus score {result} escaped its [0, 10] range")
    return result


# ---------------------------------------------------------------------------
# METEOR-style score (exact + stem matching only)


def _align(cand_tokens, ref_tokens):
    """Greedy leftmost alignment: exact surface matches first, then stems.

    Returns a list of (candidate_index, reference_index) pairs sorted by
    candidate position.
    """
    matched_ref = [False] * len(ref_tokens)
    pairs = {}
    for ci, tok in enumerate(cand_tokens):
        for ri, rtok in enumerate(ref_tokens):
            if not matched_ref[ri] and rtok == tok:
                matched_ref[ri] = True
                pairs[ci] = ri
                break
    cand_stems = [porter_stem(t) for t in cand_tokens]
    ref_stems = [porter_stem(t) for t in ref_tokens]
    for ci, stem in enumerate(cand_stems):
        if ci in pairs:
            continue
        for ri, rstem in enumerate(ref_stems):
            if not matched_ref[ri] and rstem == stem:
                matched_ref[ri] = True
                pairs[ci] = ri
                break
    return sorted(pairs.items())


def _chunk_count(pairs) -> int:
    """Number of maximal runs contiguous in both sentences."""
    chunks = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor_lite(candidate: str, references) -> float:
    """Unigram F-mean with fragmentation penalty; best score over references.

    F_mean = P*R / (alpha*P + (1-alpha)*R) with alpha = 0.9; penalty =
    gamma * (chunks/matches)**beta with gamma = 0.5, beta = 3. Matching is
    exact surface first, then Porter stems; no synonym stage.
    """
    refs = list(references)
    if not refs:
        raise ValidationError("need at least one reference")
    ct = tokenize(candidate)
    best = 0.0
    for ref in refs:
        rt = tokenize(ref)
        if not ct or not rt:
            continue
        pairs = _align(ct, rt)
        m = len(pairs)
        if m == 0:
            continue
        precision = m / len(ct)
        recall = m / len(rt)
        f_mean = (precision * recall) / (METEOR_ALPHA * precision
                                         + (1.0 - METEOR_ALPHA) * recall)
        frag = _chunk_count(pairs) / m
        score = f_mean * (1.0 - METEOR_GAMMA * frag ** METEOR_BETA)
        best = max(best, score)
    return best
