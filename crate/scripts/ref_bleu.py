#!/usr/bin/env python3
"""Reference BLEU used to freeze tests/fixtures/bleu20.json.

Independent of the Rust implementation: corpus-level modified n-gram
precision with clipping, geometric mean over orders 1..4, brevity penalty
from the closest reference length (ties resolved toward the shorter
reference), no smoothing.
"""
import json
import math
import sys
from collections import Counter


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hyps, refs, max_n=4, lower=True):
    match = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, rset in zip(hyps, refs, strict=True):
        if lower:
            hyp = [t.lower() for t in hyp]
            rset = [[t.lower() for t in r] for r in rset]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in rset)[1]
        for n in range(1, max_n + 1):
            h = ngrams(hyp, n)
            clip = Counter()
            for r in rset:
                for g, c in ngrams(r, n).items():
                    clip[g] = max(clip[g], c)
            match[n - 1] += sum(min(c, clip[g]) for g, c in h.items())
            total[n - 1] += sum(h.values())
    if hyp_len == 0 or any(m == 0 for m in match):
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    log_p = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    return bp * math.exp(log_p)


def main():
    path = sys.argv[1]
    fixture = json.load(open(path))
    score = corpus_bleu(
        [h.split() for h in fixture["hypotheses"]],
        [[r.split() for r in rs] for rs in fixture["references"]],
        fixture["max_n"],
        fixture["case_insensitive"],
    )
    print(f"{score:.10f}")


if __name__ == "__main__":
    main()
