"""Second implementation of the answer-overlap metrics.

Prints reference values that the Rust tests freeze as constants. Run with
`python3 overlap_oracle.py`; needs only the standard library.
"""
import math
import re
from collections import Counter
from functools import lru_cache

PAIRS = [
    ("the cat sat", "the cat sat down"),
    ("the quick brown fox jumps over the lazy dog", "a quick brown dog jumps over the lazy fox"),
    ("restart the worker and clear the cache", "clear the cache then restart the worker"),
    ("a b d", "a b c d"),
]


def tokens(s):
    return [t for t in re.split(r"[^0-9a-zA-Z]+", s.lower()) if t]


def bleu(c, r):
    c, r = tokens(c), tokens(r)
    if not c or not r:
        return 0.0
    logs = []
    for n in range(1, 5):
        cg = Counter(tuple(c[i:i + n]) for i in range(len(c) - n + 1))
        rg = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
        total = sum(cg.values())
        match = sum(min(v, rg[g]) for g, v in cg.items())
        if match == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (total + 1)
        else:
            p = match / total
        logs.append(math.log(p))
    bp = 1.0 if len(c) > len(r) else math.exp(1 - len(r) / len(c))
    return bp * math.exp(sum(logs) / 4)


def rouge_l(c, r, beta=1.2):
    c, r = tokens(c), tokens(r)
    if not c or not r:
        return 0.0

    @lru_cache(maxsize=None)
    def lcs(i, j):
        if i == len(c) or j == len(r):
            return 0
        if c[i] == r[j]:
            return 1 + lcs(i + 1, j + 1)
        return max(lcs(i + 1, j), lcs(i, j + 1))

    l = lcs(0, 0)
    if l == 0:
        return 0.0
    p, rec = l / len(c), l / len(r)
    return (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)


def meteor_simple(c, r):
    c, r = tokens(c), tokens(r)
    if not c or not r:
        return 0.0
    used = [False] * len(r)
    align = []
    for t in c:
        for j, u in enumerate(r):
            if not used[j] and u == t:
                used[j] = True
                align.append(j)
                break
    m = len(align)
    if m == 0:
        return 0.0
    chunks = 1
    for a, b in zip(align, align[1:]):
        if b != a + 1:
            chunks += 1
    p, rec = m / len(c), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    return fmean * (1 - 0.5 * (chunks / m) ** 3)


if __name__ == "__main__":
    for c, r in PAIRS:
        print(f"{c!r} | {r!r}")
        print(f"  bleu={bleu(c, r)!r} rouge_l={rouge_l(c, r)!r} meteor_simple={meteor_simple(c, r)!r}")
