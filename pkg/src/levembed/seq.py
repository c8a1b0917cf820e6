"""DNA sequences, one-hot encoding and exact Levenshtein distance.

Sequences are plain uppercase ``str`` objects over ``ACGTN``; ``parse_seq``
is the validating constructor. ``N`` marks a failed base call and is treated
as an ordinary fifth symbol (it matches only another ``N``).
"""
from __future__ import annotations

import os
from typing import Iterable

import numpy as np

ALPHABET = "ACGTN"
BASES = "ACGT"
CHANNEL = {c: i for i, c in enumerate(ALPHABET)}


class SequenceError(ValueError):
    """Raised for invalid symbols or sequences that do not fit a padded length."""


def parse_seq(text: str) -> str:
    """Validate ``text`` and return it uppercased.

    >>> parse_seq("acgt")
    'ACGT'
    """
    out = text.upper()
    for i, c in enumerate(out):
        if c not in CHANNEL:
            raise SequenceError(f"invalid symbol {text[i]!r} at position {i}")
    return out


def levenshtein(s: str, t: str) -> int:
    """Unit-cost edit distance between ``s`` and ``t``.

    Bit-parallel evaluation of the standard dynamic programme: each column of
    the table is held as +1/-1 vertical difference bit masks over ``s``
    (Myers 1999, Hyyrö 2001), so one Python big-int step advances a whole
    column. :func:`levenshtein_dp` is the plain two-row version.
    """
    if len(s) < len(t):
        s, t = t, s
    m = len(t)
    if m == 0:
        return len(s)
    # columns run over the longer string; bit i tracks row i of the shorter one
    peq: dict[str, int] = {}
    for i, c in enumerate(t):
        peq[c] = peq.get(c, 0) | (1 << i)
    mask = (1 << m) - 1
    top = 1 << (m - 1)
    pv, mv, score = mask, 0, m
    for c in s:
        eq = peq.get(c, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | ~(xh | pv)
        mh = pv & xh
        if ph & top:
            score += 1
        elif mh & top:
            score -= 1
        ph = (ph << 1) | 1
        mh <<= 1
        pv = (mh | ~(xv | ph)) & mask
        mv = ph & xv & mask
    return score


def levenshtein_dp(s: str, t: str) -> int:
    """Two-row dynamic programme; the rows run over the shorter string."""
    if len(s) < len(t):
        s, t = t, s
    if not t:
        return len(s)
    prev = list(range(len(t) + 1))
    for i, a in enumerate(s, 1):
        cur = [i]
        left = i
        for j, b in enumerate(t, 1):
            diag = prev[j - 1] + (a != b)
            up = prev[j] + 1
            left = left + 1
            if up < left:
                left = up
            if diag < left:
                left = diag
            cur.append(left)
        prev = cur
    return prev[-1]


def one_hot(s: str, padded_len: int) -> np.ndarray:
    """Encode ``s`` as a ``(padded_len, 5)`` float64 matrix, zero rows at the tail."""
    if len(s) > padded_len:
        raise SequenceError(
            f"sequence {s[:20]}{'...' if len(s) > 20 else ''} has length {len(s)}"
            f" > padded length {padded_len}"
        )
    out = np.zeros((padded_len, len(ALPHABET)))
    if s:
        idx = np.fromiter((CHANNEL[c] for c in s), dtype=np.intp, count=len(s))
        out[np.arange(len(s)), idx] = 1.0
    return out


def one_hot_batch(seqs: Iterable[str], padded_len: int) -> np.ndarray:
    """Stack one-hot matrices into a ``(B, padded_len, 5)`` array."""
    seqs = list(seqs)
    out = np.zeros((len(seqs), padded_len, len(ALPHABET)))
    for k, s in enumerate(seqs):
        out[k] = one_hot(s, padded_len)
    return out


def decode_one_hot(mat: np.ndarray) -> str:
    """Inverse of :func:`one_hot`; all-zero rows are treated as padding."""
    rows = np.asarray(mat)
    live = rows.sum(axis=1) > 0
    return "".join(ALPHABET[int(i)] for i in rows[live].argmax(axis=1))


def load_reads(path: str | os.PathLike) -> list[str]:
    """Read one sequence per line; blank lines and ``>`` header lines are skipped."""
    reads = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith(">"):
                continue
            try:
                reads.append(parse_seq(line))
            except SequenceError as exc:
                raise SequenceError(f"{path}:{lineno}: {exc}") from None
    return reads


def save_reads(path: str | os.PathLike, seqs: Iterable[str]) -> None:
    with open(path, "w") as fh:
        for s in seqs:
            fh.write(s + "\n")
