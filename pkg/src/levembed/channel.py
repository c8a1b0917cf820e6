"""Synthetic references, a noisy read channel and paired dataset construction.

Homologous samples pair a reference with one of its reads (identical pairs
are dropped); non-homologous samples pair two reads of distinct references,
one for every homologous sample. Training sets are then balanced by
duplicating homologous samples so that every distance class is equally
represented.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seq import BASES, SequenceError, levenshtein, parse_seq
from .special import make_rng

log = logging.getLogger(__name__)

STREAM_REFS = 1
STREAM_READ = 2
STREAM_NONHOM = 3


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelParams:
    p_sub: float = 0.003
    p_ins: float = 0.003
    p_del: float = 0.004
    p_fail: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_sub", "p_ins", "p_del", "p_fail"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if self.p_sub + self.p_ins + self.p_del > 1.0 + 1e-12:
            raise ValueError(
                f"p_sub + p_ins + p_del = {self.p_sub + self.p_ins + self.p_del:.6g} exceeds 1"
            )

    @property
    def total(self) -> float:
        return self.p_sub + self.p_ins + self.p_del


@dataclass(frozen=True)
class PairSample:
    s: str
    t: str
    d: int
    homologous: bool


@dataclass
class Dataset:
    samples: list[PairSample]
    padded_len: int
    role: str = "train"
    info: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_homologous(self) -> int:
        return sum(p.homologous for p in self.samples)

    @property
    def n_nonhomologous(self) -> int:
        return len(self.samples) - self.n_homologous


def default_padded_len(ref_len: int) -> int:
    """Round up to a multiple of 32 so five pooling stages divide evenly."""
    return -(-ref_len // 32) * 32


def gen_references(count: int, ref_len: int, seed: int = 0) -> list[str]:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed, STREAM_REFS)
    idx = rng.integers(0, 4, size=(count, ref_len))
    return ["".join(BASES[i] for i in row) for row in idx]


def simulate_read(ref: str, ch: ChannelParams, rng: np.random.Generator | None = None) -> str:
    """Pass ``ref`` through the channel.

    Per reference base exactly one of: deletion (p_del), substitution by a
    different base (p_sub), insertion of a random base before it (p_ins), or
    faithful copy. Every emitted base then fails to ``N`` with prob. p_fail.
    """
    if rng is None:
        rng = make_rng(ch.seed, STREAM_READ)
    n = len(ref)
    u = rng.random(n)
    pick = rng.integers(0, 4, size=n)
    cut_del = ch.p_del
    cut_sub = cut_del + ch.p_sub
    cut_ins = cut_sub + ch.p_ins
    out = []
    for i, base in enumerate(ref):
        x = u[i]
        if x < cut_del:
            continue
        if x < cut_sub:
            if base in BASES:
                others = BASES.replace(base, "")
                out.append(others[pick[i] % 3])
            else:
                out.append(BASES[pick[i]])
        elif x < cut_ins:
            out.append(BASES[pick[i]])
            out.append(base)
        else:
            out.append(base)
    if ch.p_fail > 0 and out:
        fail = rng.random(len(out)) < ch.p_fail
        out = ["N" if f else c for c, f in zip(out, fail)]
    return "".join(out)


def simulate_reads(refs: list[str], reads_per_ref: int, ch: ChannelParams, seed: int) -> list[list[str]]:
    """Reads for every reference; read (i, j) uses its own stream keyed by (seed, i, j)."""
    return [
        [simulate_read(r, ch, make_rng(seed, STREAM_READ, i, j)) for j in range(reads_per_ref)]
        for i, r in enumerate(refs)
    ]


def drop_overlong(reads: list[list[str]], padded_len: int) -> tuple[list[list[str]], int]:
    """Remove reads longer than ``padded_len``; returns the kept reads and the number dropped."""
    kept = [[s for s in rr if len(s) <= padded_len] for rr in reads]
    return kept, sum(len(a) - len(b) for a, b in zip(reads, kept))


def balance_homologous(samples: list[PairSample], max_dup: int | None = 50) -> list[PairSample]:
    """Duplicate homologous samples so every distance class reaches the largest class count.

    Each sample is repeated at most ``max_dup`` times (``None`` = unbounded).
    Non-homologous samples pass through untouched.
    """
    hom = [p for p in samples if p.homologous]
    if not hom:
        return list(samples)
    by_d: dict[int, list[PairSample]] = defaultdict(list)
    for p in hom:
        by_d[p.d].append(p)
    target = max(len(v) for v in by_d.values())
    out = []
    for d in sorted(by_d):
        group = by_d[d]
        base, extra = divmod(target, len(group))
        for k, p in enumerate(group):
            m = base + (k < extra)
            if max_dup is not None:
                m = min(m, max_dup)
            out.extend([p] * m)
    out.extend(p for p in samples if not p.homologous)
    return out


def build_pairs(refs: list[str], reads_per_ref: int, ch: ChannelParams, padded_len: int,
                seed: int = 0, role: str = "train", balance: bool | None = None,
                max_dup: int | None = 50, reads: list[list[str]] | None = None) -> Dataset:
    """Build a paired dataset from references and their simulated reads.

    Homologous and non-homologous counts are equal before balancing;
    balancing (default: on for ``role='train'`` only) then duplicates
    homologous samples per distance class.
    """
    if len(refs) < 2:
        raise DatasetError(f"need at least 2 references to form non-homologous pairs, got {len(refs)}")
    if reads is None:
        reads = simulate_reads(refs, reads_per_ref, ch, seed)
    for i, r in enumerate(refs):
        if len(r) > padded_len:
            raise SequenceError(f"reference {i} has length {len(r)} > padded length {padded_len}")
        for j, s in enumerate(reads[i]):
            if len(s) > padded_len:
                raise SequenceError(f"read ({i}, {j}) has length {len(s)} > padded length {padded_len}")

    hom = []
    for i, r in enumerate(refs):
        for s in reads[i]:
            d = levenshtein(r, s)
            if d > 0:
                hom.append(PairSample(r, s, d, True))
    if not hom:
        raise DatasetError("empty homologous set: every reference-read pair has distance 0")

    read_index = [(i, j) for i in range(len(refs)) for j in range(len(reads[i]))]
    n_refs_with_reads = sum(1 for i in range(len(refs)) if reads[i])
    if n_refs_with_reads < 2:
        raise DatasetError("need reads from at least 2 references")
    seen = set()
    nonhom = []
    for k in range(len(hom)):
        rng = make_rng(seed, STREAM_NONHOM, k)
        while True:
            a = read_index[rng.integers(len(read_index))]
            b = read_index[rng.integers(len(read_index))]
            if a[0] == b[0]:
                continue
            key = (min(a, b), max(a, b))
            if key in seen and len(seen) < len(read_index) ** 2 // 4:
                continue
            seen.add(key)
            break
        s, t = reads[a[0]][a[1]], reads[b[0]][b[1]]
        nonhom.append(PairSample(s, t, levenshtein(s, t), False))

    samples = hom + nonhom
    info = {"n_homologous_raw": len(hom), "n_nonhomologous": len(nonhom),
            "hom_distance_counts": {str(k): v for k, v in sorted(Counter(p.d for p in hom).items())}}
    if balance if balance is not None else role == "train":
        samples = balance_homologous(samples, max_dup)
    return Dataset(samples, padded_len, role, info)


def split_by_reference(refs: list[str], fraction: float) -> tuple[list[str], list[str]]:
    """First ``round(fraction * len(refs))`` references train, the rest test."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"split fraction {fraction} outside [0, 1]")
    k = int(round(fraction * len(refs)))
    train, test = list(refs[:k]), list(refs[k:])
    validate_split(train, test)
    return train, test


def validate_split(train_refs, test_refs) -> None:
    overlap = set(train_refs) & set(test_refs)
    if overlap:
        raise DatasetError(f"{len(overlap)} reference(s) appear in both train and test splits")


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_dataset(ds: Dataset, path: str | os.PathLike) -> None:
    """Write ``s,t,d,homologous`` CSV plus a ``.meta.json`` sidecar (padded_len, role)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "t", "d", "homologous"])
        for p in ds.samples:
            w.writerow([p.s, p.t, p.d, int(p.homologous)])
    meta = {"padded_len": ds.padded_len, "role": ds.role, **ds.info}
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | os.PathLike, padded_len: int | None = None, role: str | None = None) -> Dataset:
    path = Path(path)
    meta = {}
    if _meta_path(path).exists():
        meta = json.loads(_meta_path(path).read_text())
    samples = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["s", "t", "d", "homologous"]:
            raise DatasetError(f"{path}:1: expected header s,t,d,homologous, got {header}")
        for lineno, row in enumerate(rows, 2):
            if len(row) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                s, t = parse_seq(row[0]), parse_seq(row[1])
                d = int(row[2])
                if row[3] not in ("0", "1"):
                    raise ValueError(f"homologous flag must be 0 or 1, got {row[3]!r}")
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if d < 0:
                raise DatasetError(f"{path}:{lineno}: negative distance {d}")
            samples.append(PairSample(s, t, d, row[3] == "1"))
    if padded_len is None:
        padded_len = meta.get("padded_len")
    if padded_len is None:
        longest = max((max(len(p.s), len(p.t)) for p in samples), default=1)
        padded_len = default_padded_len(longest)
    info = {k: v for k, v in meta.items() if k not in ("padded_len", "role")}
    ds = Dataset(samples, int(padded_len), role or meta.get("role", "train"), info)
    for k, p in enumerate(ds.samples):
        if max(len(p.s), len(p.t)) > ds.padded_len:
            raise DatasetError(f"{path}:{k + 2}: sequence longer than padded length {ds.padded_len}")
    return ds
