"""Distance-approximation metrics and embedding-distribution diagnostics."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metric as M
from .special import probit


class MetricsError(ValueError):
    pass


def _arrays(*xs):
    return [np.asarray(x, dtype=np.float64).reshape(-1) for x in xs]


def ae(d, d_hat) -> float:
    """Mean absolute error between true and approximate distances."""
    d, d_hat = _arrays(d, d_hat)
    if d.size == 0:
        raise MetricsError("ae: no pairs")
    if d.shape != d_hat.shape:
        raise MetricsError(f"ae: {d.size} distances vs {d_hat.size} predictions")
    return float(np.mean(np.abs(d - d_hat)))


def ae_h(d, d_hat, homologous) -> float:
    """Mean absolute error over homologous pairs only."""
    hom = np.asarray(homologous, dtype=bool).reshape(-1)
    d, d_hat = _arrays(d, d_hat)
    if not hom.any():
        raise MetricsError("ae_h: no homologous pairs")
    return ae(d[hom], d_hat[hom])


def oa(d_hat, homologous, k: float) -> float:
    """Percent of pairs classified correctly when d_hat >= k means non-homologous."""
    (d_hat,) = _arrays(d_hat)
    hom = np.asarray(homologous, dtype=bool).reshape(-1)
    if d_hat.size == 0:
        raise MetricsError("oa: no pairs")
    return float(100.0 * np.mean((d_hat >= k) == ~hom))


def best_threshold(d_hat, homologous) -> tuple[float, float]:
    """Sweep every distinct split of the sorted d_hat; return (K*, OA*) with ties to the smallest K.

    Candidates are the smallest value (everything non-homologous), midpoints
    between consecutive distinct values, and max + 1 (everything homologous).
    """
    (d_hat,) = _arrays(d_hat)
    hom = np.asarray(homologous, dtype=bool).reshape(-1)
    if d_hat.size == 0:
        raise MetricsError("best_threshold: no pairs")
    order = np.argsort(d_hat, kind="stable")
    vals, h = d_hat[order], hom[order]
    uniq, start = np.unique(vals, return_index=True)
    ends = np.append(start[1:], vals.size)
    hom_cum = np.concatenate([[0], np.cumsum(h)[ends - 1]])
    non_cum = np.concatenate([[0], ends]) - hom_cum
    correct = hom_cum + (non_cum[-1] - non_cum)
    cands = np.concatenate([[uniq[0]], (uniq[:-1] + uniq[1:]) / 2, [uniq[-1] + 1.0]])
    j = int(np.argmax(correct))
    return float(cands[j]), float(100.0 * correct[j] / vals.size)


@dataclass
class MetricsReport:
    ae: float
    ae_h: float
    oa_at_k: float
    k: float
    oa_best: float
    k_best: float
    n_homologous: int
    n_nonhomologous: int

    def rows(self) -> list[tuple[str, float]]:
        return list(asdict(self).items())


def evaluate_pairs(d, d_hat, homologous, k: float) -> MetricsReport:
    hom = np.asarray(homologous, dtype=bool).reshape(-1)
    k_best, oa_best = best_threshold(d_hat, hom)
    return MetricsReport(
        ae=ae(d, d_hat), ae_h=ae_h(d, d_hat, hom), oa_at_k=oa(d_hat, hom, k), k=float(k),
        oa_best=oa_best, k_best=k_best, n_homologous=int(hom.sum()), n_nonhomologous=int((~hom).sum()),
    )


def predict_distances(model, dataset, space: M.EmbeddingSpace) -> np.ndarray:
    """d_hat for every sample; each distinct sequence is embedded once."""
    from .trainer import embed_batch

    seqs = sorted({p.s for p in dataset.samples} | {p.t for p in dataset.samples})
    row = {s: i for i, s in enumerate(seqs)}
    emb = embed_batch(model, seqs, space)
    u = emb[[row[p.s] for p in dataset.samples]]
    v = emb[[row[p.t] for p in dataset.samples]]
    return M.distance(space, u, v)


def evaluate_model(model, dataset, space: M.EmbeddingSpace, k: float | None = None) -> MetricsReport:
    d_hat = predict_distances(model, dataset, space)
    d = [p.d for p in dataset.samples]
    hom = [p.homologous for p in dataset.samples]
    return evaluate_pairs(d, d_hat, hom, space.n / 2 if k is None else k)


# -- distribution diagnostics ------------------------------------------------

def elementwise_stats(emb) -> tuple[np.ndarray, np.ndarray]:
    """Per-element sample mean and standard deviation (ddof=1)."""
    emb = _embeddings(emb)
    return emb.mean(axis=0), emb.std(axis=0, ddof=1)


def qq_data(emb) -> tuple[np.ndarray, np.ndarray]:
    """Theoretical normal quantiles at (i - 0.5)/m and the sorted samples of each element."""
    emb = _embeddings(emb)
    m = emb.shape[0]
    theo = probit((np.arange(1, m + 1) - 0.5) / m)
    return theo, np.sort(emb, axis=0)


def qq_max_deviation(emb, trim: float = 0.0) -> float:
    """Largest |sample quantile - normal quantile| over all elements.

    Plotting positions outside [trim, 1 - trim] are ignored; the extreme order
    statistics of a finite sample scatter far more than the central ones.
    """
    theo, emp = qq_data(emb)
    m = theo.size
    pos = (np.arange(1, m + 1) - 0.5) / m
    keep = (pos >= trim) & (pos <= 1 - trim)
    return float(np.max(np.abs(emp[keep] - theo[keep, None])))


def pcc_matrix(emb) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of every element pair.

    Returns ``(pcc, undefined)``. Elements with zero variance are flagged in
    ``undefined`` and their rows and columns hold NaN; all other entries are
    computed without them. The matrix is exactly symmetric with unit diagonal
    on defined elements.
    """
    emb = _embeddings(emb)
    x = emb - emb.mean(axis=0)
    ss = np.einsum("ij,ij->j", x, x)
    undefined = ss == 0
    scale = np.where(undefined, 1.0, np.sqrt(ss))
    z = x / scale
    c = z.T @ z
    c = np.clip((c + c.T) / 2, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    c[undefined, :] = np.nan
    c[:, undefined] = np.nan
    return c, undefined


def pcc_histogram(pcc: np.ndarray, bins: int = 40) -> tuple[np.ndarray, np.ndarray]:
    iu = np.triu_indices_from(pcc, k=1)
    vals = pcc[iu]
    return np.histogram(vals[~np.isnan(vals)], bins=bins, range=(-1.0, 1.0))


def _embeddings(emb) -> np.ndarray:
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise MetricsError(f"need at least 2 embedding vectors as a (m, n) array, got shape {emb.shape}")
    return emb


@dataclass
class DiagnosticsReport:
    mean: np.ndarray
    std: np.ndarray
    qq_theoretical: np.ndarray
    qq_empirical: np.ndarray
    pcc: np.ndarray
    undefined: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def summary(self, scale: float = 1.0) -> dict:
        """Headline numbers; ``scale`` divides std (pass the rescaling factor for rescaled input)."""
        off = self.pcc[np.triu_indices_from(self.pcc, k=1)]
        off = off[~np.isnan(off)]
        return {
            "elements": int(self.mean.size),
            "samples": int(self.qq_empirical.shape[0]),
            "max_abs_mean": float(np.max(np.abs(self.mean))),
            "max_abs_std_dev": float(np.max(np.abs(self.std / scale - 1))),
            "max_abs_offdiag_pcc": float(np.max(np.abs(off))) if off.size else None,
            "undefined_elements": [int(i) for i in np.flatnonzero(self.undefined)],
        }


def diagnose(emb, bins: int = 40) -> DiagnosticsReport:
    mean, std = elementwise_stats(emb)
    theo, emp = qq_data(emb)
    pcc, undefined = pcc_matrix(emb)
    counts, edges = pcc_histogram(pcc, bins)
    return DiagnosticsReport(mean, std, theo, emp, pcc, undefined, counts, edges)


# -- writers -----------------------------------------------------------------

def write_metrics(report: MetricsReport, out_dir: str | os.PathLike, stem: str = "metrics") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in report.rows():
            w.writerow([name, repr(value)])
    json_path.write_text(json.dumps(asdict(report), indent=2) + "\n")
    return [csv_path, json_path]


def _write_grid(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["nan" if isinstance(v, float) and np.isnan(v) else repr(v) for v in r])


def write_diagnostics(rep: DiagnosticsReport, out_dir: str | os.PathLike, scale: float = 1.0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = rep.mean.size
    paths = [out / "elements.csv", out / "qq.csv", out / "pcc.csv", out / "pcc_hist.csv", out / "diagnostics.json"]
    _write_grid(paths[0], ["element", "mean", "std", "undefined"],
                ([i, float(rep.mean[i]), float(rep.std[i]), int(rep.undefined[i])] for i in range(n)))
    _write_grid(paths[1], ["theoretical"] + [f"e{i}" for i in range(n)],
                ([float(q)] + [float(v) for v in row] for q, row in zip(rep.qq_theoretical, rep.qq_empirical)))
    _write_grid(paths[2], [f"e{i}" for i in range(n)], ([float(v) for v in row] for row in rep.pcc))
    _write_grid(paths[3], ["lo", "hi", "count"],
                ([float(rep.hist_edges[i]), float(rep.hist_edges[i + 1]), int(c)]
                 for i, c in enumerate(rep.hist_counts)))
    paths[4].write_text(json.dumps(rep.summary(scale), indent=2) + "\n")
    return paths
