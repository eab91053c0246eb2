"""Structural comparison of graph corpora: degree statistics and Laplacian spectra.

Corpus-level spectral distance is the 1-D Wasserstein distance between the
*pooled* eigenvalues of each corpus (every graph's spectrum concatenated).
Standard deviations are population (``ddof=0``) values.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eigen import jacobi_eigenvalues
from .graph import Corpus, Graph, connected_components, corpus_stats

REPORT_SCHEMA_VERSION = 1
NEAR_ZERO = 0.01
SPECTRUM_BINS = 40

__all__ = [
    "average_degree", "normalized_laplacian", "spectrum", "Spectrum", "connected_components",
    "wasserstein_1d", "compare_corpora", "MetricsReport", "write_report",
]


def average_degree(g: Graph) -> float:
    if g.n_nodes < 1:
        raise ValueError("average degree of an empty graph is undefined")
    return 2.0 * g.n_edges / g.n_nodes


def normalized_laplacian(g: Graph) -> np.ndarray:
    n = g.n_nodes
    deg = g.degrees().astype(np.float64)
    lap = np.diag((deg > 0).astype(np.float64))
    for u, v in g.edges:
        w = -1.0 / np.sqrt(deg[u] * deg[v])
        lap[u, v] = w
        lap[v, u] = w
    return lap


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    source: object = None

    def __len__(self):
        return len(self.values)


def _components(g: Graph) -> list[np.ndarray]:
    label = -np.ones(g.n_nodes, dtype=np.int64)
    adj = [[] for _ in range(g.n_nodes)]
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    out = []
    for s in range(g.n_nodes):
        if label[s] >= 0:
            continue
        label[s] = len(out)
        stack, members = [s], [s]
        while stack:
            x = stack.pop()
            for y in adj[x]:
                if label[y] < 0:
                    label[y] = len(out)
                    stack.append(y)
                    members.append(y)
        out.append(np.sort(np.array(members)))
    return out


def spectrum(g: Graph, source=None) -> Spectrum:
    """Ascending normalized-Laplacian eigenvalues via Jacobi rotations.

    The Laplacian is block diagonal over connected components, so each
    component is diagonalized on its own; isolated nodes contribute 0 and
    single edges contribute {0, 2} without a solve.
    """
    if g.n_nodes < 1:
        raise ValueError("spectrum of an empty graph is undefined")
    lap = normalized_laplacian(g)
    vals = []
    for comp in _components(g):
        if len(comp) == 1:
            vals.append(np.zeros(1))
        elif len(comp) == 2:
            vals.append(np.array([0.0, 2.0]))
        else:
            vals.append(jacobi_eigenvalues(lap[np.ix_(comp, comp)]))
    return Spectrum(np.sort(np.concatenate(vals)), source)


def corpus_spectra(c: Corpus, workers: int = 1) -> list[Spectrum]:
    """Per-graph spectra in corpus order; ``workers > 1`` uses threads (results identical)."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda ig: spectrum(ig[1], ig[0]), enumerate(c)))
    return [spectrum(g, i) for i, g in enumerate(c)]


def wasserstein_1d(a, b) -> float:
    """W1 between two empirical distributions: integral of ``|F_a - F_b|``.

    Sample counts may differ.
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs two non-empty samples")
    x = np.concatenate([a, b])
    x.sort(kind="mergesort")
    widths = np.diff(x)
    fa = np.searchsorted(a, x[:-1], side="right") / a.size
    fb = np.searchsorted(b, x[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


# --------------------------------------------------------------------------
# corpus comparison

def degree_histogram(c: Corpus, max_degree: int) -> np.ndarray:
    counts = np.zeros(max_degree + 1, dtype=np.int64)
    for g in c:
        counts += np.bincount(g.degrees(), minlength=max_degree + 1)[:max_degree + 1]
    return counts


def spectrum_histogram(values: np.ndarray, bins: int = SPECTRUM_BINS) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 2.0, bins + 1)
    # round-off can push values a hair outside [0, 2]
    counts, _ = np.histogram(np.clip(values, 0.0, 2.0), bins=edges)
    return counts, edges


@dataclass
class CorpusSummary:
    name: str
    graphs: int
    degree_mean: float
    degree_std: float
    average_degrees: list
    component_counts: list
    near_zero_fraction: float
    eigenvalue_count: int
    degree_hist: list
    spectrum_hist: list


@dataclass
class MetricsReport:
    real: CorpusSummary
    synthetic: CorpusSummary
    wasserstein: float
    spectrum_bin_edges: list
    near_zero_threshold: float = NEAR_ZERO
    schema_version: int = REPORT_SCHEMA_VERSION
    conventions: dict = field(default_factory=lambda: {
        "std": "population (ddof=0)",
        "spectral_aggregation": "pooled eigenvalues per corpus",
        "wasserstein": "1-D W1 between pooled normalized-Laplacian eigenvalues",
    })

    def to_dict(self) -> dict:
        def summary(s: CorpusSummary) -> dict:
            return {
                "name": s.name,
                "graphs": s.graphs,
                "avg_degree_mean": s.degree_mean,
                "avg_degree_std": s.degree_std,
                "eigenvalue_count": s.eigenvalue_count,
                "near_zero_eigenvalue_fraction": s.near_zero_fraction,
                "disconnected_graphs": int(sum(1 for k in s.component_counts if k > 1)),
                "component_counts": list(s.component_counts),
                "average_degrees": list(s.average_degrees),
                "degree_histogram": list(s.degree_hist),
                "spectrum_histogram": list(s.spectrum_hist),
            }

        return {
            "schema_version": self.schema_version,
            "conventions": self.conventions,
            "table": {
                "real_avg_degree_mean": self.real.degree_mean,
                "real_avg_degree_std": self.real.degree_std,
                "synthetic_avg_degree_mean": self.synthetic.degree_mean,
                "synthetic_avg_degree_std": self.synthetic.degree_std,
                "laplacian_wasserstein": self.wasserstein,
            },
            "diagnostics": {
                "near_zero_threshold": self.near_zero_threshold,
                "real_near_zero_fraction": self.real.near_zero_fraction,
                "synthetic_near_zero_fraction": self.synthetic.near_zero_fraction,
                "real_disconnected_graphs": int(sum(1 for k in self.real.component_counts if k > 1)),
                "synthetic_disconnected_graphs": int(sum(1 for k in self.synthetic.component_counts if k > 1)),
            },
            "spectrum_bin_edges": list(self.spectrum_bin_edges),
            "real": summary(self.real),
            "synthetic": summary(self.synthetic),
        }


def _summarize(c: Corpus, pooled: np.ndarray, max_degree: int) -> CorpusSummary:
    st = corpus_stats(c)
    hist, _ = spectrum_histogram(pooled)
    return CorpusSummary(
        name=c.name,
        graphs=len(c),
        degree_mean=st.mean_degree,
        degree_std=st.std_degree,
        average_degrees=[float(x) for x in st.average_degrees],
        component_counts=[int(x) for x in st.component_counts],
        near_zero_fraction=float(np.mean(pooled < NEAR_ZERO)),
        eigenvalue_count=int(pooled.size),
        degree_hist=[int(x) for x in degree_histogram(c, max_degree)],
        spectrum_hist=[int(x) for x in hist],
    )


def pooled_spectrum(c: Corpus, workers: int = 1) -> np.ndarray:
    return np.concatenate([s.values for s in corpus_spectra(c, workers)])


def compare_corpora(real: Corpus, synth: Corpus, workers: int = 1) -> MetricsReport:
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("compare_corpora needs two non-empty corpora")
    pr = pooled_spectrum(real, workers)
    ps = pooled_spectrum(synth, workers) if synth is not real else pr
    max_degree = max(int(g.degrees().max(initial=0)) for g in list(real) + list(synth))
    _, edges = spectrum_histogram(pr)
    return MetricsReport(
        real=_summarize(real, pr, max_degree),
        synthetic=_summarize(synth, ps, max_degree),
        wasserstein=wasserstein_1d(pr, ps),
        spectrum_bin_edges=[float(x) for x in edges],
    )


def write_report(report: MetricsReport, out_dir: str | os.PathLike) -> list[Path]:
    """``report.json`` (key/values and arrays), ``histograms.csv`` and ``graphs.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "histograms.csv", out / "graphs.csv"]
    with open(paths[0], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    with open(paths[1], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["corpus", "kind", "bin_lo", "bin_hi", "count"])
        for label, s in (("real", report.real), ("synthetic", report.synthetic)):
            for d, cnt in enumerate(s.degree_hist):
                w.writerow([label, "degree", d, d, cnt])
            e = report.spectrum_bin_edges
            for i, cnt in enumerate(s.spectrum_hist):
                w.writerow([label, "spectrum", repr(e[i]), repr(e[i + 1]), cnt])
    with open(paths[2], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["corpus", "index", "avg_degree", "components"])
        for label, s in (("real", report.real), ("synthetic", report.synthetic)):
            for i, (d, k) in enumerate(zip(s.average_degrees, s.component_counts)):
                w.writerow([label, i, repr(d), k])
    return paths
