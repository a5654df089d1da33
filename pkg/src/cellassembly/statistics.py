"""Spike-word moments, QQ distances and moment-matched hyperparameter search."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, fields

import numpy as np

from .errors import DataError
from .synthesis import SynthHyperparams, generate_dataset, synthesize_gt

log = logging.getLogger(__name__)

QQ_LEVELS = np.linspace(0.0, 1.0, 100)
DEFAULT_WORDS_PER_EVAL = 50_000


@dataclass
class MomentSummary:
    """Word-length histogram, per-cell means and pairwise coactivities of a corpus."""

    word_length_counts: np.ndarray  # (N + 1,) integer counts of |y|
    cell_means: np.ndarray          # (N,)
    pair_coactivity: np.ndarray     # (N, N) symmetric, diagonal = cell_means

    @property
    def n_words(self) -> int:
        return int(self.word_length_counts.sum())

    @property
    def word_length_pdf(self) -> np.ndarray:
        return self.word_length_counts / self.n_words

    def word_lengths(self) -> np.ndarray:
        """The sorted sample of word lengths the histogram was built from."""
        return np.repeat(np.arange(self.word_length_counts.size), self.word_length_counts)

    def pair_values(self) -> np.ndarray:
        """Upper-triangle (i < j) coactivities, flattened."""
        return self.pair_coactivity[np.triu_indices(self.cell_means.size, k=1)]


@dataclass
class QQReport:
    qq_length: float
    qq_mean: float
    qq_pair: float
    combined: float


def moments(corpus) -> MomentSummary:
    Y = np.asarray(corpus, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise DataError("moments need a non-empty (n_words, n_cells) corpus")
    n, N = Y.shape
    lengths = Y.sum(axis=1).astype(np.int64)
    counts = np.bincount(lengths, minlength=N + 1)
    return MomentSummary(counts, Y.mean(axis=0), (Y.T @ Y) / n)


def qq_value(sample_a, sample_b) -> float:
    """Mean absolute gap between matched quantiles, scaled by the pooled range.

    Quantiles are taken at 100 evenly spaced levels in [0, 1] with linear
    interpolation between order statistics.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("qq_value needs two non-empty samples")
    span = max(a.max(), b.max()) - min(a.min(), b.min())
    if span == 0:
        return 0.0
    gap = np.abs(np.quantile(a, QQ_LEVELS) - np.quantile(b, QQ_LEVELS))
    return float(gap.mean() / span)


def qq_report(a: MomentSummary, b: MomentSummary, weights=(1.0, 1.0, 1.0)) -> QQReport:
    q_len = qq_value(a.word_lengths(), b.word_lengths())
    q_mean = qq_value(a.cell_means, b.cell_means)
    q_pair = qq_value(a.pair_values(), b.pair_values())
    w1, w2, w3 = weights
    return QQReport(q_len, q_mean, q_pair, w1 * q_len + w2 * q_mean + w3 * q_pair)


def hyper_grid(base: SynthHyperparams, **axes) -> list[SynthHyperparams]:
    """Cartesian lattice over the named fields, in row-major order of ``axes``.

    Points violating the hyperparameter bounds are skipped.
    """
    names = {f.name for f in fields(SynthHyperparams)}
    unknown = set(axes) - names
    if unknown:
        raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
    keys = list(axes)
    grid = []
    for values in itertools.product(*(axes[k] for k in keys)):
        try:
            grid.append(base.with_(**dict(zip(keys, values))))
        except ValueError:
            continue
    return grid


def corpus_for(hyper: SynthHyperparams, n_words: int, seed) -> np.ndarray:
    """Synthesize a ground truth and draw ``n_words`` spike words from it."""
    rng = np.random.default_rng(seed)
    gt = synthesize_gt(hyper, rng)
    return generate_dataset(gt, n_words, rng).Y


def fit_hyperparams(
    target: MomentSummary,
    grid: list[SynthHyperparams],
    words_per_eval: int = DEFAULT_WORDS_PER_EVAL,
    seed: int = 0,
    weights=(1.0, 1.0, 1.0),
):
    """Grid search for the synthesis hyperparameters best matching ``target``.

    Each lattice point gets its own seed ``[seed, index]``.  Returns
    ``(best_hyper, best_report, all_reports)``; ties keep the earliest point.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    reports = []
    best = None
    for idx, hyper in enumerate(grid):
        Y = corpus_for(hyper, words_per_eval, [seed, idx])
        rep = qq_report(target, moments(Y), weights)
        reports.append(rep)
        log.debug("grid point %d: combined QQ %.5f", idx, rep.combined)
        if best is None or rep.combined < reports[best].combined:
            best = idx
    return grid[best], reports[best], reports
