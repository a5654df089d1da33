"""MAP inference of the latent vector for a fixed model and spike word.

``greedy_infer`` scores every one-hot latent plus the empty latent, keeps a
small pool of promising one-hots and then searches all subsets of that pool.
``exhaustive_infer`` searches every latent vector and serves as the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import GuardError
from .model import HEState, ModelParams, _check_dims, log_joint_batch

EXHAUSTIVE_MAX_LATENTS = 24
_CHUNK_BITS = 14


class PriorKind(str, Enum):
    BINOMIAL = "binomial"
    HE = "homeostatic-egalitarian"


@dataclass(frozen=True)
class InferenceConfig:
    """Search breadth of the greedy inference.

    ``i0`` admits that many one-hots scoring no better than the empty latent
    into the pool; ``imax`` caps the pool size.
    """

    i0: int = 9
    imax: int = 10
    prior_kind: PriorKind = PriorKind.BINOMIAL

    def __post_init__(self):
        if self.i0 < 0 or self.imax < 1:
            raise ValueError("need i0 >= 0 and imax >= 1")
        object.__setattr__(self, "prior_kind", PriorKind(self.prior_kind))

    def validate(self, n_latents: int) -> None:
        if self.i0 > n_latents or self.imax > n_latents:
            raise ValueError(f"i0={self.i0}, imax={self.imax} exceed M={n_latents}")


class ScoredCandidate(NamedTuple):
    latent_index: int | None  # None is the all-zero latent
    score: float


@lru_cache(maxsize=32)
def _subset_bits(k: int) -> np.ndarray:
    """All 2**k bit patterns, row v has bit j = (v >> (k-1-j)) & 1 (lexicographic)."""
    v = np.arange(2**k, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1, dtype=np.int64)
    bits = ((v[:, None] >> shifts[None, :]) & 1).astype(float)
    bits.setflags(write=False)
    return bits


def _one_hot_scores(model, y, he_state):
    M = model.n_latents
    Z = np.vstack([np.zeros((1, M)), np.eye(M)])
    return log_joint_batch(model, y, Z, he_state)


def score_one_hots(model: ModelParams, y, he_state: HEState | None = None) -> list[ScoredCandidate]:
    """Score the empty latent and all M one-hot latents, best first.

    Ties are broken by ascending latent index with the empty latent first.
    """
    _check_dims(model, y)
    scores = _one_hot_scores(model, y, he_state)
    order = np.lexsort((np.arange(-1, model.n_latents), -scores))
    return [ScoredCandidate(None if i == 0 else int(i) - 1, float(scores[i])) for i in order]


def candidate_pool(one_hot_scores: np.ndarray, i0: int, imax: int) -> np.ndarray:
    """Latent indices entering the combination step.

    One-hots scoring strictly above the empty latent come first (best first),
    then up to ``i0`` of the rest in descending order; the pool is cut at
    ``imax``.
    """
    base = one_hot_scores[0]
    singles = one_hot_scores[1:]
    order = np.lexsort((np.arange(singles.size), -singles))
    above = order[singles[order] > base]
    below = order[~(singles[order] > base)][:i0]
    return np.concatenate([above, below])[:imax]


def _best_row(Z, scores):
    # rows of Z are in lexicographic order, so argmax picks the smallest pattern among ties
    best = int(np.argmax(scores))
    return Z[best], float(scores[best])


def greedy_infer(
    model: ModelParams,
    y,
    cfg: InferenceConfig = InferenceConfig(),
    he_state: HEState | None = None,
    return_score: bool = False,
):
    """Greedy interpolated MAP search.

    Returns the best latent vector (int8) among all subsets of the candidate
    pool, always including the empty latent.  With ``return_score`` the log
    joint of that vector is returned as well.
    """
    _check_dims(model, y)
    M = model.n_latents
    i0, imax = min(cfg.i0, M), min(cfg.imax, M)
    prior = he_state if cfg.prior_kind is PriorKind.HE else None
    one_hots = _one_hot_scores(model, y, prior)
    pool = np.sort(candidate_pool(one_hots, i0, imax))
    bits = _subset_bits(pool.size)
    Z = np.zeros((bits.shape[0], M))
    Z[:, pool] = bits
    scores = log_joint_batch(model, y, Z, prior)
    z, score = _best_row(Z, scores)
    z = z.astype(np.int8)
    return (z, score) if return_score else z


def exhaustive_infer(
    model: ModelParams,
    y,
    he_state: HEState | None = None,
    max_latents: int = EXHAUSTIVE_MAX_LATENTS,
    return_score: bool = False,
):
    """Exact MAP over all ``2**M`` latent vectors.

    Ties go to the lexicographically smallest bit pattern.  Raises
    :class:`GuardError` when ``M`` exceeds ``max_latents``.
    """
    _check_dims(model, y)
    M = model.n_latents
    if M > max_latents:
        raise GuardError(f"exhaustive search over 2**{M} states exceeds guard M <= {max_latents}")
    chunk_bits = min(M, _CHUNK_BITS)
    low = _subset_bits(chunk_bits)
    best_z, best_score = None, -np.inf
    for prefix in range(2 ** (M - chunk_bits)):
        Z = np.empty((low.shape[0], M))
        hi_bits = M - chunk_bits
        for j in range(hi_bits):
            Z[:, j] = (prefix >> (hi_bits - 1 - j)) & 1
        Z[:, hi_bits:] = low
        scores = log_joint_batch(model, y, Z, he_state)
        z, score = _best_row(Z, scores)
        if best_z is None or score > best_score:
            best_z, best_score = z, score
    best_z = best_z.astype(np.int8)
    return (best_z, best_score) if return_score else best_z


def infer_corpus(model, words, cfg=InferenceConfig(), he_state=None) -> np.ndarray:
    """Greedy inference for every row of a (n_words, N) corpus; returns (n_words, M) int8."""
    words = np.asarray(words)
    out = np.zeros((words.shape[0], model.n_latents), dtype=np.int8)
    for t, y in enumerate(words):
        out[t] = greedy_infer(model, y, cfg, he_state)
    return out
