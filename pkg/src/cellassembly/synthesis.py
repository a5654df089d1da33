"""Ground-truth model synthesis and (z, y) data generation.

Membership columns are Bernoulli draws with column sums truncated to
``[C_min, C_max]``, de-overlapped by a greedy swap loop, and turned into
silence probabilities.  Latent vectors follow a truncated binomial and spike
words are sampled from the generative noisy-OR.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import GuardError
from .model import ModelParams

MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SynthHyperparams:
    N: int
    M: int
    K: int
    K_min: int
    K_max: int
    C: int
    C_min: int
    C_max: int
    mu_P: float
    sigma_P: float
    mu_R: float
    sigma_R: float
    sigma_Q: float = 0.0
    n_swap_iters: int | None = None  # None -> 50 * M

    def __post_init__(self):
        if not (0 <= self.K_min <= self.K <= self.K_max <= self.M):
            raise ValueError(f"need 0 <= K_min <= K <= K_max <= M, got {self}")
        if not (0 <= self.C_min <= self.C <= self.C_max <= self.N):
            raise ValueError(f"need 0 <= C_min <= C <= C_max <= N, got {self}")
        for name in ("mu_P", "sigma_P", "mu_R", "sigma_R", "sigma_Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def natural_movie(cls, N: int = 55, M: int = 55, **kw) -> "SynthHyperparams":
        """Best-fit row for natural-movie responses of Off-Brisk Transient cells."""
        base = dict(K=1, K_min=0, K_max=4, C=6, C_min=2, C_max=6,
                    mu_P=0.3, sigma_P=0.1, mu_R=0.04, sigma_R=0.02)
        base.update(kw)
        return cls(N=N, M=M, **base)

    @classmethod
    def white_noise(cls, N: int = 55, M: int = 55, **kw) -> "SynthHyperparams":
        """Best-fit row for white-noise responses of the same population."""
        base = dict(K=2, K_min=0, K_max=4, C=2, C_min=2, C_max=6,
                    mu_P=0.55, sigma_P=0.05, mu_R=0.04, sigma_R=0.02)
        base.update(kw)
        return cls(N=N, M=M, **base)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "SynthHyperparams":
        return replace(self, **kw)


@dataclass
class GroundTruth:
    """Synthesized generator: exact probabilities plus the binary membership.

    ``P`` is exactly 1 wherever ``S`` is 0.
    """

    P: np.ndarray
    R: np.ndarray
    Q: float
    S: np.ndarray
    hyper: SynthHyperparams

    @property
    def params(self) -> ModelParams:
        return ModelParams.from_probs(self.P, self.R, self.Q)

    def strengths(self) -> np.ndarray:
        return 1.0 - self.P


@dataclass
class LabeledDataset:
    Z: np.ndarray  # (n_words, M) int8
    Y: np.ndarray  # (n_words, N) int8
    gt_digest: str = ""


def sample_truncated_normal(mu, sd, lo, hi, rng, size=None, max_attempts=MAX_ATTEMPTS):
    """Rejection-sample ``N(mu, sd)`` restricted to ``[lo, hi]``.

    With ``sd == 0`` the mean is clipped to the bounds.  ``mu`` may be an array
    broadcast against ``size``.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if sd < 0:
        raise ValueError("sd must be non-negative")
    shape = np.broadcast(np.empty(size if size is not None else ()), np.asarray(mu)).shape
    mu_arr = np.broadcast_to(np.asarray(mu, dtype=float), shape)
    if sd == 0:
        out = np.clip(mu_arr, lo, hi).astype(float)
    else:
        out = np.empty(shape)
        todo = np.ones(shape, dtype=bool)
        for _ in range(max_attempts):
            n = int(todo.sum())
            if n == 0:
                break
            draw = mu_arr[todo] + sd * rng.standard_normal(n)
            ok = (draw >= lo) & (draw <= hi)
            idx = np.flatnonzero(todo.ravel())[ok]
            out.ravel()[idx] = draw[ok]
            todo.ravel()[idx] = False
        else:
            if todo.any():
                raise GuardError(
                    f"truncated normal N({mu}, {sd}) on [{lo}, {hi}]: no acceptance "
                    f"after {max_attempts} attempts"
                )
    return float(out) if out.ndim == 0 else out


def _mean_pairwise_cosine(S):
    norms = np.linalg.norm(S, axis=0)
    unit = np.divide(S, norms, out=np.zeros_like(S, dtype=float), where=norms > 0)
    G = unit.T @ unit
    iu = np.triu_indices(S.shape[1], k=1)
    return float(G[iu].mean()) if iu[0].size else 0.0


def _sample_membership_columns(N, M, C, C_min, C_max, rng, max_attempts=MAX_ATTEMPTS):
    S = np.zeros((N, M), dtype=np.int8)
    p = C / N
    for a in range(M):
        for _ in range(max_attempts):
            col = rng.random(N) < p
            if C_min <= col.sum() <= C_max:
                S[:, a] = col
                break
        else:
            raise GuardError(
                f"column sums of Bin({N}, {p:.4g}) never fell in [{C_min}, {C_max}] "
                f"after {max_attempts} attempts"
            )
    return S


def _swap_phase(S, n_iters, rng):
    """Greedy de-overlap: move low-usage cells into random assemblies."""
    S = S.copy()
    if n_iters <= 0:
        return S
    N, M = S.shape
    current = _mean_pairwise_cosine(S)
    for _ in range(n_iters):
        rows = S.sum(axis=1)
        low = np.flatnonzero(rows == rows.min())
        cell = int(rng.choice(low))
        targets = np.flatnonzero(S[cell] == 0)
        if targets.size == 0:
            continue
        a = int(rng.choice(targets))
        members = np.flatnonzero(S[:, a])
        if members.size == 0:
            continue
        evicted = int(rng.choice(members))
        S[cell, a], S[evicted, a] = 1, 0
        trial = _mean_pairwise_cosine(S)
        if trial < current:
            current = trial
        else:
            S[cell, a], S[evicted, a] = 0, 1
    return S


def build_membership(N, M, C, C_min, C_max, rng, n_swap_iters=None) -> np.ndarray:
    """Binary (N, M) membership with truncated-binomial column sums."""
    S = _sample_membership_columns(N, M, C, C_min, C_max, rng)
    n_iters = 50 * M if n_swap_iters is None else n_swap_iters
    return _swap_phase(S, n_iters, rng)


def build_P(S, mu_P, sigma_P, rng) -> np.ndarray:
    """Silence probabilities from a membership matrix.

    Member strengths ``1 - P`` are drawn from ``N(1 - mu_P, sigma_P)``
    truncated to [0, 1]; non-member entries are exactly 1.
    """
    S = np.asarray(S)
    P = np.ones(S.shape)
    members = S.astype(bool)
    n = int(members.sum())
    if n:
        strength = sample_truncated_normal(1.0 - mu_P, sigma_P, 0.0, 1.0, rng, size=n)
        P[members] = 1.0 - strength
    return P


def synthesize_gt(hyper: SynthHyperparams, rng) -> GroundTruth:
    h = hyper
    S = build_membership(h.N, h.M, h.C, h.C_min, h.C_max, rng, h.n_swap_iters)
    P = build_P(S, h.mu_P, h.sigma_P, rng)
    R = sample_truncated_normal(1.0 - h.mu_R, h.sigma_R, 0.0, 1.0, rng, size=h.N)
    Q = sample_truncated_normal(h.K / h.M, h.sigma_Q, 0.0, 1.0, rng)
    return GroundTruth(P=P, R=np.atleast_1d(R), Q=float(Q), S=S, hyper=h)


def sample_latent(hyper: SynthHyperparams, Q: float, rng, max_attempts=MAX_ATTEMPTS) -> np.ndarray:
    """Bernoulli(Q) latent vector, redrawn whole until |z| is in [K_min, K_max]."""
    for _ in range(max_attempts):
        z = (rng.random(hyper.M) < Q).astype(np.int8)
        if hyper.K_min <= z.sum() <= hyper.K_max:
            return z
    raise GuardError(
        f"|z| ~ Bin({hyper.M}, {Q:.4g}) never fell in [{hyper.K_min}, {hyper.K_max}] "
        f"after {max_attempts} attempts"
    )


def sample_latents(hyper: SynthHyperparams, Q: float, n: int, rng, max_attempts=MAX_ATTEMPTS):
    """``n`` truncated-binomial latent vectors, drawn in batches."""
    out = np.empty((n, hyper.M), dtype=np.int8)
    filled = 0
    for _ in range(max_attempts):
        if filled == n:
            return out
        want = n - filled
        Z = rng.random((max(2 * want, 64), hyper.M)) < Q
        k = Z.sum(axis=1)
        Z = Z[(k >= hyper.K_min) & (k <= hyper.K_max)][:want]
        out[filled:filled + Z.shape[0]] = Z
        filled += Z.shape[0]
    if filled < n:
        raise GuardError(f"|z| bounds [{hyper.K_min}, {hyper.K_max}] accept too rarely at Q={Q:.4g}")
    return out


def _silence_probs(gt: GroundTruth, Z):
    Z = np.asarray(Z, dtype=float)
    log_P = np.log(np.maximum(gt.P, np.finfo(float).tiny))
    log_R = np.log(np.maximum(gt.R, np.finfo(float).tiny))
    k = Z.sum(axis=-1)
    return np.exp(np.multiply.outer(1.0 - k / gt.hyper.M, log_R) + Z @ log_P.T)


def generate_word(gt: GroundTruth, z, rng) -> np.ndarray:
    """Spike word with ``y_i ~ Bernoulli(1 - T_i)``."""
    T = _silence_probs(gt, z)
    return (rng.random(T.shape) >= T).astype(np.int8)


def generate_dataset(gt: GroundTruth, n_words: int, rng) -> LabeledDataset:
    Z = sample_latents(gt.hyper, gt.Q, n_words, rng)
    T = _silence_probs(gt, Z)
    Y = (rng.random(T.shape) >= T).astype(np.int8)
    return LabeledDataset(Z=Z, Y=Y)
