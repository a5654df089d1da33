"""Binary latent variable (noisy-OR) model: parameters and log probabilities.

Parameters live in logistic space (``rho``, ``r_logit``, ``q_logit``) so that
gradient ascent is unconstrained; the probability views ``P``, ``R`` and ``Q``
are derived on demand.  ``P[i, a]`` is the probability that cell ``i`` stays
silent when latent ``a`` is active, ``R[i]`` the probability that it stays
silent when no latent is active, and ``Q`` the activation probability of any
single latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .errors import DimensionError

LOGIT_BOUND = 12.0
HE_PROB_FLOOR = 1e-6


def logistic(x):
    """Logistic sigmoid with the argument clamped to ``[-12, 12]``."""
    out = expit(np.clip(x, -LOGIT_BOUND, LOGIT_BOUND))
    return float(out) if np.ndim(out) == 0 else out


def logit(p):
    """Inverse of :func:`logistic`; rejects values outside the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("logit is only defined on (0, 1)")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


def log_logistic(x):
    """``log(logistic(x))`` computed without forming the probability."""
    x = np.clip(x, -LOGIT_BOUND, LOGIT_BOUND)
    return -np.logaddexp(0.0, -x)


def log1mexp(log_t):
    """``log(1 - exp(log_t))`` for ``log_t <= 0``; returns ``-inf`` at ``log_t == 0``."""
    log_t = np.asarray(log_t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(
            log_t > -0.6931471805599453,
            np.log(-np.expm1(log_t)),
            np.log1p(-np.exp(log_t)),
        )


@dataclass
class ModelParams:
    """Learnable parameters of the BLV model in logistic space.

    Parameters
    ----------
    rho : ndarray, shape (N, M)
        Logits of the conditional silence matrix ``P``.
    r_logit : ndarray, shape (N,)
        Logits of the spontaneous silence vector ``R``.
    q_logit : float
        Logit of the latent activation probability ``Q``.
    """

    rho: np.ndarray
    r_logit: np.ndarray
    q_logit: float

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=float)
        self.r_logit = np.array(self.r_logit, dtype=float)
        self.q_logit = float(self.q_logit)
        if self.rho.ndim != 2:
            raise DimensionError(f"rho must be 2-D, got shape {self.rho.shape}")
        if self.r_logit.shape != (self.rho.shape[0],):
            raise DimensionError(
                f"r_logit has shape {self.r_logit.shape}, expected ({self.rho.shape[0]},)"
            )

    @classmethod
    def from_probs(cls, P, R, Q) -> "ModelParams":
        """Build from probabilities; exact 0/1 entries land on the logit clamps."""
        def to_logit(p):
            p = np.asarray(p, dtype=float)
            with np.errstate(divide="ignore"):
                return np.clip(np.log(p) - np.log1p(-p), -LOGIT_BOUND, LOGIT_BOUND)

        return cls(to_logit(P), to_logit(R), float(to_logit(Q)))

    @property
    def n_cells(self) -> int:
        return self.rho.shape[0]

    @property
    def n_latents(self) -> int:
        return self.rho.shape[1]

    @property
    def P(self) -> np.ndarray:
        return logistic(self.rho)

    @property
    def R(self) -> np.ndarray:
        return logistic(self.r_logit)

    @property
    def Q(self) -> float:
        return logistic(self.q_logit)

    @property
    def log_P(self) -> np.ndarray:
        return log_logistic(self.rho)

    @property
    def log_R(self) -> np.ndarray:
        return log_logistic(self.r_logit)

    def strengths(self) -> np.ndarray:
        """Membership strengths ``1 - P`` (large means crisp membership)."""
        return 1.0 - self.P

    def copy(self) -> "ModelParams":
        return ModelParams(self.rho.copy(), self.r_logit.copy(), self.q_logit)

    def clamp_(self) -> "ModelParams":
        """Clip all logits to the admissible range in place."""
        np.clip(self.rho, -LOGIT_BOUND, LOGIT_BOUND, out=self.rho)
        np.clip(self.r_logit, -LOGIT_BOUND, LOGIT_BOUND, out=self.r_logit)
        self.q_logit = float(np.clip(self.q_logit, -LOGIT_BOUND, LOGIT_BOUND))
        return self


@dataclass
class HEState:
    """Usage counts driving the homeostatic-egalitarian prior.

    ``rates[a]`` starts at 1 and grows by one every time latent ``a`` is
    inferred active; ``steps`` counts EM steps applied.
    """

    rates: np.ndarray
    steps: int = 0

    def __post_init__(self):
        self.rates = np.array(self.rates, dtype=float)
        if np.any(self.rates <= 0):
            raise ValueError("HE rates must be strictly positive")

    @classmethod
    def initial(cls, n_latents: int) -> "HEState":
        return cls(np.ones(n_latents), 0)

    @property
    def n_latents(self) -> int:
        return self.rates.shape[0]

    def activation_probs(self, Q: float) -> np.ndarray:
        """Per-latent activation probabilities ``Q * mean(rates) / rates``."""
        q_a = Q * self.rates.mean() / self.rates
        return np.clip(q_a, HE_PROB_FLOOR, 1.0 - HE_PROB_FLOOR)

    def record(self, z) -> None:
        self.rates += np.asarray(z, dtype=float)
        self.steps += 1

    def copy(self) -> "HEState":
        return HEState(self.rates.copy(), self.steps)


def _check_dims(model: ModelParams, y=None, z=None):
    if y is not None and np.shape(y) != (model.n_cells,):
        raise DimensionError(f"spike word has shape {np.shape(y)}, model expects ({model.n_cells},)")
    if z is not None and np.shape(z) != (model.n_latents,):
        raise DimensionError(f"latent vector has shape {np.shape(z)}, model expects ({model.n_latents},)")


def log_cond_silence(log_P, log_R, Z) -> np.ndarray:
    """``log T`` for one latent vector (M,) or a batch (K, M); output (N,) or (K, N)."""
    Z = np.asarray(Z, dtype=float)
    M = log_P.shape[1]
    k = Z.sum(axis=-1)
    exponent = 1.0 - k / M
    return np.multiply.outer(exponent, log_R) + Z @ log_P.T


def cond_silence_probs(model: ModelParams, z) -> np.ndarray:
    """Probabilities ``T_i = p(y_i = 0 | z)`` under the mean-field noisy-OR."""
    _check_dims(model, z=z)
    return np.exp(log_cond_silence(model.log_P, model.log_R, z))


def _log_likelihood_from_log_t(y, log_t):
    y = np.asarray(y, dtype=bool)
    with np.errstate(invalid="ignore"):
        terms = np.where(y, log1mexp(log_t), log_t)
    return terms.sum(axis=-1)


def log_likelihood(model: ModelParams, y, z) -> float:
    """``log p(y | z)``; ``-inf`` when a firing cell has silence probability 1."""
    _check_dims(model, y, z)
    log_t = log_cond_silence(model.log_P, model.log_R, z)
    return float(_log_likelihood_from_log_t(y, log_t))


def log_binomial_prior(M: int, Q: float, k):
    """``log Bin(k; M, Q)`` including the choose term."""
    k_arr = np.asarray(k)
    if np.any((k_arr < 0) | (k_arr > M)):
        raise ValueError(f"count {k} outside [0, {M}]")
    out = (
        gammaln(M + 1) - gammaln(k_arr + 1) - gammaln(M - k_arr + 1)
        + k_arr * np.log(Q) + (M - k_arr) * np.log1p(-Q)
    )
    return float(out) if out.ndim == 0 else out


def he_activation_prob(state: HEState, Q: float, a: int) -> float:
    return float(state.activation_probs(Q)[a])


def log_he_prior(state: HEState, Q: float, z) -> float:
    """Factorial log prior with usage-dependent activation probabilities."""
    q_a = state.activation_probs(Q)
    z = np.asarray(z, dtype=float)
    return float(np.sum(z * np.log(q_a) + (1.0 - z) * np.log1p(-q_a)))


def log_prior_batch(model: ModelParams, Z, he_state: HEState | None = None) -> np.ndarray:
    """Log prior of each row of ``Z``; binomial when ``he_state`` is None."""
    Z = np.asarray(Z, dtype=float)
    if he_state is None:
        M = model.n_latents
        table = log_binomial_prior(M, model.Q, np.arange(M + 1))
        return table[Z.sum(axis=-1).astype(np.int64)]
    q_a = he_state.activation_probs(model.Q)
    log_q, log_1mq = np.log(q_a), np.log1p(-q_a)
    return log_1mq.sum() + Z @ (log_q - log_1mq)


def log_joint_batch(model: ModelParams, y, Z, he_state: HEState | None = None) -> np.ndarray:
    """Log joint for every row of a (K, M) latent batch against one spike word.

    Silent cells contribute terms linear in ``Z``, so only firing cells need
    the full (K, n_firing) evaluation.
    """
    Z = np.asarray(Z, dtype=float)
    fire = np.asarray(y, dtype=bool)
    log_P, log_R = model.log_P, model.log_R
    exponent = 1.0 - Z.sum(axis=-1) / model.n_latents
    silent = ~fire
    ll = exponent * log_R[silent].sum() + Z @ log_P[silent].sum(axis=0)
    if fire.any():
        log_t = np.multiply.outer(exponent, log_R[fire]) + Z @ log_P[fire].T
        ll = ll + log1mexp(log_t).sum(axis=-1)
    return log_prior_batch(model, Z, he_state) + ll


def log_joint(model: ModelParams, y, z, he_state: HEState | None = None) -> float:
    """``log p(y, z)``: one prior term per word plus the per-cell likelihood terms.

    The binomial count prior is used unless an :class:`HEState` is supplied.
    """
    _check_dims(model, y, z)
    if he_state is None:
        prior = log_binomial_prior(model.n_latents, model.Q, int(np.sum(z)))
    else:
        prior = log_he_prior(he_state, model.Q, z)
    return prior + log_likelihood(model, y, z)
