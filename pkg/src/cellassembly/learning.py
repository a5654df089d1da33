"""Stochastic EM for the BLV model.

Each spike word triggers one MAP inference (E-step) followed by one gradient
ascent step on the log joint in logistic parameter space (M-step).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .inference import InferenceConfig, PriorKind, greedy_infer
from .model import (
    LOGIT_BOUND,
    HEState,
    ModelParams,
    log_cond_silence,
    logit,
)

log = logging.getLogger(__name__)


@dataclass
class LearnConfig:
    learning_rate: float = 0.1
    n_passes: int = 3
    prior_kind: PriorKind = PriorKind.BINOMIAL
    sample_order: str = "shuffled"
    rng_seed: int = 0
    init_silence: float = 0.95
    init_jitter_sd: float = 0.1
    q_init: float | None = None  # None -> 1/M
    lr_decay: float = 0.0
    i0: int = 9
    imax: int = 10

    def __post_init__(self):
        self.prior_kind = PriorKind(self.prior_kind)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 < self.init_silence < 1.0:
            raise ValueError("init_silence must lie in (0, 1)")
        if self.sample_order not in ("shuffled", "sequential"):
            raise ValueError(f"unknown sample_order {self.sample_order!r}")
        if self.n_passes < 1:
            raise ValueError("n_passes must be >= 1")

    def inference_config(self, n_latents: int) -> InferenceConfig:
        return InferenceConfig(
            min(self.i0, n_latents), min(self.imax, n_latents), self.prior_kind
        )


@dataclass
class TrainTrace:
    mean_log_joint: list = field(default_factory=list)
    usage: np.ndarray | None = None


def init_model(n_cells: int, n_latents: int, cfg: LearnConfig) -> ModelParams:
    """Nearly silent initial model with Gaussian jitter in logit space."""
    if n_cells < 1 or n_latents < 1:
        raise ValueError("need at least one cell and one latent")
    rng = np.random.default_rng(cfg.rng_seed)
    base = logit(cfg.init_silence)
    rho = base + cfg.init_jitter_sd * rng.standard_normal((n_cells, n_latents))
    r = base + cfg.init_jitter_sd * rng.standard_normal(n_cells)
    q_init = cfg.q_init if cfg.q_init is not None else 1.0 / n_latents
    return ModelParams(rho, r, logit(q_init)).clamp_()


def _bracket(y, T):
    # (1 - y) - y T / (1 - T)
    y = np.asarray(y, dtype=float)
    return (1.0 - y) - y * T / (1.0 - T)


def grad_q(model: ModelParams, z) -> float:
    return float(np.sum(z) - model.n_latents * model.Q)


def grad_r(model: ModelParams, y, z) -> np.ndarray:
    k = float(np.sum(z))
    T = np.exp(log_cond_silence(model.log_P, model.log_R, z))
    return (1.0 - k / model.n_latents) * (1.0 - model.R) * _bracket(y, T)


def grad_rho(model: ModelParams, y, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    T = np.exp(log_cond_silence(model.log_P, model.log_R, z))
    return (1.0 - model.P) * np.outer(_bracket(y, T), z)


def grad_q_he(state: HEState, model: ModelParams, z) -> float:
    """d/dq of the HE log prior with usage rates held fixed."""
    z = np.asarray(z, dtype=float)
    q_a = state.activation_probs(model.Q)
    return float((1.0 - model.Q) * np.sum(z - (1.0 - z) * q_a / (1.0 - q_a)))


def _apply_update(model, y, z, lr, prior_kind, he_state):
    """In-place gradient step followed by the logit clamps."""
    z = np.asarray(z, dtype=float)
    M = model.n_latents
    k = z.sum()
    P, R, Q = model.P, model.R, model.Q
    T = np.exp(log_cond_silence(model.log_P, model.log_R, z))
    br = _bracket(y, T)
    g_r = (1.0 - k / M) * (1.0 - R) * br
    if prior_kind is PriorKind.HE:
        g_q = grad_q_he(he_state, model, z)
    else:
        g_q = k - M * Q
    active = np.flatnonzero(z)
    if active.size:
        step = lr * (1.0 - P[:, active]) * br[:, None]
        model.rho[:, active] = np.clip(model.rho[:, active] + step, -LOGIT_BOUND, LOGIT_BOUND)
    model.r_logit += lr * g_r
    np.clip(model.r_logit, -LOGIT_BOUND, LOGIT_BOUND, out=model.r_logit)
    model.q_logit = float(np.clip(model.q_logit + lr * g_q, -LOGIT_BOUND, LOGIT_BOUND))


def em_step(
    model: ModelParams,
    y,
    cfg: LearnConfig,
    he_state: HEState | None = None,
    learning_rate: float | None = None,
    inplace: bool = False,
):
    """One inference + gradient step for a single spike word.

    Returns ``(model, z, score)`` where ``score`` is the log joint of the
    inferred ``z`` before the update.  The HE usage state, when given, is
    advanced by ``z``.
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    if cfg.prior_kind is PriorKind.HE and he_state is None:
        raise ValueError("HE prior needs an HEState")
    icfg = cfg.inference_config(model.n_latents)
    prior = he_state if cfg.prior_kind is PriorKind.HE else None
    z, score = greedy_infer(model, y, icfg, prior, return_score=True)
    if not inplace:
        model = model.copy()
    if lr != 0.0:
        _apply_update(model, y, z, lr, cfg.prior_kind, he_state)
    if he_state is not None:
        he_state.record(z)
    return model, z, score


def _train_pass_numpy(model, corpus, order, lrs, cfg, he_state):
    zs = np.zeros((order.size, model.n_latents), dtype=np.int8)
    scores = np.empty(order.size)
    for t, idx in enumerate(order):
        _, zs[t], scores[t] = em_step(
            model, corpus[idx], cfg, he_state, learning_rate=lrs[t], inplace=True
        )
    return zs, scores


def _train_pass_compiled(model, corpus, order, lrs, cfg, he_state):
    from ._kernels import em_pass

    icfg = cfg.inference_config(model.n_latents)
    zs = np.zeros((order.size, model.n_latents))
    scores = np.empty(order.size)
    model.q_logit = float(em_pass(
        model.rho, model.r_logit, model.q_logit, corpus, order, lrs,
        icfg.i0, icfg.imax, cfg.prior_kind is PriorKind.HE, he_state.rates, zs, scores,
    ))
    he_state.steps += order.size
    return zs.astype(np.int8), scores


def train(
    corpus,
    cfg: LearnConfig,
    n_latents: int,
    model: ModelParams | None = None,
    backend: str = "compiled",
):
    """Run ``cfg.n_passes`` epochs of stochastic EM over a (n_words, N) corpus.

    Returns ``(model, trace, he_state)``.  The usage state is tracked for
    both priors; only the HE prior reads it.  ``backend="numpy"`` runs the
    reference :func:`em_step` loop instead of the compiled kernel.
    """
    corpus = np.ascontiguousarray(corpus, dtype=np.int8)
    if corpus.ndim != 2 or corpus.shape[0] == 0:
        raise DataError("training corpus must be a non-empty (n_words, n_cells) array")
    if backend not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if model is None:
        model = init_model(corpus.shape[1], n_latents, cfg)
    else:
        model = model.copy()
    if model.n_cells != corpus.shape[1]:
        raise DataError(f"corpus has {corpus.shape[1]} cells, model has {model.n_cells}")
    run_pass = _train_pass_compiled if backend == "compiled" else _train_pass_numpy
    rng = np.random.default_rng([cfg.rng_seed, 1])
    he_state = HEState.initial(n_latents)
    trace = TrainTrace(usage=np.zeros(n_latents, dtype=np.int64))
    n = corpus.shape[0]
    for epoch in range(cfg.n_passes):
        if cfg.sample_order == "shuffled":
            order = rng.permutation(n)
        else:
            order = np.arange(n)
        steps = np.arange(epoch * n, (epoch + 1) * n)
        lrs = cfg.learning_rate / (1.0 + cfg.lr_decay * steps)
        zs, scores = run_pass(model, corpus, order, lrs, cfg, he_state)
        trace.usage += zs.sum(axis=0)
        trace.mean_log_joint.append(float(scores.mean()))
        log.info("pass %d: mean log joint %.4f", epoch, trace.mean_log_joint[-1])
    return model, trace, he_state
