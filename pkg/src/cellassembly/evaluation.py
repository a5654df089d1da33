"""Model assessment: assembly matching, membership rules and CA metrics.

Every similarity on a silence matrix ``P`` is computed on membership
strengths ``1 - P``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DataError, DimensionError

CRISPNESS_VAR_FLOOR = 1e-6
NULL_PROB_CLAMP = 1e-12


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``; 0 if either is all zero."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def cosine_matrix(A, B) -> np.ndarray:
    """Column-by-column cosine similarities, ``cs[a, b] = cs(A[:, a], B[:, b])``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row mismatch: {A.shape} vs {B.shape}")
    na, nb = np.linalg.norm(A, axis=0), np.linalg.norm(B, axis=0)
    An = np.divide(A, na, out=np.zeros_like(A), where=na > 0)
    Bn = np.divide(B, nb, out=np.zeros_like(B), where=nb > 0)
    return An.T @ Bn


def linear_assignment(cost) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix (Hungarian, O(n^3)).

    Returns ``col`` such that row ``i`` is assigned to column ``col[i]``.
    Shortest augmenting path formulation with row/column potentials.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n != m:
        raise DimensionError(f"cost matrix must be square, got {cost.shape}")
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)    # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col


@dataclass
class MatchReport:
    """Hungarian matching of the assemblies of model A onto model B.

    ``assignment[a]`` is the column of B matched to column ``a`` of A.
    """

    assignment: np.ndarray
    matched_cs: np.ndarray
    unmatched_diag_cs: np.ndarray
    cs: np.ndarray = field(repr=False)

    @property
    def delta_cs(self) -> float:
        return float(self.matched_cs.mean() - self.unmatched_diag_cs.mean())


def match_strengths(W_a, W_b) -> MatchReport:
    """Match columns of two strength matrices by maximal total cosine similarity."""
    W_a = np.asarray(W_a, dtype=float)
    W_b = np.asarray(W_b, dtype=float)
    if W_a.shape != W_b.shape:
        raise DimensionError(f"shape mismatch: {W_a.shape} vs {W_b.shape}")
    cs = cosine_matrix(W_a, W_b)
    assignment = linear_assignment(1.0 - cs)
    idx = np.arange(cs.shape[0])
    return MatchReport(assignment, cs[idx, assignment], np.diag(cs).copy(), cs)


def match_assemblies(P_a, P_b) -> MatchReport:
    """Match two silence matrices on their membership strengths ``1 - P``."""
    return match_strengths(1.0 - np.asarray(P_a, dtype=float), 1.0 - np.asarray(P_b, dtype=float))


@dataclass
class MemberSet:
    assembly_index: int
    members: np.ndarray
    strengths: np.ndarray


def determine_members(column, assembly_index: int = 0) -> MemberSet:
    """Member cells of one assembly from its strength column.

    Strengths are sorted descending and neighbouring differences taken.  The
    largest gap exceeding mean + std of the gaps splits the sorted list; cells
    above that split whose strength also exceeds mean + std of the column are
    members.  No qualifying gap means no members.
    """
    w = np.asarray(column, dtype=float)
    empty = MemberSet(assembly_index, np.array([], dtype=np.int64), np.array([]))
    if w.size < 2:
        return empty
    order = np.argsort(-w, kind="stable")
    sorted_w = w[order]
    gaps = sorted_w[:-1] - sorted_w[1:]
    gap_thr = gaps.mean() + gaps.std()
    level_thr = w.mean() + w.std()
    qualifying = gaps > gap_thr
    if not qualifying.any():
        return empty
    split = int(np.argmax(np.where(qualifying, gaps, -np.inf)))
    top = order[: split + 1]
    members = np.sort(top[w[top] > level_thr])
    return MemberSet(assembly_index, members, w[members])


def crispness(column, members) -> float:
    """d' separation of member vs non-member strengths."""
    w = np.asarray(column, dtype=float)
    idx = members.members if isinstance(members, MemberSet) else np.asarray(members, dtype=np.int64)
    mask = np.zeros(w.size, dtype=bool)
    mask[idx] = True
    if not mask.any() or mask.all():
        raise DataError("crispness needs a non-empty, proper member subset")
    w_in, w_out = w[mask], w[~mask]
    var = max(w_in.var() + w_out.var(), CRISPNESS_VAR_FLOOR)
    return float((w_in.mean() - w_out.mean()) / np.sqrt(var))


@dataclass
class EventTrace:
    """Activation events of one assembly as ``(trial, time_ms)`` pairs."""

    events: list
    duration_ms: float

    def __post_init__(self):
        for trial, t in self.events:
            if not 0 <= t < self.duration_ms:
                raise DataError(f"event time {t} outside [0, {self.duration_ms})")

    def psth(self, bin_ms: float) -> np.ndarray:
        return psth(self, bin_ms)


def psth(trace: EventTrace, bin_ms: float) -> np.ndarray:
    """Event counts per time bin pooled over trials."""
    if bin_ms <= 0:
        raise ValueError("bin_ms must be positive")
    n_bins = int(np.ceil(trace.duration_ms / bin_ms))
    counts = np.zeros(n_bins)
    if trace.events:
        times = np.array([t for _, t in trace.events], dtype=float)
        idx = np.minimum((times // bin_ms).astype(np.int64), n_bins - 1)
        np.add.at(counts, idx, 1)
    return counts


def _check_unit(*xs):
    for x in xs:
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"value {x} outside [0, 1]")


def robustness(cs_membership_mean: float, cs_temporal_mean: float) -> float:
    """Geometric mean of membership and temporal similarity."""
    _check_unit(cs_membership_mean, cs_temporal_mean)
    return float(np.sqrt(cs_membership_mean * cs_temporal_mean))


def synergy(cs_temporal_ab: float, cs_membership_ab: float) -> float:
    """One minus the geometric mean of within-model similarities of two CAs."""
    _check_unit(cs_temporal_ab, cs_membership_ab)
    return float(1.0 - np.sqrt(cs_temporal_ab * cs_membership_ab))


def heterogeneity(count_type1: int, count_type2: int) -> float:
    """``min / mean`` of member counts of two cell types."""
    if count_type1 < 0 or count_type2 < 0:
        raise ValueError("counts must be non-negative")
    if count_type1 == 0 and count_type2 == 0:
        raise ValueError("heterogeneity undefined for an empty assembly")
    return float(min(count_type1, count_type2) / ((count_type1 + count_type2) / 2.0))


def null_word_logprob(rates, y) -> float:
    """Log probability of a word under independent per-cell firing rates."""
    rates = np.asarray(rates, dtype=float)
    y = np.asarray(y)
    if rates.shape != y.shape:
        raise DimensionError(f"rates {rates.shape} vs word {y.shape}")
    if np.any((rates < 0) | (rates > 1)):
        raise ValueError("rates must lie in [0, 1]")
    r = np.clip(rates, NULL_PROB_CLAMP, 1.0 - NULL_PROB_CLAMP)
    return float(np.sum(np.where(y.astype(bool), np.log(r), np.log1p(-r))))


def rebin(trace, base_ms: float, bin_ms: float) -> np.ndarray:
    """Sum a trace sampled every ``base_ms`` into bins of ``bin_ms``."""
    trace = np.asarray(trace, dtype=float)
    starts = np.arange(trace.size) * base_ms
    n_bins = int(np.ceil(trace.size * base_ms / bin_ms - 1e-9))
    idx = np.minimum((starts // bin_ms + 1e-9).astype(np.int64), n_bins - 1)
    out = np.zeros(n_bins)
    np.add.at(out, idx, trace)
    return out


def delta_py(z_psth_trace, null_prob_trace, bin_ms: float, base_ms: float = 1.0) -> float:
    """One minus the cosine similarity of the binned CA PSTH and null-probability traces."""
    a = np.asarray(z_psth_trace, dtype=float)
    b = np.asarray(null_prob_trace, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"trace duration mismatch: {a.shape} vs {b.shape}")
    return 1.0 - cosine_similarity(rebin(a, base_ms, bin_ms), rebin(b, base_ms, bin_ms))


def coactivity_stats(Z):
    """Per-latent activation counts and symmetric pairwise co-activation counts.

    The diagonal of the pairwise matrix is zero.
    """
    Z = np.asarray(Z, dtype=np.int64)
    if Z.ndim != 2:
        raise DimensionError("expected an (n_words, M) latent array")
    counts = Z.sum(axis=0)
    pairs = Z.T @ Z
    np.fill_diagonal(pairs, 0)
    return counts, pairs


def pairwise_delta_cs(strength_list) -> np.ndarray:
    """Matrix of Δcs between every pair of models (diagonal left at zero)."""
    n = len(strength_list)
    out = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        out[i, j] = out[j, i] = match_strengths(strength_list[i], strength_list[j]).delta_cs
    return out


def cross_model_robustness(strengths, psths, reference: int = 0):
    """Per-CA robustness of a reference model against its matches in the others.

    ``strengths`` holds one (N, M) strength matrix per model and ``psths`` one
    (M, n_bins) PSTH array per model.  Returns ``(R_X, cs_M_mean, cs_tau_mean)``
    each of length M.
    """
    ref_w, ref_psth = strengths[reference], np.asarray(psths[reference], dtype=float)
    M = ref_w.shape[1]
    cs_m, cs_t = [], []
    for k, (w, ps) in enumerate(zip(strengths, psths)):
        if k == reference:
            continue
        rep = match_strengths(ref_w, w)
        cs_m.append(rep.matched_cs)
        ps = np.asarray(ps, dtype=float)
        cs_t.append([cosine_similarity(ref_psth[a], ps[rep.assignment[a]]) for a in range(M)])
    if not cs_m:
        raise ValueError("need at least two models")
    cs_m = np.clip(np.mean(cs_m, axis=0), 0.0, 1.0)
    cs_t = np.clip(np.mean(cs_t, axis=0), 0.0, 1.0)
    return np.sqrt(cs_m * cs_t), cs_m, cs_t
