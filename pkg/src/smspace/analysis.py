"""Representation diagnostics and empirical sensorimotor-invariant checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exploration import Dataset, EvalSet, apply_norm, fit_norm
from .neural import PredictiveModel, model_forward, mse_loss
from .numcore import (AffineFit, DegenerateInputError, block_rows, iter_distance_blocks,
                      max_pairwise_distance, ols_fit)

TOPO_ALPHA = 50.0
METRICS = ("loss", "d_topo", "d_metric", "affine_residual")


def _as_sets(H, P):
    H = np.asarray(H, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    if P.ndim == 1:
        P = P[:, None]
    if H.shape[0] != P.shape[0]:
        raise ValueError(f"point sets differ in size: {H.shape[0]} vs {P.shape[0]}")
    if H.shape[0] < 2:
        raise DegenerateInputError("need at least two points")
    return H, P


def _paired_blocks(X, Y):
    """Row-aligned distance blocks of two point sets with the same count."""
    rows = block_rows(X.shape[0], max(X.shape[1], Y.shape[1]))
    return zip(iter_distance_blocks(X, rows=rows), iter_distance_blocks(Y, rows=rows))


def d_topo(H, P, alpha: float = TOPO_ALPHA) -> float:
    """Mean over all ordered pairs of the normalized h-distance weighted by
    ``exp(-alpha * normalized p-distance)``.

    Large when nearby positions get distant codes. A fully collapsed ``H``
    scores 0.
    """
    H, P = _as_sets(H, P)
    p_max = max_pairwise_distance(P)
    if p_max == 0:
        raise DegenerateInputError("all positions identical")
    h_max = max_pairwise_distance(H)
    if h_max == 0:
        return 0.0
    total = 0.0
    for (_, dh), (_, dp) in _paired_blocks(H, P):
        total += float(np.sum((dh / h_max) * np.exp(-alpha * dp / p_max)))
    n = H.shape[0]
    return total / (n * n)


def d_metric(H, P) -> tuple[float, AffineFit]:
    """Mean absolute pairwise-distance mismatch between the affine projection
    of ``H`` onto positions and ``P``, relative to the largest p-distance."""
    H, P = _as_sets(H, P)
    p_max = max_pairwise_distance(P)
    if p_max == 0:
        raise DegenerateInputError("all positions identical")
    fit = ols_fit(H, P)
    Hp = fit.apply(H)
    total = 0.0
    for (_, dhp), (_, dp) in _paired_blocks(Hp, P):
        total += float(np.sum(np.abs(dhp - dp)))
    n = H.shape[0]
    return total / (n * n * p_max), fit


@dataclass
class DissimilarityReport:
    epoch: int
    loss: float
    d_topo: float
    d_metric: float
    affine_residual: float

    def row(self) -> list:
        return [self.epoch, self.loss, self.d_topo, self.d_metric, self.affine_residual]


def evaluate(model: PredictiveModel, evalset: EvalSet, probe, epoch: int) -> DissimilarityReport:
    """Loss on a fixed normalized probe batch plus both dissimilarities of the
    encoder's codes for the regular motor sampling."""
    m_t, s_t, m_next, s_next = probe
    _, _, s_pred, _ = model_forward(model, m_t, m_next, s_t)
    loss = mse_loss(s_pred, s_next)
    H = model.encode(evalset.motors_norm)
    topo = d_topo(H, evalset.positions)
    try:
        metric, fit = d_metric(H, evalset.positions)
        resid = fit.residual
    except DegenerateInputError:  # fully collapsed encoder
        metric, resid = float("nan"), float("nan")
    return DissimilarityReport(epoch, loss, topo, metric, resid)


# ---------------------------------------------------------------- invariants

@dataclass
class InvariantReport:
    mu: float
    slack: float
    candidates: int
    violations: int
    worst: float  # largest offending distance among violations (0 if none)


def _norm_positions(dataset: Dataset):
    w = dataset.world
    p_t = w.positions(dataset.m_t)
    p_next = w.positions(dataset.m_next)
    both = np.vstack([p_t, p_next])
    lo, hi = both.min(0), both.max(0)
    return apply_norm(lo, hi, p_t), apply_norm(lo, hi, p_next)


def _norm_sensory(dataset: Dataset):
    stats = fit_norm(dataset)
    return stats.sensory(dataset.s_t), stats.sensory(dataset.s_next)


def check_topo_invariant(dataset: Dataset, mu: float, slack: float = 5.0,
                         same_env_only: bool = False) -> InvariantReport:
    """Small sensory change within a transition iff small sensor displacement.

    Each transition is a pair of observations the agent experiences as
    consecutive. A candidate has sensory or position distance below ``mu``;
    it violates the invariant when the other distance reaches ``slack * mu``.
    Distances are taken on [-1, 1]-normalized components. With
    ``same_env_only`` only transitions whose environment did not move are
    considered.
    """
    s_t, s_next = _norm_sensory(dataset)
    p_t, p_next = _norm_positions(dataset)
    ds = np.linalg.norm(s_t - s_next, axis=1)
    dp = np.linalg.norm(p_t - p_next, axis=1)
    keep = np.ones(len(dataset), dtype=bool)
    if same_env_only:
        keep = np.all(dataset.env_before == dataset.env_after, axis=1)
    near_s = (ds < mu) & keep
    near_p = (dp < mu) & keep
    bad_s = near_s & (dp >= slack * mu)
    bad_p = near_p & (ds >= slack * mu)
    bad = bad_s | bad_p
    worst = float(max(dp[bad_s].max(initial=0.0), ds[bad_p].max(initial=0.0)))
    return InvariantReport(mu, slack, int(np.sum(near_s | near_p)), int(np.sum(bad)), worst)


def check_metric_invariant(dataset: Dataset, mu: float, slack: float = 5.0) -> InvariantReport:
    """Matching sensory changes across environment positions imply equal
    sensor displacements.

    Candidates are pairs of transitions (k, k') recorded under different
    environment offsets with both ``|s_t^k - s_t^k'|`` and
    ``|s_next^k - s_next^k'|`` below ``mu``. A candidate violates the
    invariant when the displacement difference reaches ``slack * mu``.
    """
    if mu <= 0:
        return InvariantReport(mu, slack, 0, 0, 0.0)
    s_t, s_next = _norm_sensory(dataset)
    p_t, p_next = _norm_positions(dataset)
    key = np.hstack([s_t, s_next])
    # both halves below mu implies the joint distance is below sqrt(2) mu
    pairs = cKDTree(key).query_pairs(np.sqrt(2.0) * mu, output_type="ndarray")
    if pairs.size == 0:
        return InvariantReport(mu, slack, 0, 0, 0.0)
    i, j = pairs[:, 0], pairs[:, 1]
    ok = (np.linalg.norm(s_t[i] - s_t[j], axis=1) < mu) & \
         (np.linalg.norm(s_next[i] - s_next[j], axis=1) < mu) & \
         np.any(dataset.env_before[i] != dataset.env_before[j], axis=1)
    i, j = i[ok], j[ok]
    gap = np.linalg.norm((p_next[i] - p_t[i]) - (p_next[j] - p_t[j]), axis=1)
    bad = gap >= slack * mu
    return InvariantReport(mu, slack, int(i.size), int(bad.sum()), float(gap[bad].max(initial=0.0)))


# ---------------------------------------------------------------- redundancy

def redundancy_collapse(H, P, decimals: int = 9) -> float:
    """Within-position spread of codes relative to between-position spread.

    Numerator: mean pairwise code distance inside each group of motors that
    share a position, averaged over groups. Denominator: mean pairwise
    distance between the group centroids. 0 means every redundant motor
    state gets the same code.
    """
    H = np.asarray(H, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    _, labels = np.unique(np.round(P, decimals), axis=0, return_inverse=True)
    labels = labels.ravel()
    groups = [np.flatnonzero(labels == g) for g in range(labels.max() + 1)]
    if all(len(g) < 2 for g in groups):
        raise ValueError("no repeated positions to measure redundancy on")
    within = []
    for g in groups:
        if len(g) < 2:
            continue
        hg = H[g]
        d = np.sqrt(((hg[:, None, :] - hg[None, :, :]) ** 2).sum(-1))
        within.append(d.sum() / (len(g) * (len(g) - 1)))
    spread = float(np.mean(within))
    if spread == 0.0:
        return 0.0
    cent = np.array([H[g].mean(0) for g in groups])
    if len(cent) < 2:
        return float("inf")
    dc = np.sqrt(((cent[:, None, :] - cent[None, :, :]) ** 2).sum(-1))
    between = dc.sum() / (len(cent) * (len(cent) - 1))
    return spread / between if between > 0 else float("inf")


# ---------------------------------------------------------------- aggregation

def aggregate_runs(curves) -> list[dict]:
    """Pointwise mean and population std of each metric across runs.

    ``curves`` is a list of per-run report sequences aligned on epochs.
    """
    curves = [list(c) for c in curves]
    if not curves or not curves[0]:
        raise ValueError("nothing to aggregate")
    length = len(curves[0])
    for c in curves:
        if len(c) != length or [r.epoch for r in c] != [r.epoch for r in curves[0]]:
            raise ValueError("run curves are not aligned on the same epochs")
    rows = []
    for idx in range(length):
        row = {"epoch": curves[0][idx].epoch}
        for name in METRICS:
            vals = np.array([getattr(c[idx], name) for c in curves])
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_std"] = float(vals.std())
        rows.append(row)
    return rows
