"""Prediction quality on a test split: ROC-AUC, PR-AUC and the weighted Wasserstein score.

For observed counts ``N_j`` and predicted counts ``Nhat_j`` on the test
cells, with totals ``N`` and ``Nhat`` and a scale ``nu_bar >= max Nhat_j``::

    L(p) = sum_j N_j    1(Nhat_j <= p nu_bar) / N
    R(p) = sum_j Nhat_j 1(Nhat_j <= p nu_bar) / Nhat
    WW   = f(N / Nhat) * integral_0^1 |L(p) - R(p)| dp,   f(x) = max(x, 1/x)

``L`` and ``R`` are right-continuous step functions with jumps at
``Nhat_j / nu_bar``, so the integral is computed exactly by summing
interval widths.  "PPV" in reports is the area under the precision-recall
curve, not a thresholded positive predictive value.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .estimators import FittedModel
from .exceptions import SchemaError, UndefinedMetricError
from .voxel import VoxelTable


@dataclass(frozen=True, eq=False)
class PredictionSet:
    observed: np.ndarray
    predicted: np.ndarray
    cell_ids: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.float64)
        pred = np.asarray(self.predicted, dtype=np.float64)
        if obs.shape != pred.shape or obs.ndim != 1:
            raise ValueError("observed and predicted must be 1-d arrays of equal length")
        if np.any(obs < 0):
            raise ValueError("observed counts must be >= 0")
        if np.any(~(pred > 0)) or not np.all(np.isfinite(pred)):
            raise ValueError("predicted counts must be positive and finite")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "predicted", pred)

    @property
    def n_cells(self) -> int:
        return self.observed.size

    @property
    def labels(self) -> np.ndarray:
        return (self.observed > 0).astype(np.int64)

    @property
    def total_observed(self) -> float:
        return float(self.observed.sum())

    @property
    def total_predicted(self) -> float:
        return float(self.predicted.sum())


def predict_counts(model: FittedModel | np.ndarray, test: VoxelTable,
                   covariate_names=None) -> PredictionSet:
    """``Nhat_j = d_j exp(beta @ C_j)`` for every test cell.

    ``model`` is a fitted model or a bare coefficient vector; in the latter
    case ``covariate_names`` may be given to check the test table's columns.
    """
    if isinstance(model, FittedModel):
        beta = model.coefficients
        names = model.covariate_names or None
    else:
        beta = np.asarray(model, dtype=np.float64)
        names = None if covariate_names is None else tuple(covariate_names)
    if names is not None and tuple(names) != test.covariate_names:
        raise SchemaError(
            f"test covariates {list(test.covariate_names)} do not match model covariates {list(names)}"
        )
    if beta.shape != (test.n_covariates,):
        raise SchemaError(f"model has {beta.size} coefficients, test table {test.n_covariates} covariates")
    pred = test.volumes * np.exp(test.covariates @ beta)
    return PredictionSet(test.counts, pred, test.cell_ids)


def roc_auc(preds: PredictionSet) -> float:
    """Mann-Whitney AUC of the predicted counts against presence; ties count 1/2."""
    y = preds.labels
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative cell")
    ranks = rankdata(preds.predicted)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pr_auc(preds: PredictionSet) -> float:
    """Average precision, averaged over all orderings of tied scores.

    Cells are ranked by decreasing prediction.  Within a block of ``n``
    tied cells holding ``q`` positives, the expected precision contributed
    at the ``k``-th position of the block is::

        (q/n) * (P + 1 + (k-1)(q-1)/(n-1)) / (M + k)

    where ``P`` and ``M`` are the positives and cells ranked above the block.
    Without ties this is ordinary average precision.
    """
    y = preds.labels
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive cell")
    order = np.argsort(-preds.predicted, kind="stable")
    s = preds.predicted[order]
    yy = y[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    sizes = np.diff(np.r_[starts, s.size])
    block_pos = np.add.reduceat(yy, starts)
    before_cells = starts
    before_pos = np.r_[0, np.cumsum(block_pos)[:-1]]

    n = np.repeat(sizes, sizes).astype(np.float64)
    q = np.repeat(block_pos, sizes).astype(np.float64)
    M = np.repeat(before_cells, sizes).astype(np.float64)
    P = np.repeat(before_pos, sizes).astype(np.float64)
    k = np.arange(s.size) - M + 1.0
    frac = np.divide((k - 1.0) * (q - 1.0), n - 1.0, out=np.zeros_like(k), where=n > 1)
    contrib = (q / n) * (P + 1.0 + frac) / (M + k)
    return float(contrib.sum() / n_pos)


def omega(n_obs: float, n_pred: float) -> float:
    """Total-mass factor ``f(N/Nhat)`` with ``f(x) = x`` if ``x >= 1`` else ``1/x``."""
    x = n_obs / n_pred
    return x if x >= 1.0 else 1.0 / x


def _resolve_nu_bar(preds: PredictionSet, nu_bar) -> float:
    peak = float(preds.predicted.max())
    if nu_bar is None or nu_bar == "auto":
        return peak
    nu_bar = float(nu_bar)
    if not nu_bar >= peak:
        raise ValueError(f"nu_bar={nu_bar} is below max predicted count {peak}")
    return nu_bar


def _check_totals(preds: PredictionSet):
    if preds.total_observed <= 0:
        raise UndefinedMetricError("no observed events in the test split (N = 0)")
    if preds.total_predicted <= 0:
        raise UndefinedMetricError("predicted total is zero")


def cdf_steps(preds: PredictionSet, nu_bar="auto"):
    """Breakpoints of ``L`` and ``R`` and their values on each interval.

    Returns ``(x, L, R)`` where ``x`` are the sorted distinct breakpoints in
    (0, 1] and ``L[i]``, ``R[i]`` hold on ``[x[i], x[i+1])``.
    """
    _check_totals(preds)
    nu = _resolve_nu_bar(preds, nu_bar)
    b = preds.predicted / nu
    order = np.argsort(b, kind="stable")
    bs = b[order]
    last = np.r_[bs[1:] != bs[:-1], True]
    L = np.cumsum(preds.observed[order])[last] / preds.total_observed
    R = np.cumsum(preds.predicted[order])[last] / preds.total_predicted
    return bs[last], L, R


def ww_score(preds: PredictionSet, nu_bar="auto") -> tuple[float, float, float]:
    """Weighted Wasserstein score.

    Returns:
        ``(ww, omega, integral)``.
    """
    x, L, R = cdf_steps(preds, nu_bar)
    widths = np.diff(np.r_[x, 1.0])
    integral = float(np.sum(widths * np.abs(L - R)))
    w = omega(preds.total_observed, preds.total_predicted)
    return w * integral, w, integral


def residual_delta(preds: PredictionSet, p: float, nu_bar="auto") -> float:
    """Raw residual ``N L(p) - Nhat R(p)``."""
    _check_totals(preds)
    nu = _resolve_nu_bar(preds, nu_bar)
    fire = preds.predicted <= p * nu
    return float(preds.observed[fire].sum() - preds.predicted[fire].sum())


def cumulative_curve(preds: PredictionSet, time_order=None) -> tuple[np.ndarray, np.ndarray]:
    """Running sums of observed and predicted counts along ``time_order`` (cell positions)."""
    idx = np.arange(preds.n_cells) if time_order is None else np.asarray(time_order)
    return np.cumsum(preds.observed[idx]), np.cumsum(preds.predicted[idx])


@dataclass(frozen=True)
class MetricsReport:
    auc: float | None
    ppv: float | None
    ww: float
    omega: float
    integral: float
    nu_bar: float
    n_obs_total: float
    n_pred_total: float
    n_cells: int
    n_positive_cells: int

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(preds: PredictionSet, nu_bar="auto") -> MetricsReport:
    """All metrics of a prediction set; AUC or PPV is None where it is undefined."""
    try:
        auc = roc_auc(preds)
    except UndefinedMetricError:
        auc = None
    try:
        ppv = pr_auc(preds)
    except UndefinedMetricError:
        ppv = None
    nu = _resolve_nu_bar(preds, nu_bar)
    ww, w, integral = ww_score(preds, nu)
    return MetricsReport(
        auc=auc,
        ppv=ppv,
        ww=ww,
        omega=w,
        integral=integral,
        nu_bar=nu,
        n_obs_total=preds.total_observed,
        n_pred_total=preds.total_predicted,
        n_cells=preds.n_cells,
        n_positive_cells=int(preds.labels.sum()),
    )
