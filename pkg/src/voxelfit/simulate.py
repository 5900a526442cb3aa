"""Synthetic Poisson voxel data and bias / sd / RMSE sweeps of the estimators.

Model: ``N_j ~ Poisson(exp(beta @ C_j))`` with ``C_j = (1, Z_j)``, ``Z_j``
standard normal, unit volumes, and an intercept calibrated so that the
expected proportion of empty cells over the ``J`` cells equals a target.

Two regimes are swept for every grid point ``(J, target_empty)``:

* ``full``: ``B`` independent simulations, each fitted once on the whole
  sample;
* ``subsample``: one simulation, ``B`` independent subsample draws, each
  fitted with the zero-deflated variant of the method.

Every random draw is keyed by ``(seed, purpose, J, target index,
replicate)``, so grid points and replications can run in any order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

from .estimators import Method, fit_method
from .exceptions import FitFailedError, VoxelFitError
from .glm import IRLSConfig
from .subsample import SubsampleSpec
from .voxel import VoxelTable

# purpose tags for keyed streams
_COVARIATES = 1
_COUNTS = 2
_CALIBRATION = 3
_BAGS = 4

BETA1_BRACKET = (-40.0, 10.0)
ETA_MAX = 30.0

SWEEP_COLUMNS = ("method", "J", "target_empty", "pi0", "n_bags", "coef_index",
                 "abs_bias", "sd", "rmse", "failures")


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def gen_covariates(J: int, n_extra: int, seed) -> np.ndarray:
    """``J x (1 + n_extra)`` matrix: a column of ones, then iid standard normals.

    ``seed`` is an integer or a ``numpy.random.Generator``.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else keyed_rng(seed, _COVARIATES)
    return np.column_stack([np.ones(J), rng.standard_normal((J, n_extra))])


def expected_empty_fraction(beta1: float, covariates: np.ndarray, beta_rest) -> float:
    """Mean Poisson zero probability ``(1/J) sum_j exp(-exp(beta1 + beta_rest @ C_j,rest))``."""
    eta = beta1 + covariates[:, 1:] @ np.asarray(beta_rest, dtype=np.float64)
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(-np.exp(eta))))


def calibrate_intercept(covariates: np.ndarray, beta_rest, target_empty: float) -> float:
    """Intercept giving an expected empty-cell proportion of ``target_empty``.

    The expected proportion is strictly decreasing in the intercept, so the
    root is unique; it is bracketed in ``[-40, 10]`` and found by bisection.
    """
    if not 0.0 < target_empty < 1.0:
        raise ValueError("target_empty must lie in (0, 1)")
    covariates = np.asarray(covariates, dtype=np.float64)

    def f(b):
        return expected_empty_fraction(b, covariates, beta_rest) - target_empty

    lo, hi = BETA1_BRACKET
    while f(lo) < 0:
        lo *= 2
    while f(hi) > 0:
        hi *= 2
    return float(bisect(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500))


def gen_counts(covariates: np.ndarray, beta, seed) -> np.ndarray:
    """Independent Poisson counts with means ``exp(covariates @ beta)``."""
    covariates = np.asarray(covariates, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (covariates.shape[1],):
        raise ValueError(f"beta has length {beta.size}, expected {covariates.shape[1]}")
    eta = covariates @ beta
    bad = np.flatnonzero(eta > ETA_MAX)
    if bad.size:
        raise VoxelFitError(
            f"cell {int(bad[0])}: log-mean {eta[bad[0]]:.3g} exceeds {ETA_MAX}; "
            "simulated counts would overflow"
        )
    rng = seed if isinstance(seed, np.random.Generator) else keyed_rng(seed, _COUNTS)
    return rng.poisson(np.exp(eta)).astype(np.int64)


def simulate_table(J: int, beta, seed, n_extra: int | None = None) -> VoxelTable:
    """Covariates plus Poisson counts, unit volumes, single stratum."""
    beta = np.asarray(beta, dtype=np.float64)
    n_extra = beta.size - 1 if n_extra is None else n_extra
    rng = seed if isinstance(seed, np.random.Generator) else keyed_rng(seed, _COVARIATES)
    C = gen_covariates(J, n_extra, rng)
    N = gen_counts(C, beta, rng)
    return VoxelTable.from_arrays(C, N, covariate_names=["intercept"]
                                  + [f"z{i + 1}" for i in range(n_extra)])


@dataclass(frozen=True)
class SimConfig:
    """Grid and settings of a simulation sweep.

    ``regime`` is ``"full"``, ``"subsample"`` or ``"auto"`` (``full`` when
    ``spec`` keeps everything).  ``pi0_values`` optionally sweeps several
    empty-cell rates in the subsample regime; otherwise ``spec.pi0`` is used.
    """

    J_values: tuple[int, ...] = tuple(2**k for k in range(9, 17))
    target_empty_values: tuple[float, ...] = (0.5, 0.9, 0.99, 0.999)
    beta_rest: tuple[float, ...] = (1.0, 1.0)
    B: int = 200
    seed: int = 0
    methods: tuple[Method, ...] = (Method.PL, Method.BRL_LOGIT, Method.BRL_CLOGLOG,
                                   Method.WCLRL)
    spec: SubsampleSpec = SubsampleSpec()
    regime: str = "auto"
    pi0_values: tuple[float, ...] | None = None
    irls: IRLSConfig = IRLSConfig()

    def __post_init__(self):
        object.__setattr__(self, "J_values", tuple(int(j) for j in self.J_values))
        object.__setattr__(self, "target_empty_values",
                           tuple(float(t) for t in self.target_empty_values))
        object.__setattr__(self, "beta_rest", tuple(float(b) for b in self.beta_rest))
        object.__setattr__(self, "methods", tuple(Method.parse(m) for m in self.methods))
        n_coef = 1 + len(self.beta_rest)
        if any(j < n_coef + 1 for j in self.J_values):
            raise ValueError(f"every J must be >= {n_coef + 1}")
        if any(not 0.0 < t < 1.0 for t in self.target_empty_values):
            raise ValueError("target_empty values must lie in (0, 1)")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.regime not in ("auto", "full", "subsample"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.pi0_values is not None:
            object.__setattr__(self, "pi0_values", tuple(float(p) for p in self.pi0_values))

    @property
    def resolved_regime(self) -> str:
        if self.regime != "auto":
            return self.regime
        return "full" if self.spec.is_full and not self.pi0_values else "subsample"

    def specs(self) -> list[SubsampleSpec]:
        if self.resolved_regime == "full":
            return [SubsampleSpec(1.0, 1.0, 1, self.spec.seed)]
        pis = self.pi0_values or (self.spec.pi0,)
        return [SubsampleSpec(p, self.spec.pi1, self.spec.n_bags, self.spec.seed) for p in pis]


@dataclass
class SweepRow:
    method: Method
    J: int
    target_empty: float
    pi0: float
    n_bags: int
    coef_index: int
    abs_bias: float
    sd: float
    rmse: float
    failures: int
    bias: float = field(default=0.0, repr=False)

    def as_record(self) -> list:
        return [self.method.value, self.J, repr(self.target_empty), repr(self.pi0), self.n_bags,
                self.coef_index, repr(self.abs_bias), repr(self.sd), repr(self.rmse),
                self.failures]


@dataclass
class SweepResult:
    rows: list[SweepRow]
    truths: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict, repr=False)

    def select(self, method=None, J=None, target_empty=None, pi0=None, coef_index=None):
        m = None if method is None else Method.parse(method)
        return [
            r for r in self.rows
            if (m is None or r.method == m) and (J is None or r.J == J)
            and (target_empty is None or r.target_empty == target_empty)
            and (pi0 is None or r.pi0 == pi0)
            and (coef_index is None or r.coef_index == coef_index)
        ]

    def curve(self, method, stat: str, coef_index: int, target_empty: float,
              pi0: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(J values, statistic)`` for one method, coefficient and target."""
        rows = sorted(self.select(method, None, target_empty, pi0, coef_index), key=lambda r: r.J)
        return np.array([r.J for r in rows]), np.array([getattr(r, stat) for r in rows])

    def write(self, path, delimiter: str = "\t") -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow(r.as_record())


def summarize(estimates: np.ndarray, truth: np.ndarray):
    """Signed bias, sd (population, ddof=0) and RMSE per coefficient.

    With ddof=0 the identity ``rmse**2 == bias**2 + sd**2`` holds exactly in
    exact arithmetic; RMSE is computed from that identity.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    bias = estimates.mean(axis=0) - truth
    sd = estimates.std(axis=0, ddof=0)
    rmse = np.sqrt(bias**2 + sd**2)
    return bias, sd, rmse


def _grid_truth(cfg: SimConfig, J: int, t_idx: int) -> np.ndarray:
    target = cfg.target_empty_values[t_idx]
    C = gen_covariates(J, len(cfg.beta_rest), keyed_rng(cfg.seed, _CALIBRATION, J, t_idx))
    beta1 = calibrate_intercept(C, cfg.beta_rest, target)
    return np.concatenate([[beta1], cfg.beta_rest])


def _replicate_table(cfg: SimConfig, beta: np.ndarray, J: int, t_idx: int, rep: int) -> VoxelTable:
    rng = keyed_rng(cfg.seed, _COVARIATES, J, t_idx, rep)
    return simulate_table(J, beta, rng)


def _fit_or_none(table, method, spec, cfg):
    try:
        return fit_method(table, method, spec, cfg.irls).coefficients
    except FitFailedError:
        return None


def _bag_spec(cfg: SimConfig, spec: SubsampleSpec, J: int, t_idx: int, rep: int) -> SubsampleSpec:
    ss = np.random.SeedSequence(int(cfg.seed), spawn_key=(_BAGS, J, t_idx, rep))
    seed = int(ss.generate_state(1, dtype=np.uint64)[0])
    return SubsampleSpec(spec.pi0, spec.pi1, spec.n_bags, seed)


def _grid_point(cfg: SimConfig, J: int, t_idx: int):
    """All estimates for one (J, target) grid point: {(method, pi0): (estimates, failures)}."""
    beta = _grid_truth(cfg, J, t_idx)
    regime = cfg.resolved_regime
    specs = cfg.specs()
    est = {(m, s.pi0): [] for m in cfg.methods for s in specs}
    fails = {k: 0 for k in est}
    if regime == "full":
        spec = specs[0]
        for rep in range(cfg.B):
            table = _replicate_table(cfg, beta, J, t_idx, rep)
            for m in cfg.methods:
                b = _fit_or_none(table, m, spec, cfg)
                if b is None:
                    fails[(m, spec.pi0)] += 1
                else:
                    est[(m, spec.pi0)].append(b)
    else:
        # one simulation per grid point, B subsample draws of it
        table = _replicate_table(cfg, beta, J, t_idx, 0)
        for spec in specs:
            for rep in range(cfg.B):
                bag_spec = _bag_spec(cfg, spec, J, t_idx, rep)
                for m in cfg.methods:
                    b = _fit_or_none(table, m, bag_spec, cfg)
                    if b is None:
                        fails[(m, spec.pi0)] += 1
                    else:
                        est[(m, spec.pi0)].append(b)
    return beta, est, fails


def run_sweep(cfg: SimConfig, n_jobs: int = 1) -> SweepResult:
    """Bias, sd and RMSE of every method over the ``(J, target_empty, pi0)`` grid.

    Failed fits are counted in ``failures`` and excluded from the statistics.
    """
    grid = [(J, t) for t in range(len(cfg.target_empty_values)) for J in cfg.J_values]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(lambda g: _grid_point(cfg, *g), grid))
    else:
        results = [_grid_point(cfg, *g) for g in grid]

    rows: list[SweepRow] = []
    truths, estimates = {}, {}
    n_coef = 1 + len(cfg.beta_rest)
    n_bags = 1 if cfg.resolved_regime == "full" else cfg.spec.n_bags
    for (J, t_idx), (beta, est, fails) in zip(grid, results):
        target = cfg.target_empty_values[t_idx]
        truths[(J, target)] = beta
        for (m, pi0), values in est.items():
            estimates[(m, J, target, pi0)] = np.asarray(values).reshape(-1, n_coef)
            if values:
                bias, sd, rmse = summarize(np.asarray(values), beta)
            else:
                bias = sd = rmse = np.full(n_coef, math.nan)
            for k in range(n_coef):
                rows.append(SweepRow(m, J, target, pi0, n_bags, k, float(abs(bias[k])),
                                     float(sd[k]), float(rmse[k]), fails[(m, pi0)],
                                     bias=float(bias[k])))
    return SweepResult(rows, truths, estimates)


def log2_slope(J: Sequence[float], values: Sequence[float]) -> float:
    """OLS slope of ``log2(values)`` on ``log2(J)``."""
    x = np.log2(np.asarray(J, dtype=np.float64))
    y = np.log2(np.asarray(values, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])
