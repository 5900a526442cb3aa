"""The five composite-likelihood estimators and their zero-deflated variants.

Each ``build_*`` function turns a voxel table (and optionally one subsample
bag) into a :class:`~voxelfit.glm.RegressionProblem`:

============  ========  ===========  ==================================  ==============
method        family    link         offset                              rows
============  ========  ===========  ==================================  ==============
PL            poisson   log          log d_j + log(pi1/pi0) 1(j empty)   kept cells
BRL_logit     binomial  logit        log d_j + log(pi1/pi0)              kept cells
BRL_cloglog   binomial  cloglog_sub  log d_j                             kept cells
CLRL          binomial  logit        log d_j + log(pi1/pi0)              points + dummies
WCLRL         binomial  logit        log d_j + log(pi1/pi0)              cells + dummies
============  ========  ===========  ==================================  ==============

``cloglog_sub`` uses the ratio ``pi0/pi1`` and is the plain cloglog link on
the full sample.  WCLRL is CLRL with the data points of a cell collapsed
into one row weighted by their number.

:func:`fit_method` draws ``n_bags`` subsamples, fits each one and averages
the coefficient vectors of the converged bags.
"""

from __future__ import annotations

import enum
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, FitFailedError, SingularDesignError
from .glm import FitResult, IRLSConfig, RegressionProblem, irls_fit
from .links import CLOGLOG, LOG, LOGIT, LinkFunction
from .subsample import (
    PointSubsample,
    SubsampleIndex,
    SubsampleSpec,
    draw_clrl_subsample,
    draw_subsample,
)
from .voxel import VoxelTable


class Method(str, enum.Enum):
    PL = "PL"
    BRL_LOGIT = "BRL_logit"
    BRL_CLOGLOG = "BRL_cloglog"
    CLRL = "CLRL"
    WCLRL = "WCLRL"

    @classmethod
    def parse(cls, value) -> "Method":
        """Accept canonical names (``BRL_logit``) and CLI spellings (``brl-logit``)."""
        if isinstance(value, cls):
            return value
        key = str(value).strip().replace("-", "_").lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ConfigurationError(
            f"unknown method {value!r}; expected one of {[m.cli_name for m in cls]}"
        )

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")

    @property
    def samples_points(self) -> bool:
        """True for the methods that subsample data/dummy points rather than cells."""
        return self in (Method.CLRL, Method.WCLRL)

    def __str__(self):
        return self.value


def _log_ratio(spec: SubsampleSpec | None) -> float:
    if spec is None or spec.pi0 == spec.pi1:
        return 0.0
    if spec.pi0 == 0.0:
        raise ConfigurationError("pi0 = 0 leaves the empty-cell offset log(pi1/pi0) undefined")
    return math.log(spec.pi1 / spec.pi0)


def _check_spec(spec: SubsampleSpec | None):
    if spec is not None and spec.pi0 == 0.0:
        raise ConfigurationError("pi0 = 0: subsamples would contain no empty cells or dummies")


def _cell_rows(table: VoxelTable, sub: SubsampleIndex | None) -> np.ndarray:
    return np.arange(len(table)) if sub is None else sub.kept


def build_pl_problem(table: VoxelTable, sub: SubsampleIndex | None = None) -> RegressionProblem:
    """Poisson regression of counts with log link.

    On a subsample the empty rows get the extra offset ``log(pi1/pi0)``;
    non-empty rows keep ``log d_j`` only.
    """
    spec = None if sub is None else sub.spec
    _check_spec(spec)
    lr = _log_ratio(spec)
    rows = _cell_rows(table, sub)
    log_vol = np.log(table.volumes[rows])
    if lr != 0.0:
        offsets = np.where(table.present[rows], log_vol, log_vol + lr)
    else:
        offsets = log_vol
    return RegressionProblem(
        design=table.covariates[rows],
        response=table.counts[rows].astype(np.float64),
        prior_weights=np.ones(rows.size),
        offsets=offsets,
        family="poisson",
        link=LOG,
        source_rows=rows,
    )


def build_brl_logit_problem(table: VoxelTable,
                            sub: SubsampleIndex | None = None) -> RegressionProblem:
    """Pixel logistic regression of presence indicators, uniform ``log(pi1/pi0)`` shift."""
    spec = None if sub is None else sub.spec
    _check_spec(spec)
    lr = _log_ratio(spec)
    rows = _cell_rows(table, sub)
    log_vol = np.log(table.volumes[rows])
    return RegressionProblem(
        design=table.covariates[rows],
        response=table.present[rows].astype(np.float64),
        prior_weights=np.ones(rows.size),
        offsets=log_vol + lr if lr != 0.0 else log_vol,
        family="binomial",
        link=LOGIT,
        source_rows=rows,
    )


def build_brl_cloglog_problem(table: VoxelTable,
                              sub: SubsampleIndex | None = None) -> RegressionProblem:
    """Bernoulli regression with the (subsampling-corrected) complementary log-log link.

    The subsampling correction lives in the link, so offsets are ``log d_j``.
    """
    spec = None if sub is None else sub.spec
    _check_spec(spec)
    if spec is None or spec.pi0 == spec.pi1:
        link = CLOGLOG
    else:
        link = LinkFunction.cloglog_sub(spec.ratio)
    rows = _cell_rows(table, sub)
    return RegressionProblem(
        design=table.covariates[rows],
        response=table.present[rows].astype(np.float64),
        prior_weights=np.ones(rows.size),
        offsets=np.log(table.volumes[rows]),
        family="binomial",
        link=link,
        source_rows=rows,
    )


def _point_rows(table: VoxelTable, sub: PointSubsample | None):
    """Cells holding retained data points, their multiplicities, and retained dummy cells."""
    if sub is None:
        pos = table.nonempty_index
        mult = table.counts[pos]
        dummies = np.arange(len(table))
        spec = None
    else:
        pos = np.flatnonzero(sub.multiplicity > 0)
        mult = sub.multiplicity[pos]
        dummies = sub.kept_dummies
        spec = sub.spec
    return pos, mult, dummies, spec


def _logistic_problem(table, rows, response, weights, spec) -> RegressionProblem:
    _check_spec(spec)
    lr = _log_ratio(spec)
    log_vol = np.log(table.volumes[rows])
    return RegressionProblem(
        design=table.covariates[rows],
        response=response,
        prior_weights=weights,
        offsets=log_vol + lr if lr != 0.0 else log_vol,
        family="binomial",
        link=LOGIT,
        source_rows=rows,
    )


def build_wclrl_problem(table: VoxelTable, sub: PointSubsample | None = None) -> RegressionProblem:
    """Weighted logistic regression: one response-1 row per cell with retained points
    (weight = number of retained points) followed by one response-0 row per retained dummy."""
    pos, mult, dummies, spec = _point_rows(table, sub)
    rows = np.concatenate([pos, dummies])
    response = np.concatenate([np.ones(pos.size), np.zeros(dummies.size)])
    weights = np.concatenate([mult.astype(np.float64), np.ones(dummies.size)])
    return _logistic_problem(table, rows, response, weights, spec)


def build_clrl_problem(table: VoxelTable, sub: PointSubsample | None = None) -> RegressionProblem:
    """Unweighted logistic regression with one row per retained data point and per dummy."""
    pos, mult, dummies, spec = _point_rows(table, sub)
    point_rows = np.repeat(pos, mult)
    rows = np.concatenate([point_rows, dummies])
    response = np.concatenate([np.ones(point_rows.size), np.zeros(dummies.size)])
    return _logistic_problem(table, rows, response, np.ones(rows.size), spec)


BUILDERS = {
    Method.PL: build_pl_problem,
    Method.BRL_LOGIT: build_brl_logit_problem,
    Method.BRL_CLOGLOG: build_brl_cloglog_problem,
    Method.CLRL: build_clrl_problem,
    Method.WCLRL: build_wclrl_problem,
}


def draw_bag(table: VoxelTable, method, spec: SubsampleSpec, bag_id: int):
    """The subsample a method needs: cells for PL/BRL, points and dummies for CLRL/WCLRL."""
    method = Method.parse(method)
    if method.samples_points:
        return draw_clrl_subsample(table, spec, bag_id)
    return draw_subsample(table, spec, bag_id)


def build_problem(table: VoxelTable, method, sub=None) -> RegressionProblem:
    return BUILDERS[Method.parse(method)](table, sub)


@dataclass(frozen=True)
class BagOutcome:
    bag_id: int
    n_rows: int
    fit: FitResult | None = None
    skipped_reason: str | None = None


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Bag-averaged coefficients of one method on one stratum.

    ``bag_fits`` holds every attempted fit (converged or not) in bag order;
    ``skipped_bags`` counts bags whose subsample was degenerate.
    ``coefficients`` is the mean over the converged fits.
    """

    coefficients: np.ndarray
    method: Method
    spec: SubsampleSpec
    bag_fits: list[FitResult]
    skipped_bags: int
    covariate_names: tuple[str, ...] = ()
    stratum: str | None = None
    bags: list[BagOutcome] = field(default_factory=list, repr=False)

    @property
    def n_converged(self) -> int:
        return sum(f.converged for f in self.bag_fits)

    @property
    def all_converged(self) -> bool:
        return self.skipped_bags == 0 and all(f.converged for f in self.bag_fits)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "stratum": self.stratum,
            "covariate_names": list(self.covariate_names),
            "coefficients": [float(c) for c in self.coefficients],
            "spec": self.spec.as_dict(),
            "skipped_bags": self.skipped_bags,
            "bags": [
                {
                    "bag_id": b.bag_id,
                    "n_rows": b.n_rows,
                    "skipped_reason": b.skipped_reason,
                    **({} if b.fit is None else {
                        "coefficients": [float(c) for c in b.fit.coefficients],
                        "converged": b.fit.converged,
                        "diverged": b.fit.diverged,
                        "iterations": b.fit.iterations,
                        "loglik": float(b.fit.loglik),
                        "max_abs_score": float(b.fit.max_abs_score),
                    }),
                }
                for b in self.bags
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        bags, fits = [], []
        for b in d.get("bags", []):
            fit = None
            if "coefficients" in b:
                fit = FitResult(
                    coefficients=np.asarray(b["coefficients"], dtype=np.float64),
                    loglik=b["loglik"],
                    iterations=b["iterations"],
                    converged=b["converged"],
                    max_abs_score=b["max_abs_score"],
                    diverged=b.get("diverged", False),
                )
                fits.append(fit)
            bags.append(BagOutcome(b["bag_id"], b["n_rows"], fit, b.get("skipped_reason")))
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            method=Method.parse(d["method"]),
            spec=SubsampleSpec(**d["spec"]),
            bag_fits=fits,
            skipped_bags=d["skipped_bags"],
            covariate_names=tuple(d.get("covariate_names", ())),
            stratum=d.get("stratum"),
            bags=bags,
        )


def fit_bag(table: VoxelTable, method, spec: SubsampleSpec, bag_id: int,
            config: IRLSConfig | None = None) -> BagOutcome:
    """Draw, assemble and fit a single bag."""
    method = Method.parse(method)
    if spec.is_full:
        problem = BUILDERS[method](table, None)
    else:
        problem = BUILDERS[method](table, draw_bag(table, method, spec, bag_id))
    reason = problem.degenerate_reason()
    if reason is not None:
        return BagOutcome(bag_id, problem.n_rows, None, reason)
    try:
        fit = irls_fit(problem, config)
    except SingularDesignError as exc:
        return BagOutcome(bag_id, problem.n_rows, None, f"singular design: {exc}")
    return BagOutcome(bag_id, problem.n_rows, fit, None)


def fit_method(table: VoxelTable, method, spec: SubsampleSpec = SubsampleSpec(),
               config: IRLSConfig | None = None, n_jobs: int = 1,
               stratum: str | None = None) -> FittedModel:
    """Fit ``method`` on a single-stratum table, averaging over ``spec.n_bags`` bags.

    Raises:
        FitFailedError: no bag produced a converged fit.
    """
    method = Method.parse(method)
    _check_spec(spec)
    if n_jobs > 1 and spec.n_bags > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            outcomes = list(ex.map(lambda b: fit_bag(table, method, spec, b, config),
                                   range(spec.n_bags)))
    else:
        outcomes = [fit_bag(table, method, spec, b, config) for b in range(spec.n_bags)]

    fits = [o.fit for o in outcomes if o.fit is not None]
    skipped = sum(o.fit is None for o in outcomes)
    good = [f.coefficients for f in fits if f.converged]
    if not good:
        raise FitFailedError(
            f"{method}: none of {spec.n_bags} bag(s) converged"
            + (f" in stratum {stratum!r}" if stratum is not None else ""),
            diagnostics={
                "skipped": [o.skipped_reason for o in outcomes if o.fit is None],
                "not_converged": [
                    {"iterations": f.iterations, "max_abs_score": f.max_abs_score,
                     "diverged": f.diverged}
                    for f in fits
                ],
            },
        )
    return FittedModel(
        coefficients=np.mean(good, axis=0),
        method=method,
        spec=spec,
        bag_fits=fits,
        skipped_bags=skipped,
        covariate_names=table.covariate_names,
        stratum=stratum,
        bags=outcomes,
    )


def stratum_spec(spec: SubsampleSpec, stratum: str) -> SubsampleSpec:
    """Per-stratum copy of ``spec`` with a seed derived from the stratum label,
    so that different strata never share random streams."""
    ss = np.random.SeedSequence([spec.seed % 2**63, zlib.crc32(stratum.encode("utf-8"))])
    seed = int(ss.generate_state(1, dtype=np.uint64)[0])
    return SubsampleSpec(spec.pi0, spec.pi1, spec.n_bags, seed)


def fit_strata(tables: dict[str, VoxelTable], method, spec: SubsampleSpec,
               config: IRLSConfig | None = None, n_jobs: int = 1) -> dict[str, FittedModel]:
    """Fit every stratum independently; results keep the input order."""
    method = Method.parse(method)
    labels = list(tables)

    def one(label):
        return fit_method(tables[label], method, stratum_spec(spec, label), config,
                          n_jobs=1, stratum=label)

    if n_jobs > 1 and len(labels) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            models = list(ex.map(one, labels))
    else:
        models = [one(label) for label in labels]
    return dict(zip(labels, models))
