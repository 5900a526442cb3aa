"""Wall-clock cost of one bag (draw + assemble + fit) per method and subsampling rate."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimators import Method, fit_bag
from .glm import IRLSConfig
from .simulate import calibrate_intercept, gen_counts, gen_covariates, keyed_rng
from .subsample import SubsampleSpec
from .voxel import VoxelTable

BENCH_COLUMNS = ("method", "pi0", "pi1", "J", "n_nonempty", "bags", "mean_rows",
                 "seconds_per_bag", "converged_bags")


def synthetic_table(J: int, nonempty_fraction: float, seed: int = 0,
                    beta_rest=(1.0, 1.0)) -> VoxelTable:
    """Poisson voxel table whose expected proportion of non-empty cells is ``nonempty_fraction``."""
    rng = keyed_rng(seed, 99)
    C = gen_covariates(J, len(beta_rest), rng)
    beta1 = calibrate_intercept(C, beta_rest, 1.0 - nonempty_fraction)
    N = gen_counts(C, np.r_[beta1, beta_rest], rng)
    return VoxelTable.from_arrays(C, N, covariate_names=["intercept"]
                                  + [f"z{i + 1}" for i in range(len(beta_rest))])


@dataclass(frozen=True)
class BenchRow:
    method: Method
    pi0: float
    pi1: float
    J: int
    n_nonempty: int
    bags: int
    mean_rows: float
    seconds_per_bag: float
    converged_bags: int

    def as_record(self) -> list:
        return [self.method.value, repr(self.pi0), repr(self.pi1), self.J, self.n_nonempty,
                self.bags, repr(self.mean_rows), f"{self.seconds_per_bag:.6f}",
                self.converged_bags]


def time_bags(table: VoxelTable, method, spec: SubsampleSpec,
              config: IRLSConfig | None = None) -> BenchRow:
    """Median wall-clock time over ``spec.n_bags`` bags."""
    method = Method.parse(method)
    times, rows, conv = [], [], 0
    for b in range(spec.n_bags):
        t0 = time.perf_counter()
        out = fit_bag(table, method, spec, b, config)
        times.append(time.perf_counter() - t0)
        rows.append(out.n_rows)
        conv += bool(out.fit is not None and out.fit.converged)
    return BenchRow(method, spec.pi0, spec.pi1, len(table), int(table.present.sum()),
                    spec.n_bags, float(np.mean(rows)), float(np.median(times)), conv)


def run_bench(table: VoxelTable, methods: Sequence, pi0_values: Sequence[float],
              pi1: float = 1.0, bags: int = 3, seed: int = 0,
              config: IRLSConfig | None = None) -> list[BenchRow]:
    out = []
    for m in methods:
        for pi0 in pi0_values:
            spec = SubsampleSpec(pi0, pi1, bags, seed)
            out.append(time_bags(table, m, spec, config))
    return out


def write_bench(rows: Sequence[BenchRow], path, delimiter: str = "\t") -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow(r.as_record())
