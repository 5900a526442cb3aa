"""Voxel tables: cells with volumes, strata, piecewise-constant covariates and counts.

A :class:`VoxelTable` is column-oriented (one numpy array per field) so that
tables with millions of cells stay cheap; :class:`Cell` is the row view.
Presence indicators are always derived from the counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EmptyStratumError, RowValidationError, SchemaError, VoxelFitError

StratumKey = str

REQUIRED_COLUMNS = ("cell_id", "stratum", "volume", "count")


@dataclass(frozen=True)
class Cell:
    cell_id: str
    volume: float
    stratum: StratumKey
    covariates: tuple[float, ...]
    count: int

    @property
    def present(self) -> bool:
        return self.count > 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VoxelTable:
    """Discretized observation window, one entry per cell.

    Attributes:
        cell_ids: unique cell identifiers, shape ``(J,)``.
        strata: stratum label of each cell, shape ``(J,)``.
        volumes: cell volumes, strictly positive, shape ``(J,)``.
        covariates: covariate matrix, shape ``(J, n_C)``.
        counts: event counts, nonnegative integers, shape ``(J,)``.
        covariate_names: column names of ``covariates``.
    """

    cell_ids: np.ndarray
    strata: np.ndarray
    volumes: np.ndarray
    covariates: np.ndarray
    counts: np.ndarray
    covariate_names: tuple[str, ...]
    _present: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cell_ids = np.asarray(self.cell_ids, dtype=object)
        strata = np.asarray(self.strata, dtype=object)
        volumes = np.asarray(self.volumes, dtype=np.float64)
        covariates = np.asarray(self.covariates, dtype=np.float64)
        counts_raw = np.asarray(self.counts)
        names = tuple(str(n) for n in self.covariate_names)

        n = cell_ids.shape[0]
        if n < 1:
            raise VoxelFitError("a voxel table needs at least one cell")
        if covariates.ndim == 1:
            covariates = covariates.reshape(n, -1)
        if covariates.shape != (n, len(names)):
            raise SchemaError(
                f"covariate matrix has shape {covariates.shape}, expected ({n}, {len(names)})"
            )
        for name, arr in (("strata", strata), ("volumes", volumes), ("counts", counts_raw)):
            if arr.shape != (n,):
                raise SchemaError(f"{name} has shape {arr.shape}, expected ({n},)")
        if not np.issubdtype(counts_raw.dtype, np.integer):
            if not np.all(np.isfinite(counts_raw)) or np.any(counts_raw != np.round(counts_raw)):
                raise VoxelFitError("counts must be integers")
        counts = counts_raw.astype(np.int64)

        bad = np.flatnonzero(~(volumes > 0) | ~np.isfinite(volumes))
        if bad.size:
            raise RowValidationError(int(bad[0]) + 1, f"volume must be > 0, got {volumes[bad[0]]}")
        bad = np.flatnonzero(counts < 0)
        if bad.size:
            raise RowValidationError(int(bad[0]) + 1, f"count must be >= 0, got {counts[bad[0]]}")
        bad = np.flatnonzero(~np.isfinite(covariates).all(axis=1))
        if bad.size:
            raise RowValidationError(int(bad[0]) + 1, "covariates must be finite")
        if len(set(cell_ids.tolist())) != n:
            raise VoxelFitError("cell_ids must be unique")
        if any(s == "" or s is None for s in strata.tolist()):
            raise VoxelFitError("stratum labels must be non-empty")

        object.__setattr__(self, "cell_ids", _readonly(cell_ids))
        object.__setattr__(self, "strata", _readonly(strata))
        object.__setattr__(self, "volumes", _readonly(volumes))
        object.__setattr__(self, "covariates", _readonly(covariates))
        object.__setattr__(self, "counts", _readonly(counts))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "_present", _readonly(counts > 0))

    @classmethod
    def from_arrays(cls, covariates, counts, volumes=None, strata=None, cell_ids=None,
                    covariate_names=None) -> "VoxelTable":
        """Build a table from bare arrays, filling defaults for the bookkeeping columns."""
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        n = covariates.shape[0]
        if volumes is None:
            volumes = np.ones(n)
        if strata is None:
            strata = np.full(n, "all", dtype=object)
        elif isinstance(strata, str):
            strata = np.full(n, strata, dtype=object)
        if cell_ids is None:
            cell_ids = np.array([str(i) for i in range(n)], dtype=object)
        if covariate_names is None:
            covariate_names = tuple(f"c{i}" for i in range(covariates.shape[1]))
        return cls(cell_ids, strata, volumes, covariates, counts, tuple(covariate_names))

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cells(self) -> int:
        return len(self)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    @property
    def present(self) -> np.ndarray:
        """Presence indicators ``I_j = 1(N_j > 0)``."""
        return self._present

    @property
    def empty_index(self) -> np.ndarray:
        return np.flatnonzero(~self._present)

    @property
    def nonempty_index(self) -> np.ndarray:
        return np.flatnonzero(self._present)

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def stratum_labels(self) -> list[StratumKey]:
        """Stratum labels in order of first appearance."""
        return list(dict.fromkeys(self.strata.tolist()))

    def cell(self, j: int) -> Cell:
        return Cell(
            cell_id=self.cell_ids[j],
            volume=float(self.volumes[j]),
            stratum=self.strata[j],
            covariates=tuple(float(c) for c in self.covariates[j]),
            count=int(self.counts[j]),
        )

    @property
    def cells(self) -> list[Cell]:
        return [self.cell(j) for j in range(len(self))]

    def take(self, index) -> "VoxelTable":
        """Sub-table of the given cell positions (order preserved)."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return VoxelTable(
            self.cell_ids[index],
            self.strata[index],
            self.volumes[index],
            self.covariates[index],
            self.counts[index],
            self.covariate_names,
        )


def _parse_float(value: str, row: int, column: str) -> float:
    if value.strip() == "":
        raise RowValidationError(row, f"missing value in column {column!r}")
    try:
        return float(value)
    except ValueError:
        raise RowValidationError(row, f"non-numeric value {value!r} in column {column!r}") from None


def _parse_count(value: str, row: int, column: str) -> int:
    x = _parse_float(value, row, column)
    if not np.isfinite(x) or x != int(x):
        raise RowValidationError(row, f"count must be an integer, got {value!r}")
    if x < 0:
        raise RowValidationError(row, f"count must be >= 0, got {value!r}")
    return int(x)


def _guess_delimiter(path: Path) -> str:
    return "\t" if path.suffix.lower() in (".tsv", ".tab") else ","


def load_table(path, schema: Mapping[str, str] | None = None,
               delimiter: str | None = None) -> VoxelTable:
    """Read a delimiter-separated voxel table.

    ``schema`` maps the canonical names ``cell_id``, ``stratum``, ``volume``
    and ``count`` to the header names used in the file.  Every other column
    is a covariate, in header order.  Rows are numbered from 1 (first data
    line) in error messages.
    """
    path = Path(path)
    schema = dict(schema or {})
    unknown = set(schema) - set(REQUIRED_COLUMNS)
    if unknown:
        raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
    colmap = {name: schema.get(name, name) for name in REQUIRED_COLUMNS}
    delimiter = delimiter or _guess_delimiter(path)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in colmap.values() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {missing}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        pos = {name: header.index(col) for name, col in colmap.items()}
        required_pos = set(pos.values())
        cov_pos = [i for i in range(len(header)) if i not in required_pos]
        if not cov_pos:
            raise SchemaError(f"{path}: no covariate column")
        cov_names = [header[i] for i in cov_pos]

        ids, strata, volumes, counts, covs = [], [], [], [], []
        for row, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise RowValidationError(row, f"expected {len(header)} fields, got {len(rec)}")
            cid = rec[pos["cell_id"]].strip()
            stratum = rec[pos["stratum"]].strip()
            if not cid:
                raise RowValidationError(row, "missing cell_id")
            if not stratum:
                raise RowValidationError(row, "missing stratum")
            vol = _parse_float(rec[pos["volume"]], row, colmap["volume"])
            if not (vol > 0) or not np.isfinite(vol):
                raise RowValidationError(row, f"volume must be > 0, got {rec[pos['volume']]!r}")
            cnt = _parse_count(rec[pos["count"]], row, colmap["count"])
            cov = [_parse_float(rec[i], row, header[i]) for i in cov_pos]
            if not all(np.isfinite(cov)):
                raise RowValidationError(row, "covariates must be finite")
            ids.append(cid)
            strata.append(stratum)
            volumes.append(vol)
            counts.append(cnt)
            covs.append(cov)

    if not ids:
        raise SchemaError(f"{path}: no data rows")
    seen = {}
    for row, cid in enumerate(ids, start=1):
        if cid in seen:
            raise RowValidationError(row, f"duplicate cell_id {cid!r} (first seen in row {seen[cid]})")
        seen[cid] = row
    return VoxelTable(
        np.array(ids, dtype=object),
        np.array(strata, dtype=object),
        np.array(volumes, dtype=np.float64),
        np.array(covs, dtype=np.float64).reshape(len(ids), len(cov_names)),
        np.array(counts, dtype=np.int64),
        tuple(cov_names),
    )


def write_table(table: VoxelTable, path, delimiter: str | None = None) -> None:
    """Write ``table`` in the format read by :func:`load_table` (floats round-trip exactly)."""
    path = Path(path)
    delimiter = delimiter or _guess_delimiter(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS) + list(table.covariate_names))
        for j in range(len(table)):
            w.writerow(
                [table.cell_ids[j], table.strata[j], repr(float(table.volumes[j])),
                 int(table.counts[j])]
                + [repr(float(c)) for c in table.covariates[j]]
            )


def partition_by_stratum(table: VoxelTable) -> dict[StratumKey, VoxelTable]:
    """Split ``table`` into single-stratum tables, in order of first appearance."""
    labels = table.stratum_labels
    if len(labels) == 1:
        return {labels[0]: table}
    return {s: table.take(table.strata == s) for s in labels}


def select_stratum(table: VoxelTable, stratum: StratumKey) -> VoxelTable:
    mask = table.strata == stratum
    if not mask.any():
        raise EmptyStratumError(f"no cells in stratum {stratum!r}")
    return table.take(mask)


def empty_fraction(table: VoxelTable) -> float:
    """Proportion of cells with no event."""
    return float(np.count_nonzero(~table.present)) / len(table)


@dataclass(frozen=True)
class LearnTestSplit:
    """Learn/test partition of cells, by explicit id lists or by predicates.

    Predicates receive ``(cell_id, stratum)`` and return a bool.
    """

    learn: Callable[[str, str], bool] | Iterable[str]
    test: Callable[[str, str], bool] | Iterable[str]

    @staticmethod
    def _mask(table: VoxelTable, rule) -> np.ndarray:
        if callable(rule):
            return np.fromiter(
                (bool(rule(c, s)) for c, s in zip(table.cell_ids, table.strata)),
                dtype=bool, count=len(table),
            )
        ids = set(rule)
        return np.fromiter((c in ids for c in table.cell_ids), dtype=bool, count=len(table))

    def apply(self, table: VoxelTable) -> tuple[VoxelTable, VoxelTable]:
        learn = self._mask(table, self.learn)
        test = self._mask(table, self.test)
        if np.any(learn & test):
            raise VoxelFitError("learn and test cell sets overlap")
        if not learn.any() or not test.any():
            raise EmptyStratumError("learn or test selection is empty")
        return table.take(learn), table.take(test)


def concat_tables(tables: Sequence[VoxelTable]) -> VoxelTable:
    names = tables[0].covariate_names
    if any(t.covariate_names != names for t in tables):
        raise SchemaError("cannot concatenate tables with different covariates")
    return VoxelTable(
        np.concatenate([t.cell_ids for t in tables]),
        np.concatenate([t.strata for t in tables]),
        np.concatenate([t.volumes for t in tables]),
        np.concatenate([t.covariates for t in tables]),
        np.concatenate([t.counts for t in tables]),
        names,
    )
