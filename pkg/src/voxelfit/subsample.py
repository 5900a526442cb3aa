"""Zero-deflated subsampling of cells and of data/dummy points.

Sampling is independent Bernoulli per element: empty cells are kept with
probability ``pi0`` and non-empty cells with probability ``pi1``.  For the
conditional logistic methods the elements are the individual data points
(kept with ``pi1``) and the one-per-cell dummy points (kept with ``pi0``).

Every draw is keyed by ``(seed, bag_id, stream)`` through a counter-based
Philox generator, so a bag can be regenerated in isolation and bags drawn
in any order (or concurrently) are identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .voxel import VoxelTable

_CELL_STREAM = 0
_POINT_STREAM = 1
_DUMMY_STREAM = 2


@dataclass(frozen=True)
class SubsampleSpec:
    """Inclusion probabilities, number of bags and root seed."""

    pi0: float = 1.0
    pi1: float = 1.0
    n_bags: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pi0 <= 1.0:
            raise ConfigurationError(f"pi0 must lie in [0, 1], got {self.pi0}")
        if not 0.0 < self.pi1 <= 1.0:
            raise ConfigurationError(f"pi1 must lie in (0, 1], got {self.pi1}")
        if int(self.n_bags) != self.n_bags or self.n_bags < 1:
            raise ConfigurationError(f"n_bags must be a positive integer, got {self.n_bags}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an integer in [0, 2**64), got {self.seed}")
        object.__setattr__(self, "pi0", float(self.pi0))
        object.__setattr__(self, "pi1", float(self.pi1))
        object.__setattr__(self, "n_bags", int(self.n_bags))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def is_full(self) -> bool:
        """True when every element is kept with certainty."""
        return self.pi0 == 1.0 and self.pi1 == 1.0

    @property
    def ratio(self) -> float:
        """``pi0 / pi1``, the cloglog_sub link parameter."""
        return self.pi0 / self.pi1

    def as_dict(self) -> dict:
        return {"pi0": self.pi0, "pi1": self.pi1, "n_bags": self.n_bags, "seed": self.seed}


FULL_SAMPLE = SubsampleSpec()


def bag_generator(seed: int, bag_id: int, stream: int) -> np.random.Generator:
    """Independent Philox stream for one (seed, bag, stream) key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(bag_id), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def _check_bag(spec: SubsampleSpec, bag_id: int):
    if not 0 <= bag_id < spec.n_bags:
        raise ConfigurationError(f"bag_id {bag_id} outside [0, {spec.n_bags})")


@dataclass(frozen=True, eq=False)
class SubsampleIndex:
    """Cells retained in one bag: ``kept_empty`` from J0, ``kept_nonempty`` from J1."""

    kept_empty: np.ndarray
    kept_nonempty: np.ndarray
    bag_id: int
    spec: SubsampleSpec

    @property
    def kept(self) -> np.ndarray:
        """All retained cell indices in table order."""
        return np.union1d(self.kept_empty, self.kept_nonempty)

    def __len__(self) -> int:
        return self.kept_empty.size + self.kept_nonempty.size

    def same_as(self, other: "SubsampleIndex") -> bool:
        return (np.array_equal(self.kept_empty, other.kept_empty)
                and np.array_equal(self.kept_nonempty, other.kept_nonempty))


def _bernoulli_keep(rng_factory, probs: np.ndarray) -> np.ndarray:
    """Keep mask for independent Bernoulli(probs); no variates drawn when all probs are 0 or 1."""
    if np.all((probs == 1.0) | (probs == 0.0)):
        return probs == 1.0
    return rng_factory().random(probs.shape[0]) < probs


def draw_subsample(table: VoxelTable, spec: SubsampleSpec, bag_id: int = 0) -> SubsampleIndex:
    """Retain each empty cell with ``pi0`` and each non-empty cell with ``pi1``."""
    _check_bag(spec, bag_id)
    present = table.present
    probs = np.where(present, spec.pi1, spec.pi0)
    keep = _bernoulli_keep(lambda: bag_generator(spec.seed, bag_id, _CELL_STREAM), probs)
    return SubsampleIndex(
        kept_empty=np.flatnonzero(keep & ~present),
        kept_nonempty=np.flatnonzero(keep & present),
        bag_id=bag_id,
        spec=spec,
    )


@dataclass(frozen=True, eq=False)
class PointSubsample:
    """Retained data points (as per-cell multiplicities) and dummy cells of one bag."""

    multiplicity: np.ndarray
    kept_dummies: np.ndarray
    bag_id: int
    spec: SubsampleSpec

    @property
    def n_points(self) -> int:
        return int(self.multiplicity.sum())

    @property
    def n_dummies(self) -> int:
        return int(self.kept_dummies.size)


def draw_clrl_subsample(table: VoxelTable, spec: SubsampleSpec, bag_id: int = 0) -> PointSubsample:
    """Retain each data point with ``pi1`` and each cell's dummy point with ``pi0``.

    A cell with ``N_j`` events contributes ``N_j`` data points, so its
    retained multiplicity is Binomial(``N_j``, ``pi1``).
    """
    _check_bag(spec, bag_id)
    counts = table.counts
    J = counts.shape[0]
    if spec.pi1 == 1.0:
        multiplicity = counts.copy()
    else:
        n_points = int(counts.sum())
        u = bag_generator(spec.seed, bag_id, _POINT_STREAM).random(n_points)
        owner = np.repeat(np.arange(J), counts)
        multiplicity = np.bincount(owner[u < spec.pi1], minlength=J).astype(np.int64)
    dummy_keep = _bernoulli_keep(lambda: bag_generator(spec.seed, bag_id, _DUMMY_STREAM),
                                 np.full(J, spec.pi0))
    return PointSubsample(
        multiplicity=multiplicity,
        kept_dummies=np.flatnonzero(dummy_keep),
        bag_id=bag_id,
        spec=spec,
    )
