"""Core data containers, index-set algebra, CSV ingestion, run configuration.

The CSV dialect is fixed: comma delimiter, ``.`` decimal point, UTF-8, first
row is the header. Covariate order is file order. ``Dataset`` arrays are
frozen after construction and safe to share across threads.
"""

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1


def mix64(*values: int) -> int:
    """Deterministic 64-bit seed mixer (splitmix64 folded over the inputs).

    Used to derive per-tree, per-candidate and per-replication seeds from a
    master seed so parallel and serial runs agree bit for bit.
    """
    h = 0
    for v in values:
        h = (h + (int(v) & MASK64)) & MASK64
        h = (h + 0x9E3779B97F4A7C15) & MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        h = z ^ (z >> 31)
    return h


class DataError(ValueError):
    """Base class for ingestion and validation failures."""


class MissingFileError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class DuplicateColumnError(DataError):
    pass


class NonNumericCellError(DataError):
    pass


class MissingValueError(DataError):
    pass


class ConfigError(ValueError):
    """Malformed key-value configuration file."""


@dataclass(frozen=True)
class IndexSet:
    """Insertion-ordered set of covariate indices without duplicates."""

    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise ValueError("covariate indices must be nonnegative")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate covariate indices in {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, *indices) -> "IndexSet":
        return cls(tuple(indices))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in self.indices

    def add(self, i: int) -> "IndexSet":
        if i in self.indices:
            raise ValueError(f"index {i} already present")
        return IndexSet(self.indices + (int(i),))

    def drop_last(self) -> "IndexSet":
        return IndexSet(self.indices[:-1])

    def validate_for(self, d: int) -> None:
        if any(i >= d for i in self.indices):
            raise ValueError(f"index set {self.indices} invalid for dimension {d}")

    def names(self, names: Sequence[str]) -> tuple:
        return tuple(names[i] for i in self.indices)

    def as_sorted(self) -> tuple:
        return tuple(sorted(self.indices))


def complement(j: IndexSet, d: int) -> IndexSet:
    """Indices of ``{0..d-1}`` not in ``j``, in increasing order."""
    j.validate_for(d)
    present = set(j.indices)
    return IndexSet(tuple(i for i in range(d) if i not in present))


@dataclass(frozen=True)
class Dataset:
    """Response vector, covariate matrix and column names.

    Arrays are copied to float64 and marked read-only; rows align across
    ``y`` and ``x``.
    """

    y: np.ndarray
    x: np.ndarray
    names: tuple

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if y.ndim != 1 or x.ndim != 2:
            raise DataError("y must be 1-d and x 2-d")
        if y.shape[0] != x.shape[0]:
            raise DataError("y and x row counts differ")
        if y.shape[0] < 1 or x.shape[1] < 1:
            raise DataError("need at least one row and one covariate")
        names = tuple(str(c) for c in self.names)
        if len(names) != x.shape[1]:
            raise DataError("one name per covariate column required")
        if len(set(names)) != len(names):
            raise DuplicateColumnError(f"duplicate covariate names in {names}")
        if not np.isfinite(y).all() or not np.isfinite(x).all():
            raise MissingValueError("non-finite value in dataset")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingColumnError(f"column {name!r} not found") from None

    def all_covariates(self) -> IndexSet:
        return IndexSet(tuple(range(self.d)))


def load_csv(path, response: str) -> Dataset:
    """Read a header-ed CSV into a Dataset, extracting ``response``.

    Rejects missing files, absent response columns, duplicate headers, blank
    cells and non-numeric or non-finite cells, each with its own error class
    and cell coordinates where applicable.
    """
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DuplicateColumnError(f"duplicate column names in header of {path}")
        if response not in header:
            raise MissingColumnError(f"response column {response!r} not found in {path}")
        ridx = header.index(response)
        rows = []
        for rnum, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataError(
                    f"row {rnum}: expected {len(header)} cells, got {len(rec)}"
                )
            vals = []
            for cnum, cell in enumerate(rec):
                cell = cell.strip()
                if cell == "":
                    raise MissingValueError(
                        f"missing value at row {rnum}, column {header[cnum]!r}"
                    )
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCellError(
                        f"non-numeric cell {cell!r} at row {rnum}, column {header[cnum]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise NonNumericCellError(
                        f"non-finite cell {cell!r} at row {rnum}, column {header[cnum]!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"no data rows in {path}")
    mat = np.asarray(rows, dtype=np.float64)
    y = mat[:, ridx]
    x = np.delete(mat, ridx, axis=1)
    names = tuple(h for i, h in enumerate(header) if i != ridx)
    return Dataset(y=y, x=x, names=names)


def write_csv(dataset: Dataset, path, response: str = "y") -> None:
    """Write a Dataset back to CSV; ``repr`` floats round-trip bit-exactly."""
    if response in dataset.names:
        raise DuplicateColumnError(f"response name {response!r} clashes with a covariate")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([response, *dataset.names])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(dataset.y[i])), *(repr(float(v)) for v in dataset.x[i])]
            )


@dataclass(frozen=True)
class ForestParams:
    """Honest quantile forest parameters.

    Defaults follow the selection-time settings used throughout: subsample
    half the data, grow to minimum structure node size 1, consider every
    feature at each split, relabel against the node quartiles.
    """

    trees: int = 1000
    subsample_fraction: float = 0.5
    mtry: Optional[int] = None
    min_node_size: int = 1
    split_levels: tuple = (0.25, 0.5, 0.75)

    def __post_init__(self):
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise ValueError("subsample_fraction must be in (0, 1]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        levels = tuple(float(t) for t in self.split_levels)
        if any(not (0.0 < t < 1.0) for t in levels):
            raise ValueError("split_levels must lie in (0, 1)")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("split_levels must be strictly increasing")
        object.__setattr__(self, "split_levels", levels)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for a selection run."""

    forest: ForestParams = field(default_factory=ForestParams)
    alpha: float = 0.05
    crps_grid_k: int = 50
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if self.crps_grid_k < 1:
            raise ValueError("crps_grid_k must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def with_updates(self, **kw) -> "RunConfig":
        forest_keys = {k: v for k, v in kw.items() if k in _FOREST_KEYS}
        run_keys = {k: v for k, v in kw.items() if k not in _FOREST_KEYS}
        cfg = self
        if forest_keys:
            cfg = replace(cfg, forest=replace(cfg.forest, **forest_keys))
        if run_keys:
            cfg = replace(cfg, **run_keys)
        return cfg

    def to_dict(self) -> dict:
        return {
            "trees": self.forest.trees,
            "subsample_fraction": self.forest.subsample_fraction,
            "mtry": self.forest.mtry,
            "min_node_size": self.forest.min_node_size,
            "split_quantiles": list(self.forest.split_levels),
            "crps_grid_k": self.crps_grid_k,
            "alpha": self.alpha,
            "seed": self.seed,
            "threads": self.threads,
        }


_FOREST_KEYS = ("trees", "subsample_fraction", "mtry", "min_node_size", "split_levels")

_CONFIG_KEYS = {
    "trees": int,
    "subsample_fraction": float,
    "mtry": lambda s: None if s.lower() in ("none", "all") else int(s),
    "min_node_size": int,
    "split_quantiles": lambda s: tuple(float(t) for t in s.split(",") if t.strip()),
    "crps_grid_k": int,
    "alpha": float,
    "seed": int,
    "threads": int,
}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` configuration file into typed values.

    Recognized keys: trees, subsample_fraction, mtry, min_node_size,
    split_quantiles (comma-separated), crps_grid_k, alpha, seed, threads.
    Lines starting with ``#`` and blank lines are ignored.
    """
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lnum, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lnum}: expected 'key = value', got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"line {lnum}: unknown key {key!r}")
            try:
                out[key] = _CONFIG_KEYS[key](val)
            except ValueError:
                raise ConfigError(
                    f"line {lnum}: bad value {val!r} for key {key!r}"
                ) from None
    return out


def config_from_mapping(values: dict) -> RunConfig:
    """Build a RunConfig from parsed key-value pairs (missing keys default)."""
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    forest = ForestParams(
        trees=values.get("trees", 1000),
        subsample_fraction=values.get("subsample_fraction", 0.5),
        mtry=values.get("mtry"),
        min_node_size=values.get("min_node_size", 1),
        split_levels=values.get("split_quantiles", (0.25, 0.5, 0.75)),
    )
    return RunConfig(
        forest=forest,
        alpha=values.get("alpha", 0.05),
        crps_grid_k=values.get("crps_grid_k", 50),
        seed=values.get("seed", 0),
        threads=values.get("threads", 1),
    )


def parallel_map(fn, items: Iterable, threads: int) -> list:
    """Map preserving order; uses a thread pool when ``threads > 1``.

    Work units must carry pre-assigned seeds so the result is independent of
    scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
