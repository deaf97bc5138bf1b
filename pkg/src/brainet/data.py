"""Dataset handling: CSV/IDX loading, discretization, splits, bootstrap resampling.

All randomness flows through integer seeds; independent streams for nested
procedures (bootstrap branches, weight init, shuffling) are derived from a
master seed plus a label path via :func:`derive_seed`.
"""

from __future__ import annotations

import csv
import hashlib
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    """Malformed input file or violated dataset contract."""


def derive_seed(master: int, *path) -> int:
    """Derive a reproducible 63-bit stream seed from a master seed and a label path.

    The same (master, path) always maps to the same seed, independent of
    platform and process, so nested procedures (bootstrap branches, per-pass
    sampling, weight init) get independent but replayable streams.
    """
    h = hashlib.sha256(str(int(master)).encode())
    for part in path:
        h.update(b"|")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


@dataclass(frozen=True)
class Dataset:
    """Immutable discrete-valued observation matrix with named columns.

    ``values`` holds 0-based category indices per column. Continuous columns
    keep their real values in ``raw_features`` and are flagged in
    ``continuous``; until discretized they carry cardinality 0 and are
    excluded from independence testing. ``raw_features`` always holds the
    real-valued view used for network training and is never altered by
    discretization.
    """

    column_names: tuple
    cardinalities: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None
    class_count: int | None = None
    raw_features: np.ndarray | None = None
    continuous: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        cards = np.asarray(self.cardinalities, dtype=np.int64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cardinalities", cards)
        if values.ndim != 2:
            raise DataError("values must be a 2-d matrix")
        if len(self.column_names) != values.shape[1] or len(cards) != values.shape[1]:
            raise DataError("column metadata does not match the value matrix")
        cont = self.continuous
        if cont is None:
            cont = np.zeros(values.shape[1], dtype=bool)
        object.__setattr__(self, "continuous", np.asarray(cont, dtype=bool))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            object.__setattr__(self, "labels", labels)
            if labels.shape[0] != values.shape[0]:
                raise DataError("labels must have one entry per row")
        if self.raw_features is not None:
            raw = np.asarray(self.raw_features, dtype=np.float64)
            object.__setattr__(self, "raw_features", raw)
            if raw.shape != values.shape:
                raise DataError("raw_features must match the value matrix shape")
        for j in range(values.shape[1]):
            if cards[j] > 0 and values[:, j].size:
                lo, hi = values[:, j].min(), values[:, j].max()
                if lo < 0 or hi >= cards[j]:
                    raise DataError(
                        f"column {self.column_names[j]!r} holds value outside "
                        f"[0, {cards[j]})"
                    )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def ci_columns(self) -> tuple:
        """Columns usable in independence tests: discrete with >= 2 categories."""
        return tuple(j for j in range(self.n_cols) if self.cardinalities[j] >= 2)

    def features(self) -> np.ndarray:
        """Real-valued training matrix: raw features when present, else indices."""
        if self.raw_features is not None:
            return self.raw_features
        return self.values.astype(np.float64)

    def take(self, rows) -> "Dataset":
        """New dataset holding the given rows (duplicates allowed)."""
        rows = np.asarray(rows, dtype=np.int64)
        return replace(
            self,
            values=self.values[rows],
            labels=None if self.labels is None else self.labels[rows],
            raw_features=None if self.raw_features is None else self.raw_features[rows],
        )


@dataclass(frozen=True)
class BootstrapSample:
    """Row indices drawn with replacement from a source dataset."""

    source: Dataset
    row_indices: np.ndarray
    seed: int

    def take(self) -> Dataset:
        return self.source.take(self.row_indices)


def bootstrap(dataset: Dataset, seed: int) -> BootstrapSample:
    """Uniform sampling with replacement, size preserved, deterministic per seed."""
    n = dataset.n_rows
    if n == 0:
        raise DataError("cannot bootstrap an empty dataset")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=n)
    return BootstrapSample(source=dataset, row_indices=idx, seed=seed)


def train_test_split(dataset: Dataset, fraction: float, seed: int):
    """Disjoint, jointly exhaustive row split; first part gets floor(n * fraction) rows."""
    if not 0.0 < fraction < 1.0:
        raise DataError("split fraction must lie strictly between 0 and 1")
    n = dataset.n_rows
    n_first = int(np.floor(n * fraction))
    if n_first == 0 or n_first == n:
        raise DataError(f"fraction {fraction} yields an empty split for {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    first = np.sort(perm[:n_first])
    second = np.sort(perm[n_first:])
    return dataset.take(first), dataset.take(second)


def discretize(
    dataset: Dataset,
    bins: int = 4,
    strategy: str = "equal-frequency",
    threshold: float = 0.5,
) -> Dataset:
    """Bin every continuous column of the dataset into category indices.

    ``equal-frequency`` cuts at interior quantiles, ``threshold`` produces a
    binary column split at ``threshold``. Raw features are preserved
    unchanged, so re-running with the same strategy is idempotent. A column
    whose bin edges collapse to nothing is degenerate: it gets cardinality 1,
    is excluded from independence testing, and triggers a warning.
    """
    if bins < 1:
        raise DataError("bins must be a positive integer")
    if strategy not in ("equal-frequency", "threshold"):
        raise DataError(f"unknown discretization strategy {strategy!r}")
    if dataset.raw_features is None:
        raise DataError("discretize requires raw_features")
    values = dataset.values.copy()
    cards = dataset.cardinalities.copy()
    for j in range(dataset.n_cols):
        if not dataset.continuous[j]:
            continue
        col = dataset.raw_features[:, j]
        if strategy == "threshold":
            values[:, j] = (col > threshold).astype(np.int64)
            cards[j] = 2
            continue
        edges = np.unique(np.quantile(col, [i / bins for i in range(1, bins)]))
        # drop edges that would create empty leading/trailing bins
        edges = edges[(edges > col.min()) & (edges < col.max())]
        if edges.size == 0:
            if np.all(col == col[0]):
                warnings.warn(
                    f"column {dataset.column_names[j]!r} is constant; "
                    "assigned cardinality 1 and excluded from independence tests",
                    stacklevel=2,
                )
                values[:, j] = 0
                cards[j] = 1
                continue
            # non-constant but quantile-degenerate: fall back to a median cut
            edges = np.array([np.median(col)])
            if edges[0] >= col.max():
                edges = np.array([(col.min() + col.max()) / 2.0])
        values[:, j] = np.searchsorted(edges, col, side="right")
        cards[j] = edges.size + 1
    return replace(dataset, values=values, cardinalities=cards)


def _parse_cell(text: str, row_number: int, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"row {row_number}: cannot parse {text!r} in column {name!r} as a number"
        ) from None


def load_csv(path, schema=None, label_column: str | None = None) -> Dataset:
    """Load a header-first CSV of numeric columns.

    ``schema`` optionally maps column names to ``"categorical"`` or
    ``"continuous"``; unlisted columns are inferred (integer-valued columns
    become categorical, anything else continuous). Categorical values are
    remapped to dense 0-based indices. ``label_column`` is pulled out of the
    feature matrix; integer-valued labels yield classification targets with a
    class count, otherwise the labels are real regression targets.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no rows: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {i}: expected {len(header)} columns, found {len(row)}"
                )
            rows.append(
                [_parse_cell(cell, i, header[c]) for c, cell in enumerate(row)]
            )
    if not rows:
        raise DataError("no rows: file has a header but no data")
    matrix = np.asarray(rows, dtype=np.float64)

    if schema:
        for name, kind in schema.items():
            if name not in header:
                raise DataError(f"schema names unknown column {name!r}")
            if kind not in ("categorical", "continuous"):
                raise DataError(f"unknown column type {kind!r} for column {name!r}")

    labels = None
    class_count = None
    if label_column is not None:
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header")
        li = header.index(label_column)
        raw_labels = matrix[:, li]
        keep = [c for c in range(len(header)) if c != li]
        matrix = matrix[:, keep]
        header = [header[c] for c in keep]
        if np.all(raw_labels == np.round(raw_labels)):
            classes = np.unique(raw_labels)
            labels = np.searchsorted(classes, raw_labels).astype(np.int64)
            class_count = classes.size
        else:
            labels = raw_labels.astype(np.float64)

    n_cols = len(header)
    values = np.zeros(matrix.shape, dtype=np.int64)
    cards = np.zeros(n_cols, dtype=np.int64)
    cont = np.zeros(n_cols, dtype=bool)
    for j, name in enumerate(header):
        kind = (schema or {}).get(name)
        col = matrix[:, j]
        if kind is None:
            kind = "categorical" if np.all(col == np.round(col)) else "continuous"
        if kind == "continuous":
            cont[j] = True
            cards[j] = 0  # pending discretization
        else:
            if not np.all(col == np.round(col)):
                raise DataError(
                    f"column {name!r} declared categorical but holds non-integers"
                )
            uniq = np.unique(col)
            values[:, j] = np.searchsorted(uniq, col)
            cards[j] = uniq.size
    return Dataset(
        column_names=tuple(header),
        cardinalities=cards,
        values=values,
        labels=labels,
        class_count=class_count,
        raw_features=matrix,
        continuous=cont,
    )


def _read_idx(path, expected_magic: int):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise DataError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">i", blob[:4])
    if magic != expected_magic:
        raise DataError(
            f"{path}: IDX magic 0x{magic:08x} does not match expected "
            f"0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}i", blob[4:header_len])
    count = int(np.prod(dims))
    body = blob[header_len:]
    if len(body) < count:
        raise DataError(f"{path}: IDX body shorter than declared dimensions")
    data = np.frombuffer(body[:count], dtype=np.uint8)
    return data.reshape(dims)


def load_idx(
    images_path,
    labels_path=None,
    bins: int = 2,
    strategy: str = "equal-frequency",
) -> Dataset:
    """Load an IDX image file (big-endian, magic 0x00000803) as one row per image.

    Pixel intensities are scaled to [0, 1] and kept as raw features; the
    category values are produced by :func:`discretize` with the given
    binning. Labels, when given, come from a matching IDX label file
    (magic 0x00000801).
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC)
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64) / 255.0
    d = flat.shape[1]
    labels = None
    class_count = None
    if labels_path is not None:
        raw_labels = _read_idx(labels_path, IDX_LABEL_MAGIC)
        if raw_labels.shape[0] != n:
            raise DataError(
                f"label file holds {raw_labels.shape[0]} entries for {n} images"
            )
        labels = raw_labels.astype(np.int64)
        class_count = int(labels.max()) + 1 if labels.size else 0
    dataset = Dataset(
        column_names=tuple(f"px{j}" for j in range(d)),
        cardinalities=np.zeros(d, dtype=np.int64),
        values=np.zeros((n, d), dtype=np.int64),
        labels=labels,
        class_count=class_count,
        raw_features=flat,
        continuous=np.ones(d, dtype=bool),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # flat background pixels are expected
        return discretize(dataset, bins=bins, strategy=strategy)
