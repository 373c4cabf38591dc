"""Datasets, experimental designs, and dataset file I/O.

Designs are pure functions of (specification, seed): the same arguments
reproduce the same points on any platform (see rng module).  Dataset files
are UTF-8 CSV with header ``x1,...,xd,y``, one row per point, decimal-point
floats written with 17 significant digits so a write/read round trip is
bit-exact.
"""

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

__all__ = [
    "Dataset",
    "DesignKind",
    "DesignSpec",
    "InvalidDesignError",
    "DatasetFormatError",
    "stratified_1d",
    "maximin_lhs",
    "uniform_random",
    "read_dataset",
    "write_dataset",
]


class InvalidDesignError(ValueError):
    """Design request cannot be satisfied (e.g. empty effective domain)."""


class DatasetFormatError(ValueError):
    """Dataset file violates the CSV schema; message names the line."""


@dataclass(frozen=True)
class Dataset:
    """Paired inputs/outputs for one fidelity level.

    Attributes
    ----------
    inputs : ndarray, shape (N, d)
    outputs : ndarray, shape (N,)
    box : ndarray, shape (d, 2)
        Per-dimension [lo, hi] bounds containing every input row.  Defaults
        to the data bounding box; the box is metadata and is not serialized.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    box: np.ndarray = None

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.asarray(self.outputs, dtype=float).ravel()
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if inputs.ndim != 2 or inputs.shape[0] < 1 or inputs.shape[1] < 1:
            raise ValueError("inputs must be a non-empty N x d matrix")
        if inputs.shape[0] != outputs.shape[0]:
            raise ValueError(
                f"row count mismatch: {inputs.shape[0]} inputs vs "
                f"{outputs.shape[0]} outputs"
            )
        if self.box is None:
            box = np.column_stack([inputs.min(axis=0), inputs.max(axis=0)])
        else:
            box = np.asarray(self.box, dtype=float).reshape(inputs.shape[1], 2)
        object.__setattr__(self, "box", box)
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("box must satisfy lo <= hi in every dimension")
        inside = (inputs >= box[:, 0]) & (inputs <= box[:, 1])
        if not inside.all():
            bad = int(np.argwhere(~inside.all(axis=1))[0, 0])
            raise ValueError(f"input row {bad} lies outside the box")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


class DesignKind(enum.Enum):
    STRATIFIED_SEGMENTS_1D = "stratified_segments_1d"
    MAXIMIN_LHS = "maximin_lhs"
    UNIFORM_RANDOM = "uniform_random"


@dataclass(frozen=True)
class DesignSpec:
    """Declarative description of a design; ``generate`` realizes it."""

    kind: DesignKind
    n_points: int
    seed: int
    excluded: tuple = field(default=())
    restarts: int = 100

    def __post_init__(self):
        if self.n_points < 1:
            raise InvalidDesignError("n_points must be >= 1")
        object.__setattr__(
            self, "excluded", tuple((float(a), float(b)) for a, b in self.excluded)
        )

    def generate(self, box) -> np.ndarray:
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        if self.kind is DesignKind.STRATIFIED_SEGMENTS_1D:
            if box.shape[0] != 1:
                raise InvalidDesignError("stratified segments design is 1D only")
            return stratified_1d(self.n_points, box[0], self.excluded, self.seed)
        if self.kind is DesignKind.MAXIMIN_LHS:
            return maximin_lhs(
                self.n_points, box.shape[0], box, self.seed, self.restarts
            )
        return uniform_random(self.n_points, box.shape[0], box, self.seed)


def _validate_excluded(domain, excluded):
    """Sort the excluded segments and check they are disjoint and inside."""
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise InvalidDesignError(f"domain [{lo}, {hi}] has no length")
    segs = sorted((float(a), float(b)) for a, b in excluded)
    prev_end = lo
    for a, b in segs:
        if b < a:
            raise InvalidDesignError(f"excluded segment [{a}, {b}] is reversed")
        if a < lo or b > hi:
            raise InvalidDesignError(
                f"excluded segment [{a}, {b}] leaves the domain [{lo}, {hi}]"
            )
        if a < prev_end:
            raise InvalidDesignError("excluded segments overlap")
        prev_end = b
    return lo, hi, segs


def stratified_1d(n: int, domain=(0.0, 1.0), excluded=(), seed: int = 0) -> np.ndarray:
    """One uniform draw per equal-length segment of domain minus exclusions.

    The kept part of the domain is partitioned, in measure, into n segments
    of equal length; each segment receives one independent uniform point,
    mapped back through the complement of the excluded set.  Points come
    out sorted ascending.

    Returns an (n, 1) array.
    """
    if n < 1:
        raise InvalidDesignError("n must be >= 1")
    lo, hi, segs = _validate_excluded(domain, excluded)
    kept = []
    cursor = lo
    for a, b in segs:
        if a > cursor:
            kept.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < hi:
        kept.append((cursor, hi))
    total = sum(b - a for a, b in kept)
    if total <= 0:
        raise InvalidDesignError("excluded segments cover the whole domain")

    rng = make_rng(seed, "stratified-1d", n)
    seg_len = total / n
    u = (np.arange(n) + rng.random(n)) * seg_len  # position in kept measure
    starts = np.cumsum([0.0] + [b - a for a, b in kept])
    idx = np.minimum(np.searchsorted(starts, u, side="right") - 1, len(kept) - 1)
    points = np.array([kept[i][0] for i in idx]) + (u - starts[idx])
    return points.reshape(-1, 1)


def _unit_lhs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube on [0,1]^d: one point per 1/n bin on every axis."""
    pts = np.empty((n, d))
    for j in range(d):
        pts[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return pts


def _min_pairwise_distance(pts: np.ndarray) -> float:
    diff = pts[:, None, :] - pts[None, :, :]
    dist2 = np.sum(diff * diff, axis=-1)
    np.fill_diagonal(dist2, np.inf)
    return float(np.sqrt(dist2.min()))


def maximin_lhs(
    n: int, d: int, box=None, seed: int = 0, restarts: int = 100
) -> np.ndarray:
    """Best of ``restarts`` Latin hypercube draws by minimum pairwise distance.

    Distances are Euclidean in unit-cube coordinates so dimensions with
    different physical scales contribute equally.  Restart k draws from the
    sub-stream (seed, k); ties keep the first draw found, and restarts=1
    reproduces sub-stream 0 exactly.

    Returns an (n, d) array scaled to ``box`` (default unit cube).
    """
    if n < 2:
        raise InvalidDesignError("maximin LHS needs n >= 2")
    if d < 1 or restarts < 1:
        raise InvalidDesignError("d and restarts must be >= 1")
    best, best_dist = None, -np.inf
    for k in range(restarts):
        pts = _unit_lhs(n, d, make_rng(seed, "maximin-lhs", k))
        dist = _min_pairwise_distance(pts)
        if dist > best_dist:
            best, best_dist = pts, dist
    if box is None:
        return best
    box = np.asarray(box, dtype=float).reshape(d, 2)
    return box[:, 0] + best * (box[:, 1] - box[:, 0])


def uniform_random(n: int, d: int, box=None, seed: int = 0) -> np.ndarray:
    """n independent uniform points in ``box`` (default unit cube)."""
    if n < 1 or d < 1:
        raise InvalidDesignError("n and d must be >= 1")
    pts = make_rng(seed, "uniform", n, d).random((n, d))
    if box is None:
        return pts
    box = np.asarray(box, dtype=float).reshape(d, 2)
    return box[:, 0] + pts * (box[:, 1] - box[:, 0])


def write_dataset(data: Dataset, path) -> None:
    """Write a dataset as CSV with 17-significant-digit floats."""
    path = Path(path)
    header = ",".join([f"x{j + 1}" for j in range(data.d)] + ["y"])
    lines = [header]
    for row, y in zip(data.inputs, data.outputs):
        lines.append(",".join(format(v, ".17g") for v in (*row, y)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path, box=None) -> Dataset:
    """Read a dataset written by write_dataset.

    Raises DatasetFormatError, naming the offending line, on malformed
    headers, wrong field counts, or non-numeric cells.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    d = len(header) - 1
    expected = [f"x{j + 1}" for j in range(d)] + ["y"]
    if d < 1 or header != expected:
        raise DatasetFormatError(
            f"{path}: line 1: header must be x1,...,xd,y, got {lines[0]!r}"
        )
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d + 1:
            raise DatasetFormatError(
                f"{path}: line {lineno}: expected {d + 1} fields, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(inputs=arr[:, :d], outputs=arr[:, d], box=box)
