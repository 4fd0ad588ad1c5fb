"""Synthetic task generators, normalization, splits, CSV ingestion.

Tasks are named single-output functions of one or two inputs; the
backward direction (output to input) is the non-injective one for all
of them on their default ranges. Samples are drawn uniformly per input
column. Normalization is per-column min-max fitted on the training
split only; values transformed with foreign stats (validation, test)
may land outside [0, 1] and are left unclipped.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TaskDef:
    name: str
    dim_x: int
    fn: callable
    default_ranges: tuple


def _col(x, i):
    return x[:, i]


def _spring(x):
    # small-oscillation natural frequency of a mass on a spring,
    # f = sqrt(k/m) / (2 pi); x columns are (k, m)
    return (np.sqrt(_col(x, 0) / _col(x, 1)) / (2.0 * np.pi))[:, None]


_ONE_D = {
    "x_squared": lambda v: v ** 2,
    "sin": np.sin,
    "sin_squared": lambda v: np.sin(v) ** 2,
    "x_squared_sin": lambda v: v ** 2 * np.sin(v),
    "gauss": lambda v: np.exp(-v ** 2),
    "rational": lambda v: v ** 2 / (1.0 + v ** 2),
    "cubic_trig": lambda v: v ** 3 * np.sin(v) + v ** 2 * np.cos(v),
    "sin_harmonics": lambda v: np.sin(v) + np.sin(2.0 * v) + np.sin(3.0 * v),
    "quartic": lambda v: v ** 4 - 2.0 * v ** 3 + 3.0 * v ** 2 - 4.0 * v + 5.0 + v,
    "sin_exp_cubic": lambda v: np.sin(v) + np.exp(-v) + v ** 3,
    "gauss_trig_cubic": lambda v: np.exp(-v ** 2) * np.sin(v) + v ** 3 * np.cos(v),
}

TASKS = {
    name: TaskDef(name, 1, (lambda f: lambda x: f(_col(x, 0))[:, None])(f),
                  ((-3.0, 3.0),))
    for name, f in _ONE_D.items()
}
TASKS["spring"] = TaskDef("spring", 2, _spring, ((0.5, 5.0), (0.5, 5.0)))


def task_def(name):
    if name not in TASKS:
        raise ValueError(
            f"unknown task {name!r}; valid ids: {', '.join(sorted(TASKS))}")
    return TASKS[name]


def _check_ranges(task, ranges):
    if len(ranges) != task.dim_x:
        raise ValueError(
            f"task {task.name} needs {task.dim_x} input range(s), got {len(ranges)}")
    for i, (lo, hi) in enumerate(ranges):
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"range {i} for {task.name} is not a finite interval: "
                             f"({lo}, {hi})")
    if task.name == "spring":
        k_lo, m_lo = ranges[0][0], ranges[1][0]
        if m_lo <= 0.0:
            raise ValueError("spring mass range must stay strictly positive")
        if k_lo < 0.0:
            raise ValueError("spring stiffness range must be non-negative")


def gen_synthetic(task_name, n, seed=0, ranges=None):
    """Draw n rows for a task; returns (x, y) raw float64 arrays."""
    task = task_def(task_name)
    if n < 10:
        raise ValueError(f"n={n} is too small to split into train/val/test")
    ranges = tuple(ranges) if ranges is not None else task.default_ranges
    _check_ranges(task, ranges)
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(lo, hi, size=n) for lo, hi in ranges])
    y = task.fn(x)
    return x, y


# -- normalization --------------------------------------------------------

@dataclass
class NormStats:
    x_lo: np.ndarray
    x_hi: np.ndarray
    y_lo: np.ndarray
    y_hi: np.ndarray

    def to_json(self):
        return json.dumps({k: list(getattr(self, k)) for k in
                           ("x_lo", "x_hi", "y_lo", "y_hi")}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in
                      ("x_lo", "x_hi", "y_lo", "y_hi")})


def fit_normalization(x_train, y_train):
    return NormStats(x_train.min(axis=0), x_train.max(axis=0),
                     y_train.min(axis=0), y_train.max(axis=0))


def normalize(a, lo, hi):
    """Min-max to [0, 1] for the fitted columns; constant columns map to 0.
    No clipping: foreign rows may leave [0, 1]."""
    span = hi - lo
    safe = np.where(span == 0.0, 1.0, span)
    out = (a - lo) / safe
    return np.where(span == 0.0, 0.0, out)


def denormalize(a, lo, hi):
    span = hi - lo
    return np.where(span == 0.0, lo, a * span + lo)


# -- splits ----------------------------------------------------------------

def split_data(x, y, fractions=(0.8, 0.1, 0.1), seed=0):
    """Shuffled train/val/test split; deterministic in (data, seed)."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n = x.shape[0]
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} rows leaves an empty part "
                         f"(train={n_train}, val={n_val}, test={n_test})")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple((x[idx], y[idx]) for idx in parts)


def decouple_pairs(x, y, seed=0):
    """Break row pairing: x and y are permuted independently. The
    marginals (row multisets) are preserved exactly."""
    rng = np.random.default_rng(seed)
    return x[rng.permutation(x.shape[0])], y[rng.permutation(y.shape[0])]


# -- dataset bundle ---------------------------------------------------------

@dataclass
class Dataset:
    task: str
    seed: int
    dim_x: int
    dim_y: int
    stats: NormStats
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    decoupled: bool = False

    @property
    def n_train(self):
        return self.x_train.shape[0]


def build_dataset(task_name, n, seed=0, ranges=None, fractions=(0.8, 0.1, 0.1),
                  decouple=False):
    """Generate, split, fit normalization on train, normalize all splits.
    With decouple=True the training split loses its row pairing."""
    x, y = gen_synthetic(task_name, n, seed=seed, ranges=ranges)
    return dataset_from_arrays(x, y, task=task_name, seed=seed,
                               fractions=fractions, decouple=decouple)


def dataset_from_arrays(x, y, task="csv", seed=0, fractions=(0.8, 0.1, 0.1),
                        decouple=False):
    (xtr, ytr), (xva, yva), (xte, yte) = split_data(x, y, fractions, seed)
    stats = fit_normalization(xtr, ytr)
    norm = lambda a, lo, hi: normalize(a, lo, hi)
    xtr, xva, xte = (norm(a, stats.x_lo, stats.x_hi) for a in (xtr, xva, xte))
    ytr, yva, yte = (norm(a, stats.y_lo, stats.y_hi) for a in (ytr, yva, yte))
    if decouple:
        xtr, ytr = decouple_pairs(xtr, ytr, seed=seed + 1)
    return Dataset(task=task, seed=seed, dim_x=x.shape[1], dim_y=y.shape[1],
                   stats=stats, x_train=xtr, y_train=ytr, x_val=xva, y_val=yva,
                   x_test=xte, y_test=yte, decoupled=decouple)


# -- CSV -------------------------------------------------------------------

def save_csv(path, x, y):
    """One file, header x0..x{k},y0..y{m}, full float round trip."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(x.shape[1])] +
                   [f"y{i}" for i in range(y.shape[1])])
        for xi, yi in zip(x, y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])


def load_csv(path):
    """Read a paired-sample CSV written by save_csv (or hand-made with the
    same header convention). Errors carry row and column positions."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    x_cols = [i for i, h in enumerate(header) if h.strip().startswith("x")]
    y_cols = [i for i, h in enumerate(header) if h.strip().startswith("y")]
    if not x_cols or not y_cols:
        raise ValueError(f"{path}: header must name x* and y* columns, got {header}")
    if len(x_cols) + len(y_cols) != len(header):
        extra = [h for h in header if not h.strip().startswith(("x", "y"))]
        raise ValueError(f"{path}: unexpected columns {extra}")
    x = np.empty((len(rows) - 1, len(x_cols)))
    y = np.empty((len(rows) - 1, len(y_cols)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r} has {len(row)} cells, expected "
                             f"{len(header)}")
        for dest, cols in ((x, x_cols), (y, y_cols)):
            for j, c in enumerate(cols):
                try:
                    dest[r - 2, j] = float(row[c])
                except ValueError:
                    raise ValueError(
                        f"{path}: row {r}, column {header[c]!r}: "
                        f"cannot parse {row[c]!r} as a number") from None
    return x, y


def write_manifest(path, info):
    with open(path, "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
