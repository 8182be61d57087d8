"""Full-resolution learnable coordinate table.

One learnable ``d_in``-dimensional row per signal element, addressed by the
element's row-major flat index. There is no hashing and no collision
handling: the lookup is a bijection. Rows are optimized with a lazy Adam whose
moments and bias-correction counters are kept per row, so a step costs
O(rows touched) regardless of the table size.
"""
import numpy as np

from .exceptions import ConfigError, ShapeError
from .numerics import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, check_finite, is_permutation, make_rng

TABLE_INITS = ("zero", "grid", "uniform")
DEFAULT_UNIFORM_SCALE = 1e-4


def axis_coords(n, lo=-1.0, hi=1.0):
    """``n`` evenly spaced samples from ``lo`` to ``hi``; a single sample maps to the midpoint."""
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    i = np.arange(n, dtype=np.float64)
    return lo + (hi - lo) * i / (n - 1)


def lattice(shape, lo=None, hi=None):
    """Row-major lattice of coordinates for ``shape``, as ``(prod(shape), len(shape))``.

    Defaults to ``[-1, 1]`` on every axis; ``lo``/``hi`` give per-axis bounds.
    """
    d = len(shape)
    lo = np.full(d, -1.0) if lo is None else np.asarray(lo, dtype=np.float64)
    hi = np.full(d, 1.0) if hi is None else np.asarray(hi, dtype=np.float64)
    axes = [axis_coords(n, lo[k], hi[k]) for k, n in enumerate(shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def flatten_coord(coord, shape):
    """Row-major flat index of an integer grid coordinate (last axis fastest)."""
    coord = np.asarray(coord)
    if coord.shape[-1:] != (len(shape),):
        raise ShapeError(f"coordinate of width {coord.shape[-1:]} for a {len(shape)}-D shape")
    if np.any(coord < 0) or np.any(coord >= np.asarray(shape)):
        raise IndexError(f"coordinate {coord.tolist()} outside shape {tuple(shape)}")
    flat = np.ravel_multi_index(tuple(np.moveaxis(coord.astype(np.int64), -1, 0)), tuple(shape))
    return int(flat) if np.ndim(flat) == 0 else flat


class CoordTable:
    """Dense ``n x d_in`` table of mapped coordinates with per-row Adam state."""

    def __init__(self, entries):
        entries = np.array(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise ConfigError(f"table entries must be a non-empty 2-D array, got {entries.shape}")
        check_finite("table entry", entries)
        self.entries = entries
        self.m = np.zeros_like(entries)
        self.v = np.zeros_like(entries)
        self.steps = np.zeros(entries.shape[0], dtype=np.int64)
        self.last_touched = 0

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def d_in(self):
        return self.entries.shape[1]

    def __len__(self):
        return self.n

    def copy(self):
        other = CoordTable(self.entries)
        other.m = self.m.copy()
        other.v = self.v.copy()
        other.steps = self.steps.copy()
        return other

    def lookup(self, flat_index):
        """Return the row for ``flat_index`` (or rows for an index array)."""
        idx = np.asarray(flat_index)
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise IndexError(f"table index {flat_index} out of range for {self.n} rows")
        return self.entries[idx]

    def step_rows(self, indices, grads, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        """Lazy Adam on the given (unique) rows; all other rows are left untouched.

        ``indices=None`` means every row, in order.
        """
        grads = np.asarray(grads, dtype=np.float64)
        check_finite("table gradient", grads)
        if indices is None:
            rows = slice(None)
            count = self.n
        else:
            rows = np.asarray(indices, dtype=np.int64)
            count = len(rows)
        if grads.shape != (count, self.d_in):
            raise ShapeError(f"gradient shape {grads.shape} for {count} rows of width {self.d_in}")
        self.steps[rows] += 1
        t = self.steps[rows][:, None]
        m = beta1 * self.m[rows] + (1.0 - beta1) * grads
        v = beta2 * self.v[rows] + (1.0 - beta2) * (grads * grads)
        self.m[rows] = m
        self.v[rows] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        self.entries[rows] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        self.last_touched = count
        return self

    def accumulate_and_step(self, flat_index, grad, lr):
        """Adam step on a single row."""
        if not 0 <= flat_index < self.n:
            raise IndexError(f"table index {flat_index} out of range for {self.n} rows")
        return self.step_rows([flat_index], np.asarray(grad, dtype=np.float64)[None, :], lr)

    def apply_permutation(self, perm):
        """Return a new table whose row ``i`` is this table's row ``perm[i]``."""
        perm = np.asarray(perm)
        if not is_permutation(perm, self.n):
            raise ConfigError("apply_permutation needs a bijection of the row indices")
        other = CoordTable(self.entries[perm])
        other.m = self.m[perm]
        other.v = self.v[perm]
        other.steps = self.steps[perm]
        return other


def new_table(n, d_in, init="zero", rng=0, scale=DEFAULT_UNIFORM_SCALE, shape=None):
    """Create a table of ``n`` rows.

    ``init`` is ``"zero"``, ``"grid"`` (the normalized input lattice of
    ``shape``, which must multiply to ``n``) or ``"uniform"`` (``U(-scale, scale)``).
    """
    if n < 1 or d_in < 1:
        raise ConfigError(f"table needs n >= 1 and d_in >= 1, got n={n}, d_in={d_in}")
    if init == "zero":
        entries = np.zeros((n, d_in))
    elif init == "grid":
        if shape is None or int(np.prod(shape)) != n or len(shape) != d_in:
            raise ConfigError(f"grid init needs a {d_in}-D shape with {n} elements, got {shape}")
        entries = lattice(shape)
    elif init == "uniform":
        entries = make_rng(rng).uniform(-scale, scale, size=(n, d_in))
    else:
        raise ConfigError(f"unknown table init {init!r}; expected one of {TABLE_INITS}")
    return CoordTable(entries)
