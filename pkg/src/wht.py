"""Order-n 2D Walsh-Hadamard bases, the fast transform and the low-rank projection.

An order-n plan has n*n flattened bases ``B[i, j] = outer(W[i], W[j]).ravel()``
where ``W`` is the n x n Walsh matrix in sequency order (row ``s`` has ``s``
sign changes).  Signals of ``L <= n*n`` tokens are zero-padded to ``n*n`` rows
before projecting and truncated again after the reverse projection.

Both directions are scaled by ``1/n`` so the full set of bases is orthonormal:
``reverse_project(project(x))`` is the identity when every base is selected.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from src.errors import SelectionError, ShapeError
from src.tensor_core import as_matrix, frozen, matmul

log = logging.getLogger(__name__)


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(v, bits):
    out = 0
    for _ in range(bits):
        out = (out << 1) | (v & 1)
        v >>= 1
    return out


def _gray_decode(g):
    b = g
    g >>= 1
    while g:
        b ^= g
        g >>= 1
    return b


def sequency_ordering(n):
    """Map natural (Hadamard) row index -> sequency index, for an order-n transform."""
    bits = n.bit_length() - 1
    return tuple(_gray_decode(_bit_reverse(h, bits)) for h in range(n))


@dataclass(frozen=True, eq=False)
class WhtPlan:
    """Precomputed geometry for an order-n 2D WHT over ``signal_len`` tokens."""

    n: int
    signal_len: int
    ordering: tuple = field(repr=False)

    def __post_init__(self):
        if not _is_power_of_two(self.n):
            raise ValueError(f"WHT order must be a power of two, got {self.n}")
        if not 1 <= self.signal_len <= self.n * self.n:
            raise ShapeError(
                f"signal length {self.signal_len} does not fit an order-{self.n} "
                f"plan ({self.n * self.n} slots)"
            )
        if sorted(self.ordering) != list(range(self.n)):
            raise ValueError("ordering must be a permutation of 0..n-1")

    @property
    def padded_len(self):
        return self.n * self.n

    @property
    def norm_scale(self):
        return 1.0 / self.n

    @property
    def natural_to_sequency(self):
        return np.asarray(self.ordering, dtype=np.intp)


def make_plan(signal_len, n=None):
    """Build a plan; ``n`` defaults to the smallest power of two with ``n*n >= signal_len``."""
    if n is None:
        n = 1
        while n * n < signal_len:
            n *= 2
    return WhtPlan(n=n, signal_len=signal_len, ordering=sequency_ordering(n))


@dataclass(frozen=True, eq=False)
class FlatBase:
    """A flattened 2D base: ``values`` has length n*n and holds only +1/-1."""

    i: int
    j: int
    values: np.ndarray = field(repr=False)


@lru_cache(maxsize=None)
def walsh_matrix(n):
    """Sequency-ordered n x n Walsh matrix as read-only int64."""
    h = np.ones((1, 1), dtype=np.int64)
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    order = np.asarray(sequency_ordering(n), dtype=np.intp)
    w = np.empty_like(h)
    w[order] = h
    w.flags.writeable = False
    return w


def build_flat_bases(plan):
    """All n*n flattened bases, ordered by (i, j) row-major; (0, 0) is the DC base."""
    w = walsh_matrix(plan.n)
    bases = []
    for i in range(plan.n):
        for j in range(plan.n):
            values = np.outer(w[i], w[j]).ravel().astype(np.int8)
            values.flags.writeable = False
            bases.append(FlatBase(i=i, j=j, values=values))
    return bases


def _butterfly(a, axis):
    """Unnormalized Hadamard transform along ``axis`` in natural order."""
    a = np.moveaxis(np.asarray(a, dtype=np.float64), axis, -1)
    n = a.shape[-1]
    lead = a.shape[:-1]
    h = 1
    while h < n:
        y = a.reshape(*lead, n // (2 * h), 2, h)
        lo = y[..., 0, :]
        hi = y[..., 1, :]
        a = np.stack((lo + hi, lo - hi), axis=-2).reshape(*lead, n)
        h *= 2
    return np.moveaxis(a, -1, axis)


def _forward_axis(a, plan, axis):
    nat = _butterfly(a, axis)
    nat = np.moveaxis(nat, axis, -1)
    out = np.empty_like(nat)
    out[..., plan.natural_to_sequency] = nat
    return np.moveaxis(out, -1, axis)


def _inverse_axis(c, plan, axis):
    c = np.moveaxis(np.asarray(c, dtype=np.float64), axis, -1)
    nat = c[..., plan.natural_to_sequency]
    return _butterfly(np.moveaxis(nat, -1, axis), axis)


def fast_wht_1d(v, plan):
    """Unnormalized 1D WHT of a length-n vector, returned in sequency order."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != plan.n:
        raise ShapeError(f"expected a vector of length {plan.n}, got shape {v.shape}")
    return _forward_axis(v, plan, 0)


def _index_pairs(bases, plan):
    """Accept FlatBase objects, (i, j) pairs or a selection with ``indices`` and ``n``.

    A selection made for another transform order names different functions, so it is rejected.
    """
    order = getattr(bases, "n", None)
    if order is not None and order != plan.n:
        raise SelectionError(
            f"selection is for an order-{order} transform but the plan has order {plan.n}"
        )
    if hasattr(bases, "indices"):
        bases = bases.indices
    pairs = [(b.i, b.j) if isinstance(b, FlatBase) else (int(b[0]), int(b[1])) for b in bases]
    if not pairs:
        raise SelectionError("base list is empty")
    for i, j in pairs:
        if not (0 <= i < plan.n and 0 <= j < plan.n):
            raise SelectionError(f"base ({i}, {j}) is outside the order-{plan.n} grid")
    return pairs


def _split_samples(x, plan):
    """Reshape (B*L, C) rows into (B, L, C) sample blocks."""
    rows, cols = x.shape
    if rows < plan.signal_len or rows % plan.signal_len:
        raise ShapeError(
            f"input has {rows} rows, expected a multiple of the plan's "
            f"signal length {plan.signal_len} (padded length {plan.padded_len})"
        )
    return x.reshape(rows // plan.signal_len, plan.signal_len, cols)


def _padded_grid(x, plan):
    blocks = _split_samples(x, plan)
    batch, length, cols = blocks.shape
    padded = np.zeros((batch, plan.padded_len, cols), dtype=np.float64)
    padded[:, :length, :] = blocks
    return padded.reshape(batch, plan.n, plan.n, cols)


def transform_2d(x, plan):
    """Normalized 2D coefficient grid, shape (B, n, n, C), for every sample and channel."""
    grid = _padded_grid(as_matrix(x, "x"), plan)
    coeffs = _forward_axis(_forward_axis(grid, plan, 1), plan, 2)
    return coeffs * plan.norm_scale


def spectrum(x, plan):
    """n x n map of squared normalized coefficients summed over samples and channels."""
    coeffs = transform_2d(x, plan)
    return frozen(np.square(coeffs).sum(axis=(0, 3)))


def basis_matrix(bases, plan):
    """Explicit n*n x r matrix whose columns are the selected flattened bases."""
    pairs = _index_pairs(bases, plan)
    w = walsh_matrix(plan.n)
    cols = [np.outer(w[i], w[j]).ravel() for i, j in pairs]
    return frozen(np.stack(cols, axis=1).astype(np.float64))


def project(x, bases, plan, method="fast"):
    """Project token rows onto the selected bases: ``s * P.T @ x_padded`` per sample.

    ``x`` holds B samples of L rows each; the result holds B blocks of r rows.
    """
    x = as_matrix(x, "x")
    pairs = _index_pairs(bases, plan)
    if method == "naive":
        p = basis_matrix(pairs, plan)
        blocks = _split_samples(x, plan)
        out = []
        for block in blocks:
            padded = np.zeros((plan.padded_len, block.shape[1]), dtype=np.float64)
            padded[: plan.signal_len] = block
            out.append(matmul(p.T, padded) * plan.norm_scale)
        return frozen(np.concatenate(out, axis=0))
    if method != "fast":
        raise ValueError(f"unknown projection method {method!r}")
    coeffs = transform_2d(x, plan)
    ii = np.fromiter((p[0] for p in pairs), dtype=np.intp)
    jj = np.fromiter((p[1] for p in pairs), dtype=np.intp)
    picked = coeffs[:, ii, jj, :]
    return frozen(picked.reshape(-1, x.shape[1]))


def reverse_project(xhat, bases, plan, method="fast"):
    """Map r-row coefficient blocks back to L token rows: ``s * P @ xhat``, padding removed."""
    xhat = as_matrix(xhat, "xhat")
    pairs = _index_pairs(bases, plan)
    r = len(pairs)
    rows, cols = xhat.shape
    if rows % r:
        raise ShapeError(f"coefficient matrix has {rows} rows, expected a multiple of rank {r}")
    batch = rows // r
    blocks = xhat.reshape(batch, r, cols)
    if method == "naive":
        p = basis_matrix(pairs, plan)
        out = [
            (matmul(p, block) * plan.norm_scale)[: plan.signal_len]
            for block in blocks
        ]
        return frozen(np.concatenate(out, axis=0))
    if method != "fast":
        raise ValueError(f"unknown projection method {method!r}")
    grid = np.zeros((batch, plan.n, plan.n, cols), dtype=np.float64)
    for k, (i, j) in enumerate(pairs):
        grid[:, i, j, :] = blocks[:, k, :]
    spatial = _inverse_axis(_inverse_axis(grid, plan, 1), plan, 2)
    spatial = spatial.reshape(batch, plan.padded_len, cols)[:, : plan.signal_len, :]
    return frozen((spatial * plan.norm_scale).reshape(-1, cols))
