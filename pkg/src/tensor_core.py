"""Dense-matrix substrate: validation, deterministic matmul, RNG and the LBPW file format.

Feature maps are stored tokens-by-channels (L rows, C columns), so every
projection acts on the row dimension.  With that layout a linear layer reads
``y = x @ w.T``, ``g_w = g_y.T @ x`` and ``g_x = g_y @ w``.

LBPW layout (little-endian)::

    4s  magic  b"LBPW"
    u32 version (1)
    u32 rows
    u32 cols
    f32 payload, rows * cols values, row-major
"""

import logging
import os
import struct

import numpy as np

from src.errors import ShapeError, TensorFormatError

log = logging.getLogger(__name__)

Matrix = np.ndarray  # 2-D, float64, read-only

MAGIC = b"LBPW"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_MAX_ELEMENTS = 1 << 31


def as_matrix(data, name="matrix"):
    """Return ``data`` as a read-only 2-D float64 array with at least one row and column."""
    m = np.array(data, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must have rows >= 1 and cols >= 1, got shape {m.shape}")
    m.flags.writeable = False
    return m


def frozen(m):
    """Mark a freshly computed array read-only and return it."""
    m.flags.writeable = False
    return m


def matmul(a, b):
    """Matrix product with a fixed accumulation order.

    Every output element is summed sequentially over the inner index,
    ``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...``, so the result is
    bitwise identical to a plain triple loop and independent of BLAS.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += np.multiply.outer(a[:, k], b[k, :])
    return frozen(out)


class Rng:
    """Seeded, splittable counter-based generator (Philox)."""

    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self._key = tuple(_key)
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self._key])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, key):
        """Derive an independent child stream; the same key always yields the same stream."""
        return Rng(self.seed, self._key + (int(key),))

    def normal(self, shape, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape)

    def uniform(self, shape, low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self._key})"


def save_tensor(m, path):
    """Write ``m`` as an LBPW file (values stored as f32)."""
    m = as_matrix(m)
    rows, cols = m.shape
    with np.errstate(over="ignore"):
        stored = np.ascontiguousarray(m, dtype="<f4")
    overflow = np.isfinite(m) & ~np.isfinite(stored)
    if overflow.any():
        i, j = np.argwhere(overflow)[0]
        raise TensorFormatError(
            f"value {m[i, j]!r} at ({i}, {j}) is outside the f32 range of an LBPW file"
        )
    payload = stored.tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, rows, cols))
        f.write(payload)
    log.debug("saved %dx%d tensor to %s", rows, cols, path)


def load_tensor(path):
    """Read an LBPW file into a read-only float64 matrix."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if rows < 1 or cols < 1:
        raise TensorFormatError(f"{path}: invalid dims {rows}x{cols}")
    if rows * cols >= _MAX_ELEMENTS:
        raise TensorFormatError(f"{path}: dims {rows}x{cols} overflow the element limit")
    expected = rows * cols * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(rows, cols)
    log.debug("loaded %dx%d tensor from %s", rows, cols, os.path.basename(path))
    return frozen(data)
