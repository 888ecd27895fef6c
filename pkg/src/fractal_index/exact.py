"""Exact integer and rational helpers.

Two tools live here:

* small dense/sparse linear algebra over :class:`fractions.Fraction`
  (solves, sparse Gaussian elimination, leading principal minors);
* :class:`BigIntArray`, a vectorised integer array with exact semantics.

``BigIntArray`` keeps every entry twice: its residue modulo ``2**64`` (numpy
int64 arithmetic, which wraps) and a float64 approximation with a tracked
absolute error bound.  While the bound stays below ``2**61`` the true integer is
the unique value congruent to the residue and within the bound of the
approximation, so equality and sign tests are exact.  When an operation would
push the bound past that limit the array converts itself to Python ints in an
object array and carries on exactly, just slower.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BigIntArray",
    "as_fraction",
    "fraction_matrix",
    "solve",
    "inverse",
    "leading_minors",
    "lcm_denominator",
]

_TWO64 = float(2**64)
_TWO63 = float(2**63)
_LIMIT = float(2**61)
_U = 2.0**-53


def as_fraction(x) -> Fraction:
    """Parse ints, Fractions and ``"p/q"`` strings into a Fraction.

    Floats are rejected: silently converting them would defeat the point of
    working exactly.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not rational numbers")
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"expected an exact rational, got {type(x).__name__}: {x!r}")


def fraction_matrix(rows: Iterable[Iterable]) -> list[list[Fraction]]:
    return [[as_fraction(x) for x in row] for row in rows]


def lcm_denominator(values: Iterable[Fraction]) -> int:
    out = 1
    for v in values:
        d = v.denominator
        out = out * d // _gcd(out, d)
    return out


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def solve(a: Sequence[Sequence[Fraction]], b: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    """Solve ``a @ x = b`` exactly; ``b`` is a list of rows (n x k).

    Raises ``ZeroDivisionError`` if ``a`` is singular.
    """
    n = len(a)
    k = len(b[0]) if n else 0
    aug = [list(a[i]) + list(b[i]) for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("singular matrix")
        if piv != col:
            aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        row = aug[col]
        if p != 1:
            row = [x / p for x in row]
            aug[col] = row
        for r in range(n):
            if r == col:
                continue
            f = aug[r][col]
            if f:
                other = aug[r]
                aug[r] = [x - f * y for x, y in zip(other, row)]
    return [row[n:n + k] for row in aug]


def inverse(a: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    n = len(a)
    eye = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    return solve(a, eye)


def leading_minors(a: Sequence[Sequence[Fraction]]) -> list[Fraction]:
    """All leading principal minors, by exact elimination without pivoting."""
    n = len(a)
    m = [list(r) for r in a]
    out = []
    det = Fraction(1)
    for k in range(n):
        p = m[k][k]
        det *= p
        out.append(det)
        if p == 0:
            # remaining minors need the full determinant; fall back per size
            for j in range(k + 1, n):
                out.append(_det([row[: j + 1] for row in a[: j + 1]]))
            return out
        for i in range(k + 1, n):
            f = m[i][k] / p
            if f:
                m[i] = [x - f * y for x, y in zip(m[i], m[k])]
    return out


def _det(a: Sequence[Sequence[Fraction]]) -> Fraction:
    n = len(a)
    m = [list(r) for r in a]
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        p = m[col][col]
        det *= p
        for r in range(col + 1, n):
            f = m[r][col] / p
            if f:
                m[r] = [x - f * y for x, y in zip(m[r], m[col])]
    return det


def _wrap_float_to_i64(x: np.ndarray) -> np.ndarray:
    """Integer-valued floats reduced mod 2**64 into int64 (exact)."""
    r = np.fmod(x, _TWO64)
    r = np.where(r >= _TWO63, r - _TWO64, r)
    r = np.where(r < -_TWO63, r + _TWO64, r)
    return r.astype(np.int64)


_to_pyint = np.frompyfunc(int, 1, 1)


def _wrap_int(k: int) -> np.int64:
    k %= 2**64
    if k >= 2**63:
        k -= 2**64
    return np.int64(k)


class BigIntArray:
    """Exact integer ndarray backed by (residue mod 2**64, float approximation).

    Construct from an integer numpy array or nested Python ints.  Supports
    ``+ - *`` (array or Python int operands), unary minus, indexing, reshape,
    ``sum``, and exact comparisons through :meth:`equals` and :meth:`sign`.
    """

    __slots__ = ("res", "approx", "err", "obj")

    def __init__(self, values, *, _parts=None):
        if _parts is not None:
            self.res, self.approx, self.err, self.obj = _parts
            return
        arr = np.asarray(values)
        if arr.dtype == object:
            self._set_object(arr)
            return
        if arr.dtype.kind not in "iu":
            raise TypeError(f"BigIntArray needs integers, got dtype {arr.dtype}")
        arr = arr.astype(np.int64)
        self.res = arr
        self.approx = arr.astype(np.float64)
        big = float(np.abs(self.approx).max()) if arr.size else 0.0
        self.err = big * _U if big > 2.0**53 else 0.0
        self.obj = None

    def _set_object(self, arr: np.ndarray) -> None:
        self.obj = arr
        self.res = self.approx = None
        self.err = 0.0

    @classmethod
    def from_object(cls, arr) -> "BigIntArray":
        out = cls.__new__(cls)
        out._set_object(np.asarray(arr, dtype=object))
        return out

    @classmethod
    def zeros(cls, shape) -> "BigIntArray":
        return cls(np.zeros(shape, dtype=np.int64))

    # -- shape plumbing -------------------------------------------------
    @property
    def shape(self):
        return self.obj.shape if self.obj is not None else self.res.shape

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def exact_mode(self) -> bool:
        """True once the array has fallen back to Python integers."""
        return self.obj is not None

    def __len__(self):
        return self.shape[0]

    def _map(self, fn) -> "BigIntArray":
        if self.obj is not None:
            return BigIntArray.from_object(np.asarray(fn(self.obj), dtype=object))
        return BigIntArray(None, _parts=(np.asarray(fn(self.res)), np.asarray(fn(self.approx)), self.err, None))

    def __getitem__(self, idx) -> "BigIntArray":
        return self._map(lambda a: a[idx])

    def reshape(self, *shape) -> "BigIntArray":
        return self._map(lambda a: a.reshape(*shape))

    def transpose(self, *axes) -> "BigIntArray":
        return self._map(lambda a: a.transpose(*axes))

    def take(self, indices, axis=None) -> "BigIntArray":
        return self._map(lambda a: np.take(a, indices, axis=axis))

    @staticmethod
    def concatenate(parts: Sequence["BigIntArray"], axis=0) -> "BigIntArray":
        if any(p.obj is not None for p in parts):
            return BigIntArray.from_object(np.concatenate([p.to_object() for p in parts], axis=axis))
        return BigIntArray(None, _parts=(
            np.concatenate([p.res for p in parts], axis=axis),
            np.concatenate([p.approx for p in parts], axis=axis),
            max(p.err for p in parts),
            None,
        ))

    @staticmethod
    def stack(parts: Sequence["BigIntArray"], axis=0) -> "BigIntArray":
        return BigIntArray.concatenate([p._map(lambda a: np.expand_dims(a, axis)) for p in parts], axis=axis)

    # -- conversion -----------------------------------------------------
    def to_object(self) -> np.ndarray:
        """Exact values as an object array of Python ints."""
        if self.obj is not None:
            return self.obj
        base = np.rint(self.approx)
        delta = self.res - _wrap_float_to_i64(base)  # wraps to the true offset
        shape = self.res.shape
        out = np.asarray(_to_pyint(base.reshape(-1)), dtype=object) + delta.reshape(-1).astype(object)
        return np.asarray(out, dtype=object).reshape(shape)

    def to_float(self) -> np.ndarray:
        """Correctly rounded floats (up to the final rounding)."""
        if self.obj is not None:
            return np.array([float(v) for v in self.obj.ravel()], dtype=np.float64).reshape(self.obj.shape)
        base = np.rint(self.approx)
        delta = self.res - _wrap_float_to_i64(base)
        return base + delta.astype(np.float64)

    def tolist(self):
        return self.to_object().tolist()

    def item(self, idx=None) -> int:
        v = self[idx] if idx is not None else self
        o = v.to_object()
        return int(o.reshape(-1)[0])

    # -- arithmetic -----------------------------------------------------
    @staticmethod
    def _coerce(other):
        if isinstance(other, BigIntArray):
            return other
        if isinstance(other, (int, np.integer)):
            return int(other)
        return BigIntArray(other)

    def _finish(self, res, approx, err, exact_fn):
        big = float(np.abs(approx).max()) if approx.size else 0.0
        err = err + big * _U
        if err >= _LIMIT or not np.isfinite(err) or big >= 2.0**1000:
            return BigIntArray.from_object(exact_fn())
        return BigIntArray(None, _parts=(res, approx, err, None))

    def __add__(self, other):
        other = self._coerce(other)
        if isinstance(other, int):
            if self.obj is not None:
                return BigIntArray.from_object(self.obj + other)
            return self._finish(self.res + _wrap_int(other), self.approx + float(other),
                                self.err + abs(float(other)) * _U,
                                lambda: self.to_object() + other)
        if self.obj is not None or other.obj is not None:
            return BigIntArray.from_object(self.to_object() + other.to_object())
        return self._finish(self.res + other.res, self.approx + other.approx, self.err + other.err,
                            lambda: self.to_object() + other.to_object())

    __radd__ = __add__

    def __neg__(self):
        if self.obj is not None:
            return BigIntArray.from_object(-self.obj)
        return BigIntArray(None, _parts=(-self.res, -self.approx, self.err, None))

    def __sub__(self, other):
        other = self._coerce(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if isinstance(other, int):
            if self.obj is not None:
                return BigIntArray.from_object(self.obj * other)
            f = float(other)
            err = self.err * abs(f) + (abs(f) * _U * self._maxabs() if abs(other) > 2**53 else 0.0)
            return self._finish(self.res * _wrap_int(other), self.approx * f, err,
                                lambda: self.to_object() * other)
        if self.obj is not None or other.obj is not None:
            return BigIntArray.from_object(self.to_object() * other.to_object())
        ma, mb = self._maxabs(), other._maxabs()
        err = self.err * (mb + other.err) + other.err * ma
        return self._finish(self.res * other.res, self.approx * other.approx, err,
                            lambda: self.to_object() * other.to_object())

    __rmul__ = __mul__

    def matmul_int(self, mat) -> "BigIntArray":
        """``self @ mat`` for a 2-d array and a small matrix of Python ints."""
        mat = [[int(x) for x in row] for row in mat]
        if self.obj is not None or max((abs(x) for row in mat for x in row), default=0) >= 2**53:
            m_obj = np.array(mat, dtype=object).reshape(len(mat), -1)
            return BigIntArray.from_object(self.to_object().dot(m_obj))
        m_res = np.array(mat, dtype=np.int64).reshape(len(mat), -1)
        m_f = m_res.astype(np.float64)
        approx = self.approx @ m_f
        abs_m = np.abs(m_f)
        k = m_res.shape[0]
        # row sums of |x| |m| are at most max|x| times the largest column sum of |m|
        bound = self._maxabs() * float(abs_m.sum(axis=0).max())
        if self.err == 0 and bound < 2.0**53:
            # every partial sum is an integer below 2**53, so the float product is exact
            return BigIntArray(None, _parts=(approx.astype(np.int64), approx, 0.0, None))
        # float matmul of k terms: error below 2 k u sum |x||m|
        err = self.err * float(abs_m.sum(axis=0).max()) + 2 * k * _U * bound
        res = np.zeros(approx.shape, dtype=np.int64)
        for i in range(k):
            if m_res[i].any():
                res += self.res[:, i, None] * m_res[i]
        return self._finish(res, approx, err, lambda: self.to_object().dot(np.array(mat, dtype=object)))

    def _maxabs(self) -> float:
        if self.obj is not None:
            return float(max((abs(int(v)) for v in self.obj.ravel()), default=0))
        return float(np.abs(self.approx).max()) if self.approx.size else 0.0

    def sum(self, axis=None) -> "BigIntArray":
        if self.obj is not None:
            s = self.obj.sum(axis=axis)
            return BigIntArray.from_object(np.asarray(s, dtype=object))
        n = self.res.size if axis is None else self.res.shape[axis]
        absum = float(np.abs(self.approx).sum(axis=axis).max()) if self.approx.size else 0.0
        err = n * self.err + n * _U * absum
        res = np.asarray(self.res.sum(axis=axis))
        approx = np.asarray(self.approx.sum(axis=axis))
        return self._finish(res, approx, err, lambda: np.asarray(self.to_object().sum(axis=axis), dtype=object))

    # -- exact comparisons ----------------------------------------------
    def sign(self) -> np.ndarray:
        """Elementwise sign (-1, 0, 1) as an int array."""
        if self.obj is not None:
            return np.vectorize(lambda v: (v > 0) - (v < 0), otypes=[np.int64])(self.obj)
        sure = np.abs(self.approx) > self.err + 0.5
        small = np.sign(self.res)
        return np.where(sure, np.sign(self.approx).astype(np.int64), small)

    def equals(self, other) -> np.ndarray:
        """Elementwise exact equality as a bool array."""
        other = self._coerce(other)
        if isinstance(other, int):
            other = BigIntArray(np.full(self.shape, 0, dtype=np.int64)) + other
        if self.obj is not None or other.obj is not None:
            return np.asarray(self.to_object() == other.to_object(), dtype=bool)
        # residues agree mod 2**64 and the values are within 2**62: identical
        close = np.abs(self.approx - other.approx) < 2.0**62
        return (self.res == other.res) & close

    def all_equal(self, other) -> bool:
        return bool(np.all(self.equals(other)))

    def __repr__(self):
        mode = "object" if self.obj is not None else f"wide(err<={self.err:.3g})"
        return f"BigIntArray(shape={self.shape}, mode={mode})"
