"""Second-order forward-mode automatic differentiation.

An :class:`AD2` carries a value, a gradient and a Hessian with respect to a
fixed list of active variables.  Every field is a numpy array, so one AD2
object can represent the same expression evaluated at many points at once
(the leading axes are "batch" axes).
"""

from __future__ import annotations

import numpy as np


class NonDifferentiableError(ValueError):
    """Raised when an elementary function is evaluated outside its smooth domain."""


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class AD2:
    """Value, gradient and Hessian of a scalar expression.

    Parameters
    ----------
    val : ndarray, shape ``S``
    grad : ndarray, shape ``S + (n,)``
    hess : ndarray, shape ``S + (n, n)``
    """

    __slots__ = ("val", "grad", "hess")
    __array_priority__ = 1000

    def __init__(self, val, grad, hess):
        self.val = np.asarray(val, dtype=float)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @property
    def nvars(self) -> int:
        return self.grad.shape[-1]

    @classmethod
    def variables(cls, values) -> list["AD2"]:
        """Seed one active variable per entry of the last axis of ``values``."""
        values = np.asarray(values, dtype=float)
        shape, n = values.shape[:-1], values.shape[-1]
        eye = np.eye(n)
        zero_h = np.zeros(shape + (n, n))
        out = []
        for i in range(n):
            g = np.broadcast_to(eye[i], shape + (n,)).copy()
            out.append(cls(values[..., i], g, zero_h))
        return out

    def _lift(self, other) -> "AD2":
        if isinstance(other, AD2):
            return other
        c = np.broadcast_to(np.asarray(other, dtype=float), self.val.shape)
        return AD2(c, np.zeros(self.grad.shape), np.zeros(self.hess.shape))

    def _chain(self, f0, f1, f2) -> "AD2":
        # f0, f1, f2: value, first and second derivative of the outer function
        g = self.grad
        return AD2(
            f0,
            f1[..., None] * g,
            f1[..., None, None] * self.hess + f2[..., None, None] * _outer(g, g),
        )

    def __add__(self, other):
        if not isinstance(other, AD2):
            return AD2(self.val + np.asarray(other, dtype=float), self.grad, self.hess)
        return AD2(self.val + other.val, self.grad + other.grad, self.hess + other.hess)

    __radd__ = __add__

    def __neg__(self):
        return AD2(-self.val, -self.grad, -self.hess)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, AD2):
            c = np.asarray(other, dtype=float)
            return AD2(self.val * c, self.grad * c[..., None], self.hess * c[..., None, None])
        a, b = self, other
        return AD2(
            a.val * b.val,
            a.grad * b.val[..., None] + b.grad * a.val[..., None],
            a.hess * b.val[..., None, None]
            + b.hess * a.val[..., None, None]
            + _outer(a.grad, b.grad)
            + _outer(b.grad, a.grad),
        )

    __rmul__ = __mul__

    def reciprocal(self) -> "AD2":
        v = self.val
        if np.any(v == 0):
            raise NonDifferentiableError(f"division by zero at index {_first(v == 0)}")
        return self._chain(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def __truediv__(self, other):
        if not isinstance(other, AD2):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, AD2):
            return exp(log(self) * p)
        p = float(p)
        v = self.val
        if p == 0.0:
            return self._lift(1.0)
        if p == 1.0:
            return self
        if p.is_integer():
            if p < 0 and np.any(v == 0):
                raise NonDifferentiableError(f"negative power of zero at index {_first(v == 0)}")
            d1 = p * v ** (p - 1)
            d2 = p * (p - 1) * v ** (p - 2) if p != 2.0 else np.full_like(v, 2.0)
        else:
            if np.any(v <= 0):
                raise NonDifferentiableError(
                    f"non-integer power of non-positive base at index {_first(v <= 0)}"
                )
            d1 = p * v ** (p - 1)
            d2 = p * (p - 1) * v ** (p - 2)
        return self._chain(v**p, d1, d2)

    def __repr__(self):
        return f"AD2(val={self.val!r})"


def _first(mask):
    idx = np.argwhere(np.atleast_1d(mask))
    return tuple(int(i) for i in idx[0]) if len(idx) else ()


def sin(a):
    if not isinstance(a, AD2):
        return np.sin(a)
    s, c = np.sin(a.val), np.cos(a.val)
    return a._chain(s, c, -s)


def cos(a):
    if not isinstance(a, AD2):
        return np.cos(a)
    s, c = np.sin(a.val), np.cos(a.val)
    return a._chain(c, -s, -c)


def exp(a):
    if not isinstance(a, AD2):
        return np.exp(a)
    e = np.exp(a.val)
    return a._chain(e, e, e)


def log(a):
    if not isinstance(a, AD2):
        return np.log(a)
    v = a.val
    if np.any(v <= 0):
        raise NonDifferentiableError(f"log of non-positive value at index {_first(v <= 0)}")
    return a._chain(np.log(v), 1.0 / v, -1.0 / v**2)


def sqrt(a):
    if not isinstance(a, AD2):
        return np.sqrt(a)
    v = a.val
    if np.any(v <= 0):
        raise NonDifferentiableError(f"sqrt not differentiable at index {_first(v <= 0)}")
    r = np.sqrt(v)
    return a._chain(r, 0.5 / r, -0.25 / (r * v))


def power(a, p):
    if not isinstance(a, AD2):
        return np.power(a, p)
    return a**p
