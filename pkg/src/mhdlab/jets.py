"""Truncated Taylor series in time ("jets") over numpy arrays.

A jet stores normalized coefficients ``c[j] = f^(j)(t0) / j!`` along a
leading axis. Products and quotients use Cauchy recurrences, so any code
written with ``+ - * /`` and linear spatial operators (applied through
:func:`lin`) propagates exact time derivatives of a polynomial ODE system.
"""

import math

import numpy as np


class Jet:
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @classmethod
    def constant(cls, value, order):
        value = np.asarray(value, dtype=float)
        c = np.zeros((order + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def from_derivatives(cls, derivs):
        """Build from ``[f, D_t f, D_t^2 f, ...]``."""
        c = [np.asarray(d, dtype=float) / math.factorial(j) for j, d in enumerate(derivs)]
        return cls(np.stack(c))

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def shape(self):
        return self.c.shape[1:]

    def derivative(self, k):
        """k-th time derivative at the expansion point."""
        return math.factorial(k) * self.c[k]

    def derivatives(self):
        return [self.derivative(k) for k in range(self.order + 1)]

    def dt(self):
        """Jet of the time derivative; loses one order."""
        n = self.order
        if n == 0:
            return Jet(np.zeros_like(self.c))
        scale = np.arange(1, n + 1).reshape((n,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[1:] * scale)

    def truncate(self, order):
        return Jet(self.c[: order + 1])

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx])

    def _coerce(self, other):
        if isinstance(other, Jet):
            n = min(self.order, other.order)
            return self.c[: n + 1], other.c[: n + 1]
        other = np.asarray(other, dtype=float)
        pad = max(0, len(self.shape) - other.ndim)
        oc = np.zeros((self.order + 1,) + (1,) * pad + other.shape)
        oc[0] = other
        return self.c, oc

    def __add__(self, other):
        a, b = self._coerce(other)
        return Jet(a + b)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._coerce(other)
        return Jet(a - b)

    def __rsub__(self, other):
        a, b = self._coerce(other)
        return Jet(b - a)

    def __neg__(self):
        return Jet(-self.c)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(self.c * other)
        a, b = self._coerce(other)
        n = a.shape[0]
        out = [sum(a[j] * b[m - j] for j in range(m + 1)) for m in range(n)]
        return Jet(np.stack(out))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            return Jet(self.c / other)
        a, b = self._coerce(other)
        return Jet(_divide(a, b))

    def __rtruediv__(self, other):
        a, b = self._coerce(other)
        return Jet(_divide(b, a))

    def __pow__(self, k):
        if int(k) != k or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Jet.constant(np.ones(self.shape), self.order)
        for _ in range(int(k)):
            out = out * self
        return out

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.shape})"


def _divide(a, b):
    n = a.shape[0]
    q = []
    for m in range(n):
        acc = a[m] - sum(b[j] * q[m - j] for j in range(1, m + 1)) if m else a[0]
        q.append(acc / b[0])
    return np.stack(q)


def lin(fn, a, *args, **kwargs):
    """Apply a linear map to a plain array or coefficient-wise to a jet.

    ``fn`` must accept arrays with arbitrary leading batch axes.
    """
    if isinstance(a, Jet):
        return Jet(fn(a.c, *args, **kwargs))
    return fn(a, *args, **kwargs)


def value(a):
    """Zeroth coefficient of a jet, or the array itself."""
    return a.c[0] if isinstance(a, Jet) else a


def is_jet(a):
    return isinstance(a, Jet)
