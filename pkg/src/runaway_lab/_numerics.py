"""Compensated summation used wherever run-to-run bit equality matters."""

import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def kahan_add(s, c, x):
    # Neumaier variant: robust when |x| > |s|
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@numba.njit(cache=True)
def kahan_sum(x):
    s = 0.0
    c = 0.0
    for i in range(x.shape[0]):
        s, c = kahan_add(s, c, x[i])
    return s + c


class CompensatedSum:
    """Running sum carried as a (hi, lo) pair, like ``math.fsum`` but incremental."""

    __slots__ = ("_s", "_c")

    def __init__(self, value=0.0):
        self._s = float(value)
        self._c = 0.0

    def add(self, x):
        x = float(x)
        t = self._s + x
        if abs(self._s) >= abs(x):
            self._c += (self._s - t) + x
        else:
            self._c += (x - t) + self._s
        self._s = t

    def add_array(self, arr):
        # fsum of the batch first so the batch order cannot leak into the result
        self.add(math.fsum(np.asarray(arr, dtype=float).ravel()))

    @property
    def value(self):
        return self._s + self._c

    def __float__(self):
        return self.value

    def __repr__(self):
        return f"CompensatedSum({self.value!r})"
