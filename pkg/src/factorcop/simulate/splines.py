"""B-spline bases by the Cox-de Boor recursion on [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis with interior ``knots`` on ``[lo, hi]``.

    ``drop_first=True`` removes the first basis function, which is how
    regression code usually pairs a spline basis with a separate intercept.
    """

    degree: int
    knots: tuple
    lo: float = 0.0
    hi: float = 1.0
    drop_first: bool = True

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("spline degree must be nonnegative")
        k = tuple(float(t) for t in self.knots)
        if any(not (self.lo < t < self.hi) for t in k) or list(k) != sorted(k):
            raise ValueError("interior knots must be increasing and inside the boundary")
        object.__setattr__(self, "knots", k)

    @property
    def knot_vector(self) -> np.ndarray:
        p = self.degree
        return np.concatenate([[self.lo] * (p + 1), self.knots, [self.hi] * (p + 1)])

    @property
    def n_full(self) -> int:
        return len(self.knots) + self.degree + 1

    @property
    def dim(self) -> int:
        return self.n_full - int(self.drop_first)

    def full(self, x) -> np.ndarray:
        """All ``n_full`` basis functions at ``x``; rows sum to one."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < self.lo) | (x > self.hi)) or np.any(~np.isfinite(x)):
            raise ValueError(f"spline argument outside [{self.lo}, {self.hi}]")
        t = self.knot_vector
        m = t.size - 1
        # degree-0 indicators on half-open spans, with the right end closed
        b = np.zeros((x.size, m))
        for i in range(m):
            if t[i] < t[i + 1]:
                b[:, i] = (x >= t[i]) & (x < t[i + 1])
        last = np.flatnonzero(t[:-1] < t[1:])[-1]
        b[x == self.hi, last] = 1.0
        for p in range(1, self.degree + 1):
            nb = np.zeros((x.size, m - p))
            for i in range(m - p):
                d1 = t[i + p] - t[i]
                d2 = t[i + p + 1] - t[i + 1]
                if d1 > 0:
                    nb[:, i] += (x - t[i]) / d1 * b[:, i]
                if d2 > 0:
                    nb[:, i] += (t[i + p + 1] - x) / d2 * b[:, i + 1]
            b = nb
        return b

    def __call__(self, x) -> np.ndarray:
        b = self.full(x)
        return b[:, 1:] if self.drop_first else b


def bspline_basis(basis: SplineBasis, x) -> np.ndarray:
    return basis(x)
