"""Dense multivariate polynomials with exact differentiation.

Small helper used for perturbation recipes and gauge vector fields: a
polynomial is a list of exponent rows plus coefficients, evaluated in a
vectorized way over batches of points. Differentiation is exact, which keeps
analytic first derivatives of the built-in fields free of stencil noise.
"""

from __future__ import annotations

import itertools

import numpy as np


def multi_indices(nvars: int, max_degree: int) -> np.ndarray:
    """All exponent multi-indices with total degree <= max_degree, graded order."""
    rows = []
    for deg in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), deg):
            row = [0] * nvars
            for v in combo:
                row[v] += 1
            rows.append(row)
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), nvars)


def monomial_matrix(X: np.ndarray, expo: np.ndarray) -> np.ndarray:
    """Vandermonde-style matrix of monomial values, (npoints, nmonomials).

    Powers are built by cumulative multiplication per variable, which is much
    faster than float exponentiation on large batches.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    out = np.ones((m, expo.shape[0]))
    for v in range(X.shape[1]):
        dmax = int(expo[:, v].max(initial=0))
        if dmax == 0:
            continue
        pows = np.empty((dmax + 1, m))
        pows[0] = 1.0
        col = X[:, v]
        for d in range(1, dmax + 1):
            pows[d] = pows[d - 1] * col
        out *= pows[expo[:, v]].T
    return out


def stack_on_basis(polys, expo: np.ndarray) -> np.ndarray:
    """Coefficient matrix (nmonomials, npolys) of polynomials on a shared basis.

    Lets a family of related polynomials be evaluated with a single
    ``monomial_matrix`` product instead of one pass per polynomial.
    """
    lookup = {tuple(row): idx for idx, row in enumerate(expo.tolist())}
    C = np.zeros((expo.shape[0], len(polys)))
    for j, p in enumerate(polys):
        for row, c in zip(p.expo.tolist(), p.coef):
            try:
                C[lookup[tuple(row)], j] = c
            except KeyError:
                raise ValueError("polynomial has a monomial outside the shared basis")
    return C


class Poly:
    """Polynomial in ``nvars`` variables: sum of coef * prod(x_v ** expo_v)."""

    __slots__ = ("nvars", "expo", "coef")

    def __init__(self, nvars: int, expo, coef):
        expo = np.asarray(expo, dtype=np.int64).reshape(-1, nvars)
        coef = np.asarray(coef, dtype=float).reshape(-1)
        if expo.shape[0] != coef.shape[0]:
            raise ValueError("exponent rows and coefficients disagree in length")
        # canonicalize: merge duplicate rows, drop exact zeros
        if expo.shape[0]:
            order = np.lexsort(expo.T[::-1])
            expo, coef = expo[order], coef[order]
            keep_expo, keep_coef = [], []
            for e, c in zip(expo, coef):
                if keep_expo and np.array_equal(keep_expo[-1], e):
                    keep_coef[-1] += c
                else:
                    keep_expo.append(e)
                    keep_coef.append(c)
            expo = np.asarray(keep_expo, dtype=np.int64)
            coef = np.asarray(keep_coef, dtype=float)
            nz = coef != 0.0
            expo, coef = expo[nz], coef[nz]
        self.nvars = nvars
        self.expo = expo.reshape(-1, nvars)
        self.coef = coef

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars, np.zeros((0, nvars), dtype=np.int64), np.zeros(0))

    @classmethod
    def monomial(cls, nvars: int, exponents, coef: float = 1.0) -> "Poly":
        return cls(nvars, np.asarray(exponents, dtype=np.int64).reshape(1, nvars), [coef])

    @classmethod
    def random(cls, nvars: int, degree: int, rng: np.random.Generator) -> "Poly":
        """Standard-normal coefficients on every monomial of degree <= degree."""
        expo = multi_indices(nvars, degree)
        return cls(nvars, expo, rng.standard_normal(expo.shape[0]))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        pts = X.reshape(-1, self.nvars)
        if self.coef.size == 0:
            out = np.zeros(pts.shape[0])
        else:
            out = monomial_matrix(pts, self.expo) @ self.coef
        return out[0] if squeeze else out.reshape(X.shape[:-1])

    def diff(self, axis: int) -> "Poly":
        if self.coef.size == 0:
            return Poly.zero(self.nvars)
        keep = self.expo[:, axis] > 0
        expo = self.expo[keep].copy()
        coef = self.coef[keep] * expo[:, axis]
        expo[:, axis] -= 1
        return Poly(self.nvars, expo, coef)

    def laplacian(self) -> "Poly":
        out = Poly.zero(self.nvars)
        for axis in range(self.nvars):
            out = out + self.diff(axis).diff(axis)
        return out

    def degree(self) -> int:
        if self.coef.size == 0:
            return 0
        return int(self.expo.sum(axis=1).max())

    def is_zero(self) -> bool:
        return self.coef.size == 0

    def __add__(self, other: "Poly") -> "Poly":
        return Poly(
            self.nvars,
            np.vstack([self.expo, other.expo]),
            np.concatenate([self.coef, other.coef]),
        )

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, self.expo, -self.coef)

    def __mul__(self, other: "Poly") -> "Poly":
        if self.coef.size == 0 or other.coef.size == 0:
            return Poly.zero(self.nvars)
        expo = (self.expo[:, None, :] + other.expo[None, :, :]).reshape(-1, self.nvars)
        coef = (self.coef[:, None] * other.coef[None, :]).reshape(-1)
        return Poly(self.nvars, expo, coef)

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def scale(self, factor: float) -> "Poly":
        return Poly(self.nvars, self.expo, self.coef * factor)

    def to_dict(self) -> dict:
        return {
            "nvars": self.nvars,
            "expo": self.expo.tolist(),
            "coef": self.coef.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Poly":
        return cls(data["nvars"], data["expo"], data["coef"])
