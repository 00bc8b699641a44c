"""Spectral oracle for one coordinate of spherical Brownian motion.

The coordinate x_i of Brownian motion on S^n is the Jacobi diffusion with
generator L = 1/2 (1 - x^2) d^2 - (n/2) x d, reversible for
nu_n(dt) = c_n (1 - t^2)^{n/2 - 1} dt on [-1, 1]. Its semigroup Q_t is diagonal
in the nu_n-orthonormal Jacobi polynomials p_k (symmetric parameter
alpha = n/2 - 1) with eigenvalues lambda_k = k (k + n - 1) / 2.

The p_k are built by the Stieltjes procedure on the Gauss-Jacobi rule itself,
so normalization, quadrature and recurrence all come from one discrete measure.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import roots_jacobi

from core.logger import Logger

DEFAULT_QUADRATURE_ORDER = 128
DEFAULT_TRUNCATION = 64
MAX_TRUNCATION = 256
TAIL_TOLERANCE = 1e-10
SHRINK_DELTA = 1e-9


class PositivityError(ArithmeticError):
    """A truncated semigroup value that must be positive is not."""


@dataclass(frozen=True)
class ZonalFunction:
    """g: [-1, 1] -> R, vectorized. `derivative` is optional (needed by Fisher information)."""

    fn: Callable
    name: str = "g"
    derivative: Optional[Callable] = None

    def __call__(self, t):
        return np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float) * np.ones_like(t, dtype=float)

    def deriv(self, t):
        if self.derivative is None:
            raise ValueError(f"{self.name} has no derivative")
        return np.asarray(self.derivative(np.asarray(t, dtype=float)), dtype=float) * np.ones_like(t, dtype=float)

    @classmethod
    def constant(cls, c=1.0):
        return cls(lambda t: np.full_like(t, c), f"const({c})", lambda t: np.zeros_like(t))

    @classmethod
    def linear(cls, a=1.0):
        return cls(lambda t: a * t, f"{a}*t", lambda t: np.full_like(t, a))

    @classmethod
    def power(cls, k):
        return cls(lambda t: t ** k, f"t^{k}", lambda t: k * t ** (k - 1) if k else np.zeros_like(t))

    @classmethod
    def exponential(cls, a):
        """t -> exp(a t)"""
        return cls(lambda t: np.exp(a * t), f"exp({a}*t)", lambda t: a * np.exp(a * t))

    @classmethod
    def gaussian_bump(cls, width, center=0.0):
        """t -> exp(-width (t - center)^2)"""
        return cls(
            lambda t: np.exp(-width * (t - center) ** 2),
            f"exp(-{width}*(t-{center})^2)",
            lambda t: -2.0 * width * (t - center) * np.exp(-width * (t - center) ** 2),
        )

    def exp(self):
        """e^g, with derivative g' e^g when g' is known."""
        deriv = None
        if self.derivative is not None:
            deriv = lambda t: self.deriv(t) * np.exp(self(t))  # noqa: E731
        return ZonalFunction(lambda t: np.exp(self(t)), f"exp({self.name})", deriv)

    def squared(self):
        deriv = None
        if self.derivative is not None:
            deriv = lambda t: 2.0 * self(t) * self.deriv(t)  # noqa: E731
        return ZonalFunction(lambda t: self(t) ** 2, f"({self.name})^2", deriv)

    def scaled(self, c):
        deriv = None
        if self.derivative is not None:
            deriv = lambda t: c * self.deriv(t)  # noqa: E731
        return ZonalFunction(lambda t: c * self(t), f"{c}*{self.name}", deriv)


def as_zonal(g):
    if isinstance(g, ZonalFunction):
        return g
    if callable(g):
        return ZonalFunction(g)
    return ZonalFunction.constant(float(g))


def _check_dimension(n):
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"sphere dimension must be a positive integer, got {n!r}")
    return int(n)


@lru_cache(maxsize=32)
def _gauss_jacobi(n, order):
    alpha = n / 2.0 - 1.0
    nodes, weights = roots_jacobi(order, alpha, alpha)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


class NuMeasure:
    """nu_n on [-1, 1] together with its Gauss-Jacobi rule of the given order."""

    def __init__(self, n, order=DEFAULT_QUADRATURE_ORDER):
        self.n = _check_dimension(n)
        if order < 1:
            raise ValueError(f"quadrature order must be >= 1, got {order}")
        self.order = int(order)
        nodes, raw = _gauss_jacobi(self.n, self.order)
        total = float(np.sum(raw))
        self.nodes = nodes
        self.weights = raw / total
        # c_n: the rule integrates (1 - t^2)^alpha exactly, so its mass is 1 / c_n
        self.normalization = 1.0 / total

    @property
    def alpha(self):
        return self.n / 2.0 - 1.0

    def density(self, t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < 1.0
        safe = np.where(inside, 1.0 - t * t, 1.0)
        return np.where(inside, self.normalization * safe ** self.alpha, 0.0)

    def integrate(self, g):
        values = as_zonal(g)(self.nodes)
        bad = ~np.isfinite(values)
        if bad.any():
            node = float(self.nodes[np.argmax(bad)])
            raise ValueError(f"{as_zonal(g).name} is not finite at quadrature node t={node:.17g}")
        return float(np.dot(self.weights, values))

    def moment(self, k):
        return self.integrate(lambda t: t ** k)


def nu_quadrature(n, g, order=DEFAULT_QUADRATURE_ORDER):
    """int g dnu_n by Gauss-Jacobi quadrature, normalized so that int 1 dnu_n = 1."""
    return NuMeasure(n, order).integrate(g)


@lru_cache(maxsize=32)
def _recurrence(n, order, degree):
    """b_1..b_degree of x p_k = b_{k+1} p_{k+1} + b_k p_{k-1} (symmetric measure: no diagonal term)."""
    if degree >= order:
        raise ValueError(f"a rule of order {order} supports degree < {order}, asked for {degree}")
    measure = NuMeasure(n, order)
    x, w = measure.nodes, measure.weights
    b = np.zeros(degree + 1)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    for k in range(degree):
        q = x * cur - b[k] * prev
        b[k + 1] = np.sqrt(np.dot(w, q * q))
        prev, cur = cur, q / b[k + 1]
    b.setflags(write=False)
    return b


def _clip_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12) or not np.all(np.isfinite(x)):
        raise ValueError("zonal arguments must lie in [-1, 1]")
    return np.clip(x, -1.0, 1.0)


class SpectralSemigroup:
    """Q_t = exp(t L) on [-1, 1], truncated at degree K (raised on demand up to max_truncation)."""

    def __init__(self, n, truncation=DEFAULT_TRUNCATION, order=None, max_truncation=MAX_TRUNCATION):
        self.n = _check_dimension(n)
        if not 1 <= truncation <= max_truncation:
            raise ValueError(f"truncation must lie in [1, {max_truncation}], got {truncation}")
        self.truncation = int(truncation)
        self.max_truncation = int(max_truncation)
        self.order = int(order or max(DEFAULT_QUADRATURE_ORDER, self.max_truncation + 2))
        self.measure = NuMeasure(self.n, self.order)
        self.recurrence = _recurrence(self.n, self.order, self.max_truncation)
        self._node_basis = self.basis(self.measure.nodes, self.max_truncation)
        self.logger = Logger()

    def eigenvalues(self, degree=None):
        k = np.arange((degree if degree is not None else self.max_truncation) + 1)
        return 0.5 * k * (k + self.n - 1)

    def basis(self, x, degree=None, derivatives=0):
        """p_k(x), k = 0..degree, shape (degree + 1, *x.shape); with derivatives=1 or 2
        returns the tuple (p, p') or (p, p', p'')."""
        degree = self.max_truncation if degree is None else degree
        x = np.asarray(x, dtype=float)
        b = self.recurrence
        p = np.zeros((degree + 1,) + x.shape)
        dp = np.zeros_like(p) if derivatives >= 1 else None
        d2p = np.zeros_like(p) if derivatives >= 2 else None
        p[0] = 1.0
        for k in range(degree):
            prev = p[k - 1] if k else 0.0
            p[k + 1] = (x * p[k] - b[k] * prev) / b[k + 1]
            if dp is not None:
                dprev = dp[k - 1] if k else 0.0
                dp[k + 1] = (p[k] + x * dp[k] - b[k] * dprev) / b[k + 1]
            if d2p is not None:
                d2prev = d2p[k - 1] if k else 0.0
                d2p[k + 1] = (2.0 * dp[k] + x * d2p[k] - b[k] * d2prev) / b[k + 1]
        if derivatives == 0:
            return p
        if derivatives == 1:
            return p, dp
        return p, dp, d2p

    def gram(self, degree=None):
        degree = self.truncation if degree is None else degree
        p = self._node_basis[: degree + 1]
        return (p * self.measure.weights) @ p.T

    def coefficients(self, g):
        """g_hat_k = int g p_k dnu_n, k = 0..max_truncation."""
        values = as_zonal(g)(self.measure.nodes)
        bad = ~np.isfinite(values)
        if bad.any():
            node = float(self.measure.nodes[np.argmax(bad)])
            raise ValueError(f"{as_zonal(g).name} is not finite at quadrature node t={node:.17g}")
        return self._node_basis @ (self.measure.weights * values)

    def truncation_for(self, T, coeffs):
        """Smallest K >= truncation with exp(-lambda_K T) max(|g_K|, |g_{K-1}|) < TAIL_TOLERANCE."""
        lam = self.eigenvalues()
        mags = np.abs(coeffs)
        K = self.truncation
        while K < self.max_truncation:
            tail = np.exp(-lam[K - 1] * T) * max(mags[K], mags[K - 1])
            if tail < TAIL_TOLERANCE:
                return K
            K = min(2 * K, self.max_truncation)
        tail = np.exp(-lam[K - 1] * T) * max(mags[K], mags[K - 1])
        if tail >= TAIL_TOLERANCE:
            if T == 0:
                self.logger.warning_once(
                    ("rough-T0", self.n),
                    f"Q_0 g evaluated by truncated expansion (K={K}, tail {tail:.2e}); truncation dominates",
                )
            else:
                self.logger.warning_once(
                    ("tail", self.n, float(T)),
                    f"spectral tail {tail:.2e} above {TAIL_TOLERANCE:g} at T={T:g} with K={K}",
                )
        return K

    def evolve(self, T, coeffs):
        """Coefficients of Q_T g, truncated at the tail-criterion degree."""
        if T < 0:
            raise ValueError(f"time must be >= 0, got {T}")
        K = self.truncation_for(T, coeffs)
        return coeffs[: K + 1] * np.exp(-self.eigenvalues(K) * T)

    def evaluate(self, coeffs, x, derivatives=0):
        """sum_k c_k p_k(x) and, if asked, its derivatives."""
        x = _clip_unit(x)
        K = coeffs.shape[0] - 1
        if derivatives == 0:
            return np.tensordot(coeffs, self.basis(x, K), axes=1)
        parts = self.basis(x, K, derivatives)
        return tuple(np.tensordot(coeffs, part, axes=1) for part in parts)

    def apply(self, T, g, x, coeffs=None):
        """Q_T g (x)"""
        coeffs = self.coefficients(g) if coeffs is None else coeffs
        return self.evaluate(self.evolve(T, coeffs), x)

    def derivative(self, T, g, x, coeffs=None):
        """d/dx Q_T g (x)"""
        coeffs = self.coefficients(g) if coeffs is None else coeffs
        return self.evaluate(self.evolve(T, coeffs), x, derivatives=1)[1]

    def log_gradient(self, tau, g, x, coeffs=None):
        """(Q_tau g)'(x) / Q_tau g (x) for positive g.

        If the truncated Q_tau g is not positive at some x, the full degree
        max_truncation is used, then x is pulled into [-1 + delta, 1 - delta];
        PositivityError if it still fails.
        """
        coeffs = self.coefficients(g) if coeffs is None else coeffs
        x = _clip_unit(x)
        evolved = self.evolve(tau, coeffs)
        value, slope = self.evaluate(evolved, x, derivatives=1)
        if np.all(value > 0):
            return slope / value
        self.logger.warning_once(("positivity", self.n), "truncated semigroup lost positivity, raising K")
        full = coeffs * np.exp(-self.eigenvalues() * tau)
        value, slope = self.evaluate(full, x, derivatives=1)
        if np.all(value > 0):
            return slope / value
        shrunk = np.clip(x, -1.0 + SHRINK_DELTA, 1.0 - SHRINK_DELTA)
        value, slope = self.evaluate(full, shrunk, derivatives=1)
        if np.all(value > 0):
            return slope / value
        worst = float(np.ravel(shrunk)[np.argmin(np.ravel(value))])
        raise PositivityError(f"Q_{tau:g} g is not positive near x={worst:.6g} even with K={self.max_truncation}")

    def log_gradient_fd(self, tau, g, x, h=1e-5, coeffs=None):
        """Central finite difference of log Q_tau g, for cross-checking log_gradient."""
        x = np.asarray(x, dtype=float)
        up = self.apply(tau, g, np.clip(x + h, -1.0, 1.0), coeffs)
        down = self.apply(tau, g, np.clip(x - h, -1.0, 1.0), coeffs)
        width = np.clip(x + h, -1.0, 1.0) - np.clip(x - h, -1.0, 1.0)
        return (np.log(up) - np.log(down)) / width

    def laplacian(self, T, g, x, coeffs=None):
        """Spherical Laplacian of the zonal function Q_T g at x: sum -2 lambda_k e^{-lambda_k T} g_hat_k p_k(x)."""
        coeffs = self.coefficients(g) if coeffs is None else coeffs
        evolved = self.evolve(T, coeffs)
        lam = self.eigenvalues(evolved.shape[0] - 1)
        return self.evaluate(-2.0 * lam * evolved, x)

    def heat_kernel(self, T, x, t, derivative=False):
        """Density of Q_T(x, .) with respect to nu_n, evaluated at t; with
        derivative=True also its t-derivative."""
        if T <= 0:
            raise ValueError("the heat kernel needs T > 0")
        weights = np.exp(-self.eigenvalues() * T)
        K = int(np.searchsorted(-weights, -TAIL_TOLERANCE))
        K = min(max(K, self.truncation), self.max_truncation)
        x, t = np.broadcast_arrays(_clip_unit(x), _clip_unit(t))
        px = self.basis(x, K)
        w = weights[: K + 1].reshape((-1,) + (1,) * x.ndim)
        if not derivative:
            pt = self.basis(t, K)
            return np.sum(w * px * pt, axis=0)
        pt, dpt = self.basis(t, K, derivatives=1)
        return np.sum(w * px * pt, axis=0), np.sum(w * px * dpt, axis=0)

    def generator_residual(self, degree, points=201):
        """max |L p_k + lambda_k p_k| on a uniform grid of [-1, 1]."""
        x = np.linspace(-1.0, 1.0, points)
        p, dp, d2p = self.basis(x, degree, derivatives=2)
        lam = self.eigenvalues(degree)[degree]
        lp = generator(self.n, x, dp[degree], d2p[degree])
        return float(np.max(np.abs(lp + lam * p[degree])))


def generator(n, x, first, second):
    """L g = 1/2 (1 - x^2) g'' - (n/2) x g'"""
    return 0.5 * (1.0 - x * x) * second - 0.5 * n * x * first


@lru_cache(maxsize=16)
def semigroup(n, truncation=DEFAULT_TRUNCATION, order=None, max_truncation=MAX_TRUNCATION):
    """Shared immutable oracle per configuration."""
    return SpectralSemigroup(n, truncation, order, max_truncation)


def semigroup_apply(S, T, g, x):
    return S.apply(T, g, x)


def log_semigroup_gradient(S, tau, f, x):
    """d/dx log Q_tau(e^f)(x)"""
    return S.log_gradient(tau, as_zonal(f).exp(), x)


def laplacian_eigen_check(n, i=0, degree=1, points=201):
    """Residual of the eigenrelation for the coordinate P_i (degree 1: L x = -(n/2) x,
    checked on the monomial itself) or for the orthonormal basis element p_degree."""
    n = _check_dimension(n)
    if not 0 <= i <= n:
        raise ValueError(f"coordinate index {i} out of range for S^{n}")
    if degree == 1:
        x = np.linspace(-1.0, 1.0, points)
        coordinate = Polynomial([0.0, 1.0])
        lx = generator(n, x, coordinate.deriv(1)(x), coordinate.deriv(2)(x))
        return float(np.max(np.abs(lx + 0.5 * n * coordinate(x))))
    return semigroup(n).generator_residual(degree, points)
