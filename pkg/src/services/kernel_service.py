"""
Kernel Service - Single Responsibility: second-order Sobolev kernel, Gram matrices and quadrature
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from models import KernelSpec
from utils.exceptions import CovarianceInputError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Points this close outside [0, 1] are clipped instead of rejected
DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes and weights on [0, 1]"""
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise CovarianceInputError("Quadrature nodes and weights must be 1-d arrays of equal length")
        if np.any(np.diff(self.nodes) <= 0):
            raise CovarianceInputError("Quadrature nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise CovarianceInputError("Quadrature weights must be positive")

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def integrate(self, values: np.ndarray) -> Union[float, np.ndarray]:
        """Integrate samples taken at the nodes (first axis) over [0, 1]"""
        values = np.asarray(values, dtype=float)
        result = np.tensordot(self.weights, values, axes=(0, 0))
        return float(result) if np.ndim(result) == 0 else result


# Scaled Bernoulli polynomials: k_v(x) = B_v(x) / v!
def _k1(x: np.ndarray) -> np.ndarray:
    return x - 0.5


def _k2(x: np.ndarray) -> np.ndarray:
    k1 = _k1(x)
    return 0.5 * (k1 ** 2 - 1.0 / 12.0)


def _k3(x: np.ndarray) -> np.ndarray:
    k1 = _k1(x)
    return (k1 ** 3 - 0.25 * k1) / 6.0


def _k4(x: np.ndarray) -> np.ndarray:
    k1 = _k1(x)
    return (k1 ** 4 - 0.5 * k1 ** 2 + 7.0 / 240.0) / 24.0


def _as_points(points: ArrayLike, name: str = "points") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(points, dtype=float)).ravel()
    if not np.all(np.isfinite(arr)):
        raise CovarianceInputError(f"{name} must be finite")
    if arr.size and (arr.min() < -DOMAIN_SLACK or arr.max() > 1.0 + DOMAIN_SLACK):
        raise CovarianceInputError(f"{name} must lie in [0, 1] (got range [{arr.min():.6g}, {arr.max():.6g}])")
    return np.clip(arr, 0.0, 1.0)


class KernelService:
    """Reproducing kernel of W2[0, 1] with norm (∫g)² + (∫g')² + ∫(g'')²"""

    @staticmethod
    def kernel_matrix(spec: KernelSpec, a: ArrayLike, b: ArrayLike) -> np.ndarray:
        """
        Cross-kernel matrix [K(a_i, b_j)].

        K(s, t) = 1 + k1(s)k1(t) + k2(s)k2(t) - k4(|s - t|)
        """
        a = _as_points(a, "a")[:, None]
        b = _as_points(b, "b")[None, :]
        return 1.0 + _k1(a) * _k1(b) + _k2(a) * _k2(b) - _k4(np.abs(a - b))

    @staticmethod
    def kernel_eval(spec: KernelSpec, s: float, t: float) -> float:
        """
        Evaluate K(s, t).

        Raises:
            CovarianceInputError: If s or t is outside [0, 1]
        """
        return float(KernelService.kernel_matrix(spec, s, t)[0, 0])

    @staticmethod
    def kernel_derivative(spec: KernelSpec, x: ArrayLike, s: float, order: int) -> np.ndarray:
        """
        Derivative of the kernel section x -> K(x, s) of the given order (0, 1 or 2).
        """
        x = _as_points(x, "x")
        s_arr = _as_points(s, "s")
        if s_arr.size != 1:
            raise CovarianceInputError("s must be a scalar")
        s0 = float(s_arr[0])
        d = x - s0
        if order == 0:
            return 1.0 + _k1(x) * _k1(s0) + _k2(x) * _k2(s0) - _k4(np.abs(d))
        if order == 1:
            return _k1(s0) + _k1(x) * _k2(s0) - np.sign(d) * _k3(np.abs(d))
        if order == 2:
            return _k2(s0) - _k2(np.abs(d))
        raise CovarianceInputError(f"Derivative order must be 0, 1 or 2 (got {order})")

    @staticmethod
    def gram(spec: KernelSpec, points: ArrayLike) -> np.ndarray:
        """
        Gram matrix [K(p_i, p_j)] of the given points.

        Raises:
            CovarianceInputError: Empty point list or out-of-domain points
        """
        p = _as_points(points)
        if p.size == 0:
            raise CovarianceInputError("gram requires at least one point")
        G = KernelService.kernel_matrix(spec, p, p)
        return 0.5 * (G + G.T)

    @staticmethod
    def l2_cross_gram(spec: KernelSpec, points: ArrayLike, rule: QuadratureRule) -> np.ndarray:
        """
        Q = [∫ K(s, p_i) K(s, p_j) ds] by the given quadrature rule.
        """
        p = _as_points(points)
        if p.size == 0:
            raise CovarianceInputError("l2_cross_gram requires at least one point")
        Z = KernelService.kernel_matrix(spec, rule.nodes, p)
        Q = (Z * rule.weights[:, None]).T @ Z
        return 0.5 * (Q + Q.T)

    @staticmethod
    def make_quadrature(n_nodes: int) -> QuadratureRule:
        """
        Gauss-Legendre rule with `n_nodes` nodes mapped to [0, 1].

        Raises:
            CovarianceInputError: If n_nodes < 2
        """
        if int(n_nodes) != n_nodes or n_nodes < 2:
            raise CovarianceInputError(f"Quadrature needs at least 2 nodes (got {n_nodes})")
        x, w = np.polynomial.legendre.leggauss(int(n_nodes))
        return QuadratureRule(nodes=0.5 * (x + 1.0), weights=0.5 * w)

    @staticmethod
    def composite_quadrature(n_nodes: int, breaks: ArrayLike) -> QuadratureRule:
        """
        Composite Gauss-Legendre rule on [0, 1] split at `breaks`.

        Exact for piecewise polynomials of degree < 2*n_nodes with knots at the
        breaks, e.g. products of kernel sections and their derivatives.
        """
        base = KernelService.make_quadrature(n_nodes)
        edges = np.unique(np.concatenate([[0.0, 1.0], _as_points(breaks, "breaks")]))
        nodes, weights = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi - lo <= 0:
                continue
            nodes.append(lo + (hi - lo) * base.nodes)
            weights.append((hi - lo) * base.weights)
        return QuadratureRule(nodes=np.concatenate(nodes), weights=np.concatenate(weights))
