"""Epanechnikov kernels on R^q and the analytic constants derived from them.

Two families are provided:

* ``epanechnikov_product``: ``prod_k 0.75 (1 - u_k^2) I(|u_k| <= 1)``
* ``epanechnikov_spherical``: ``c_q (1 - ||u||^2) I(||u|| <= 1)`` with
  ``c_q = (q + 2) / (2 V_q)`` and ``V_q`` the volume of the unit ball, so that
  ``c_2 = 2 / pi`` and the q=1 member coincides with the 1-D Epanechnikov kernel.

A kernel of dimension 0 is the constant 1; it turns the local estimator into the
global (Hill / linear tail index regression) one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from common.errors import DegenerateXi, DimensionMismatch


class KernelFamily(str, Enum):
    """Supported kernel shapes."""

    EPANECHNIKOV_PRODUCT = "epanechnikov_product"
    EPANECHNIKOV_SPHERICAL = "epanechnikov_spherical"


class XiVariant(str, Enum):
    """How the Xi matrix entering the Gumbel centering constant is computed."""

    ROSENBLATT = "rosenblatt"
    PRINTED = "printed"


# 1-D Epanechnikov moments: int k^2, int u^2 k, int (k')^2, int k''.
_NU_1D = 0.6
_KAPPA_1D = 0.2
_GRAD_SQ_1D = 1.5
_SECOND_DERIV_1D = -3.0


def unit_ball_volume(q: int) -> float:
    return math.pi ** (q / 2) / math.gamma(q / 2 + 1)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with its dimension q."""

    family: KernelFamily = KernelFamily.EPANECHNIKOV_PRODUCT
    dimension: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.dimension < 0:
            raise DimensionMismatch(f"kernel dimension must be >= 0, got {self.dimension}")

    @property
    def spherical_constant(self) -> float:
        q = self.dimension
        return (q + 2) / (2 * unit_ball_volume(q))

    def _check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.dimension:
            raise DimensionMismatch(
                f"kernel of dimension {self.dimension} evaluated at shape {u.shape}"
            )
        return u

    def eval(self, u: np.ndarray) -> np.ndarray | float:
        """Kernel value at ``u`` (shape ``(..., q)``); scalar for a single point."""

        u = self._check(u)
        if self.dimension == 0:
            values = np.ones(u.shape[:-1])
        elif self.family is KernelFamily.EPANECHNIKOV_PRODUCT:
            values = np.prod(np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0), axis=-1)
        else:
            r2 = np.sum(u * u, axis=-1)
            values = np.where(r2 <= 1.0, self.spherical_constant * (1.0 - r2), 0.0)
        if np.ndim(values) == 0:
            return float(values)
        return values

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Gradient of the kernel at ``u`` (zero outside the support)."""

        u = self._check(u)
        if self.dimension == 0:
            return np.zeros(u.shape)
        if self.family is KernelFamily.EPANECHNIKOV_SPHERICAL:
            inside = (np.sum(u * u, axis=-1) <= 1.0)[..., None]
            return np.where(inside, -2.0 * self.spherical_constant * u, 0.0)
        inside = np.abs(u) <= 1.0
        factors = np.where(inside, 0.75 * (1.0 - u * u), 0.0)
        derivs = np.where(inside, -1.5 * u, 0.0)
        grad = np.empty(u.shape)
        for k in range(self.dimension):
            others = np.delete(factors, k, axis=-1)
            grad[..., k] = derivs[..., k] * np.prod(others, axis=-1)
        return grad


def nu(kernel: KernelSpec) -> float:
    """``int K(u)^2 du``."""

    q = kernel.dimension
    if q == 0:
        return 1.0
    if kernel.family is KernelFamily.EPANECHNIKOV_PRODUCT:
        return _NU_1D**q
    c = kernel.spherical_constant
    return 8.0 * c * c * unit_ball_volume(q) / ((q + 2) * (q + 4))


def kappa(kernel: KernelSpec) -> np.ndarray:
    """``int u u^T K(u) du``; diagonal for both families by symmetry."""

    q = kernel.dimension
    if kernel.family is KernelFamily.EPANECHNIKOV_PRODUCT:
        return _KAPPA_1D * np.eye(q)
    return np.eye(q) / (q + 4)


def xi_matrix(kernel: KernelSpec, variant: XiVariant | str = XiVariant.ROSENBLATT) -> np.ndarray:
    """The q x q matrix Xi used in the Gumbel centering constant.

    ``rosenblatt``: ``(1 / 2 nu) int dK/du_k1 dK/du_k2 du``, positive definite.
    ``printed``: ``(1 / 2 nu) int d^2K/du_k1 du_k2 du`` over the interior of the
    support, kept for auditing; it is negative definite and so yields an
    undefined centering constant for odd q.
    """

    variant = XiVariant(variant)
    q = kernel.dimension
    two_nu = 2.0 * nu(kernel)
    if kernel.family is KernelFamily.EPANECHNIKOV_PRODUCT:
        if variant is XiVariant.ROSENBLATT:
            diagonal = _GRAD_SQ_1D * _NU_1D ** (q - 1)
        else:
            # the remaining axes integrate to 1
            diagonal = _SECOND_DERIV_1D
        return diagonal / two_nu * np.eye(q)
    c = kernel.spherical_constant
    volume = unit_ball_volume(q)
    if variant is XiVariant.ROSENBLATT:
        diagonal = 4.0 * c * c * volume / (q + 2)
    else:
        diagonal = -2.0 * c * volume
    return diagonal / two_nu * np.eye(q)


def xi_determinant(kernel: KernelSpec, variant: XiVariant | str = XiVariant.ROSENBLATT) -> float:
    det = float(np.linalg.det(xi_matrix(kernel, variant)))
    if not det > 0:
        raise DegenerateXi(
            f"det(Xi) = {det:.6g} for the {XiVariant(variant).value} form; "
            "the Gumbel centering constant is undefined"
        )
    return det


__all__ = [
    "KernelFamily",
    "KernelSpec",
    "XiVariant",
    "kappa",
    "nu",
    "unit_ball_volume",
    "xi_determinant",
    "xi_matrix",
]
