"""Dense symmetric linear algebra: spectra, pseudo-inverses, Woodbury updates.

All matrices are full-storage ``numpy`` arrays. Rank deficiencies are
declared by the caller (they are known from model structure) and the
numerical spectrum is only used to validate the declaration.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from dense_inla.errors import InvalidMatrix, NumericalFailure, RankMismatch

LOG_2PI = np.log(2.0 * np.pi)


class EigenDecomp(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # orthonormal columns


@dataclass(frozen=True)
class RankInfo:
    """Declared nullity and the relative threshold used to validate it."""

    nullity: int = 0
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.nullity < 0:
            raise ValueError("nullity must be non-negative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def sym_matrix(values) -> np.ndarray:
    """Validate a square finite matrix and return its exact symmetrization."""
    m = np.array(values, dtype=float, copy=True)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise InvalidMatrix(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidMatrix("matrix has non-finite entries")
    return 0.5 * (m + m.T)


def eigendecompose(m) -> EigenDecomp:
    """Symmetric eigendecomposition with ascending eigenvalues."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidMatrix("matrix has non-finite entries")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return EigenDecomp(w, v)


def _checked_spectrum(m, rank: RankInfo) -> EigenDecomp:
    eig = eigendecompose(m)
    w = eig.eigenvalues
    dim = w.size
    k = rank.nullity
    if k >= dim:
        raise RankMismatch(f"nullity {k} must be smaller than dimension {dim}")
    scale = np.abs(w).max()
    thresh = rank.tolerance * scale
    n_small = int(np.sum(np.abs(w) <= thresh))
    if n_small != k or (k > 0 and np.abs(w[:k]).max() > thresh):
        raise RankMismatch(
            f"declared nullity {k} but {n_small} eigenvalues are below "
            f"{thresh:.3g} (relative tolerance {rank.tolerance:g})"
        )
    return eig


def range_basis(m, rank: RankInfo = RankInfo()):
    """Nonzero eigenvalues and the orthonormal basis of the range of ``m``."""
    eig = _checked_spectrum(m, rank)
    k = rank.nullity
    return eig.eigenvalues[k:], eig.eigenvectors[:, k:]


def pseudo_inverse(m, rank: RankInfo = RankInfo()) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix with known nullity.

    Raises
    ------
    RankMismatch
        If the number of numerically zero eigenvalues differs from
        ``rank.nullity``.
    """
    lam, V = range_basis(m, rank)
    out = (V / lam) @ V.T
    return 0.5 * (out + out.T)


def generalized_log_det(m, rank: RankInfo = RankInfo()) -> float:
    """Sum of the logs of the ``dim - nullity`` nonzero eigenvalues."""
    lam, _ = range_basis(m, rank)
    if np.any(lam <= 0):
        raise InvalidMatrix("matrix is not positive semi-definite")
    return float(np.sum(np.log(lam)))


def null_space_basis(m, rank: RankInfo = RankInfo()) -> np.ndarray:
    """Orthonormal rows spanning the null space, shape (nullity, dim)."""
    eig = _checked_spectrum(m, rank)
    return eig.eigenvectors[:, : rank.nullity].T.copy()


def woodbury_posterior_cov(prior_geninv, lik_prec) -> np.ndarray:
    """Posterior covariance ``P - P (I + L P)^{-1} L P`` for prior ``P``.

    ``P`` is the (generalized) inverse prior precision and ``L`` the
    likelihood precision. The result lives on the range of ``P``, so any
    null-space constraint carried by ``P`` is preserved.
    """
    P = np.asarray(prior_geninv, dtype=float)
    L = np.asarray(lik_prec, dtype=float)
    if P.shape != L.shape or P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidMatrix(f"shape mismatch: {P.shape} vs {L.shape}")
    LP = L @ P
    try:
        X = np.linalg.solve(np.eye(P.shape[0]) + LP, LP)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure("I + L P is singular") from exc
    W = P - P @ X
    if not np.all(np.isfinite(W)):
        raise NumericalFailure("non-finite posterior covariance")
    return 0.5 * (W + W.T)


class LowRankUpdate:
    """Woodbury system for a likelihood precision of the form ``B^T B``.

    Built from ``U = B P`` (d x s) and ``B P B^T`` (d x d). All solves go
    through the d x d capacitance matrix ``I + B P B^T``, which is SPD for
    any PSD ``P``.
    """

    def __init__(self, prior_geninv, BP, BPBt):
        self.P = prior_geninv
        self.U = BP
        cap = np.eye(BPBt.shape[0]) + 0.5 * (BPBt + BPBt.T)
        try:
            self._chol = sla.cho_factor(cap, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalFailure("capacitance matrix I + B P B^T is not SPD") from exc

    def logdet_capacitance(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self._chol[0]))))

    def apply(self, v):
        """Posterior covariance times a vector (or matrix)."""
        return self.P @ v - self.U.T @ sla.cho_solve(self._chol, self.U @ v)

    def covariance(self):
        W = self.P - self.U.T @ sla.cho_solve(self._chol, self.U)
        if not np.all(np.isfinite(W)):
            raise NumericalFailure("non-finite posterior covariance")
        return 0.5 * (W + W.T)

    def solve_capacitance(self, rhs):
        return sla.cho_solve(self._chol, rhs)


def woodbury_posterior_cov_factored(prior_geninv, factor) -> np.ndarray:
    """``woodbury_posterior_cov`` for ``lik_prec = factor.T @ factor``."""
    P = np.asarray(prior_geninv, dtype=float)
    B = np.asarray(factor, dtype=float)
    BP = B @ P
    return LowRankUpdate(P, BP, BP @ B.T).covariance()


def constrained_gaussian_logpdf(x, mean, cov_geninv, nullity, tolerance=1e-9) -> float:
    """Log-density of a Gaussian restricted to the range of its covariance.

    Uses dimension ``s - k`` and the generalized determinant over the
    nonzero eigenvalues; ``x - mean`` is assumed to lie in that range.
    """
    lam, V = range_basis(cov_geninv, RankInfo(int(nullity), tolerance))
    r = V.T @ (np.asarray(x, dtype=float) - np.asarray(mean, dtype=float))
    return float(-0.5 * lam.size * LOG_2PI - 0.5 * np.sum(np.log(lam)) - 0.5 * np.sum(r * r / lam))
