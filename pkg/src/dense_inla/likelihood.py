"""Observation models in linear-predictor space.

Every likelihood exposes ``terms(eta) -> (loglik, grad, neg_hess_diag)``;
the Gaussian approximation only ever talks to that triple.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from dense_inla.errors import InvalidData, NumericalFailure

_MAX_ETA = 700.0


@dataclass(frozen=True, eq=False)
class CountData:
    """Counts ``y`` with expected counts ``E`` at 1-based (time, space) cells."""

    y: np.ndarray
    E: np.ndarray
    time: np.ndarray = None
    space: np.ndarray = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        E = np.asarray(self.E, dtype=float)
        if E.ndim == 0:
            E = np.full(y.shape, float(E))
        if y.ndim != 1 or y.shape != E.shape:
            raise InvalidData(f"y and E must be 1-D of equal length, got {y.shape} and {E.shape}")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InvalidData("counts must be non-negative integers")
        if np.any(~(E > 0)) or not np.all(np.isfinite(E)):
            raise InvalidData("expected counts must be positive and finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "E", E)
        for name in ("time", "space"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64)
                if v.shape != y.shape:
                    raise InvalidData(f"{name} index length does not match y")
                object.__setattr__(self, name, v)

    def __len__(self):
        return self.y.size


def poisson_terms(eta, data: CountData):
    """Poisson log-likelihood, gradient and negative Hessian diagonal.

    ``y ~ Poisson(E exp(eta))``; the log-likelihood includes ``-log(y!)``.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != data.y.shape:
        raise InvalidData(f"eta has shape {eta.shape}, data has {data.y.shape}")
    big = np.flatnonzero(~(eta <= _MAX_ETA))
    if big.size:
        raise NumericalFailure(f"exp(eta) overflows at index {int(big[0])} (eta={eta[big[0]]:g})")
    mu = data.E * np.exp(eta)
    loglik = float(np.sum(data.y * (np.log(data.E) + eta) - mu - gammaln(data.y + 1.0)))
    return loglik, data.y - mu, mu


class PoissonLikelihood:
    def __init__(self, data: CountData):
        self.data = data

    def __len__(self):
        return len(self.data)

    def terms(self, eta):
        return poisson_terms(eta, self.data)

    def loglik(self, eta):
        """Log-likelihood, or ``-inf`` where ``exp(eta)`` would overflow."""
        eta = np.asarray(eta, dtype=float)
        if not np.all(eta <= _MAX_ETA):
            return -np.inf
        return poisson_terms(eta, self.data)[0]

    def loglik_rows(self, eta):
        """Log-likelihood for each row of a (N, d) batch of predictors."""
        d = self.data
        with np.errstate(over="ignore"):
            ll = eta @ d.y + float(d.y @ np.log(d.E)) - np.exp(eta) @ d.E
        return np.where(np.isfinite(ll), ll, -np.inf) - float(np.sum(gammaln(d.y + 1.0)))

    def expected_deviance(self, eta_mean, eta_var):
        """``E[-2 loglik]`` for ``eta ~ N(eta_mean, diag(eta_var))``."""
        d = self.data
        with np.errstate(over="raise"):
            try:
                mu = d.E * np.exp(eta_mean + 0.5 * eta_var)
            except FloatingPointError as exc:
                raise NumericalFailure("expected deviance overflows") from exc
        ll = d.y * (np.log(d.E) + eta_mean) - mu - gammaln(d.y + 1.0)
        return float(-2.0 * np.sum(ll))


class GaussianLikelihood:
    """Identity-link Gaussian observations with known precisions.

    Used as a conjugate surrogate: the Gaussian approximation is exact and
    marginal likelihoods have closed forms.
    """

    def __init__(self, y, precision):
        self.y = np.asarray(y, dtype=float)
        self.precision = np.broadcast_to(np.asarray(precision, dtype=float), self.y.shape).copy()
        if np.any(self.precision < 0):
            raise InvalidData("observation precisions must be non-negative")

    def __len__(self):
        return self.y.size

    def _norm(self):
        k = self.precision
        pos = k > 0
        return 0.5 * float(np.sum(np.log(k[pos] / (2 * np.pi))))

    def terms(self, eta):
        eta = np.asarray(eta, dtype=float)
        r = self.y - eta
        loglik = self._norm() - 0.5 * float(np.sum(self.precision * r * r))
        return loglik, self.precision * r, self.precision.copy()

    def loglik(self, eta):
        return self.terms(eta)[0]

    def loglik_rows(self, eta):
        r = self.y - eta
        return self._norm() - 0.5 * np.sum(self.precision * r * r, axis=1)

    def expected_deviance(self, eta_mean, eta_var):
        r = self.y - eta_mean
        return float(-2.0 * (self._norm() - 0.5 * np.sum(self.precision * (r * r + eta_var))))
