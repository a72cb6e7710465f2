"""Independent verification paths.

These compute the same quantities as the inference engine by the routes
it avoids: jitter plus conditioning by kriging for constraints, explicit
constrained Gaussian densities for the Laplace formula, and tensor-product
quadrature over the latent field for the hyperparameter posterior.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import linalg as sla
from scipy.special import logsumexp

from dense_inla.errors import RankMismatch, Unsupported
from dense_inla.linalg import LOG_2PI, constrained_gaussian_logpdf, woodbury_posterior_cov


@dataclass(frozen=True)
class KrigingConfig:
    jitter: float = 1e-4

    def __post_init__(self):
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")


def _constraint_gain(cov_un, C):
    C = np.atleast_2d(np.asarray(C, dtype=float))
    SCt = cov_un @ C.T
    S = C @ SCt
    S = 0.5 * (S + S.T)
    ev = np.linalg.eigvalsh(S) if S.size else np.ones(1)
    if ev.min() <= 1e-13 * max(ev.max(), 0.0):
        raise RankMismatch("C cov C^T is singular; constraints are redundant")
    chol = sla.cho_factor(S, lower=True)
    return C, SCt, chol


def kriging_correct(mean_un, cov_un, C):
    """Condition ``N(mean_un, cov_un)`` on ``C x = 0``.

    Returns ``(mean, cov)`` with ``mean = m - S C^T (C S C^T)^-1 C m`` and
    ``cov = S - S C^T (C S C^T)^-1 C S``.
    """
    mean_un = np.asarray(mean_un, dtype=float)
    cov_un = np.asarray(cov_un, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[0] == 0:
        return mean_un.copy(), cov_un.copy()
    C, SCt, chol = _constraint_gain(cov_un, C)
    mean = mean_un - SCt @ sla.cho_solve(chol, C @ mean_un)
    cov = cov_un - SCt @ sla.cho_solve(chol, SCt.T)
    return mean, 0.5 * (cov + cov.T)


def sample_constrained_igmrf(structure, tau, count, seed, jitter=KrigingConfig().jitter):
    """Draws from ``N(0, (tau R + jitter I)^-1)`` conditioned on the null-space constraints.

    Sampling goes through the spectrum of ``R`` so that very large ``tau``
    stays well conditioned. Returns an array of shape ``(count, dim)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    R = structure.matrix
    lam, V = np.linalg.eigh(0.5 * (R + R.T))
    eps = jitter if structure.nullity > 0 else 0.0
    sd = 1.0 / np.sqrt(tau * np.maximum(lam, 0.0) + eps)
    z = rng.standard_normal((count, R.shape[0]))
    x = (z * sd) @ V.T
    if structure.nullity == 0:
        return x
    C = structure.null_basis
    cov_un = (V * sd**2) @ V.T
    C, SCt, chol = _constraint_gain(cov_un, C)
    return x - (SCt @ sla.cho_solve(chol, C @ x.T)).T


def laplace_log_posterior_explicit(model, theta, lik, options=None):
    """Laplace ``log pi(theta | y)`` through explicit constrained densities.

    Evaluates prior and Gaussian-approximation densities at ``x*`` with
    dimension ``s - k`` and generalized determinants, instead of the
    capacitance identity used by the engine.
    """
    from dense_inla.inference import gaussian_approx

    ga = gaussian_approx(model, theta, lik, options, covariance=True)
    k = model.nullity
    P = model.prior_geninv(theta).matrix
    zero = np.zeros(model.s)
    log_prior_x = constrained_gaussian_logpdf(ga.x_star, zero, P, k)
    log_ga = constrained_gaussian_logpdf(ga.x_star, ga.x_star, ga.sigma_star, k)
    return float(model.log_prior(theta) + log_prior_x + ga.loglik_at_mode - log_ga)


def _log_pdet_prior(model, theta):
    total = 0.0
    for b, tau in zip(model.blocks, model.precisions(theta)):
        total += b.structure.rank * np.log(tau) + b.structure.log_pdet
    return total


def log_evidence_quadrature(model, theta, lik, nodes=30, options=None):
    """``log pi(theta) + log int pi(y | x) pi(x | theta, Cx = 0) dx`` by quadrature.

    Adaptive Gauss-Hermite on the constrained subspace: centred at the
    Gaussian-approximation mode and scaled by its covariance.
    """
    from dense_inla.inference import gaussian_approx

    r = model.s - model.nullity
    if r > 4:
        raise Unsupported(f"quadrature needs s - k <= 4, got {r}")
    ga = gaussian_approx(model, theta, lik, options, covariance=True)
    lam, V = np.linalg.eigh(ga.sigma_star)
    lam, V = lam[-r:], V[:, -r:]
    z, w = hermegauss(nodes)
    Q = model.prior_precision(theta)
    log_norm = -0.5 * r * LOG_2PI + 0.5 * _log_pdet_prior(model, theta)
    sd = np.sqrt(lam)
    A = model.design.toarray()
    grid = np.array(list(itertools.product(range(nodes), repeat=r)), dtype=np.int64).reshape(-1, r)
    vals = []
    for chunk in np.array_split(grid, max(1, grid.shape[0] // 20000)):
        zz = z[chunk]
        X = ga.x_star + (zz * sd) @ V.T
        ll = lik.loglik_rows(X @ A.T)
        quad = np.einsum("ki,ij,kj->k", X, Q, X)
        vals.append(ll - 0.5 * quad + 0.5 * np.sum(zz * zz, axis=1) + np.sum(np.log(w[chunk]), axis=1))
    vals = np.concatenate(vals)
    log_int = logsumexp(vals) + np.sum(np.log(sd)) + log_norm
    return float(model.log_prior(theta) + log_int)


def brute_force_theta_posterior(model, lik, theta_grid, nodes=30, options=None):
    """Normalized hyperparameter posterior over ``theta_grid`` by quadrature."""
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    lp = np.array([log_evidence_quadrature(model, t, lik, nodes, options) for t in grid])
    p = np.exp(lp - lp.max())
    return p / p.sum()


def equivalence_check(model, theta, lik_prec, jitter=KrigingConfig().jitter):
    """Max elementwise gap between the pseudo-inverse and the kriging routes.

    (a) Woodbury update of the block pseudo-inverse prior;
    (b) ``(Q + Q_l + jitter I)^-1`` conditioned on ``constraint_basis``.
    """
    if model.s > 60:
        raise Unsupported(f"equivalence check is for s <= 60, got {model.s}")
    L = np.asarray(lik_prec, dtype=float)
    a = woodbury_posterior_cov(model.prior_geninv(theta).matrix, L)
    Q = model.prior_precision(theta) + L + jitter * np.eye(model.s)
    cov_un = np.linalg.inv(Q)
    cov_un = 0.5 * (cov_un + cov_un.T)
    _, b = kriging_correct(np.zeros(model.s), cov_un, model.constraints)
    return float(np.max(np.abs(a - b)))
