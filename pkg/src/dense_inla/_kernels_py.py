"""NumPy implementations of the compiled kernels in ``_kernels.pyx``.

Signatures and results match the compiled module; this one is selected
when the extension is unavailable or ``DENSE_INLA_PURE_PYTHON=1``.
"""
import numpy as np
from scipy.special import erfc

_SQRT1_2 = np.sqrt(0.5)


def design_gather(cols, vals, M):
    """Return ``A @ M`` for ``M`` of shape (s, k)."""
    return np.einsum("rc,rck->rk", vals, M[cols])


def design_rmatvec(cols, vals, v, s):
    """Return ``A.T @ v``."""
    return np.bincount(cols.ravel(), weights=(vals * v[:, None]).ravel(), minlength=s)


def design_gram(cols, vals, w, s):
    """Return ``A.T @ diag(w) @ A`` as a dense (s, s) matrix."""
    out = np.zeros((s, s))
    wv = vals * w[:, None]
    p = cols.shape[1]
    for a in range(p):
        for b in range(p):
            np.add.at(out, (cols[:, a], cols[:, b]), wv[:, a] * vals[:, b])
    return out


def _mixture_cdf(x, means, sds, weights):
    # x: (s,), means/sds: (K, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (x[None, :] - means) / sds
        smooth = 0.5 * erfc(-z * _SQRT1_2)
    step = (x[None, :] >= means).astype(float)
    comp = np.where(sds > 0.0, smooth, step)
    return weights @ comp


def mixture_quantiles(means, sds, weights, probs, tol=1e-8, max_iter=200):
    """Quantiles of per-element Gaussian mixtures by bisection on the CDF.

    ``means`` and ``sds`` have shape (K, s); the result has shape (s, len(probs)).
    """
    lo0 = (means - 10.0 * sds).min(axis=0)
    hi0 = (means + 10.0 * sds).max(axis=0)
    out = np.empty((means.shape[1], len(probs)))
    for j, p in enumerate(probs):
        lo, hi = lo0.copy(), hi0.copy()
        mid = 0.5 * (lo + hi)
        active = np.ones(means.shape[1], dtype=bool)
        for _ in range(max_iter):
            if not active.any():
                break
            new_mid = 0.5 * (lo + hi)
            mid = np.where(active, new_mid, mid)
            F = _mixture_cdf(mid, means, sds, weights)
            hit = np.abs(F - p) <= tol
            below = active & ~hit & (F < p)
            above = active & ~hit & (F >= p)
            lo = np.where(below, mid, lo)
            hi = np.where(above, mid, hi)
            narrow = hi - lo <= 1e-15 * (1.0 + np.abs(mid))
            active &= ~hit & ~narrow
        out[:, j] = mid
    return out
