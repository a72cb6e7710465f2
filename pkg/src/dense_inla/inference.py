"""Two-stage dense INLA with constraint handling through pseudo-inverses.

Stage 1 finds the mode of the Laplace-approximated hyperparameter
posterior and explores it along the eigen-axes of its curvature. Stage 2
mixes the per-point Gaussian approximations of the latent field.

The latent prior enters only through its block-diagonal generalized
inverse ``P``. Because ``P`` already lives on the constrained subspace,
every Newton iterate satisfies the sum-to-zero constraints without any
correction step, and the cost per hyperparameter does not depend on how
many constraints the model carries.

For a likelihood precision ``A^T W A`` all updates go through the d x d
capacitance matrix ``M = I + W^1/2 A P A^T W^1/2``. The generalized
log-determinants of prior and posterior then collapse to ``-log|M|``:

    log pi(theta | y) = log pi(theta) + log pi(y | x*) - x*^T Q x* / 2 - log|M| / 2
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from dense_inla.errors import DenseInlaError, NotConverged, NumericalFailure
from dense_inla.kernels import mixture_quantiles
from dense_inla.linalg import LowRankUpdate

logger = logging.getLogger(__name__)

QUANTILE_PROBS = (0.025, 0.5, 0.975)


@dataclass(frozen=True)
class InferenceOptions:
    strategy: str = "GA"
    max_newton: int = 50
    newton_tol: float = 1e-8
    grad_step: float = 5e-3
    hess_step: float = 1e-2
    grad_tol: float = 1e-4
    max_opt_iter: int = 100
    fail_grad_tol: float = 1e-2
    hess_floor: float = 1e-6
    drop_threshold: float = 2.5
    z_step: float = 1.0
    max_axis_steps: int = 8
    theta_bounds: tuple = (-20.0, 25.0)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.strategy != "GA":
            raise ValueError(f"only the 'GA' strategy is supported, got {self.strategy!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(eq=False)
class GaussianApproxResult:
    x_star: np.ndarray
    sigma_star: np.ndarray
    canonical_b: np.ndarray
    loglik_at_mode: float
    quad_form: float
    logdet_capacitance: float
    eta_mean: np.ndarray
    eta_var: np.ndarray
    sigma_diag: np.ndarray
    iterations: int
    converged: bool


def _pmap(func, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))


class _Linearization:
    """Design products with ``P`` that are fixed for one hyperparameter."""

    def __init__(self, model, theta):
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        self.P = model.prior_geninv(theta).matrix
        A = model.design
        self.AP = A.gather(self.P)  # A P, d x s
        self.APAt = A.gather(np.ascontiguousarray(self.AP.T))  # A P A^T, d x d
        self.APAt = 0.5 * (self.APAt + self.APAt.T)

    def system(self, w):
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise NumericalFailure("likelihood curvature must be finite and non-negative")
        sw = np.sqrt(w)
        return LowRankUpdate(self.P, sw[:, None] * self.AP, sw[:, None] * self.APAt * sw[None, :]), sw


def _objective(model, lik, lin, x):
    ll = lik.loglik(model.design.matvec(x))
    if not np.isfinite(ll):
        return -np.inf
    return ll - 0.5 * model.quad_form(x, lin.theta)


def gaussian_approx(model, theta, lik, options=None, covariance=True) -> GaussianApproxResult:
    """Constrained Gaussian approximation of ``pi(x | theta, y)``.

    Newton iterations in effect space starting at ``x = 0``: with
    ``(g, w)`` the likelihood gradient and curvature at ``eta = A x``, the
    next iterate is ``Sigma* A^T (g + w eta)``. A step is halved while it
    lowers the log full conditional. Iteration stops when the step falls
    below ``newton_tol``, or below ``1e3 * newton_tol`` once the objective
    change is at round-off level.
    """
    opts = options or InferenceOptions()
    if model.design is None:
        raise ValueError("model has no design matrix")
    A = model.design
    lin = _Linearization(model, theta)
    x = np.zeros(model.s)
    obj = _objective(model, lik, lin, x)
    converged = False
    it = 0
    for it in range(1, opts.max_newton + 1):
        eta = A.matvec(x)
        _, g, w = lik.terms(eta)
        sys, _ = lin.system(w)
        x_new = sys.apply(A.rmatvec(g + w * eta))
        step = x_new - x
        t = 1.0
        obj_new = _objective(model, lik, lin, x + step)
        while not obj_new >= obj - 1e-12 * (1.0 + abs(obj)) and t > 1e-10:
            t *= 0.5
            obj_new = _objective(model, lik, lin, x + t * step)
        x_next = x + t * step
        delta = float(np.max(np.abs(x_next - x))) if x.size else 0.0
        # large curvatures leave a round-off floor on the step just above the tolerance
        stalled = abs(obj_new - obj) <= 1e-11 * (1.0 + abs(obj)) and delta < 1e3 * opts.newton_tol
        x, obj = x_next, obj_new
        if delta < opts.newton_tol or stalled:
            converged = True
            break
    if not converged:
        raise NotConverged(
            f"Newton iteration did not converge in {opts.max_newton} steps at theta={lin.theta}",
            last=x,
        )
    eta = A.matvec(x)
    ll, g, w = lik.terms(eta)
    sys, sw = lin.system(w)
    b = A.rmatvec(g + w * eta)
    G = sw[:, None] * lin.APAt
    eta_var = np.diag(lin.APAt) - np.sum(G * sys.solve_capacitance(G), axis=0)
    sigma = sys.covariance() if covariance else None
    sigma_diag = np.diag(sigma).copy() if covariance else None
    return GaussianApproxResult(
        x_star=x,
        sigma_star=sigma,
        canonical_b=b,
        loglik_at_mode=ll,
        quad_form=model.quad_form(x, lin.theta),
        logdet_capacitance=sys.logdet_capacitance(),
        eta_mean=eta,
        eta_var=np.maximum(eta_var, 0.0),
        sigma_diag=sigma_diag,
        iterations=it,
        converged=converged,
    )


def _log_post_from_ga(model, theta, ga):
    return float(
        model.log_prior(theta) + ga.loglik_at_mode - 0.5 * ga.quad_form - 0.5 * ga.logdet_capacitance
    )


def log_posterior_theta(model, theta, lik, options=None) -> float:
    """Unnormalized Laplace approximation of ``log pi(theta | y)``."""
    ga = gaussian_approx(model, theta, lik, options, covariance=False)
    return _log_post_from_ga(model, theta, ga)


# --------------------------------------------------------------------------
# Stage 1: mode search and exploration
# --------------------------------------------------------------------------


def fd_gradient(f, x, step, threads=1):
    """Central-difference gradient; the 2h evaluations run as a parallel map."""
    x = np.asarray(x, dtype=float)
    h = x.size
    pts = []
    for j in range(h):
        e = np.zeros(h)
        e[j] = step
        pts += [x + e, x - e]
    vals = _pmap(f, pts, threads)
    return np.array([(vals[2 * j] - vals[2 * j + 1]) / (2 * step) for j in range(h)])


def fd_hessian(f, x, step, f0=None, threads=1):
    """Central second differences, symmetrized."""
    x = np.asarray(x, dtype=float)
    h = x.size
    E = np.eye(h) * step
    pts = []
    for i in range(h):
        pts += [x + E[i], x - E[i]]
    for i in range(h):
        for j in range(i + 1, h):
            pts += [x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]]
    if f0 is None:
        pts.append(x)
    vals = _pmap(f, pts, threads)
    if f0 is None:
        f0 = vals[-1]
    H = np.empty((h, h))
    for i in range(h):
        H[i, i] = (vals[2 * i] - 2 * f0 + vals[2 * i + 1]) / step**2
    k = 2 * h
    for i in range(h):
        for j in range(i + 1, h):
            pp, pm, mp, mm = vals[k : k + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * step**2)
            k += 4
    return 0.5 * (H + H.T)


def floor_spd(H, floor):
    """Symmetrize and lift eigenvalues below ``floor`` up to ``floor``."""
    lam, V = np.linalg.eigh(0.5 * (H + H.T))
    lam = np.maximum(lam, floor)
    return (V * lam) @ V.T


@dataclass
class ModeResult:
    theta: np.ndarray
    neg_hessian: np.ndarray
    log_post: float
    gradient: np.ndarray
    iterations: int
    evaluations: int


def maximize_log_posterior(f, theta0, options=None) -> ModeResult:
    """Maximize ``f`` with L-BFGS on central-difference gradients.

    The L-BFGS result is refined by up to three Newton steps with the
    finite-difference Hessian, each kept only if it increases ``f``.
    """
    opts = options or InferenceOptions()
    theta0 = np.asarray(theta0, dtype=float)
    h = theta0.size
    count = [0]
    cache = {}

    def fval(t):
        key = tuple(np.asarray(t, dtype=float).tolist())
        if key not in cache:
            count[0] += 1
            cache[key] = float(f(np.asarray(key)))
        return cache[key]

    if h == 0:
        return ModeResult(theta0, np.zeros((0, 0)), fval(theta0), np.zeros(0), 0, count[0])

    def neg(t):
        v = fval(t)
        return -v if np.isfinite(v) else 1e300

    def neg_grad(t):
        return -fd_gradient(fval, t, opts.grad_step, opts.threads)

    lo, hi = opts.theta_bounds
    res = minimize(
        neg,
        theta0,
        jac=neg_grad,
        method="L-BFGS-B",
        bounds=[(lo, hi)] * h,
        options={"maxiter": opts.max_opt_iter, "gtol": opts.grad_tol, "ftol": 1e-15, "maxls": 40},
    )
    theta = np.asarray(res.x, dtype=float)
    grad = fd_gradient(fval, theta, opts.grad_step, opts.threads)
    if np.max(np.abs(grad)) > opts.fail_grad_tol and res.nit >= opts.max_opt_iter:
        raise NotConverged(
            f"mode search hit {opts.max_opt_iter} iterations with |grad|={np.max(np.abs(grad)):.3g}",
            last=theta,
        )
    H = floor_spd(-fd_hessian(fval, theta, opts.hess_step, fval(theta), opts.threads), opts.hess_floor)
    moved = False
    for _ in range(3):
        if np.max(np.abs(grad)) < 1e-3 * opts.grad_tol:
            break
        trial = np.clip(theta + np.linalg.solve(H, grad), lo, hi)
        if not fval(trial) > fval(theta):
            break
        theta, moved = trial, True
        grad = fd_gradient(fval, theta, opts.grad_step, opts.threads)
    if moved:
        H = floor_spd(
            -fd_hessian(fval, theta, opts.hess_step, fval(theta), opts.threads), opts.hess_floor
        )
    if np.max(np.abs(grad)) > opts.fail_grad_tol:
        logger.warning("mode search ended with gradient norm %.3g", np.max(np.abs(grad)))
    return ModeResult(theta, H, fval(theta), grad, int(res.nit), count[0])


def optimize_theta(model, lik, theta0=None, options=None):
    """Mode ``theta*`` of the approximate hyperparameter posterior.

    Returns ``(theta_star, neg_hessian_at_mode)``.
    """
    res = _optimize(model, lik, theta0, options)
    return res.theta, res.neg_hessian


def _optimize(model, lik, theta0, options):
    opts = options or InferenceOptions()
    if theta0 is None:
        theta0 = np.zeros(model.n_hyper)

    def f(t):
        return log_posterior_theta(model, t, lik, opts)

    return maximize_log_posterior(f, theta0, opts)


@dataclass(eq=False)
class ThetaPoint:
    theta: np.ndarray
    log_post: float
    weight: float = 0.0
    axis: int = -1  # -1 for the mode
    z: float = 0.0
    ga: GaussianApproxResult = field(default=None, repr=False)
    constraint_residual: tuple = (0.0, 0.0)


@dataclass
class Exploration:
    points: list
    scale_plus: np.ndarray
    scale_minus: np.ndarray
    z_to_theta: np.ndarray
    dropped: int
    axis_log_sums: np.ndarray


def explore_theta(f, theta_star, neg_hess, options=None, f_star=None) -> Exploration:
    """Axis grid in standardized coordinates ``theta = theta* + V L^-1/2 z``.

    Each half-axis is walked in steps of ``z_step`` while the drop of
    ``f`` from the mode stays below ``drop_threshold``. The half-axis
    scale is where the drop crosses the threshold, relative to the
    Gaussian value ``sqrt(2 * threshold)``. Weights are ``exp(f)``
    normalized over the retained points. ``f`` may return a value or a
    ``(value, payload)`` pair; failing evaluations are dropped.
    """
    opts = options or InferenceOptions()
    theta_star = np.asarray(theta_star, dtype=float)
    h = theta_star.size

    def call(t):
        try:
            out = f(t)
        except DenseInlaError as exc:
            logger.warning("dropping theta=%s: %s", t, exc)
            return None
        return out if isinstance(out, tuple) else (out, None)

    mode = call(theta_star) if f_star is None else f_star
    if mode is None:
        raise NumericalFailure("evaluation failed at the mode")
    f0 = mode[0]
    if h == 0:
        pt = ThetaPoint(theta_star, f0, 1.0, -1, 0.0, mode[1])
        return Exploration([pt], np.zeros(0), np.zeros(0), np.zeros((0, 0)), 0, np.zeros(0))

    lam, V = np.linalg.eigh(floor_spd(neg_hess, opts.hess_floor))
    Sz = V / np.sqrt(lam)
    gauss_cross = np.sqrt(2.0 * opts.drop_threshold)

    def walk(task):
        j, sign = task
        pts, dropped, prev_z, prev_drop = [], 0, 0.0, 0.0
        cross = None
        for k in range(1, opts.max_axis_steps + 1):
            z = sign * k * opts.z_step
            t = theta_star + Sz[:, j] * z
            out = call(t)
            if out is None:
                dropped += 1
                continue
            drop = f0 - out[0]
            if drop > opts.drop_threshold:
                frac = (opts.drop_threshold - prev_drop) / (drop - prev_drop) if drop > prev_drop else 1.0
                cross = abs(prev_z) + frac * (abs(z) - abs(prev_z))
                break
            pts.append(ThetaPoint(t, out[0], 0.0, j, z, out[1]))
            prev_z, prev_drop = z, max(drop, 0.0)
        if cross is None:
            cross = opts.max_axis_steps * opts.z_step
        return pts, dropped, cross / gauss_cross

    tasks = [(j, s) for j in range(h) for s in (1.0, -1.0)]
    walks = _pmap(walk, tasks, opts.threads)
    points = [ThetaPoint(theta_star, f0, 0.0, -1, 0.0, mode[1])]
    s_plus, s_minus = np.empty(h), np.empty(h)
    dropped = 0
    for (j, sgn), (pts, nd, scale) in zip(tasks, walks):
        points += pts
        dropped += nd
        (s_plus if sgn > 0 else s_minus)[j] = scale
    points.sort(key=lambda p: (p.axis, p.z))
    lp = np.array([p.log_post for p in points])
    w = np.exp(lp - lp.max())
    w /= w.sum()
    for p, wk in zip(points, w):
        p.weight = float(wk)
    axis_sums = np.array(
        [
            np.log(opts.z_step * sum(np.exp(p.log_post - f0) for p in points if p.axis in (-1, j)))
            for j in range(h)
        ]
    )
    return Exploration(points, s_plus, s_minus, Sz, dropped, axis_sums)


# --------------------------------------------------------------------------
# Stage 2: latent marginals and criteria
# --------------------------------------------------------------------------


@dataclass(eq=False)
class MarginalSummary:
    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    labels: list = None


@dataclass(eq=False)
class HyperMarginal:
    name: str
    mean: float
    sd: float
    bin_edges: np.ndarray
    density: np.ndarray


def mixture_summary(means, variances, weights, labels=None) -> MarginalSummary:
    """Moments and quantiles of per-element Gaussian mixtures.

    ``means`` and ``variances`` have shape (K, s).
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.maximum(np.atleast_2d(np.asarray(variances, dtype=float)), 0.0)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ means
    second = w @ (variances + means**2)
    var = np.maximum(second - mean**2, 0.0)
    q = mixture_quantiles(means, np.sqrt(variances), w, np.array(QUANTILE_PROBS))
    return MarginalSummary(mean, np.sqrt(var), q[:, 0], q[:, 1], q[:, 2], labels)


def latent_marginals(model, points, hyper_names=None):
    """Mixture marginals of the latent field and weighted hyper histograms."""
    w = np.array([p.weight for p in points])
    means = np.array([p.ga.x_star for p in points])
    var = np.array([p.ga.sigma_diag for p in points])
    summary = mixture_summary(means, var, w, model.layout.labels())
    thetas = np.array([p.theta for p in points]).reshape(len(points), -1)
    hyper = []
    names = hyper_names or [f"theta{j}" for j in range(thetas.shape[1])]
    for j in range(thetas.shape[1]):
        col = thetas[:, j]
        m = float(w @ col)
        sd = float(np.sqrt(max(w @ (col - m) ** 2, 0.0)))
        lo, hi = col.min(), col.max()
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        dens, edges = np.histogram(col, bins=min(10, max(1, len(col))), range=(lo, hi), weights=w, density=True)
        hyper.append(HyperMarginal(names[j], m, sd, edges, dens))
    return summary, hyper


def model_criteria(model, lik, points, exploration=None):
    """``(dic, log_mlik)`` from the explored hyperparameter points.

    The deviance is averaged in closed form under each point's Gaussian
    approximation of the linear predictor, then mixed with the point
    weights. The marginal likelihood integrates ``exp(log_post)`` over
    each standardized axis with a Riemann sum in steps of ``z_step``.
    """
    w = np.array([p.weight for p in points])
    mean_dev = float(sum(wk * lik.expected_deviance(p.ga.eta_mean, p.ga.eta_var) for wk, p in zip(w, points)))
    x_bar = w @ np.array([p.ga.x_star for p in points])
    dev_at_mean = -2.0 * lik.loglik(model.design.matvec(x_bar))
    dic = 2.0 * mean_dev - dev_at_mean
    mode = next(p for p in points if p.axis == -1)
    log_mlik = mode.log_post
    if exploration is not None and exploration.z_to_theta.size:
        log_mlik += float(np.sum(exploration.axis_log_sums))
        log_mlik += float(np.linalg.slogdet(exploration.z_to_theta)[1])
    return float(dic), float(log_mlik)


@dataclass(eq=False)
class FitResult:
    theta_mode: np.ndarray
    hessian_at_mode: np.ndarray
    theta_points: list
    latent_marginals: MarginalSummary
    hyper_marginals: list
    dic: float
    log_mlik: float
    layout: object
    diagnostics: dict
    timings: dict


def _evaluate_point(model, lik, theta, opts):
    ga = gaussian_approx(model, theta, lik, opts, covariance=True)
    C = model.constraints
    if C.shape[0]:
        res = (float(np.max(np.abs(C @ ga.x_star))), float(np.max(np.abs(C @ ga.sigma_star))))
    else:
        res = (0.0, 0.0)
    ga.sigma_star = None  # keep memory per point at O(s)
    return _log_post_from_ga(model, theta, ga), (ga, res)


def fit(model, lik, options=None, theta0=None, hyper_names=None) -> FitResult:
    """Mode search, axis exploration, latent mixtures and model criteria."""
    opts = options or InferenceOptions()
    timings = {}
    t0 = time.perf_counter()
    mode = _optimize(model, lik, theta0, opts)
    timings["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()

    def f(t):
        return _evaluate_point(model, lik, t, opts)

    expl = explore_theta(f, mode.theta, mode.neg_hessian, opts)
    points = []
    for p in expl.points:
        ga, res = p.ga
        p.ga, p.constraint_residual = ga, res
        points.append(p)
    timings["explore"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if hyper_names is None and model.n_hyper == 5:
        from dense_inla.model import HYPER_NAMES

        hyper_names = list(HYPER_NAMES)
    latent, hyper = latent_marginals(model, points, hyper_names)
    dic, log_mlik = model_criteria(model, lik, points, expl)
    timings["marginals"] = time.perf_counter() - t0

    diagnostics = {
        "optimizer_iterations": mode.iterations,
        "log_post_evaluations": mode.evaluations,
        "gradient_at_mode": mode.gradient.tolist(),
        "newton_iterations": [p.ga.iterations for p in points],
        "dropped_points": expl.dropped,
        "n_points": len(points),
        "axis_scale_plus": expl.scale_plus.tolist(),
        "axis_scale_minus": expl.scale_minus.tolist(),
        "max_constraint_residual_x": max(p.constraint_residual[0] for p in points),
        "max_constraint_residual_sigma": max(p.constraint_residual[1] for p in points),
        "n_constraints": int(model.constraints.shape[0]),
        "seed": opts.seed,
        "threads": opts.threads,
    }
    return FitResult(
        theta_mode=mode.theta,
        hessian_at_mode=mode.neg_hessian,
        theta_points=points,
        latent_marginals=latent,
        hyper_marginals=hyper,
        dic=dic,
        log_mlik=log_mlik,
        layout=model.layout,
        diagnostics=diagnostics,
        timings=timings,
    )
