"""Model declaration, latent layout, design matrix and hyperpriors.

The spatiotemporal predictor is

    eta_ij = mu + sum_k beta_k z_ijk + alpha_i + gamma_i + delta_j + phi_j + eps_ij

with the latent vector ordered ``(mu, beta, alpha, gamma, delta, phi, eps)``
and ``eps`` stored time-major (space index varies fastest). A
:class:`ModelSpec` compiles into a generic :class:`LatentModel`, which is
what the inference engine consumes; small test models are built as
``LatentModel`` directly.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from dense_inla.errors import DegenerateParams, InvalidData, InvalidSize, NumericalFailure
from dense_inla.gmrf import (
    GraphSpec,
    InteractionType,
    StructureMatrix,
    build_besag,
    build_iid,
    build_rw,
    constraint_basis,
    interaction_structure,
    scale_structure,
)
from dense_inla.kernels import design_gather, design_gram, design_rmatvec

HYPER_NAMES = ("log_tau_alpha", "log_tau_gamma", "log_tau_delta", "log_tau_phi", "log_tau_eps")


# --------------------------------------------------------------------------
# Priors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PriorSpec:
    """Hyperprior declaration.

    ``pc_joint`` is the variance-partitioning prior over the five log
    precisions (alpha, gamma, delta, phi, eps). ``pc_independent`` puts a
    PC prior ``P(sigma > U) = a`` on each precision; ``pc_params`` lists
    ``(U, a)`` per hyperparameter and defaults to ``(1, 0.01)``.
    """

    kind: str = "pc_joint"
    U1: float = 0.5
    U2: float = 1.0 / 0.31
    a1: float = 0.99
    a2: float = 0.01
    pc_params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("pc_joint", "pc_independent"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        for name in ("U1", "U2", "a1", "a2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.a1 < 1 and 0 < self.a2 < 1):
            raise ValueError("a1 and a2 must lie in (0, 1)")
        for U, a in self.pc_params:
            if not (U > 0 and 0 < a < 1):
                raise ValueError(f"invalid PC parameters (U={U}, a={a})")

    def pc_param(self, j):
        if j < len(self.pc_params):
            return self.pc_params[j]
        return (1.0, 0.01)


def pc_joint_constants(spec: PriorSpec):
    """Rates ``(lam, b)`` of the variance-partitioning PC prior.

    ``b`` solves ``(1 - exp(-b sqrt(U1))) / (1 - exp(-b)) = a1`` and
    ``lam = -log(a2) / U2`` (tail condition on the total standard deviation).
    """
    r = np.sqrt(spec.U1)

    def f(b):
        return -np.expm1(-b * r) / -np.expm1(-b) - spec.a1

    lo, hi = 1e-10, 50.0
    if f(lo) * f(hi) > 0:
        raise NumericalFailure(
            f"no rate b in (0, 50) gives P(mixing < {spec.U1}) = {spec.a1}"
        )
    b = brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)
    lam = -np.log(spec.a2) / spec.U2
    return lam, b


@dataclass(frozen=True)
class PartitionParams:
    """Variance partition (overall precision, interaction share, 3 splits)."""

    values: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        if len(v) != 5:
            raise ValueError("partition needs five values")
        if not v[0] > 0:
            raise DegenerateParams("overall precision must be positive")
        if any(not 0.0 <= x <= 1.0 for x in v[1:]):
            raise DegenerateParams("partition fractions must lie in [0, 1]")
        object.__setattr__(self, "values", v)


def partition_variances(v: PartitionParams):
    """Variances (alpha, gamma, delta, phi, eps) implied by a partition."""
    t1, t2, t3, t4, t5 = v.values
    total = 1.0 / t1
    main = total * (1.0 - t2)
    return np.array(
        [
            main * (1.0 - t3) * (1.0 - t4),
            main * (1.0 - t3) * t4,
            main * t3 * (1.0 - t5),
            main * t3 * t5,
            total * t2,
        ]
    )


def partition_to_precisions(v: PartitionParams) -> np.ndarray:
    """Log precisions ``theta`` for a variance partition."""
    var = partition_variances(v)
    if np.any(var <= 0):
        names = [HYPER_NAMES[i] for i in np.flatnonzero(var <= 0)]
        raise DegenerateParams(f"partition gives zero variance for {names}")
    return -np.log(var)


def precisions_to_partition(theta) -> np.ndarray:
    """Inverse of :func:`partition_to_precisions`; accepts batches (..., 5)."""
    v = np.exp(-np.asarray(theta, dtype=float))
    va, vg, vd, vp, ve = np.moveaxis(v, -1, 0)
    total = va + vg + vd + vp + ve
    main = va + vg + vd + vp
    return np.stack(
        [1.0 / total, ve / total, (vd + vp) / main, vg / (va + vg), vp / (vd + vp)], axis=-1
    )


def _log_abs_det_partition_jacobian(theta, step=1e-5):
    theta = np.asarray(theta, dtype=float)
    J = np.empty(theta.shape + (5,))
    for j in range(5):
        e = np.zeros(5)
        e[j] = step
        J[..., :, j] = (precisions_to_partition(theta + e) - precisions_to_partition(theta - e)) / (
            2 * step
        )
    _, logdet = np.linalg.slogdet(J)
    return logdet


def log_prior(theta, spec: PriorSpec):
    """Log hyperprior density in log-precision coordinates.

    Accepts a single vector or a batch of shape (..., h).
    """
    theta = np.asarray(theta, dtype=float)
    if spec.kind == "pc_independent":
        out = np.zeros(theta.shape[:-1])
        for j in range(theta.shape[-1]):
            U, a = spec.pc_param(j)
            lam = -np.log(a) / U
            t = theta[..., j]
            out = out + np.log(lam / 2.0) - t / 2.0 - lam * np.exp(-t / 2.0)
    else:
        if theta.shape[-1] != 5:
            raise ValueError("the joint PC prior needs exactly five log precisions")
        lam, b = pc_joint_constants(spec)
        inv = np.exp(-theta)
        total = inv.sum(axis=-1)
        t_eps = theta[..., 4]
        out = (
            np.log(lam * b / 4.0)
            - np.log(-np.expm1(-b))
            + 0.5 * t_eps
            + 2.0 * np.log(total)
            - lam * np.sqrt(total)
            - b * np.exp(-0.5 * t_eps) / np.sqrt(total)
            + _log_abs_det_partition_jacobian(theta)
        )
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("log prior is not finite")
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Layout and design
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentLayout:
    names: tuple
    sizes: tuple

    @property
    def offsets(self):
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @property
    def s(self):
        return int(sum(self.sizes))

    def slice(self, name):
        i = self.names.index(name)
        off = self.offsets[i]
        return slice(off, off + self.sizes[i])

    def labels(self):
        """``(block, index)`` per latent element, index 1-based within block."""
        return [(nm, k + 1) for nm, sz in zip(self.names, self.sizes) for k in range(sz)]


class DesignMatrix:
    """Sparse-by-row linear map from latent effects to the predictor.

    Row ``r`` has entries ``vals[r, c]`` at columns ``cols[r, c]``; unused
    slots carry value 0.
    """

    def __init__(self, cols, vals, n_effects):
        self.cols = np.ascontiguousarray(cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(vals, dtype=float)
        self.n_effects = int(n_effects)
        if self.cols.shape != self.vals.shape or self.cols.ndim != 2:
            raise InvalidData("cols and vals must be matching 2-D arrays")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= self.n_effects):
            raise InvalidData("design column index out of range")

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=float)
        nnz = max(1, int((A != 0).sum(axis=1).max())) if A.size else 1
        cols = np.zeros((A.shape[0], nnz), dtype=np.int64)
        vals = np.zeros((A.shape[0], nnz))
        for r, row in enumerate(A):
            idx = np.flatnonzero(row)
            cols[r, : idx.size] = idx
            vals[r, : idx.size] = row[idx]
        return cls(cols, vals, A.shape[1])

    @property
    def shape(self):
        return (self.cols.shape[0], self.n_effects)

    def toarray(self):
        A = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.cols.shape[0]), self.cols.shape[1])
        np.add.at(A, (rows, self.cols.ravel()), self.vals.ravel())
        return A

    def matvec(self, x):
        return np.einsum("rc,rc->r", self.vals, np.asarray(x, dtype=float)[self.cols])

    def rmatvec(self, v):
        return design_rmatvec(self.cols, self.vals, v, self.n_effects)

    def gather(self, M):
        """``A @ M`` for a dense ``M`` with ``n_effects`` rows."""
        return design_gather(self.cols, self.vals, M)

    def gram(self, w):
        """``A.T @ diag(w) @ A``."""
        return design_gram(self.cols, self.vals, w, self.n_effects)


@dataclass(frozen=True)
class ModelSpec:
    """Spatiotemporal model with ``n`` time points and ``m`` areas."""

    n: int
    m: int
    interaction: InteractionType
    graph: GraphSpec
    K: int = 0
    prior: PriorSpec = field(default_factory=PriorSpec)
    intercept_prec: float = 0.001
    fixed_prec: float = 0.001
    scale: bool = True

    def __post_init__(self):
        if self.n <= self.interaction.order:
            raise InvalidSize(f"need n > {self.interaction.order}, got n={self.n}")
        if self.m < 2:
            raise InvalidSize(f"need m >= 2 areas, got {self.m}")
        if self.graph.n_nodes != self.m:
            raise InvalidSize(f"graph has {self.graph.n_nodes} nodes but m={self.m}")
        if not self.intercept_prec > 0:
            raise ValueError("intercept precision must be positive")
        if np.any(np.asarray(self.fixed_prec) <= 0):
            raise ValueError("fixed-effect precisions must be positive")


def build_layout(spec: ModelSpec) -> LatentLayout:
    names = ["mu", "beta", "alpha", "gamma", "delta", "phi", "epsilon"]
    sizes = [1, spec.K, spec.n, spec.n, spec.m, spec.m, spec.n * spec.m]
    if spec.K == 0:
        del names[1], sizes[1]
    return LatentLayout(tuple(names), tuple(sizes))


def build_design_matrix(spec: ModelSpec, time, space, covariates=None) -> DesignMatrix:
    """Design for observations at 1-based ``(time, space)`` pairs."""
    time = np.asarray(time)
    space = np.asarray(space)
    if time.shape != space.shape or time.ndim != 1:
        raise InvalidData("time and space indices must be 1-D of equal length")
    if time.size and not (
        np.all(time == np.round(time)) and np.all(space == np.round(space))
    ):
        raise InvalidData("time and space indices must be integers")
    time = time.astype(np.int64)
    space = space.astype(np.int64)
    bad = (time < 1) | (time > spec.n) | (space < 1) | (space > spec.m)
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise InvalidData(
            f"observation {r + 1} at (time={time[r]}, space={space[r]}) is outside "
            f"[1, {spec.n}] x [1, {spec.m}]"
        )
    d = time.size
    Z = np.zeros((d, 0)) if covariates is None else np.asarray(covariates, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape != (d, spec.K):
        raise InvalidData(f"expected covariates of shape ({d}, {spec.K}), got {Z.shape}")
    lay = build_layout(spec)
    off = dict(zip(lay.names, lay.offsets))
    i, j = time - 1, space - 1
    one = np.ones((d, 1))
    cols = [np.zeros((d, 1), dtype=np.int64)]
    vals = [one]
    if spec.K:
        cols.append(np.broadcast_to(off["beta"] + np.arange(spec.K), (d, spec.K)))
        vals.append(Z)
    for name, idx in (
        ("alpha", i),
        ("gamma", i),
        ("delta", j),
        ("phi", j),
        ("epsilon", i * spec.m + j),
    ):
        cols.append((off[name] + idx)[:, None])
        vals.append(one)
    return DesignMatrix(np.hstack(cols), np.hstack(vals), lay.s)


# --------------------------------------------------------------------------
# Generic latent Gaussian model
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EffectBlock:
    """One latent block with prior precision ``tau * structure``.

    ``hyper`` indexes the log precision in ``theta``; ``None`` means the
    block has the fixed precision ``precision``.
    """

    name: str
    structure: StructureMatrix
    hyper: int = None
    precision: float = 1.0

    @property
    def size(self):
        return self.structure.dim


@dataclass(frozen=True, eq=False)
class LatentPriorGenInv:
    matrix: np.ndarray
    nullity: int


class LatentModel:
    """Latent Gaussian model: effect blocks, hyperprior and design matrix."""

    def __init__(self, blocks, prior: PriorSpec = None, design: DesignMatrix = None, n_hyper=None):
        self.blocks = [b for b in blocks if b.size > 0]
        self.layout = LatentLayout(
            tuple(b.name for b in self.blocks), tuple(b.size for b in self.blocks)
        )
        hypers = [b.hyper for b in self.blocks if b.hyper is not None]
        self.n_hyper = int(n_hyper if n_hyper is not None else (max(hypers) + 1 if hypers else 0))
        self.prior = prior if prior is not None else PriorSpec(kind="pc_independent")
        if design is not None and design.n_effects != self.layout.s:
            raise InvalidData(
                f"design has {design.n_effects} columns but the layout has {self.layout.s}"
            )
        self.design = design

    def with_design(self, design):
        return LatentModel(self.blocks, self.prior, design, self.n_hyper)

    @property
    def s(self):
        return self.layout.s

    @cached_property
    def nullity(self):
        return int(sum(b.structure.nullity for b in self.blocks))

    @cached_property
    def constraints(self):
        return constraint_basis(self)

    def precisions(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_hyper,):
            raise ValueError(f"expected {self.n_hyper} hyperparameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericalFailure("hyperparameters must be finite")
        return [b.precision if b.hyper is None else float(np.exp(theta[b.hyper])) for b in self.blocks]

    def prior_geninv(self, theta) -> LatentPriorGenInv:
        P = np.zeros((self.s, self.s))
        for b, off, tau in zip(self.blocks, self.layout.offsets, self.precisions(theta)):
            P[off : off + b.size, off : off + b.size] = b.structure.pinv / tau
        return LatentPriorGenInv(P, self.nullity)

    def prior_precision(self, theta):
        Q = np.zeros((self.s, self.s))
        for b, off, tau in zip(self.blocks, self.layout.offsets, self.precisions(theta)):
            Q[off : off + b.size, off : off + b.size] = tau * b.structure.matrix
        return Q

    def quad_form(self, x, theta):
        """``x^T Q x`` evaluated block by block."""
        total = 0.0
        for b, off, tau in zip(self.blocks, self.layout.offsets, self.precisions(theta)):
            xb = x[off : off + b.size]
            total += tau * float(xb @ (b.structure.matrix @ xb))
        return total

    def log_prior(self, theta):
        if self.n_hyper == 0:
            return 0.0
        return log_prior(theta, self.prior)


def assemble_model(spec: ModelSpec, design: DesignMatrix = None, r_time=None, r_space=None) -> LatentModel:
    """Compile a :class:`ModelSpec` into blocks with scaled structures.

    ``r_time`` and ``r_space`` replace the random-walk and Besag
    structures, e.g. with user-supplied matrices.
    """
    l = spec.interaction.order
    r_time = build_rw(spec.n, l) if r_time is None else r_time
    r_space = build_besag(spec.graph) if r_space is None else r_space
    if r_time.dim != spec.n or r_space.dim != spec.m:
        raise InvalidSize(
            f"structures are {r_time.dim}x{r_time.dim} and {r_space.dim}x{r_space.dim}, "
            f"expected n={spec.n} and m={spec.m}"
        )
    if spec.scale:
        r_time, r_space = scale_structure(r_time), scale_structure(r_space)
    mu = StructureMatrix(np.eye(1), 0, scaled=True, kind="iid")
    blocks = [EffectBlock("mu", mu, None, spec.intercept_prec)]
    if spec.K:
        prec = np.broadcast_to(np.asarray(spec.fixed_prec, dtype=float), (spec.K,))
        beta = StructureMatrix(np.diag(prec), 0, scaled=True, kind="iid")
        blocks.append(EffectBlock("beta", beta, None, 1.0))
    blocks += [
        EffectBlock("alpha", r_time, 0),
        EffectBlock("gamma", build_iid(spec.n), 1),
        EffectBlock("delta", r_space, 2),
        EffectBlock("phi", build_iid(spec.m), 3),
        EffectBlock("epsilon", interaction_structure(spec.interaction, r_time, r_space), 4),
    ]
    return LatentModel(blocks, spec.prior, design, n_hyper=5)


def assemble_prior_geninv(model, theta) -> LatentPriorGenInv:
    """Block-diagonal generalized inverse of the latent prior precision."""
    if isinstance(model, ModelSpec):
        model = assemble_model(model)
    return model.prior_geninv(theta)
