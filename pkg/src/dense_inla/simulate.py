"""Synthetic spatiotemporal count data drawn from the model's own priors."""
from dataclasses import dataclass

import numpy as np

from dense_inla.errors import InvalidSize
from dense_inla.gmrf import GraphSpec, InteractionType
from dense_inla.likelihood import CountData
from dense_inla.model import ModelSpec, assemble_model, build_design_matrix
from dense_inla.oracle import KrigingConfig, sample_constrained_igmrf


def generate_lattice_graph(m) -> GraphSpec:
    """Connected near-square lattice on ``m`` nodes.

    The first ``r * c`` nodes (``r = floor(sqrt(m))``, ``c = m // r``) form
    a row-major grid with rook neighbours; any remaining nodes are chained
    onto the last grid node.
    """
    if m < 2:
        raise InvalidSize(f"lattice needs at least 2 nodes, got {m}")
    r = int(np.floor(np.sqrt(m)))
    c = m // r
    edges = []
    for i in range(r):
        for j in range(c):
            k = i * c + j
            if j + 1 < c:
                edges.append((k, k + 1))
            if i + 1 < r:
                edges.append((k, k + c))
    for k in range(r * c, m):
        edges.append((k - 1, k))
    return GraphSpec.from_edges(m, edges)


@dataclass(frozen=True)
class SimulationSpec:
    """Simulation settings.

    ``precisions`` are the true (alpha, gamma, delta, phi, eps) precisions
    applied to the scaled structures. ``graph`` defaults to
    :func:`generate_lattice_graph`.
    """

    n: int
    m: int
    interaction: InteractionType = InteractionType(4, 2)
    precisions: tuple = (1.0, 250.0, 1.0, 250.0, 4.0)
    intercept: float = 1.0
    graph: GraphSpec = None
    seed: int = 0
    E: float = 1.0
    jitter: float = KrigingConfig().jitter

    def __post_init__(self):
        if len(self.precisions) != 5 or any(not p > 0 for p in self.precisions):
            raise ValueError("need five positive precisions")
        if not self.E > 0:
            raise ValueError("expected counts must be positive")

    def model_spec(self, **kwargs) -> ModelSpec:
        g = self.graph if self.graph is not None else generate_lattice_graph(self.m)
        return ModelSpec(self.n, self.m, self.interaction, g, **kwargs)


def simulate_dataset(spec: SimulationSpec):
    """Draw effects, assemble the predictor and sample Poisson counts.

    Returns ``(CountData, truth)`` where ``truth`` is the latent vector in
    layout order ``(mu, alpha, gamma, delta, phi, eps)`` with one
    observation per (time, area) cell, time-major.
    """
    mspec = spec.model_spec()
    model = assemble_model(mspec)
    ss = np.random.SeedSequence(spec.seed)
    child_seeds = ss.generate_state(len(model.blocks) + 1)
    parts = []
    for block, seed in zip(model.blocks, child_seeds):
        if block.hyper is None:
            parts.append(np.full(block.size, float(spec.intercept)))
            continue
        tau = spec.precisions[block.hyper]
        parts.append(sample_constrained_igmrf(block.structure, tau, 1, int(seed), spec.jitter)[0])
    truth = np.concatenate(parts)
    n, m = spec.n, spec.m
    time = np.repeat(np.arange(1, n + 1), m)
    space = np.tile(np.arange(1, m + 1), n)
    eta = build_design_matrix(mspec, time, space).matvec(truth)
    rng = np.random.Generator(np.random.Philox(int(child_seeds[-1])))
    E = np.full(n * m, float(spec.E))
    y = rng.poisson(E * np.exp(eta)).astype(float)
    return CountData(y, E, time, space), truth
