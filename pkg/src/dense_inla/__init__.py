"""Dense-matrix INLA for spatiotemporal disease-mapping models.

Intrinsic priors are handled through pseudo-inverses of their structure
matrices, so sum-to-zero constraints never enter the inference explicitly.
"""
from dense_inla.errors import (
    DegenerateParams,
    DenseInlaError,
    InvalidData,
    InvalidGraph,
    InvalidMatrix,
    InvalidSize,
    NotConverged,
    NumericalFailure,
    ParseError,
    RankMismatch,
    Unsupported,
)
from dense_inla.gmrf import (
    GraphSpec,
    InteractionType,
    StructureMatrix,
    build_besag,
    build_iid,
    build_rw,
    constraint_basis,
    constraint_count,
    interaction_structure,
    kronecker_structure,
    scale_structure,
)
from dense_inla.inference import (
    FitResult,
    GaussianApproxResult,
    InferenceOptions,
    MarginalSummary,
    ThetaPoint,
    explore_theta,
    fit,
    gaussian_approx,
    latent_marginals,
    log_posterior_theta,
    model_criteria,
    optimize_theta,
)
from dense_inla.kernels import BACKEND
from dense_inla.likelihood import CountData, GaussianLikelihood, PoissonLikelihood
from dense_inla.linalg import (
    pseudo_inverse,
    woodbury_posterior_cov,
)
from dense_inla.model import (
    DesignMatrix,
    EffectBlock,
    LatentModel,
    ModelSpec,
    PriorSpec,
    assemble_model,
    build_design_matrix,
)
from dense_inla.oracle import (
    KrigingConfig,
    brute_force_theta_posterior,
    equivalence_check,
    kriging_correct,
    sample_constrained_igmrf,
)
from dense_inla.simulate import SimulationSpec, generate_lattice_graph, simulate_dataset

__version__ = "0.1.0"
