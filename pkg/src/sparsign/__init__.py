"""Sign and ternary compressed distributed SGD under data heterogeneity."""
from .core import (
    CompressionBudget,
    QuantizedMessage,
    RngStream,
    TernaryMessage,
    as_vector,
    densify,
    sign_of,
)
from .kernels import BACKEND
from .compressors import (
    CompressorConfig,
    compress,
    deterministic_sign,
    noisy_sign,
    qsgd,
    scaled_sign,
    sparsign,
    terngrad,
)
from .aggregation import ServerState, ef_aggregate, majority_vote
from .coding import BitCost, golomb_bits_per_index, message_cost
from .objectives import (
    QuadraticProblem,
    ScaledRosenbrock,
    SyntheticClassification,
    dirichlet_partition,
    local_stochastic_gradient,
    rosenbrock_value_grad,
    sample_scales,
)
from .simulation import RoundRecord, RunConfig, RunResult, measure_wrong_aggregation, run_alg1, run_alg2
from .analysis import (
    WorkerOutcomeDist,
    brute_force_wrong_prob,
    corollary1_pq,
    kappa_diagnostic,
    theorem1_bound,
    theorem3_bound,
)

__version__ = "0.1.0"
