"""Multi-time measurement statistics of finite quantum systems.

The package computes sequential-measurement probabilities and the complex
bi-probabilities underneath them, verifies the structural properties that make
the latter a consistent calculus (normalization, bi-consistency, causality,
factorization, positive semi-definiteness), and exposes the derived
phenomenology: coarse-graining interference, composite-system co-interference,
Markovianity, the Zeno effect, uncertainty matrices, open-system dynamical
maps, and a Monte-Carlo virtual lab that replays it all from sampled outcome
sequences.
"""

from .core import (
    Device,
    State,
    SystemSpec,
    device_from_hermitian,
    heisenberg_projectors,
    mub_partner,
    propagator,
    tensor_device,
    validate_device,
)
from .engine import (
    BiProbTable,
    BiSequence,
    PropertyReport,
    Schedule,
    TableSizeError,
    biprob,
    biprob_table,
    gudder_metric,
    marginalize_pair,
    property_report,
    uniform_bound_check,
)
from .coarse import (
    CoarseSchedule,
    Resolution,
    coarse_device,
    extreme_coarse_delta,
    faux_coarse_prob,
    interference_term,
    pairwise_decompose,
    quantum_coarse_prob,
)
from .composite import (
    CompositeSpec,
    Coupling,
    co_interference,
    compose,
    factorization_delta,
    identical_relations_check,
    product_state,
)
from .phenomena import (
    InitSpec,
    ZenoSeries,
    conditional_prob,
    init_metric,
    markov_delta,
    stationarity_delta,
    uncertainty_matrix,
    zeno_rate,
    zeno_scan,
)
from .master import (
    CoordTau,
    OpenSpec,
    Superoperator,
    classical_diagnostic,
    dynamical_map_bitraj,
    dynamical_map_exact,
    gellmann_generators,
    observable_restriction_delta,
    system_biprob,
    two_time_commutator,
)
from .lab import (
    EmpiricalDist,
    SampleRun,
    empirical_distribution,
    estimate_uncertainty,
    reconstruct_interference,
    sample_sequences,
)

__version__ = "0.1.0"
