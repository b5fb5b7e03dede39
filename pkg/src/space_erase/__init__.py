"""Sparse closed-form concept erasure for linear projection matrices."""
from .errors import (
    CapacityError,
    FormatError,
    IllConditionedError,
    InvalidInputError,
    NumericalError,
    SpaceEraseError,
)
from .matrix import (
    CsrMatrix,
    csr_to_dense,
    dense_to_csr,
    entrywise_l1_norm,
    frobenius_norm,
    power_iteration_gram,
    sparsity_fraction,
    spectral_norm_gram,
)
from .objective import (
    ConceptMatrices,
    ErasureObjective,
    closed_form_uce,
    frobenius_lipschitz_constant,
    gradient,
    lipschitz_constant,
    smooth_loss,
    total_objective,
    zero_solution_threshold,
)
from .solver import (
    Algorithm,
    SolverConfig,
    SolverState,
    SolveTrace,
    fista_step,
    ista_step,
    momentum_next,
    optimality_residual,
    shrinkage,
    solve,
)

__version__ = "0.1.0"
