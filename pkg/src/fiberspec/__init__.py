"""Finite-mode spectral laboratory for the Pauli-Fierz fiber Hamiltonian H(xi)."""

__version__ = "0.1.0"

from .fock import (  # noqa: E402
    FockBasis,
    SparseOperator,
    annihilation_matrix,
    creation_matrix,
    diagonal_operator,
    enumerate_basis,
    number_operator,
    tensor_with_spin,
)
from .field import (  # noqa: E402
    CouplingParams,
    FieldDiscretization,
    Model,
    assemble_fiber_hamiltonian,
    assemble_field_operators,
    build_mode_set,
    polarization_frame,
)
from .spectral import (  # noqa: E402
    GroundStateRecord,
    IndefiniteShiftError,
    dispersion,
    fd_gradient,
    lowest_eigenpair,
    solve_shifted,
)
