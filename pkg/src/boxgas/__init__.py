"""Marked-box lattice gas: exact partition functions, canonical Monte Carlo,
variational free energies and the structure of the condensation regime."""

__version__ = "0.1.0"

from .energy import BoxRegion, Configuration, total_energy
from .errors import BoxGasError, ConsistencyError, ConvergenceError, EnumerationLimitError, PreconditionError
from .exact import (
    PinnedMacro,
    canonical_law,
    finite_volume_entropy,
    free_case_oracle,
    partition_conditional,
    partition_dirichlet,
    pinned_macro_partition,
)
from .model import INFINITE, IntensitySequence, ModelSpec, Potential, mark_points, self_interaction
from .structure import FreeEnergyCurve, analyze, extend_chi, mass_curves, saturation_curve, solve_rho_t
from .varfree import (
    MacroDistribution,
    MassSequence,
    chi_bounds,
    el_fixed_point,
    free_gas_chi,
    product_ansatz_min,
    product_ansatz_phi,
    relative_entropy,
)
