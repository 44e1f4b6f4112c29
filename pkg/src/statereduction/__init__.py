"""Density-operator toolkit for screening-induced state reduction.

Modules: ``qstate`` (finite-dimensional states and operators), ``symmetry``
(identical-particle projectors), ``reduction`` (the screening reduction map),
``screens`` and ``sterngerlach`` (concrete couplings), ``squid`` (flux
double-well spectra and tunneling) and ``cli``.
"""

from .errors import (BoundaryError, ConfigError, ContractViolation, DecompositionError,
                     DimensionBudgetExceeded, InvalidStateError, LayoutError, NoDoubleWell,
                     NoReduction, NumericalError, ProjectorAnnihilation, StateReductionError)
from .qstate import (OperatorMatrix, SpaceLayout, StateOperator, StateVector, evolve,
                     partial_trace, random_state, random_unitary, tensor, trace_distance)
from .reduction import (BilinearExpansion, ChannelDecomposition, ProperMixture, ScreeningScenario,
                        channel_decompose, expand_bilinear, reduce, reduction_triggered, sample)
from .symmetry import IdenticalGroup, ProjectorBundle, build_projector, project_normalize

__all__ = [
    "BilinearExpansion", "BoundaryError", "ChannelDecomposition", "ConfigError",
    "ContractViolation", "DecompositionError", "DimensionBudgetExceeded", "IdenticalGroup",
    "InvalidStateError", "LayoutError", "NoDoubleWell", "NoReduction", "NumericalError",
    "OperatorMatrix", "ProjectorAnnihilation", "ProjectorBundle", "ProperMixture",
    "ScreeningScenario", "SpaceLayout", "StateOperator", "StateReductionError", "StateVector",
    "build_projector", "channel_decompose", "evolve", "expand_bilinear", "partial_trace",
    "project_normalize", "random_state", "random_unitary", "reduce", "reduction_triggered",
    "sample", "tensor", "trace_distance",
]
