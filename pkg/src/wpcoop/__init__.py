"""Globally optimal resource allocation for two-group wireless-powered
cooperation: time shares, energy beamforming and power allocation via
semidefinite relaxation over mixed linear/PSD/exponential cones, with
constructive rank-one beamformer recovery, randomized benchmark schemes,
brute-force grid oracles and a Monte Carlo experiment CLI.
"""

from .channel import (ChannelRealization, Topology, figure_topology,
                      path_loss_variance, sample_channels)
from .conic import (ConicProgram, ConicSolution, DiagnosticError, Tolerances,
                    solve)
from .pipeline import OptResult, diagnose_infeasible, solve_joint
from .problems import (RelaxedFixedPowerSolution, RelaxedFlexiblePowerSolution,
                       build_min_power, build_program, build_wsr_fixed,
                       build_wsr_flexible, map_solution)
from .rankone import (RankOneReport, assemble_allocation, extract_min_power,
                      extract_wsr_fixed, extract_wsr_flexible, numerical_rank)
from .sysmodel import (MODES, Evaluation, FeasibilityReport,
                       ResourceAllocation, SystemParams, check_feasibility,
                       evaluate, rate_c)

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization", "Topology", "figure_topology", "path_loss_variance",
    "sample_channels",
    "ConicProgram", "ConicSolution", "DiagnosticError", "Tolerances", "solve",
    "OptResult", "diagnose_infeasible", "solve_joint",
    "RelaxedFixedPowerSolution", "RelaxedFlexiblePowerSolution",
    "build_min_power", "build_program", "build_wsr_fixed", "build_wsr_flexible",
    "map_solution",
    "RankOneReport", "assemble_allocation", "extract_min_power",
    "extract_wsr_fixed", "extract_wsr_flexible", "numerical_rank",
    "MODES", "Evaluation", "FeasibilityReport", "ResourceAllocation",
    "SystemParams", "check_feasibility", "evaluate", "rate_c",
    "__version__",
]
