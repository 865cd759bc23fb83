"""End-to-end joint solve: build, solve, map, recover, evaluate.

Ties the relaxation, the rank-one recovery and the physics evaluation into
one call returning an OptResult. Infeasibility is a first-class outcome
(the two groups cannot reach a win-win operating point); it is diagnosed
with a relaxed probe that maximizes the common QoS slack and reports which
threshold is out of reach.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import conic, problems, rankone, sysmodel
from .channel import ChannelRealization
from .conic import ConicSolution, Tolerances
from .rankone import RankOneReport
from .sysmodel import Evaluation, ResourceAllocation, SystemParams

__all__ = ["OptResult", "solve_joint", "diagnose_infeasible"]

_EXTRACTORS = {
    "wsr_fixed": rankone.extract_wsr_fixed,
    "wsr_flexible": rankone.extract_wsr_flexible,
    "min_power": rankone.extract_min_power,
}


@dataclass(frozen=True)
class OptResult:
    """Joint-design outcome for one (params, channel, mode) instance."""

    mode: str
    status: str                    # optimal | infeasible | unbounded | numerical_failure
    objective: float | None        # relaxed optimum (wsr or total power)
    allocation: ResourceAllocation | None = None
    evaluation: Evaluation | None = None
    relaxed: object | None = None
    rank_report: RankOneReport | None = None
    residuals: dict = field(default_factory=dict)
    message: str = ""

    @property
    def metric(self) -> float | None:
        """Physically achieved metric of the recovered allocation."""
        if self.evaluation is None:
            return None
        return (self.evaluation.total_power if self.mode == "min_power"
                else self.evaluation.wsr)


def solve_joint(params: SystemParams, ch: ChannelRealization, mode: str,
                tolerances: Tolerances | None = None,
                rank_tol: float = 1e-6,
                diagnose: bool = True) -> OptResult:
    """Globally solve one design and recover the physical allocation."""
    built = problems.build_program(params, ch, mode)
    sol = conic.solve(built.prog, tolerances)
    if sol.status != "optimal":
        message = sol.certificate
        if sol.status == "infeasible" and diagnose:
            message = diagnose_infeasible(params, ch, mode, tolerances)
        return OptResult(mode=mode, status=sol.status, objective=None,
                         residuals=sol.residuals, message=message)

    relaxed = problems.map_solution(built, sol)
    report = _EXTRACTORS[mode](relaxed, params, ch, rel_tol=rank_tol)
    alloc = rankone.assemble_allocation(relaxed, params, report.omega)
    ev = sysmodel.evaluate(params, ch, alloc)
    residuals = dict(sol.residuals)
    scale = max(1.0, abs(relaxed.objective))
    residuals["recovery_gap_rel"] = abs(report.objective_after
                                        - relaxed.objective) / scale
    residuals["recovery_feasibility"] = report.feasibility_residual
    return OptResult(mode=mode, status="optimal", objective=relaxed.objective,
                     allocation=alloc, evaluation=ev, relaxed=relaxed,
                     rank_report=report, residuals=residuals)


def diagnose_infeasible(params: SystemParams, ch: ChannelRealization,
                        mode: str, tolerances: Tolerances | None = None) -> str:
    """Explain an infeasible instance via the max-common-slack probe."""
    built = problems.build_program(params, ch, mode, slack_probe=True)
    sol = conic.solve(built.prog, tolerances)
    if sol.status != "optimal":
        return ("no win-win cooperation: thresholds unattainable "
                f"(slack probe status {sol.status})")
    slack = sol.scalars["qos_slack"]
    r1 = sol.scalars["rate1"]
    r2 = sol.scalars["rate2"]
    short = []
    if r1 <= params.r_s1 + slack + 1e-9:
        short.append(f"group 1 reaches only {r1:.4g} of the required "
                     f"{params.r_s1:.4g} bits")
    if r2 <= params.r_s2 + slack + 1e-9:
        short.append(f"group 2 reaches only {r2:.4g} of the required "
                     f"{params.r_s2:.4g} bits")
    detail = "; ".join(short) if short else "thresholds jointly unattainable"
    return (f"no win-win cooperation: best common QoS slack is {slack:.4g} "
            f"bits ({detail})")
