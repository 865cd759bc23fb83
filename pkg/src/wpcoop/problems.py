"""Relaxed convex programs for the three allocation designs.

Each design is built as a conic program over the time shares tau, the
per-phase energies phi_m = tau_m * P_m, and a PSD matrix standing in for
the beamformer outer product:

* fixed-power weighted sum rate: matrix variable is the Gram matrix
  scaled by the phase-1 time share (Tr <= tau1); per-phase powers are
  pinned to the source budgets.
* flexible-power weighted sum rate: matrix variable is the Gram matrix
  scaled by the phase-1 radiated energy (Tr <= phi1), with the per-block
  energy budgets phi1 + phi2 <= P_S1 and phi3 <= P_S2.
* power minimization: same variables, objective phi3 + Tr(G) + phi2 and
  no source budgets. phi1 appears only through Tr(G) <= phi1, so it is
  eliminated from the built program and reported as Tr(G*).

Every log-rate term becomes one perspective-log hypograph atom; the
rank-one constraint is dropped (semidefinite relaxation) and restored
afterwards by the recovery module. Builders optionally pin the beamformer
and/or the time vector, which is how the benchmark schemes obtain their
restricted programs. Builders are pure; programs for different inputs may
be built and solved concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conic
from .channel import ChannelRealization
from .conic import ConicProgram, ConicSolution, DiagnosticError, LinExpr, MatVar
from .sysmodel import MODES, SystemParams

__all__ = [
    "TAU_EPS",
    "ChannelConstants",
    "BuiltProgram",
    "RelaxedFixedPowerSolution",
    "RelaxedFlexiblePowerSolution",
    "build_program",
    "build_wsr_fixed",
    "build_wsr_flexible",
    "build_min_power",
    "map_solution",
]

#: Phases shorter than this are treated as zero for energy/time divisions.
TAU_EPS = 1e-9


@dataclass(frozen=True)
class ChannelConstants:
    """Channel-derived scalars shared by builders, oracles and recovery."""

    a_d: np.ndarray      # h_s1d1 h_s1d1^H
    a_r: np.ndarray      # h_s1r h_s1r^H
    b: float             # ||h_s1d1||^2
    q2: float            # |h_s1r^H h_s1d1 / ||h_s1d1|||^2 (phase-2 harvest gain)
    g_s2r: float
    g_s2d2: float
    g_rd2: float

    @classmethod
    def from_channel(cls, ch: ChannelRealization) -> "ChannelConstants":
        h_d, h_r = ch.h_s1d1, ch.h_s1r
        b = float(np.vdot(h_d, h_d).real)
        q2 = float(abs(np.vdot(h_r, h_d)) ** 2 / b) if b > 0 else 0.0
        return cls(
            a_d=np.outer(h_d, h_d.conj()),
            a_r=np.outer(h_r, h_r.conj()),
            b=b,
            q2=q2,
            g_s2r=float(abs(ch.h_s2r) ** 2),
            g_s2d2=float(abs(ch.h_s2d2) ** 2),
            g_rd2=float(abs(ch.h_rd2) ** 2),
        )

    def beam_gains(self, omega: np.ndarray, h_d: np.ndarray,
                   h_r: np.ndarray) -> tuple[float, float]:
        return (float(abs(np.vdot(h_d, omega)) ** 2),
                float(abs(np.vdot(h_r, omega)) ** 2))


@dataclass
class BuiltProgram:
    """A relaxed program plus everything needed to read a solution back."""

    prog: ConicProgram
    mode: str
    params: SystemParams
    ch: ChannelRealization
    consts: ChannelConstants
    omega_fixed: np.ndarray | None = None
    tau_fixed: np.ndarray | None = None
    slack_probe: bool = False
    gram_var: MatVar | None = None

    def tau_of(self, sol: ConicSolution) -> np.ndarray:
        if self.tau_fixed is not None:
            return np.asarray(self.tau_fixed, dtype=float)
        return np.array([sol.scalars[f"tau{m}"] for m in range(1, 5)])

    def phi_of(self, sol: ConicSolution) -> np.ndarray:
        """Per-phase energies [phi1..phi4] implied by the solution."""
        if self.mode == "wsr_fixed":
            tau = self.tau_of(sol)
            if self.omega_fixed is None:
                phi1 = self.params.p_s1 * float(np.trace(sol.matrices["gram"]).real)
            else:
                phi1 = self.params.p_s1 * tau[0]
            return np.array([phi1, self.params.p_s1 * tau[1],
                             self.params.p_s2 * tau[2], sol.scalars["phi4"]])
        phi = [None, sol.scalars["phi2"], sol.scalars["phi3"], sol.scalars["phi4"]]
        if "phi1" in sol.scalars:
            phi[0] = sol.scalars["phi1"]
        else:  # min-power with a free beamformer: phi1 eliminated as Tr(G)
            phi[0] = float(np.trace(sol.matrices["gram"]).real)
        return np.asarray(phi, dtype=float)

    def gram_of(self, sol: ConicSolution) -> np.ndarray | None:
        if self.omega_fixed is not None:
            return None
        return sol.matrices["gram"]


def _tau_exprs(prog: ConicProgram, tau_fixed) -> list:
    if tau_fixed is not None:
        tau = np.asarray(tau_fixed, dtype=float)
        if tau.shape != (4,) or tau.min() < -1e-12 or abs(tau.sum() - 1) > 1e-9:
            raise ValueError("fixed tau must be a length-4 simplex point")
        return [conic.as_expr(max(0.0, float(t))) for t in tau]
    tau_v = [prog.scalar(f"tau{m}", lb=0.0) for m in range(1, 5)]
    prog.add_eq(tau_v[0] + tau_v[1] + tau_v[2] + tau_v[3], 1.0, "time_simplex")
    return tau_v


def build_program(params: SystemParams, ch: ChannelRealization, mode: str,
                  omega: np.ndarray | None = None,
                  tau: np.ndarray | None = None,
                  slack_probe: bool = False) -> BuiltProgram:
    """Build the relaxed program for a design, optionally restricted.

    omega pins the beamformer (the matrix variable disappears and the
    beam gains become constants); tau pins the time shares. slack_probe
    replaces the QoS thresholds r_i by r_i + s and maximizes the common
    slack s, which diagnoses which threshold makes an instance infeasible.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    c = ChannelConstants.from_channel(ch)
    n0 = params.n0
    prog = ConicProgram(name=f"{mode}" + ("_probe" if slack_probe else ""))
    built = BuiltProgram(prog=prog, mode=mode, params=params, ch=ch, consts=c,
                         omega_fixed=None if omega is None else np.asarray(omega),
                         tau_fixed=None if tau is None else np.asarray(tau, dtype=float),
                         slack_probe=slack_probe)

    t1, t2, t3, t4 = _tau_exprs(prog, tau)
    r1 = prog.scalar("rate1", lb=0.0)
    r2 = prog.scalar("rate2", lb=0.0)
    phi4 = prog.scalar("phi4", lb=0.0)

    if omega is not None:
        omega = np.asarray(omega, dtype=np.complex128)
        a_dw, a_rw = c.beam_gains(omega, ch.h_s1d1, ch.h_s1r)
        gram = None
    else:
        gram = prog.hermitian_psd("gram", params.n_antennas)
        built.gram_var = gram

    # --- group-1 rate and relay harvest ------------------------------------
    if mode == "wsr_fixed":
        p1 = params.p_s1
        c2 = math.log2(1.0 + p1 * c.b / n0)  # phase-2 MRT rate per unit time
        if gram is not None:
            prog.add_le(gram.trace(), t1, "beam_time_budget")
            t11 = prog.scalar("t_rate1_p1")
            prog.add_perspective_log_hypograph(
                t11, t1, (p1 / n0) * gram.trace_with(c.a_d), "rate1_phase1")
            prog.add_le(r1, t11 + c2 * t2, "rate1_cap")
            harvest = (params.eta * p1) * gram.trace_with(c.a_r) \
                + (params.eta * p1 * c.q2) * t2
        else:
            c1 = math.log2(1.0 + p1 * a_dw / n0)
            prog.add_le(r1, c1 * t1 + c2 * t2, "rate1_cap")
            harvest = (params.eta * p1 * a_rw) * t1 + (params.eta * p1 * c.q2) * t2
        prog.add_le(phi4, harvest, "relay_harvest")
    else:
        phi2 = prog.scalar("phi2", lb=0.0)
        if gram is not None and mode == "wsr_flexible":
            phi1 = prog.scalar("phi1", lb=0.0)
            prog.add_le(gram.trace(), phi1, "beam_energy_budget")
        elif gram is None:
            phi1 = prog.scalar("phi1", lb=0.0)
        else:
            phi1 = None  # min-power, free beam: phi1 == Tr(G)
        t11 = prog.scalar("t_rate1_p1")
        t12 = prog.scalar("t_rate1_p2")
        if gram is not None:
            prog.add_perspective_log_hypograph(
                t11, t1, (1.0 / n0) * gram.trace_with(c.a_d), "rate1_phase1")
            harvest_p1 = params.eta * gram.trace_with(c.a_r)
        else:
            prog.add_perspective_log_hypograph(
                t11, t1, (a_dw / n0) * phi1, "rate1_phase1")
            harvest_p1 = (params.eta * a_rw) * phi1
        prog.add_perspective_log_hypograph(t12, t2, (c.b / n0) * phi2, "rate1_phase2")
        prog.add_le(r1, t11 + t12, "rate1_cap")
        prog.add_le(phi4, harvest_p1 + (params.eta * c.q2) * phi2, "relay_harvest")
        if mode == "wsr_flexible":
            prog.add_le(phi1 + phi2, params.p_s1, "energy_budget_s1")

    # --- group-2 rate -------------------------------------------------------
    if mode == "wsr_fixed":
        cr = math.log2(1.0 + params.p_s2 * c.g_s2r / n0)
        cd = math.log2(1.0 + params.p_s2 * c.g_s2d2 / n0)
        hop1 = cr * t3
        direct = cd * t3
    else:
        phi3 = prog.scalar("phi3", lb=0.0)
        if mode == "wsr_flexible":
            prog.add_le(phi3, params.p_s2, "energy_budget_s2")
        t23 = prog.scalar("t_rate2_hop1")
        t23d = prog.scalar("t_rate2_direct")
        prog.add_perspective_log_hypograph(t23, t3, (c.g_s2r / n0) * phi3,
                                           "rate2_hop1")
        prog.add_perspective_log_hypograph(t23d, t3, (c.g_s2d2 / n0) * phi3,
                                           "rate2_direct")
        hop1 = conic.as_expr(t23)
        direct = conic.as_expr(t23d)
    t24 = prog.scalar("t_rate2_relay")
    prog.add_perspective_log_hypograph(t24, t4, (c.g_rd2 / n0) * phi4,
                                       "rate2_relay")
    prog.add_le(r2, hop1, "rate2_hop1_cap")
    prog.add_le(r2, direct + t24, "rate2_hop2_cap")

    # --- QoS and objective ---------------------------------------------------
    if slack_probe:
        s = prog.scalar("qos_slack")
        prog.add_ge(r1, params.r_s1 + s, "qos_s1")
        prog.add_ge(r2, params.r_s2 + s, "qos_s2")
        prog.set_objective(s, "max")
        return built
    prog.add_ge(r1, params.r_s1, "qos_s1")
    prog.add_ge(r2, params.r_s2, "qos_s2")
    if mode == "min_power":
        cost = phi3 + phi2
        if gram is not None:
            cost = cost + gram.trace()
        else:
            cost = cost + float(np.vdot(omega, omega).real) * phi1
        prog.set_objective(cost, "min")
    else:
        prog.set_objective(params.alpha1 * r1 + params.alpha2 * r2, "max")
    return built


def build_wsr_fixed(params: SystemParams, ch: ChannelRealization) -> BuiltProgram:
    """Fixed-power weighted-sum-rate relaxation."""
    return build_program(params, ch, "wsr_fixed")


def build_wsr_flexible(params: SystemParams, ch: ChannelRealization) -> BuiltProgram:
    """Flexible-power weighted-sum-rate relaxation."""
    return build_program(params, ch, "wsr_flexible")


def build_min_power(params: SystemParams, ch: ChannelRealization) -> BuiltProgram:
    """Total-power minimization relaxation under the QoS thresholds."""
    return build_program(params, ch, "min_power")


@dataclass(frozen=True)
class RelaxedFixedPowerSolution:
    """Optimal relaxed variables of the fixed-power rate design."""

    tau: np.ndarray
    gram: np.ndarray | None     # beam Gram scaled by tau1 (None if beam pinned)
    relay_energy: float         # tau4 * P_R, joules
    r_s1: float
    r_s2: float
    objective: float


@dataclass(frozen=True)
class RelaxedFlexiblePowerSolution:
    """Optimal relaxed variables of the flexible-power designs."""

    mode: str                   # wsr_flexible | min_power
    tau: np.ndarray
    gram: np.ndarray | None     # beam Gram scaled by phi1 (None if beam pinned)
    phi: np.ndarray             # per-phase energies [phi1..phi4], joules
    r_s1: float
    r_s2: float
    objective: float


def map_solution(built: BuiltProgram, sol: ConicSolution, tol: float = 1e-6):
    """Extract and validate the relaxed optimum from a solved program.

    Raises DiagnosticError (with residuals) if the solution violates the
    type invariants beyond tol; requires an optimal status.
    """
    if sol.status != "optimal":
        raise DiagnosticError(f"cannot map a solution with status {sol.status!r}")
    tau = built.tau_of(sol)
    gram = built.gram_of(sol)
    resid = {"time_simplex": abs(float(tau.sum()) - 1.0)}
    if resid["time_simplex"] > max(tol, 1e-8):
        raise DiagnosticError("time shares do not lie on the simplex", resid)

    r1 = sol.scalars["rate1"]
    r2 = sol.scalars["rate2"]
    if built.mode == "wsr_fixed":
        if gram is not None:
            resid["beam_time_budget"] = float(np.trace(gram).real) - float(tau[0])
            if resid["beam_time_budget"] > tol:
                raise DiagnosticError(
                    "Gram trace exceeds the phase-1 time share", resid)
        return RelaxedFixedPowerSolution(
            tau=tau, gram=gram, relay_energy=sol.scalars["phi4"],
            r_s1=r1, r_s2=r2, objective=float(sol.objective))

    phi = built.phi_of(sol)
    if gram is not None:
        resid["beam_energy_budget"] = float(np.trace(gram).real) - float(phi[0])
        if resid["beam_energy_budget"] > tol:
            raise DiagnosticError("Gram trace exceeds the phase-1 energy", resid)
    if built.mode == "wsr_flexible":
        resid["energy_budget_s1"] = float(phi[0] + phi[1]) - built.params.p_s1
        resid["energy_budget_s2"] = float(phi[2]) - built.params.p_s2
        if resid["energy_budget_s1"] > tol or resid["energy_budget_s2"] > tol:
            raise DiagnosticError("per-block energy budget violated", resid)
    return RelaxedFlexiblePowerSolution(
        mode=built.mode, tau=tau, gram=gram, phi=phi,
        r_s1=r1, r_s2=r2, objective=float(sol.objective))
