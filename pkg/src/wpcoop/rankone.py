"""Constructive rank-one beamformer recovery from the relaxed optima.

The relaxed programs return a PSD matrix standing in for the beamformer
outer product; an interior-point solver may return any point of the
optimal face, so its rank can exceed one. Recovery solves the auxiliary
trace-minimization problem of the corresponding design over matrices U in
the time-scaled Gram scale (U ~ tau1 * w w^H):

    minimize Tr(U)  s.t.  P * Tr(U h_s1r h_s1r^H) >= needed relay energy,
                          P * Tr(U h_s1d1 h_s1d1^H) = phase-1 rate pin,
                          [Tr(U) = trace of the relaxed matrix]  (min-power)
                          U >= 0,

where P is the phase-1 transmit power implied by the relaxed optimum. The
energy right-hand side subtracts the phase-2 (MRT) harvest contribution,
clamped at zero, so the relaxed matrix is always feasible for the
auxiliary problem. The rate pin equals the phase-1 quadratic form of the
relaxed matrix, which coincides with the exponential-form pin
N0*tau1*(2^((R1* - phase2 rate)/tau1) - 1) whenever the rate constraint is
tight. With at most three constraint functionals, an optimal solution of
rank one exists (rank^2 <= number of constraints); a deterministic
null-space rank-reduction step is applied after the solve so the returned
matrix is rank one even when the interior-point iterate is not. The
beamformer is the scaled principal eigenvector; feasibility and the
objective of the original design are preserved exactly up to solver
tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from . import conic, sysmodel
from .channel import ChannelRealization
from .conic import ConicProgram, DiagnosticError, Tolerances
from .problems import (TAU_EPS, ChannelConstants, RelaxedFixedPowerSolution,
                       RelaxedFlexiblePowerSolution)
from .sysmodel import ResourceAllocation, SystemParams

__all__ = [
    "RankOneReport",
    "numerical_rank",
    "extract_wsr_fixed",
    "extract_wsr_flexible",
    "extract_min_power",
    "assemble_allocation",
]


@dataclass(frozen=True)
class RankOneReport:
    """Outcome of rank-one recovery for one relaxed solution."""

    eigenvalues: np.ndarray      # of the recovered matrix, descending
    rank_before: int             # numerical rank of the relaxed matrix
    rank_after: int              # numerical rank after recovery
    extraction_used: bool        # False on degenerate (skipped) phases
    omega: np.ndarray            # recovered beamformer (zeros when skipped)
    objective_after: float       # design metric of the recovered allocation
    feasibility_residual: float  # worst constraint violation of that allocation
    trace_after: float

    @property
    def eigen_ratio(self) -> float:
        """lambda_2 / lambda_1; 0 for (numerically) rank-one matrices."""
        w = self.eigenvalues
        if w.size < 2 or w[0] <= 0:
            return 0.0
        return float(max(w[1], 0.0) / w[0])


def numerical_rank(m: np.ndarray, rel_tol: float = 1e-6) -> int:
    """Number of eigenvalues above rel_tol times the largest one.

    Requires a (numerically) Hermitian matrix: asymmetry beyond 1e-9
    relative to the largest entry is rejected.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("input must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
    if float(np.max(np.abs(m - m.conj().T))) > 1e-9 * scale:
        raise ValueError("input is not Hermitian within 1e-9")
    w = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
    lam_max = float(w[-1])
    if lam_max <= 0.0:
        return 0
    return int(np.sum(w > rel_tol * lam_max))


def _rank_reduce(u: np.ndarray, mats: list, rel_tol: float) -> np.ndarray:
    """Reduce rank(u) to one while preserving Tr(u A) for every A in mats.

    Standard null-space purification: factor u = V V^H over its numerical
    range, find a Hermitian direction D with <V^H A V, D> = 0 for all A
    (possible while rank^2 exceeds the number of functionals), and step to
    the PSD boundary V (I - D/mu_max) V^H, which drops the rank by at
    least one without moving any preserved functional.
    """
    n = u.shape[0]
    for _ in range(n + 1):
        w, vecs = np.linalg.eigh((u + u.conj().T) / 2.0)
        lam_max = float(w[-1])
        if lam_max <= 0.0:
            return np.zeros_like(u)
        keep = w > max(rel_tol * lam_max, 0.0)
        r = int(np.sum(keep))
        if r <= 1:
            lam = max(float(w[-1]), 0.0)
            v = vecs[:, -1]
            return lam * np.outer(v, v.conj())
        v_fac = vecs[:, keep] * np.sqrt(w[keep])
        reduced = [v_fac.conj().T @ a @ v_fac for a in mats]
        rows = []
        npair = r * (r - 1) // 2
        pairs = [(i, j) for i in range(r) for j in range(i + 1, r)]
        for m in reduced:
            row = np.empty(r * r)
            row[:r] = np.real(np.diag(m))
            row[r:r + npair] = [2.0 * m[i, j].real for i, j in pairs]
            row[r + npair:] = [2.0 * m[i, j].imag for i, j in pairs]
            rows.append(row)
        null = sla.null_space(np.asarray(rows))
        if null.shape[1] == 0:
            return u
        d_dof = null[:, 0]
        delta = np.zeros((r, r), dtype=np.complex128)
        delta[np.diag_indices(r)] = d_dof[:r]
        for k, (i, j) in enumerate(pairs):
            delta[i, j] = d_dof[r + k] + 1j * d_dof[r + npair + k]
            delta[j, i] = delta[i, j].conjugate()
        mu = np.linalg.eigvalsh(delta)
        mu_star = mu[-1] if abs(mu[-1]) >= abs(mu[0]) else mu[0]
        if mu_star < 0:
            delta = -delta
            mu_star = -mu_star
        if mu_star <= 0:
            return u
        u = v_fac @ (np.eye(r) - delta / mu_star) @ v_fac.conj().T
        u = (u + u.conj().T) / 2.0
    return u


def _skipped_report(relaxed, params: SystemParams, ch: ChannelRealization,
                    metric: str, eigenvalues: np.ndarray,
                    rank_before: int) -> RankOneReport:
    omega = np.zeros(params.n_antennas, dtype=np.complex128)
    alloc = assemble_allocation(relaxed, params, omega)
    ev = sysmodel.evaluate(params, ch, alloc)
    mode = "wsr_fixed" if isinstance(relaxed, RelaxedFixedPowerSolution) else relaxed.mode
    rep = sysmodel.check_feasibility(params, ch, alloc, tol=1e-6, mode=mode)
    return RankOneReport(
        eigenvalues=np.sort(eigenvalues)[::-1] if eigenvalues.size else eigenvalues,
        rank_before=rank_before, rank_after=0, extraction_used=False,
        omega=omega, objective_after=getattr(ev, metric),
        feasibility_residual=rep.worst[1], trace_after=0.0)


def _extract(relaxed, params: SystemParams, ch: ChannelRealization,
             m_star: np.ndarray | None, p1: float, phase2_harvest: float,
             relay_energy: float, pin_trace: bool, metric: str,
             rel_tol: float = 1e-6) -> RankOneReport:
    """Shared auxiliary-problem machinery; m_star lives in the tau1*Gram scale."""
    tau1 = float(relaxed.tau[0])
    c = ChannelConstants.from_channel(ch)
    eigs0 = (np.linalg.eigvalsh(m_star)[::-1] if m_star is not None
             else np.zeros(0))
    rank_before = numerical_rank(m_star, rel_tol) if m_star is not None else 0

    if m_star is None or tau1 <= TAU_EPS or p1 <= 0 or \
            float(np.trace(m_star).real) <= 1e-12:
        return _skipped_report(relaxed, params, ch, metric, eigs0, rank_before)

    pin = float(np.real(np.trace(m_star @ c.a_d)))
    e_rhs = max(0.0, (relay_energy / params.eta - phase2_harvest) / p1)
    t_star = float(np.trace(m_star).real)

    n = params.n_antennas
    if n == 1:
        u = m_star.copy()
    else:
        aux = ConicProgram(name="rankone_aux")
        u_var = aux.hermitian_psd("U", n)
        aux.add_ge(u_var.trace_with(c.a_r), e_rhs, "relay_energy_pin")
        aux.add_eq(u_var.trace_with(c.a_d), pin, "rate_pin")
        if pin_trace:
            aux.add_eq(u_var.trace(), t_star, "trace_pin")
        aux.set_objective(u_var.trace(), "min")
        sol = conic.solve(aux, Tolerances())
        if sol.status == "infeasible":
            raise DiagnosticError(
                "auxiliary trace minimization infeasible although the relaxed "
                "matrix satisfies its constraints", sol.residuals)
        if sol.status != "optimal":
            u = m_star.copy()  # purification alone still recovers rank one
        else:
            u = sol.matrices["U"]
        u = _rank_reduce(u, [c.a_r, c.a_d, np.eye(n)], rel_tol)

    w, vecs = np.linalg.eigh((u + u.conj().T) / 2.0)
    eigs = w[::-1].copy()
    rank_after = numerical_rank(u, rel_tol)
    if rank_after > 1:
        raise DiagnosticError(
            f"rank-one recovery left rank {rank_after} "
            f"(eigenvalues {eigs[:3]}), contradicting the rank bound",
            {"eigen_ratio": float(eigs[1] / eigs[0])})
    trace_after = float(np.trace(u).real)
    budget = t_star + 1e-6
    if trace_after > budget:
        raise DiagnosticError(
            f"recovered trace {trace_after} exceeds the relaxed trace {t_star}")

    lam = max(float(w[-1]), 0.0)
    omega = math.sqrt(lam / tau1) * vecs[:, -1] if lam > 0 else \
        np.zeros(n, dtype=np.complex128)
    norm2 = float(np.vdot(omega, omega).real)
    if norm2 > 1.0 + 1e-6:
        raise DiagnosticError(f"recovered beam norm^2 {norm2} exceeds 1")

    alloc = assemble_allocation(relaxed, params, omega)
    ev = sysmodel.evaluate(params, ch, alloc)
    mode = "wsr_fixed" if isinstance(relaxed, RelaxedFixedPowerSolution) else relaxed.mode
    rep = sysmodel.check_feasibility(params, ch, alloc, tol=1e-6, mode=mode)
    return RankOneReport(
        eigenvalues=eigs, rank_before=rank_before, rank_after=rank_after,
        extraction_used=True, omega=omega,
        objective_after=getattr(ev, metric),
        feasibility_residual=rep.worst[1], trace_after=trace_after)


def extract_wsr_fixed(relaxed: RelaxedFixedPowerSolution, params: SystemParams,
                      ch: ChannelRealization, rel_tol: float = 1e-6) -> RankOneReport:
    """Recover the fixed-power beamformer from the relaxed Gram matrix."""
    c = ChannelConstants.from_channel(ch)
    phase2 = params.p_s1 * float(relaxed.tau[1]) * c.q2
    return _extract(relaxed, params, ch, relaxed.gram, params.p_s1, phase2,
                    relaxed.relay_energy, pin_trace=False, metric="wsr",
                    rel_tol=rel_tol)


def _flexible_scaled(relaxed: RelaxedFlexiblePowerSolution):
    """Relaxed Gram rescaled from energy units to the tau1*Gram scale."""
    tau1 = float(relaxed.tau[0])
    phi1 = float(relaxed.phi[0])
    if relaxed.gram is None or tau1 <= TAU_EPS or phi1 <= TAU_EPS:
        return None, 0.0
    p1 = phi1 / tau1
    return relaxed.gram / p1, p1


def extract_wsr_flexible(relaxed: RelaxedFlexiblePowerSolution,
                         params: SystemParams, ch: ChannelRealization,
                         rel_tol: float = 1e-6) -> RankOneReport:
    """Recover the flexible-power beamformer from the energy-scaled Gram."""
    c = ChannelConstants.from_channel(ch)
    m_star, p1 = _flexible_scaled(relaxed)
    phase2 = float(relaxed.phi[1]) * c.q2
    return _extract(relaxed, params, ch, m_star, p1, phase2,
                    float(relaxed.phi[3]), pin_trace=False, metric="wsr",
                    rel_tol=rel_tol)


def extract_min_power(relaxed: RelaxedFlexiblePowerSolution,
                      params: SystemParams, ch: ChannelRealization,
                      rel_tol: float = 1e-6) -> RankOneReport:
    """Recover the min-power beamformer; the trace is additionally pinned
    so the consumed power of the recovered solution is unchanged."""
    c = ChannelConstants.from_channel(ch)
    m_star, p1 = _flexible_scaled(relaxed)
    phase2 = float(relaxed.phi[1]) * c.q2
    return _extract(relaxed, params, ch, m_star, p1, phase2,
                    float(relaxed.phi[3]), pin_trace=True, metric="total_power",
                    rel_tol=rel_tol)


def assemble_allocation(relaxed, params: SystemParams,
                        omega: np.ndarray) -> ResourceAllocation:
    """Physical allocation implied by a relaxed optimum and a beamformer.

    Per-phase powers are the energy/time ratios phi_m / tau_m, zero when
    the phase is shorter than TAU_EPS.
    """
    tau = np.asarray(relaxed.tau, dtype=float)

    def ratio(energy: float, t: float) -> float:
        return float(energy) / float(t) if t > TAU_EPS else 0.0

    if isinstance(relaxed, RelaxedFixedPowerSolution):
        p_phase = np.array([params.p_s1, params.p_s1, params.p_s2])
        p_relay = ratio(relaxed.relay_energy, tau[3])
    else:
        phi = relaxed.phi
        p_phase = np.array([ratio(phi[0], tau[0]), ratio(phi[1], tau[1]),
                            ratio(phi[2], tau[2])])
        p_relay = ratio(phi[3], tau[3])
    return ResourceAllocation(tau=tau, omega=np.asarray(omega, np.complex128),
                              p_phase=p_phase, p_relay=p_relay)
