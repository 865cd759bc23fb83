"""System parameters and the rate/energy physics of the 4-phase protocol.

One fading block of unit length is split into four phases with shares
tau_1..tau_4. Phase 1: S1 beams with w (||w||^2 <= 1), delivering
information to D1 and energy to R. Phase 2: S1 transmits to D1 with the
matched (MRT) precoder h/||h||; R keeps harvesting. Phase 3: S2 broadcasts
to R and D2. Phase 4: R decode-and-forwards S2's message to D2 using the
energy harvested in phases 1-2.

With C(x) = log2(1 + x) and per-entry noise power N0:

    R1 = tau1*C(P1*|h_s1d1^H w|^2/N0) + tau2*C(P2*||h_s1d1||^2/N0)
    E_harvest = eta*tau1*P1*|h_s1r^H w|^2 + eta*tau2*P2*|h_s1r^H h/||h|||^2
    R2 = min{ tau3*C(P3*|h_s2r|^2/N0),
              tau3*C(P3*|h_s2d2|^2/N0) + tau4*C(P_R*|h_rd2|^2/N0) }
    tau4*P_R <= E_harvest

Rates are bits per block (block length normalized to 1, no bandwidth
scaling). A phase with tau_m = 0 contributes exactly zero rate and energy
regardless of its power (perspective-function closure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization

__all__ = [
    "MODES",
    "SystemParams",
    "ResourceAllocation",
    "Evaluation",
    "FeasibilityReport",
    "rate_c",
    "evaluate",
    "check_feasibility",
]

#: Power-constraint regimes: fixed per-phase source powers, a flexible
#: per-block energy budget, or the power-minimization design (no caps).
MODES = ("wsr_fixed", "wsr_flexible", "min_power")

_ALLOC_ATOL = 1e-6


@dataclass(frozen=True)
class SystemParams:
    """Powers, noise, conversion efficiency, QoS thresholds and weights."""

    p_s1: float = 2.0          # source 1 power budget, watts
    p_s2: float = 0.2          # source 2 power budget, watts
    n0: float = 1e-6           # noise power, watts
    eta: float = 0.9           # energy conversion efficiency, in (0, 1]
    r_s1: float = 0.5          # group-1 minimum rate, bits per block
    r_s2: float = 0.2          # group-2 minimum rate, bits per block
    alpha1: float = 1.0        # group-1 rate weight
    alpha2: float = 1.0        # group-2 rate weight
    n_antennas: int = 4

    def __post_init__(self) -> None:
        if self.p_s1 <= 0 or self.p_s2 <= 0 or self.n0 <= 0:
            raise ValueError("p_s1, p_s2 and n0 must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.r_s1 < 0 or self.r_s2 < 0:
            raise ValueError("rate thresholds must be nonnegative")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("rate weights must be nonnegative")
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")

    def replace(self, **kw) -> "SystemParams":
        d = self.to_dict()
        d.update(kw)
        return SystemParams(**d)

    def to_dict(self) -> dict:
        return {
            "p_s1": self.p_s1, "p_s2": self.p_s2, "n0": self.n0,
            "eta": self.eta, "r_s1": self.r_s1, "r_s2": self.r_s2,
            "alpha1": self.alpha1, "alpha2": self.alpha2,
            "n_antennas": self.n_antennas,
        }


@dataclass(frozen=True)
class ResourceAllocation:
    """A fully specified operating point of the protocol.

    tau: the four phase shares (nonnegative, summing to 1).
    omega: phase-1 beamforming vector, ||omega||^2 <= 1.
    p_phase: source powers [P_S1 phase 1, P_S1 phase 2, P_S2 phase 3], watts.
    p_relay: relay transmit power in phase 4, watts.
    """

    tau: np.ndarray
    omega: np.ndarray
    p_phase: np.ndarray
    p_relay: float

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=float)
        omega = np.asarray(self.omega, dtype=np.complex128)
        p_phase = np.asarray(self.p_phase, dtype=float)
        if tau.shape != (4,):
            raise ValueError("tau must have length 4")
        if abs(tau.sum() - 1.0) > _ALLOC_ATOL:
            raise ValueError(f"tau must sum to 1, got {tau.sum()!r}")
        if tau.min() < -_ALLOC_ATOL:
            raise ValueError("tau must be nonnegative")
        if omega.ndim != 1 or omega.size < 1:
            raise ValueError("omega must be a 1-D complex vector")
        norm2 = float(np.vdot(omega, omega).real)
        if norm2 > 1.0 + _ALLOC_ATOL:
            raise ValueError(f"||omega||^2 must be <= 1, got {norm2}")
        if p_phase.shape != (3,):
            raise ValueError("p_phase must have length 3")
        if p_phase.min() < -_ALLOC_ATOL or self.p_relay < -_ALLOC_ATOL:
            raise ValueError("powers must be nonnegative")
        for arr in (tau, omega, p_phase):
            arr.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "p_phase", p_phase)
        object.__setattr__(self, "p_relay", float(self.p_relay))

    @property
    def beam_norm2(self) -> float:
        return float(np.vdot(self.omega, self.omega).real)


@dataclass(frozen=True)
class Evaluation:
    """Rates, harvested energies and aggregate metrics of one allocation."""

    r_s1_phase1: float
    r_s1_phase2: float
    r_s1: float
    r_s2: float
    e_r1: float
    e_r2: float
    relay_energy_slack: float
    wsr: float
    total_power: float


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed per-constraint violations; positive means violated by that much."""

    violations: dict
    tol: float
    ok: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ok",
                           all(v <= self.tol for v in self.violations.values()))

    @property
    def worst(self) -> tuple:
        name = max(self.violations, key=self.violations.get)
        return name, self.violations[name]


def rate_c(x: float) -> float:
    """Shannon-style rate map log2(1 + x) for a nonnegative SNR x."""
    if x < 0:
        raise ValueError(f"SNR must be nonnegative, got {x}")
    return math.log2(1.0 + x)


def _phase_rate(tau: float, snr: float) -> float:
    # tau = 0 contributes exactly 0 (perspective closure), never NaN.
    if tau <= 0.0:
        return 0.0
    return tau * rate_c(snr)


def evaluate(params: SystemParams, ch: ChannelRealization,
             alloc: ResourceAllocation) -> Evaluation:
    """Evaluate rates, harvested energy and power use of an allocation."""
    if alloc.omega.size != ch.n_antennas:
        raise ValueError("beamformer length does not match the channel")
    t1, t2, t3, t4 = (float(x) for x in alloc.tau)
    p1, p2, p3 = (float(x) for x in alloc.p_phase)
    n0 = params.n0

    h_d = ch.h_s1d1
    h_r = ch.h_s1r
    b = float(np.vdot(h_d, h_d).real)               # ||h_s1d1||^2
    a_dw = abs(np.vdot(h_d, alloc.omega)) ** 2      # |h_s1d1^H w|^2
    a_rw = abs(np.vdot(h_r, alloc.omega)) ** 2      # |h_s1r^H w|^2
    # phase-2 MRT precoder is h_s1d1/||h_s1d1||
    q2 = (abs(np.vdot(h_r, h_d)) ** 2 / b) if b > 0 else 0.0

    r1_1 = _phase_rate(t1, p1 * a_dw / n0)
    r1_2 = _phase_rate(t2, p2 * b / n0)
    e_r1 = params.eta * t1 * p1 * a_rw
    e_r2 = params.eta * t2 * p2 * q2

    g_s2r = abs(ch.h_s2r) ** 2
    g_s2d2 = abs(ch.h_s2d2) ** 2
    g_rd2 = abs(ch.h_rd2) ** 2
    r2_hop1 = _phase_rate(t3, p3 * g_s2r / n0)
    r2_hop2 = _phase_rate(t3, p3 * g_s2d2 / n0) + _phase_rate(t4, alloc.p_relay * g_rd2 / n0)
    r_s2 = min(r2_hop1, r2_hop2)

    r_s1 = r1_1 + r1_2
    total_power = t3 * p3 + t1 * p1 * alloc.beam_norm2 + t2 * p2
    return Evaluation(
        r_s1_phase1=r1_1,
        r_s1_phase2=r1_2,
        r_s1=r_s1,
        r_s2=r_s2,
        e_r1=e_r1,
        e_r2=e_r2,
        relay_energy_slack=e_r1 + e_r2 - t4 * alloc.p_relay,
        wsr=params.alpha1 * r_s1 + params.alpha2 * r_s2,
        total_power=total_power,
    )


def check_feasibility(params: SystemParams, ch: ChannelRealization,
                      alloc: ResourceAllocation, tol: float = 1e-6,
                      mode: str = "wsr_fixed") -> FeasibilityReport:
    """Check every protocol constraint; positive entries are violations.

    mode selects the power regime: "wsr_fixed" requires the per-phase
    powers to equal the budgets, "wsr_flexible" enforces the per-block
    energy budgets tau1*P1 + tau2*P2 <= P_S1 and tau3*P3 <= P_S2, and
    "min_power" imposes no source power constraint.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    ev = evaluate(params, ch, alloc)
    t1, t2, t3, t4 = (float(x) for x in alloc.tau)
    p1, p2, p3 = (float(x) for x in alloc.p_phase)

    v = {
        "time_simplex": abs(alloc.tau.sum() - 1.0),
        "time_nonneg": max(0.0, -float(alloc.tau.min())),
        "beam_norm": alloc.beam_norm2 - 1.0,
        "power_nonneg": max(0.0, -min(p1, p2, p3, alloc.p_relay)),
        "relay_energy": t4 * alloc.p_relay - (ev.e_r1 + ev.e_r2),
        "rate_s1": params.r_s1 - ev.r_s1,
        "rate_s2": params.r_s2 - ev.r_s2,
    }
    if mode == "wsr_fixed":
        v["power_phase1_fixed"] = abs(p1 - params.p_s1)
        v["power_phase2_fixed"] = abs(p2 - params.p_s1)
        v["power_phase3_fixed"] = abs(p3 - params.p_s2)
    elif mode == "wsr_flexible":
        v["energy_budget_s1"] = t1 * p1 + t2 * p2 - params.p_s1
        v["energy_budget_s2"] = t3 * p3 - params.p_s2
    return FeasibilityReport(violations=v, tol=tol)
