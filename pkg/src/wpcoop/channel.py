"""Node geometry and Rayleigh block-fading channel generation.

Five links matter in the two-group cooperation network: the vector links
S1->D1 and S1->R from the N-antenna source S1, and the scalar links S2->R,
S2->D2 and R->D2. Every channel entry of one fading block is drawn
circularly-symmetric complex Gaussian with variance d^(-beta), where d is
the link distance and beta the path-loss exponent.

Sampling uses numpy's counter-based Philox generator keyed by
(seed, stream-salt), so realizations are bit-reproducible for a given
(topology, n_antennas, seed) triple and trials can be generated
independently in parallel (per-trial seed = base seed + trial index).
Draw order is fixed: for each link in LINKS, 2*len standard normals
(first the real parts, then the imaginary parts), scaled by
sqrt(variance / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "LINKS",
    "Topology",
    "ChannelRealization",
    "path_loss_variance",
    "sample_channels",
    "figure_topology",
]

#: Link order used for sampling and for serialization.
LINKS = ("s1d1", "s1r", "s2r", "s2d2", "rd2")

# Stream salt separating channel draws from other per-seed randomness.
_CHANNEL_STREAM = 0


def path_loss_variance(d: float, beta: float) -> float:
    """Per-entry channel variance d^(-beta) of a link with distance d meters.

    Raises ValueError for non-positive distance or exponent.
    """
    if d <= 0:
        raise ValueError(f"link distance must be positive, got {d}")
    if beta <= 0:
        raise ValueError(f"path loss exponent must be positive, got {beta}")
    return float(d) ** (-float(beta))


@dataclass(frozen=True)
class Topology:
    """Pairwise link distances (meters) and the path-loss exponent."""

    d_s1d1: float
    d_s1r: float
    d_s2r: float
    d_s2d2: float
    d_rd2: float
    path_loss_exponent: float = 4.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{f.name} must be a finite number, got {v!r}")
            if v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v} "
                                 "(coincident nodes are rejected)")

    def distance(self, link: str) -> float:
        return float(getattr(self, f"d_{link}"))

    def variance(self, link: str) -> float:
        """Per-entry fading variance of a link."""
        return path_loss_variance(self.distance(link), self.path_loss_exponent)

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(**{f.name: d[f.name] for f in fields(cls)})


@dataclass(frozen=True)
class ChannelRealization:
    """Complex channel coefficients of one fading block.

    h_s1d1 and h_s1r have length equal to the S1 antenna count; the other
    three links are scalars. Instances are immutable (arrays are read-only).
    """

    h_s1d1: np.ndarray
    h_s1r: np.ndarray
    h_s2r: complex
    h_s2d2: complex
    h_rd2: complex
    seed: int

    def __post_init__(self) -> None:
        for name in ("h_s1d1", "h_s1r"):
            arr = np.asarray(getattr(self, name), dtype=np.complex128)
            if arr.ndim != 1 or arr.size < 1:
                raise ValueError(f"{name} must be a 1-D complex vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.h_s1d1.shape != self.h_s1r.shape:
            raise ValueError("h_s1d1 and h_s1r must have the same length")
        for name in ("h_s2r", "h_s2d2", "h_rd2"):
            v = complex(getattr(self, name))
            if not (math.isfinite(v.real) and math.isfinite(v.imag)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @property
    def n_antennas(self) -> int:
        return int(self.h_s1d1.size)

    def truncate(self, n: int) -> "ChannelRealization":
        """Keep the first n antenna entries of the vector links.

        Used by antenna-count sweeps so different N share common randomness
        (the n-antenna channel is a prefix of the larger draw).
        """
        if not 1 <= n <= self.n_antennas:
            raise ValueError(f"cannot truncate {self.n_antennas}-antenna "
                             f"realization to n={n}")
        return ChannelRealization(
            h_s1d1=self.h_s1d1[:n].copy(),
            h_s1r=self.h_s1r[:n].copy(),
            h_s2r=self.h_s2r,
            h_s2d2=self.h_s2d2,
            h_rd2=self.h_rd2,
            seed=self.seed,
        )


def sample_channels(topology: Topology, n_antennas: int, seed: int) -> ChannelRealization:
    """Draw one fading block for all five links.

    Each entry is CN(0, d^(-beta)), generated as two independent real
    Gaussians of variance d^(-beta)/2. Identical (topology, n_antennas,
    seed) triples yield bit-identical realizations.
    """
    if n_antennas < 1:
        raise ValueError(f"n_antennas must be >= 1, got {n_antennas}")
    gen = np.random.Generator(np.random.Philox(key=[int(seed), _CHANNEL_STREAM]))

    def draw(link: str, size: int) -> np.ndarray:
        scale = math.sqrt(topology.variance(link) / 2.0)
        z = gen.standard_normal(2 * size)
        return scale * (z[:size] + 1j * z[size:])

    h_s1d1 = draw("s1d1", n_antennas)
    h_s1r = draw("s1r", n_antennas)
    h_s2r = draw("s2r", 1)[0]
    h_s2d2 = draw("s2d2", 1)[0]
    h_rd2 = draw("rd2", 1)[0]
    return ChannelRealization(h_s1d1, h_s1r, complex(h_s2r), complex(h_s2d2),
                              complex(h_rd2), int(seed))


# Fixed node positions of the relay-placement study. The source text places
# D2 at (10,0) and later also "at (20,10)"; the second statement is read as
# a typo for D1, so D1 sits at (20,10).
_FIG_S2 = (0.0, 0.0)
_FIG_D2 = (10.0, 0.0)
_FIG_S1 = (10.0, 10.0)
_FIG_D1 = (20.0, 10.0)


def figure_topology(relay_x: float, relay_y: float,
                    path_loss_exponent: float = 4.0) -> Topology:
    """Topology of the relay-placement experiments with R at (relay_x, relay_y).

    S2 is at the origin, D2 at (10,0), S1 at (10,10) and D1 at (20,10);
    all distances are Euclidean. The grid presets scan 1 <= x <= 19,
    0 <= y <= 9, but any relay position not coinciding with another node
    is accepted.
    """
    r = (float(relay_x), float(relay_y))

    def dist(a, b) -> float:
        return math.hypot(a[0] - b[0], a[1] - b[1])

    return Topology(
        d_s1d1=dist(_FIG_S1, _FIG_D1),
        d_s1r=dist(_FIG_S1, r),
        d_s2r=dist(_FIG_S2, r),
        d_s2d2=dist(_FIG_S2, _FIG_D2),
        d_rd2=dist(r, _FIG_D2),
        path_loss_exponent=path_loss_exponent,
    )
