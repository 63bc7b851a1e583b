"""Space-time discretization in dimensionless units (length L, time tau)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNITS = "time=tau length=L rate=Gamma rabi=Gamma"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Node coordinates z in [0, L] and t in [0, T].

    ``z`` must be uniform; ``t`` may be piecewise uniform (refined windows).
    """

    z: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if z.ndim != 1 or z.size < 2:
            raise ValueError("z grid needs at least two nodes")
        if t.ndim != 1 or t.size < 2:
            raise ValueError("t grid needs at least two nodes")
        dz = np.diff(z)
        if not np.allclose(dz, dz[0], rtol=1e-9, atol=0.0):
            raise ValueError("z grid must be uniform")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t grid must be strictly increasing")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "t", t)

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def nz(self) -> int:
        return self.z.size

    @property
    def nt(self) -> int:
        return self.t.size

    @property
    def length(self) -> float:
        return float(self.z[-1] - self.z[0])

    @property
    def max_dt(self) -> float:
        return float(np.max(np.diff(self.t)))

    def index_of(self, time: float, atol: float = 1e-9) -> int:
        """Index of the grid node at ``time``; raises if no node sits there."""
        i = int(np.argmin(np.abs(self.t - time)))
        if abs(self.t[i] - time) > atol * max(1.0, abs(time)):
            raise ValueError(f"t={time} is not a grid node")
        return i

    def describe(self) -> dict:
        return {
            "nz": self.nz,
            "dz": self.dz,
            "length": self.length,
            "nt": self.nt,
            "t_start": float(self.t[0]),
            "t_end": float(self.t[-1]),
            "max_dt": self.max_dt,
            "min_dt": float(np.min(np.diff(self.t))),
        }


def uniform_z(length: float = 1.0, points_per_sigma: int = 20, sigma: float = 0.01) -> np.ndarray:
    n = int(math.ceil(points_per_sigma * length / sigma - 1e-9))
    return np.linspace(0.0, length, n + 1)


def uniform_time(t_end: float, dt_max: float, breakpoints=()) -> np.ndarray:
    """Uniform grid on [0, t_end] whose step divides every breakpoint exactly.

    With one breakpoint ``b`` the step is ``b / ceil(b / dt_max)`` and the end
    is rounded up to the next multiple. Extra breakpoints get their own
    uniform segments.
    """
    if t_end <= 0 or dt_max <= 0:
        raise ValueError("t_end and dt_max must be positive")
    bps = sorted(b for b in breakpoints if 0 < b < t_end)
    if len(bps) == 1:
        b = bps[0]
        n1 = int(math.ceil(b / dt_max - 1e-9))
        dt = b / n1
        n = int(math.ceil(t_end / dt - 1e-9))
        return np.arange(n + 1) * dt
    if not bps:
        n = int(math.ceil(t_end / dt_max - 1e-9))
        return np.linspace(0.0, t_end, n + 1)
    return piecewise_time([(0.0, t_end, dt_max)], breakpoints=bps)


def piecewise_time(segments, breakpoints=()) -> np.ndarray:
    """Concatenate uniform segments ``(start, end, dt_max)``.

    Segments must tile an interval without gaps. Breakpoints split segments
    so that each lands on a node.
    """
    cuts = []
    for start, end, dt_max in segments:
        inner = sorted(b for b in breakpoints if start < b < end)
        edges = [start, *inner, end]
        for a, b in zip(edges[:-1], edges[1:]):
            cuts.append((a, b, dt_max))
    nodes = [np.array([cuts[0][0]])]
    for a, b, dt_max in cuts:
        n = max(1, int(math.ceil((b - a) / dt_max - 1e-9)))
        nodes.append(a + (b - a) * np.arange(1, n + 1) / n)
    return np.concatenate(nodes)
