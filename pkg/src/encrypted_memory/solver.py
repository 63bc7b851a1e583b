"""Maxwell-Bloch propagation kernel shared by the three- and four-level schemes.

Atoms at every z node follow the optical-Bloch equations with Hamiltonian
``H = -1/2 [Omega_p |3><1| + Omega_c |3><2| + Omega_s |4><2| + h.c.]``.
In the retarded frame the probe obeys ``d/dz Omega_p = i eta rho_31`` and is
recovered at each RK4 stage by a cumulative trapezoid over z.

The density matrix is stored as its lower triangle, one row per entry and z
along the last axis:

    0 rho11  1 rho22  2 rho33  3 rho44  4 rho21  5 rho31  6 rho32
    7 rho41  8 rho42  9 rho43

Three-level runs carry only the first seven rows (row 3 stays zero).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba as nb
import numpy as np

ENTRY = {
    (1, 1): 0, (2, 2): 1, (3, 3): 2, (4, 4): 3,
    (2, 1): 4, (3, 1): 5, (3, 2): 6, (4, 1): 7, (4, 2): 8, (4, 3): 9,
}
N_ENTRIES = {3: 7, 4: 10}


@nb.njit(cache=True)
def _deriv(r, d, om_in, gc, kc, gs, ks, eta, dz, gam, gam4, b31, b41, gdeph, four, om):
    nz = r.shape[1]
    nc = kc.shape[0]
    ns = ks.shape[0]
    cum = 0j
    prev = 0j
    for z in range(nz):
        r31 = r[5, z]
        if z > 0:
            cum += 0.5 * dz * (prev + r31)
        prev = r31
        op = om_in + 1j * eta * cum
        om[z] = op
        oc = 0.0
        for f in range(nc):
            oc += gc[f] * kc[f, z]
        r11 = r[0, z].real
        r22 = r[1, z].real
        r33 = r[2, z].real
        r21 = r[4, z]
        r32 = r[6, z]
        opc = np.conj(op)
        x31 = (opc * r31).imag
        x32 = (oc * r32).imag
        d[0, z] = -x31 + b31 * gam * r33
        d[1, z] = -x32 + (1.0 - b31) * gam * r33
        d[2, z] = x31 + x32 - gam * r33
        if four:
            os_ = 0.0
            for f in range(ns):
                os_ += gs[f] * ks[f, z]
            r44 = r[3, z].real
            r41 = r[7, z]
            r42 = r[8, z]
            r43 = r[9, z]
            x42 = (os_ * r42).imag
            d[0, z] += b41 * gam4 * r44
            d[1, z] += -x42 + (1.0 - b41) * gam4 * r44
            d[3, z] = x42 - gam4 * r44
            d[4, z] = 0.5j * (oc * r31 + os_ * r41 - np.conj(r32) * op) - gdeph * r21
            d[5, z] = 0.5j * (op * (r11 - r33) + oc * r21) - 0.5 * gam * r31
            d[6, z] = 0.5j * (op * np.conj(r21) + oc * (r22 - r33) - np.conj(r43) * os_) - 0.5 * gam * r32
            d[7, z] = 0.5j * (os_ * r21 - r43 * op) - 0.5 * gam4 * r41
            d[8, z] = 0.5j * (os_ * (r22 - r44) - r43 * oc) - 0.5 * gam4 * r42
            d[9, z] = 0.5j * (os_ * np.conj(r32) - r41 * opc - r42 * oc) - 0.5 * (gam + gam4) * r43
        else:
            d[4, z] = 0.5j * (oc * r31 - np.conj(r32) * op) - gdeph * r21
            d[5, z] = 0.5j * (op * (r11 - r33) + oc * r21) - 0.5 * gam * r31
            d[6, z] = 0.5j * (op * np.conj(r21) + oc * (r22 - r33)) - 0.5 * gam * r32


@nb.njit(cache=True)
def _output(r, om_in, eta, dz):
    nz = r.shape[1]
    acc = 0j
    for z in range(1, nz):
        acc += 0.5 * dz * (r[5, z - 1] + r[5, z])
    return om_in + 1j * eta * acc


@nb.njit(cache=True)
def _track(r, four, inv):
    nz = r.shape[1]
    for z in range(nz):
        tr = r[0, z].real + r[1, z].real + r[2, z].real
        im = max(abs(r[0, z].imag), abs(r[1, z].imag), abs(r[2, z].imag))
        lo = min(r[0, z].real, r[1, z].real, r[2, z].real)
        hi = max(r[0, z].real, r[1, z].real, r[2, z].real)
        if four:
            tr += r[3, z].real
            im = max(im, abs(r[3, z].imag))
            lo = min(lo, r[3, z].real)
            hi = max(hi, r[3, z].real)
        err = abs(tr - 1.0)
        if not (err <= inv[0]):
            inv[0] = err if err == err else np.inf
        if lo < inv[1]:
            inv[1] = lo
        if hi > inv[2]:
            inv[2] = hi
        if im > inv[3]:
            inv[3] = im


@nb.njit(cache=True)
def _integrate(r, t, probe, gc, kc, gs, ks, eta, dz, gam, gam4, b31, b41, gdeph, four,
               out, snap_steps, snaps, inv):
    ne, nz = r.shape
    k1 = np.zeros_like(r)
    k2 = np.zeros_like(r)
    k3 = np.zeros_like(r)
    k4 = np.zeros_like(r)
    tmp = np.empty_like(r)
    om = np.empty(nz, np.complex128)
    nt = t.shape[0]
    nsnap = snap_steps.shape[0]
    isnap = 0
    while isnap < nsnap and snap_steps[isnap] == 0:
        snaps[isnap, :, :] = r
        isnap += 1
    _track(r, four, inv)
    for s in range(nt - 1):
        h = t[s + 1] - t[s]
        _deriv(r, k1, probe[s, 0], gc[:, s, 0], kc, gs[:, s, 0], ks, eta, dz, gam, gam4, b31, b41, gdeph, four, om)
        out[s] = om[nz - 1]
        for e in range(ne):
            for z in range(nz):
                tmp[e, z] = r[e, z] + 0.5 * h * k1[e, z]
        _deriv(tmp, k2, probe[s, 1], gc[:, s, 1], kc, gs[:, s, 1], ks, eta, dz, gam, gam4, b31, b41, gdeph, four, om)
        for e in range(ne):
            for z in range(nz):
                tmp[e, z] = r[e, z] + 0.5 * h * k2[e, z]
        _deriv(tmp, k3, probe[s, 1], gc[:, s, 1], kc, gs[:, s, 1], ks, eta, dz, gam, gam4, b31, b41, gdeph, four, om)
        for e in range(ne):
            for z in range(nz):
                tmp[e, z] = r[e, z] + h * k3[e, z]
        _deriv(tmp, k4, probe[s, 2], gc[:, s, 2], kc, gs[:, s, 2], ks, eta, dz, gam, gam4, b31, b41, gdeph, four, om)
        for e in range(ne):
            for z in range(nz):
                r[e, z] += h / 6.0 * (k1[e, z] + 2.0 * k2[e, z] + 2.0 * k3[e, z] + k4[e, z])
        _track(r, four, inv)
        if not np.isfinite(inv[0]):
            return s + 1
        while isnap < nsnap and snap_steps[isnap] == s + 1:
            snaps[isnap, :, :] = r
            isnap += 1
    out[nt - 1] = _output(r, probe[nt - 2, 2], eta, dz)
    return -1


@dataclass(frozen=True)
class BlochParams:
    """Medium constants. Rates in units of Gamma, lengths in units of L.

    ``gamma`` is the decay rate of |3>; setting it to 0 switches decay off
    while the coupling eta keeps its Gamma = 1 scale. ``branching_31`` is the
    fraction of |3> decay landing in |1> (the rest goes to |2>);
    ``branching_41`` likewise for |4>.
    """

    optical_depth: float
    gamma: float = 1.0
    gamma4: float = 0.0
    branching_31: float = 0.5
    branching_41: float = 0.5
    ground_dephasing: float = 0.0

    def __post_init__(self):
        if self.optical_depth < 0:
            raise ValueError("optical depth must be non-negative")
        for name in ("gamma", "gamma4", "ground_dephasing"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("branching_31", "branching_41"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def eta(self, length: float) -> float:
        """Coupling constant eta = Gamma * xi / (2 L) with Gamma = 1."""
        return self.optical_depth / (2.0 * length)


@dataclass
class AtomicState:
    """Per-z density matrix, lower triangle only (see module docstring)."""

    entries: np.ndarray
    n_levels: int

    @classmethod
    def ground(cls, nz: int, n_levels: int) -> "AtomicState":
        e = np.zeros((N_ENTRIES[n_levels], nz), dtype=np.complex128)
        e[0] = 1.0
        return cls(e, n_levels)

    def copy(self) -> "AtomicState":
        return AtomicState(self.entries.copy(), self.n_levels)

    def rho(self, i: int, j: int) -> np.ndarray:
        """rho_ij(z) with 1-based level labels."""
        if max(i, j) > self.n_levels:
            raise IndexError(f"level index beyond {self.n_levels}")
        if (i, j) in ENTRY:
            return self.entries[ENTRY[(i, j)]]
        return np.conj(self.entries[ENTRY[(j, i)]])

    def matrix(self) -> np.ndarray:
        n = self.n_levels
        m = np.empty((self.entries.shape[1], n, n), dtype=np.complex128)
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                m[:, i - 1, j - 1] = self.rho(i, j)
        return m

    def trace(self) -> np.ndarray:
        return sum(self.rho(i, i).real for i in range(1, self.n_levels + 1))

    def hermiticity_error(self) -> float:
        m = self.matrix()
        return float(np.max(np.abs(m - np.conj(np.swapaxes(m, 1, 2)))))


@dataclass
class Propagation:
    output: np.ndarray
    snapshots: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    nan_step: Optional[int] = None


def _stack(schedules, t, nz):
    if not schedules:
        return np.zeros((0, t.size - 1, 3)), np.zeros((0, nz))
    g = np.stack([s.stage_gates(t) for s in schedules])
    k = np.stack([s.key.samples for s in schedules])
    if k.shape[1] != nz:
        raise ValueError(f"key has {k.shape[1]} samples, medium grid has {nz}")
    return np.ascontiguousarray(g), np.ascontiguousarray(k)


def propagate(state: AtomicState, z, t, probe, params: BlochParams, control: Sequence = (),
              switch: Sequence = (), snapshot_times: Sequence[float] = ()) -> Propagation:
    """Advance ``state`` in place from t[0] to t[-1].

    ``probe`` is a callable giving Omega_p(t, z=0). ``control`` schedules act
    on |2>-|3>, ``switch`` schedules on |2>-|4>. The returned output holds
    Omega_p(t, L) at every node of ``t``.
    """
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    nz = z.size
    if state.entries.shape[1] != nz:
        raise ValueError("state and z grid disagree")
    four = state.n_levels == 4
    if switch and not four:
        raise ValueError("switching fields need the four-level system")
    h = np.diff(t)
    pst = np.empty((t.size - 1, 3), dtype=np.complex128)
    pst[:, 0] = probe(t[:-1])
    pst[:, 1] = probe(t[:-1] + 0.5 * h)
    pst[:, 2] = probe(t[1:])
    gc, kc = _stack(control, t, nz)
    gs, ks = _stack(switch, t, nz)
    steps = []
    for ts in snapshot_times:
        i = int(np.argmin(np.abs(t - ts)))
        if abs(t[i] - ts) > 1e-9 * max(1.0, abs(ts)):
            raise ValueError(f"snapshot time {ts} is not a grid node")
        steps.append(i)
    order = np.argsort(steps, kind="stable")
    snap_steps = np.asarray(steps, dtype=np.int64)[order]
    snaps = np.zeros((len(steps), state.entries.shape[0], nz), dtype=np.complex128)
    inv = np.array([0.0, np.inf, -np.inf, 0.0])
    out = np.zeros(t.size, dtype=np.complex128)
    length = float(z[-1] - z[0])
    bad = _integrate(
        state.entries, t, pst, gc, kc, gs, ks, params.eta(length), float(z[1] - z[0]),
        params.gamma, params.gamma4, params.branching_31, params.branching_41,
        params.ground_dephasing, four, out, snap_steps, snaps, inv,
    )
    snapshots = {}
    for k, idx in enumerate(order):
        snapshots[float(t[snap_steps[k]])] = AtomicState(snaps[k].copy(), state.n_levels)
    invariants = {
        "max_trace_error": float(inv[0]),
        "min_population": float(inv[1]),
        "max_population": float(inv[2]),
        "max_diag_imag": float(inv[3]),
    }
    return Propagation(out, snapshots, invariants, None if bad < 0 else int(bad))


def merge_invariants(*parts: dict) -> dict:
    return {
        "max_trace_error": max(p["max_trace_error"] for p in parts),
        "min_population": min(p["min_population"] for p in parts),
        "max_population": max(p["max_population"] for p in parts),
        "max_diag_imag": max(p["max_diag_imag"] for p in parts),
    }


def invariants_ok(inv: dict, trace_tol: float = 1e-8, pop_tol: float = 1e-9) -> bool:
    return (
        inv["max_trace_error"] <= trace_tol
        and inv["min_population"] >= -pop_tol
        and inv["max_population"] <= 1.0 + pop_tol
        and inv["max_diag_imag"] <= trace_tol
    )
