"""Figures of merit for echo and EIT retrieval.

All integrals are trapezoidal on the simulation grid; infinite upper limits
are truncated at the grid end (see :func:`tail_fraction`).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar


def _trapz(y, t):
    v = np.trapezoid(y, t)
    return complex(v) if np.iscomplexobj(v) else float(v)


def _window(t, t_i):
    t = np.asarray(t, dtype=float)
    if t_i is None:
        return np.ones(t.shape, dtype=bool)
    return t >= t_i - 1e-12 * max(1.0, abs(t_i))


def energy(t, envelope, t_start=None, t_end=None) -> float:
    t = np.asarray(t, dtype=float)
    m = _window(t, t_start)
    if t_end is not None:
        m &= t <= t_end + 1e-12 * max(1.0, abs(t_end))
    if m.sum() < 2:
        return 0.0
    return _trapz(np.abs(np.asarray(envelope)[m]) ** 2, t[m])


def storage_efficiency(t, inp, out, t_i=None, t_end=None) -> float:
    """Output energy after ``t_i`` over the full input energy."""
    e_in = energy(t, inp)
    if e_in <= 0:
        raise ValueError("input pulse carries no energy")
    return energy(t, out, t_i, t_end) / e_in


def normalized_se(se: float, reference: float) -> float:
    if reference <= 0:
        raise ValueError("reference storage efficiency must be positive")
    return se / reference


def tail_fraction(t, out, t_i=None, fraction: float = 0.05) -> float:
    """Share of the post-``t_i`` output energy sitting in the last ``fraction`` of the window."""
    t = np.asarray(t, dtype=float)
    total = energy(t, out, t_i)
    if total <= 0:
        return 0.0
    start = t[0] if t_i is None else t_i
    cut = t[-1] - fraction * (t[-1] - start)
    return energy(t, out, cut) / total


@dataclass(frozen=True)
class Fidelity:
    value: float
    delay: float
    defined: bool = True


def _uniform(t, *ys):
    t = np.asarray(t, dtype=float)
    h = np.diff(t)
    if np.allclose(h, h[0], rtol=1e-9, atol=0):
        return (t, *[np.asarray(y, dtype=complex) for y in ys])
    dt = max(float(h.min()), (t[-1] - t[0]) / 2**20)
    tu = np.arange(t[0], t[-1] + 0.5 * dt, dt)
    tu = tu[tu <= t[-1]]
    out = [np.interp(tu, t, np.real(y)) + 1j * np.interp(tu, t, np.imag(y)) for y in ys]
    return (tu, *out)


def _shifted(t, inp, delay):
    src = t + 0.0
    q = t - delay
    re = np.interp(q, src, inp.real, left=0.0, right=0.0)
    im = np.interp(q, src, inp.imag, left=0.0, right=0.0)
    return re + 1j * im


def fidelity(t, inp, out, t_i=None, delay: Optional[float] = None) -> Fidelity:
    """Overlap fidelity between the input at z=0 and the output at z=L.

    ``F = |int_{t_i} conj(in(t - t_d)) out(t) dt|^2 / (E_in * E_out(t >= t_i))``
    with E_in the full input energy. Without an explicit ``delay`` the delay
    maximizing F is found from the cross-correlation peak and refined between
    grid nodes.
    """
    t, inp, out = _uniform(t, inp, out)
    m = _window(t, t_i)
    e_in = _trapz(np.abs(inp) ** 2, t)
    e_out = _trapz(np.abs(out[m]) ** 2, t[m]) if m.sum() > 1 else 0.0
    if e_in <= 0 or e_out <= 0:
        return Fidelity(0.0, 0.0 if delay is None else float(delay), defined=False)
    tm, om = t[m], out[m]

    def value(d):
        s = _shifted(t, inp, d)[m]
        return abs(_trapz(np.conj(s) * om, tm)) ** 2 / (e_in * e_out)

    if delay is not None:
        return Fidelity(min(1.0, value(delay)), float(delay))
    dt = t[1] - t[0]
    masked = np.where(m, out, 0.0)
    n = t.size
    nfft = 1 << (2 * n - 1).bit_length()
    corr = np.fft.ifft(np.fft.fft(masked, nfft) * np.conj(np.fft.fft(inp, nfft)))
    lags = np.concatenate([np.arange(0, n), np.arange(-(n - 1), 0)])
    vals = np.concatenate([corr[:n], corr[nfft - (n - 1):]])
    k = int(np.argmax(np.abs(vals)))
    d0 = lags[k] * dt
    res = minimize_scalar(lambda d: -value(d), bounds=(d0 - dt, d0 + dt), method="bounded",
                          options={"xatol": dt * 1e-4})
    best_d, best_v = (res.x, -res.fun) if -res.fun >= value(d0) else (d0, value(d0))
    return Fidelity(min(1.0, float(best_v)), float(best_d))


def overlap(t, a, b) -> float:
    """Normalized overlap |<a, b>| / (|a| |b|), maximized over relative shift."""
    f = fidelity(t, a, b)
    return math.sqrt(f.value) if f.defined else 0.0


def confidentiality(alpha: float, sigma: float, length: float = 1.0) -> float:
    """chi = alpha^2 / (sigma L)."""
    if alpha <= 0 or sigma <= 0 or length <= 0:
        raise ValueError("alpha, sigma and L must be positive")
    return alpha**2 / (sigma * length)


# --- analytic echo shape ---------------------------------------------------

@dataclass(frozen=True)
class RabiDistribution:
    """Statistics P(Omega) of the control-field strength.

    Either Gaussian N(0, D^2) (``strength`` set) or a discrete distribution
    (``values`` with ``weights``), e.g. the samples of a key or histogram bins.
    """

    strength: Optional[float] = None
    values: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    @classmethod
    def gaussian(cls, strength: float) -> "RabiDistribution":
        if strength < 0:
            raise ValueError("strength must be non-negative")
        return cls(strength=float(strength))

    @classmethod
    def from_samples(cls, samples) -> "RabiDistribution":
        v = np.ravel(np.asarray(samples, dtype=float))
        return cls(values=v, weights=np.full(v.size, 1.0 / v.size))

    @classmethod
    def from_histogram(cls, samples, bins=200) -> "RabiDistribution":
        counts, edges = np.histogram(np.ravel(samples), bins=bins)
        centres = 0.5 * (edges[:-1] + edges[1:])
        return cls(values=centres, weights=counts / counts.sum())

    def cosine_transform(self, u, probe=None) -> np.ndarray:
        """int P(Omega) w(Omega) cos(Omega u / 2) dOmega.

        ``w`` is 1, or the probe spectrum at detuning Omega/2 when a probe is
        given (the echo of a finite pulse rather than the impulse response).
        """
        u = np.asarray(u, dtype=float)
        if self.strength is not None:
            d2 = self.strength**2
            if probe is None:
                return np.exp(-d2 * u**2 / 8.0)
            # Gaussian P times Gaussian spectrum exp(-kappa^2 Omega^2 / 16).
            a = 1.0 / d2 + probe.duration**2 / 8.0 if d2 > 0 else math.inf
            if not math.isfinite(a):
                return np.full(u.shape, float(probe.spectrum(0.0)))
            scale = probe.spectrum(0.0) / math.sqrt(d2 * a)
            return scale * np.exp(-(u**2) / (8.0 * a))
        w = self.weights if probe is None else self.weights * probe.spectrum(self.values / 2.0)
        out = np.empty(u.shape)
        flat = u.ravel()
        res = out.ravel()
        for i in range(0, flat.size, 256):
            blk = flat[i:i + 256]
            res[i:i + 256] = np.cos(np.outer(blk, self.values) / 2.0) @ w
        return res.reshape(u.shape)


@dataclass(frozen=True)
class EchoPrediction:
    t: np.ndarray
    envelope: np.ndarray
    physical: bool


def echo_oracle(distribution: RabiDistribution, t, t_i: float, probe=None, center: Optional[float] = None) -> EchoPrediction:
    """Echo envelope from the cosine transform of P(Omega).

    The envelope is evaluated at ``t - center`` (``center`` defaults to
    ``t_i``). A distribution with no spread gives a cosine that never decays;
    it is flagged as unphysical storage.
    """
    t = np.asarray(t, dtype=float)
    c = t_i if center is None else center
    env = distribution.cosine_transform(t - c, probe)
    peak = np.max(np.abs(env))
    edge = max(abs(env[0]), abs(env[-1]))
    physical = bool(peak > 0 and edge < 0.01 * peak)
    return EchoPrediction(t, env, physical)


@dataclass(frozen=True)
class Coverage:
    covered: bool
    ratio: float


def matching_condition(probe, strength: float) -> Coverage:
    """Absorption bandwidth covers the probe when D * kappa >= 1."""
    ratio = strength * probe.duration
    return Coverage(bool(ratio >= 1.0 - 1e-12), float(ratio))


def coverage_fidelity(strength: float, duration: float) -> float:
    """Fidelity of a Gaussian probe filtered by a Gaussian absorption profile of width D.

    The echo spectrum is the probe spectrum times the Gaussian P(2 delta);
    with r = 4 / (D kappa)^2 the overlap gives sqrt(1 + 2r) / (1 + r).
    """
    if strength <= 0:
        return 0.0
    r = 4.0 / (strength * duration) ** 2
    return math.sqrt(1.0 + 2.0 * r) / (1.0 + r)


@dataclass
class MetricsBundle:
    fidelity: float
    storage_efficiency: float
    best_delay: float
    normalized_se: Optional[float] = None
    chi: Optional[float] = None
    fidelity_defined: bool = True
    tail_fraction: float = 0.0

    @property
    def truncation_ok(self) -> bool:
        return self.tail_fraction < 1e-3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truncation_ok"] = self.truncation_ok
        return d


def evaluate(t, inp, out, t_i, reference_se: Optional[float] = None, chi: Optional[float] = None) -> MetricsBundle:
    f = fidelity(t, inp, out, t_i)
    se = storage_efficiency(t, inp, out, t_i)
    return MetricsBundle(
        fidelity=f.value,
        storage_efficiency=se,
        best_delay=f.delay,
        normalized_se=None if reference_se is None else normalized_se(se, reference_se),
        chi=chi,
        fidelity_defined=f.defined,
        tail_fraction=tail_fraction(t, out, t_i),
    )
