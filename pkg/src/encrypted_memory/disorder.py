"""Gaussian-correlated disorder profiles used as encryption keys.

Keys are stationary, zero-mean Gaussian fields with covariance
``D**2 * exp(-(z - z')**2 / sigma**2)``, synthesized by filtering white noise
with the square root of the analytic power spectrum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .grid import UNITS

# Margin (in correlation lengths) added on both sides before discarding.
MARGIN_SIGMAS = 3.0
MIN_POINTS_PER_SIGMA = 10


@dataclass(frozen=True)
class CorrelationSpec:
    """Target statistics: strength D (units Gamma), correlation length sigma (units L)."""

    strength: float
    correlation_length: float
    kind: str = "gaussian"

    def __post_init__(self):
        if not (self.strength > 0 and math.isfinite(self.strength)):
            raise ValueError(f"strength must be positive, got {self.strength}")
        if not (self.correlation_length > 0 and math.isfinite(self.correlation_length)):
            raise ValueError(f"correlation_length must be positive, got {self.correlation_length}")
        if self.kind != "gaussian":
            raise ValueError(f"only gaussian correlation is supported, got {self.kind!r}")

    def covariance(self, lag):
        lag = np.asarray(lag, dtype=float)
        return self.strength**2 * np.exp(-(lag / self.correlation_length) ** 2)

    def spectrum(self, k):
        """Power spectral density S(k) = int C(r) exp(-ikr) dr."""
        s = self.correlation_length
        return self.strength**2 * s * math.sqrt(math.pi) * np.exp(-((k * s) ** 2) / 4.0)


@dataclass(frozen=True, eq=False)
class KeyProfile:
    """Spatial Rabi-frequency profile K(z) on a uniform grid.

    ``z`` is measured from the start of the section; ``section_offset`` locates
    that start inside the master key of length ``master_length``.
    """

    z: np.ndarray
    samples: np.ndarray
    spec: Optional[CorrelationSpec] = None
    seed: Optional[int] = None
    master_length: Optional[float] = None
    section_offset: float = 0.0
    master: Optional["KeyProfile"] = field(default=None, repr=False)
    label: str = "disorder"

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        s = np.asarray(self.samples, dtype=float)
        if z.shape != s.shape or z.ndim != 1:
            raise ValueError("z and samples must be 1-D arrays of equal length")
        if not np.all(np.isfinite(s)):
            raise ValueError("key samples must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "samples", s)
        if self.master_length is None:
            object.__setattr__(self, "master_length", float(z[-1] - z[0]))

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def span(self) -> float:
        return float(self.z[-1] - self.z[0])

    def inverted(self) -> "KeyProfile":
        return replace(self, samples=-self.samples, label=f"inverted({self.label})")

    def same_grid(self, other: "KeyProfile") -> bool:
        return self.z.shape == other.z.shape and np.array_equal(self.z, other.z)

    def header(self) -> dict:
        return {
            "seed": self.seed,
            "D": None if self.spec is None else self.spec.strength,
            "sigma": None if self.spec is None else self.spec.correlation_length,
            "alpha": self.master_length,
            "section_offset": self.section_offset,
            "nz": int(self.z.size),
            "dz": self.dz,
            "label": self.label,
            "units": UNITS,
        }


def _check_grid(grid_z, spec: CorrelationSpec, allow_long_correlation: bool):
    z = np.asarray(grid_z, dtype=float)
    if z.ndim != 1 or z.size < 2:
        raise ValueError("grid_z must be a 1-D array with at least two nodes")
    dz = z[1] - z[0]
    if not np.allclose(np.diff(z), dz, rtol=1e-9, atol=0.0):
        raise ValueError("grid_z must be uniform")
    sigma = spec.correlation_length
    if dz > sigma / MIN_POINTS_PER_SIGMA * (1 + 1e-9):
        need = int(math.ceil(MIN_POINTS_PER_SIGMA * (z[-1] - z[0]) / sigma)) + 1
        raise ValueError(
            f"grid too coarse: dz={dz:g} > sigma/{MIN_POINTS_PER_SIGMA}={sigma / MIN_POINTS_PER_SIGMA:g}; "
            f"use at least {need} nodes"
        )
    span = z[-1] - z[0]
    if sigma > span and not allow_long_correlation:
        raise ValueError(f"correlation length {sigma:g} exceeds grid span {span:g}")
    return z, dz


def generate_key(grid_z, spec: CorrelationSpec, seed: int, *, allow_long_correlation: bool = False) -> KeyProfile:
    """Draw one realization on ``grid_z`` (the master grid of length alpha).

    White noise from ``numpy.random.default_rng(seed)`` is filtered in Fourier
    space on a periodic grid padded by 3 sigma on each side; the padding is
    discarded so wraparound correlation never reaches the returned samples.
    """
    z, dz = _check_grid(grid_z, spec, allow_long_correlation)
    n = z.size
    pad = int(math.ceil(MARGIN_SIGMAS * spec.correlation_length / dz))
    nfft = sfft.next_fast_len(n + 2 * pad, real=True)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(nfft)
    k = 2.0 * math.pi * sfft.rfftfreq(nfft, d=dz)
    filt = np.sqrt(spec.spectrum(k) / dz)
    field_ = sfft.irfft(sfft.rfft(noise) * filt, n=nfft)
    samples = field_[pad : pad + n].copy()
    return KeyProfile(
        z=z - z[0],
        samples=samples,
        spec=spec,
        seed=int(seed),
        master_length=float(z[-1] - z[0]),
    )


def generate_keys(grid_z, spec: CorrelationSpec, seeds: Sequence[int], workers: int = 1, **kw) -> list[KeyProfile]:
    """Ensemble generation; output order follows ``seeds`` for any worker count."""
    if workers <= 1:
        return [generate_key(grid_z, spec, s, **kw) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: generate_key(grid_z, spec, s, **kw), seeds))


@dataclass(frozen=True)
class CorrelationEstimate:
    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_keys: int


def estimate_correlation(keys: Sequence[KeyProfile], lags) -> CorrelationEstimate:
    """Spatial autocovariance averaged over an ensemble of keys.

    Each key contributes ``mean_j K_j K_{j+l}`` (zero mean is known, so this is
    unbiased); the standard error is the spread across keys over sqrt(n).
    ``lags`` are lengths in units of L and are rounded to whole grid steps.
    """
    if len(keys) < 2:
        raise ValueError("need at least two keys")
    ref = keys[0]
    for k in keys[1:]:
        if not ref.same_grid(k):
            raise ValueError("keys are on mismatched grids")
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    steps = np.rint(lags / ref.dz).astype(int)
    n = ref.z.size
    if np.any(steps < 0) or np.any(steps >= n):
        raise ValueError("lags must lie within the key span")
    data = np.stack([k.samples for k in keys])
    per_key = np.empty((len(keys), steps.size))
    for i, s in enumerate(steps):
        per_key[:, i] = np.mean(data[:, : n - s] * data[:, s:], axis=1)
    values = per_key.mean(axis=0)
    stderr = per_key.std(axis=0, ddof=1) / math.sqrt(len(keys))
    return CorrelationEstimate(lags=steps * ref.dz, values=values, stderr=stderr, n_keys=len(keys))


def gradient_key(grid_z, slope: float) -> KeyProfile:
    """Linear profile K(z) = slope * (z - mean(z)); zero mean over the grid."""
    if not math.isfinite(slope):
        raise ValueError("slope must be finite")
    z = np.asarray(grid_z, dtype=float)
    zc = z - z[0]
    samples = slope * (zc - zc.mean())
    return KeyProfile(z=zc, samples=samples, label=f"gradient({slope:g})")


def rms_gradient_key(grid_z, strength: float) -> KeyProfile:
    """Gradient key whose rms value on the grid equals ``strength`` (slope near 2 sqrt(3) D / L)."""
    unit = gradient_key(grid_z, 1.0)
    rms = float(np.sqrt(np.mean(unit.samples**2)))
    return gradient_key(grid_z, strength / rms)


def constant_key(grid_z, value: float, label: str = "uniform") -> KeyProfile:
    z = np.asarray(grid_z, dtype=float)
    return KeyProfile(z=z - z[0], samples=np.full(z.shape, float(value)), label=label)


def section_key(master: KeyProfile, offset: float, length: float = 1.0, grid_z=None) -> KeyProfile:
    """Sub-profile on [offset, offset + length], re-gridded to the medium grid.

    The default medium grid keeps the master spacing. Offsets that are whole
    multiples of the spacing slice the master exactly; others interpolate
    linearly.
    """
    alpha = master.span
    tol = 1e-9 * max(1.0, alpha)
    if offset < -tol or offset + length > alpha + tol:
        raise ValueError(f"section [{offset:g}, {offset + length:g}] outside master key [0, {alpha:g}]")
    offset = min(max(offset, 0.0), alpha - length)
    if grid_z is None:
        n = int(round(length / master.dz))
        grid_z = np.linspace(0.0, length, n + 1)
    zg = np.asarray(grid_z, dtype=float) - np.asarray(grid_z, dtype=float)[0]
    shift = offset / master.dz
    step_ratio = (zg[1] - zg[0]) / master.dz
    if abs(shift - round(shift)) < 1e-9 and abs(step_ratio - 1.0) < 1e-12:
        i0 = int(round(shift))
        samples = master.samples[i0 : i0 + zg.size].copy()
    else:
        samples = np.interp(offset + zg, master.z, master.samples)
    root = master.master if master.master is not None else master
    base = master.section_offset if master.master is not None else 0.0
    return KeyProfile(
        z=zg,
        samples=samples,
        spec=master.spec,
        seed=master.seed,
        master_length=root.span,
        section_offset=base + offset,
        master=root,
        label=master.label,
    )


# --- persistence ---------------------------------------------------------

def save_key_csv(key: KeyProfile, path) -> Path:
    """CSV with ``#`` header lines and columns z,value at 17 significant digits."""
    path = Path(path)
    lines = [f"# {k}={v}" for k, v in key.header().items()]
    lines.append("z,value")
    lines += [f"{a:.17g},{b:.17g}" for a, b in zip(key.z, key.samples)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_key_csv(path) -> KeyProfile:
    meta = {}
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line and not line.startswith("z,"):
            a, b = line.split(",")
            rows.append((float(a), float(b)))
    arr = np.array(rows)
    return _from_meta(arr[:, 0], arr[:, 1], meta)


def save_key_npz(key: KeyProfile, path) -> Path:
    """Binary container: full-precision arrays plus the header fields."""
    path = Path(path)
    hdr = {k: ("" if v is None else v) for k, v in key.header().items()}
    with open(path, "wb") as fh:
        np.savez(fh, z=key.z, samples=key.samples, **{f"h_{k}": np.asarray(v) for k, v in hdr.items()})
    return path


def load_key_npz(path) -> KeyProfile:
    with np.load(path, allow_pickle=False) as data:
        meta = {k[2:]: str(data[k]) for k in data.files if k.startswith("h_")}
        return _from_meta(data["z"], data["samples"], meta)


def _from_meta(z, samples, meta) -> KeyProfile:
    def num(key, cast=float):
        v = meta.get(key, "")
        if v in ("", "None"):
            return None
        return int(v) if cast is int else cast(float(v))

    spec = None
    if num("D") is not None and num("sigma") is not None:
        spec = CorrelationSpec(num("D"), num("sigma"))
    return KeyProfile(
        z=np.asarray(z, dtype=float),
        samples=np.asarray(samples, dtype=float),
        spec=spec,
        seed=num("seed", int),
        master_length=num("alpha"),
        section_offset=num("section_offset") or 0.0,
        label=meta.get("label", "disorder"),
    )
