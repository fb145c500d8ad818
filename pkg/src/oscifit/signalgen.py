"""Synthetic decaying oscillations: monochromatic, AM and FM carriers in white noise.

Time runs over integer samples ``t = 0 .. T-1``. All latent parameters are in
per-sample units (frequencies in cycles/sample, coherence time in samples).
"""

import enum
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import gaussian

__all__ = [
    "ProcessKind",
    "LatentParams",
    "TimeGrid",
    "Ranges",
    "NormMeta",
    "SignalPair",
    "RangeError",
    "DegenerateSignalError",
    "DecodeError",
    "LATENT_FULL",
    "LATENT_PARTIAL",
    "bessel_j",
    "clean_signal",
    "gen_mono",
    "gen_am",
    "gen_fm",
    "generate",
    "sample_latents",
    "validate_latents",
    "normalize_signal",
    "encode_latents",
    "decode_latents",
]

TWO_PI = 2.0 * math.pi


class RangeError(ValueError):
    """A latent parameter lies outside its allowed range."""

    def __init__(self, name, value, lo, hi):
        super().__init__(f"{name}={value!r} outside [{lo!r}, {hi!r}]")
        self.field = name
        self.value = value


class DegenerateSignalError(ValueError):
    pass


class DecodeError(ValueError):
    pass


class ProcessKind(enum.IntEnum):
    MONO = 0
    AM = 1
    FM = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown process kind {value!r}") from None

    @property
    def label(self):
        return self.name.lower()


@dataclass(frozen=True)
class TimeGrid:
    T: int
    dt: float = 1.0

    def __post_init__(self):
        if int(self.T) < 32:
            raise ValueError(f"T must be >= 32, got {self.T}")
        if self.dt != 1.0:
            raise ValueError("only unit sampling interval is supported")

    @property
    def t(self):
        return np.arange(self.T, dtype=np.float64)


@dataclass(frozen=True)
class Ranges:
    """Closed sampling intervals for one record length.

    For ``T >= 200`` these are Fc in [10/T, 0.1], tau in [0.2T, 8T],
    Fm in [1/T, 0.01], Im in [0, 1] and sigma in [0, 2]. Shorter records lower
    the Fc and Fm floors so neither interval is empty.
    """

    fc: tuple
    tau: tuple
    fm: tuple
    im: tuple = (0.0, 1.0)
    sigma: tuple = (0.0, 2.0)
    phi: tuple = (0.0, TWO_PI)

    @classmethod
    def for_length(cls, T, fm_range=None):
        fc = (min(10.0 / T, 0.05), 0.1)
        fm = tuple(fm_range) if fm_range is not None else (min(1.0 / T, 0.005), 0.01)
        if not fm[0] < fm[1]:
            raise ValueError(f"empty Fm range {fm}")
        return cls(fc=fc, tau=(0.2 * T, 8.0 * T), fm=fm)

    def span(self, name):
        lo, hi = getattr(self, name)
        return lo, hi - lo


@dataclass(frozen=True)
class LatentParams:
    fc: float
    phi: float
    tau: float
    fm: float = 0.0
    im: float = 0.0
    sigma: float = 0.0
    kind: ProcessKind = ProcessKind.MONO

    def as_array(self):
        return np.array([self.fc, self.phi, self.tau, self.fm, self.im, self.sigma])

    @classmethod
    def from_array(cls, values, kind):
        fc, phi, tau, fm, im, sigma = (float(v) for v in values)
        return cls(fc, phi, tau, fm, im, sigma, ProcessKind.parse(kind))

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class NormMeta:
    offset: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("NormMeta.scale must be strictly positive")

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def invert(self, y):
        return np.asarray(y, dtype=np.float64) * self.scale + self.offset


@dataclass
class SignalPair:
    latents: LatentParams
    clean: np.ndarray
    noisy: np.ndarray
    norm: NormMeta = field(default=None)

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape:
            raise ValueError("clean and noisy series differ in length")
        if self.norm is None:
            self.norm = normalize_signal(self.noisy)[1]

    @property
    def noisy_normalized(self):
        return self.norm.apply(self.noisy)

    @property
    def clean_normalized(self):
        return self.norm.apply(self.clean)


def validate_latents(p, T, ranges=None):
    """Raise RangeError naming the first field outside its range."""
    ranges = ranges or Ranges.for_length(T)
    kind = ProcessKind.parse(p.kind)
    checks = [("fc", ranges.fc), ("phi", ranges.phi), ("tau", ranges.tau), ("sigma", ranges.sigma)]
    if kind is ProcessKind.MONO:
        for name in ("fm", "im"):
            if getattr(p, name) != 0.0:
                raise RangeError(name, getattr(p, name), 0.0, 0.0)
    else:
        checks += [("fm", ranges.fm), ("im", ranges.im)]
    for name, (lo, hi) in checks:
        v = getattr(p, name)
        if not (lo <= v <= hi):
            raise RangeError(name, v, lo, hi)


def bessel_j(order, x):
    """Bessel function of the first kind, orders 0 and 1, for 0 <= x <= 2.

    Sums the ascending series ``sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)`` until a
    term drops below 1e-16 in magnitude.
    """
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    x = float(x)
    if not (0.0 <= x <= 2.0):
        raise ValueError(f"bessel_j domain is [0, 2], got {x!r}")
    half = 0.5 * x
    sq = half * half
    term = 1.0 if order == 0 else half
    total = term
    k = 0
    while abs(term) >= 1e-16:
        k += 1
        term *= -sq / (k * (k + order))
        total += term
    return total


def clean_signal(kind, p, t, envelope_sidebands=True):
    """Noiseless model evaluated on ``t``; no range checks."""
    kind = ProcessKind(kind)
    envelope = np.exp(-t / p.tau)
    carrier = np.sin(TWO_PI * p.fc * t + p.phi)
    if kind is ProcessKind.MONO:
        return carrier * envelope
    if kind is ProcessKind.AM:
        return carrier * envelope * (1.0 + p.im * np.sin(TWO_PI * p.fm * t))
    j0 = bessel_j(0, p.im)
    j1 = bessel_j(1, p.im)
    side_env = envelope if envelope_sidebands else 1.0
    upper = np.sin(TWO_PI * (p.fc + p.fm) * t + p.phi) * side_env
    lower = np.sin(TWO_PI * (p.fc - p.fm) * t + p.phi) * side_env
    return j0 * (carrier * envelope) + j1 * upper - j1 * lower


def _finish(grid, p, clean, noise):
    if noise is None:
        noisy = clean.copy()
    else:
        noisy = clean + p.sigma * gaussian(noise, grid.T)
    return SignalPair(latents=p, clean=clean, noisy=noisy)


def _check(grid, p, kind, ranges):
    if ProcessKind.parse(p.kind) is not kind:
        raise ValueError(f"expected {kind.label} latents, got {ProcessKind.parse(p.kind).label}")
    validate_latents(p, grid.T, ranges)


def gen_mono(grid, p, noise=None, ranges=None):
    """Decaying sine ``sin(2π Fc t + φ) exp(-t/τ)`` plus N(0, σ²) noise."""
    _check(grid, p, ProcessKind.MONO, ranges)
    return _finish(grid, p, clean_signal(ProcessKind.MONO, p, grid.t), noise)


def gen_am(grid, p, noise=None, ranges=None):
    _check(grid, p, ProcessKind.AM, ranges)
    return _finish(grid, p, clean_signal(ProcessKind.AM, p, grid.t), noise)


def gen_fm(grid, p, noise=None, envelope_sidebands=True, ranges=None):
    """Narrowband FM: carrier weighted by J0(Im), sidebands at Fc±Fm by ±J1(Im).

    With ``envelope_sidebands=False`` only the carrier decays.
    """
    _check(grid, p, ProcessKind.FM, ranges)
    clean = clean_signal(ProcessKind.FM, p, grid.t, envelope_sidebands)
    return _finish(grid, p, clean, noise)


def generate(grid, p, noise=None, envelope_sidebands=True, ranges=None):
    kind = ProcessKind.parse(p.kind)
    if kind is ProcessKind.MONO:
        return gen_mono(grid, p, noise, ranges)
    if kind is ProcessKind.AM:
        return gen_am(grid, p, noise, ranges)
    return gen_fm(grid, p, noise, envelope_sidebands, ranges)


def sample_latents(kind, rng, T, ranges=None):
    """Uniform draw of every latent within its range (Fm = Im = 0 for mono)."""
    kind = ProcessKind.parse(kind)
    r = ranges or Ranges.for_length(T)
    u = rng.random(6)
    fc = r.fc[0] + u[0] * (r.fc[1] - r.fc[0])
    phi = u[1] * TWO_PI
    tau = r.tau[0] + u[2] * (r.tau[1] - r.tau[0])
    sigma = r.sigma[0] + u[5] * (r.sigma[1] - r.sigma[0])
    if kind is ProcessKind.MONO:
        fm = im = 0.0
    else:
        fm = r.fm[0] + u[3] * (r.fm[1] - r.fm[0])
        im = r.im[0] + u[4] * (r.im[1] - r.im[0])
    return LatentParams(fc, phi, tau, fm, im, sigma, kind)


def normalize_signal(x):
    """Min-max map of ``x`` onto [0, 1]; returns the mapped vector and its NormMeta."""
    x = np.asarray(x, dtype=np.float64)
    lo = float(x.min())
    hi = float(x.max())
    if not hi > lo:
        raise DegenerateSignalError("cannot normalize a constant series")
    meta = NormMeta(offset=lo, scale=hi - lo)
    return meta.apply(x), meta


LATENT_FULL = ("fc", "sin_phi", "cos_phi", "tau", "fm", "im", "sigma")
LATENT_PARTIAL = ("fc", "sin_phi", "cos_phi", "tau", "sigma")


def encode_latents(p, T, names=LATENT_FULL, strict=True, ranges=None):
    """Map latents onto the unit interval in the order given by ``names``.

    Phase becomes ``((sin φ + 1)/2, (cos φ + 1)/2)``; everything else is scaled
    linearly by its sampling range. Mono signals encode Fm and Im as 0.
    With ``strict=False`` out-of-range values (e.g. fitted estimates) are mapped
    without complaint and may leave [0, 1].
    """
    r = ranges or Ranges.for_length(T)
    if strict:
        validate_latents(p, T, r)
    mono = ProcessKind.parse(p.kind) is ProcessKind.MONO
    out = np.empty(len(names))
    for i, name in enumerate(names):
        if name == "sin_phi":
            out[i] = (math.sin(p.phi) + 1.0) / 2.0
        elif name == "cos_phi":
            out[i] = (math.cos(p.phi) + 1.0) / 2.0
        elif mono and name in ("fm", "im"):
            out[i] = 0.0
        else:
            lo, width = r.span(name)
            out[i] = (getattr(p, name) - lo) / width
    return out


def decode_latents(v, T, kind, names=LATENT_FULL, clamp=0.05, ranges=None):
    """Inverse of :func:`encode_latents`.

    Components within ``clamp`` outside [0, 1] are clipped with a warning, further
    out raises DecodeError. ``clamp=None`` clips silently whatever the excursion.
    Latents absent from ``names`` decode to 0.
    """
    r = ranges or Ranges.for_length(T)
    kind = ProcessKind.parse(kind)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (len(names),):
        raise DecodeError(f"expected {len(names)} components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DecodeError("non-finite latent vector")
    if clamp is not None:
        outside = (v < -clamp) | (v > 1.0 + clamp)
        if outside.any():
            bad = [names[i] for i in np.flatnonzero(outside)]
            raise DecodeError(f"components {bad} beyond the ±{clamp} clamp band")
        if ((v < 0.0) | (v > 1.0)).any():
            warnings.warn("latent vector clipped into [0, 1]", stacklevel=2)
    v = np.clip(v, 0.0, 1.0)
    comp = dict(zip(names, v))
    values = {"fm": 0.0, "im": 0.0, "sigma": 0.0}
    for name in ("fc", "tau", "fm", "im", "sigma"):
        if name in comp:
            lo, width = r.span(name)
            values[name] = lo + comp[name] * width
    s = 2.0 * comp.get("sin_phi", 0.5) - 1.0
    c = 2.0 * comp.get("cos_phi", 0.5) - 1.0
    phi = 0.0 if (s == 0.0 and c == 0.0) else math.atan2(s, c) % TWO_PI
    if phi >= TWO_PI:
        phi = 0.0
    if kind is ProcessKind.MONO:
        values["fm"] = values["im"] = 0.0
    return LatentParams(
        values["fc"], phi, values["tau"], values["fm"], values["im"], values["sigma"], kind
    )
