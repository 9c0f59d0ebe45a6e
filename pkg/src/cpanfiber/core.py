"""Sampling grids, complex baseband signals, fiber parameters and unit helpers.

Everything inside the package runs in SI units (m, s, W). Engineering units
(km, ps^2/km, dBm) are accepted only by :class:`PhysicalParams` and the
conversion helpers below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .errors import ConfigError

__all__ = [
    "SamplingGrid",
    "ComplexSignal",
    "PhysicalParams",
    "SeededRng",
    "dispersion_operator",
    "dbm_to_watt",
    "watt_to_dbm",
    "watt_to_energy",
    "ase_spectral_density",
    "is_fast_length",
]


def is_fast_length(n: int) -> bool:
    """True if ``n`` factors into 2, 3 and 5 only."""
    if n < 1:
        return False
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform periodic time grid.

    Parameters
    ----------
    sample_interval : float
        Sample spacing in seconds.
    num_samples : int
        Number of samples; must factor into 2, 3 and 5 so that FFTs stay fast.
    """

    sample_interval: float
    num_samples: int

    def __post_init__(self):
        if not self.sample_interval > 0:
            raise ConfigError("sample_interval must be positive")
        if not is_fast_length(int(self.num_samples)):
            raise ConfigError(
                f"num_samples={self.num_samples} is not a 2,3,5-smooth FFT length"
            )

    @property
    def duration(self) -> float:
        return self.sample_interval * self.num_samples

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.sample_interval

    @property
    def df(self) -> float:
        return 1.0 / self.duration

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.num_samples) * self.sample_interval

    @property
    def f(self) -> np.ndarray:
        """Frequency axis in Hz, FFT order."""
        return np.fft.fftfreq(self.num_samples, self.sample_interval)

    @property
    def omega(self) -> np.ndarray:
        """Angular frequency axis in rad/s, FFT order."""
        return 2 * np.pi * self.f


@dataclass
class ComplexSignal:
    """Complex baseband field sampled on a :class:`SamplingGrid`.

    ``samples`` are in sqrt(W) so that ``abs(samples)**2`` is power in W.
    """

    grid: SamplingGrid
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != (self.grid.num_samples,):
            raise ConfigError(
                f"expected {self.grid.num_samples} samples, got {self.samples.shape}"
            )

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.grid.sample_interval)

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def spectrum(self) -> np.ndarray:
        return np.fft.fft(self.samples)

    def with_samples(self, samples) -> "ComplexSignal":
        return ComplexSignal(self.grid, samples)

    def copy(self) -> "ComplexSignal":
        return ComplexSignal(self.grid, self.samples.copy())


@dataclass(frozen=True)
class PhysicalParams:
    """Fiber link parameters in engineering units.

    Defaults are the standard single-mode fiber values of a 1000 km link with
    ideal distributed amplification.
    """

    alpha_db_km: float = 0.2
    beta2_ps2_km: float = -21.7
    gamma_per_w_km: float = 1.27
    eta: float = 1.0
    link_length_km: float = 1000.0
    span_length_km: float = 100.0
    amplification: str = "ida"
    center_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.amplification not in ("ida", "lumped"):
            raise ConfigError(f"unknown amplification {self.amplification!r}")
        for name in ("alpha_db_km", "link_length_km", "span_length_km",
                     "center_wavelength_nm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.gamma_per_w_km < 0 or self.eta < 0:
            raise ConfigError("gamma and eta must be non-negative")

    # SI views
    @property
    def alpha(self) -> float:
        """Power attenuation in 1/m (nepers of power per metre)."""
        return self.alpha_db_km * math.log(10) / 10 / 1e3

    @property
    def beta2(self) -> float:
        """Group velocity dispersion in s^2/m."""
        return self.beta2_ps2_km * 1e-24 / 1e3

    @property
    def gamma(self) -> float:
        """Kerr coefficient in 1/(W m)."""
        return self.gamma_per_w_km / 1e3

    @property
    def length(self) -> float:
        return self.link_length_km * 1e3

    @property
    def span_length(self) -> float:
        return self.span_length_km * 1e3

    @property
    def carrier_frequency(self) -> float:
        return constants.c / (self.center_wavelength_nm * 1e-9)

    def loss_profile(self, z):
        """f(z): 1 for IDA, the in-span power decay for lumped amplification."""
        z = np.asarray(z, dtype=float)
        if self.amplification == "ida":
            return np.ones_like(z)
        ls = self.span_length
        return np.exp(-self.alpha * (z - ls * np.floor(z / ls)))

    def replace(self, **kw) -> "PhysicalParams":
        return replace(self, **kw)


def dispersion_operator(u: ComplexSignal, z: float, beta2: float) -> ComplexSignal:
    """Apply the linear dispersion operator over distance ``z`` (m).

    Multiplies the spectrum by ``exp(1j * beta2/2 * omega**2 * z)``.
    """
    if z == 0:
        return u.copy()
    w = u.grid.omega
    out = np.fft.ifft(np.exp(0.5j * beta2 * w**2 * z) * np.fft.fft(u.samples))
    return u.with_samples(out)


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


def watt_to_energy(p_w, period):
    """Symbol energy (J) of a channel with power ``p_w`` and symbol period ``period``."""
    return np.asarray(p_w, dtype=float) * period


def ase_spectral_density(params: PhysicalParams) -> float:
    """ASE noise spectral density in W/Hz for ideal distributed amplification."""
    return (params.alpha * params.length * constants.h
            * params.carrier_frequency * params.eta)


@dataclass
class SeededRng:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Streams with the same pair produce identical draws; different
    ``stream_id`` values are statistically independent (``SeedSequence``
    spawn keys).
    """

    seed: int = 0
    stream_id: int | tuple = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=tuple(int(k) for k in key))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream_id: int) -> "SeededRng":
        """Independent stream derived from this seed (not from the current state)."""
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return SeededRng(self.seed, (*key, int(stream_id)))

    def normal(self, size=None, scale=1.0):
        return self._gen.normal(0.0, scale, size)

    def complex_normal(self, size=None, variance=1.0):
        """Circularly symmetric complex Gaussian samples with E|z|^2 = variance."""
        s = math.sqrt(variance / 2.0)
        return s * (self._gen.standard_normal(size) + 1j * self._gen.standard_normal(size))

    def uniform(self, size=None):
        return self._gen.random(size)
