"""WDM and multi-subcarrier modulation on a cyclic burst grid.

A burst of ``M`` symbols per subcarrier occupies exactly ``M * T_sc`` seconds,
so the sinc pulses are realized as brick-wall masks of ``M`` DFT bins. Pulse
orthonormality and the transmit/receive identity then hold to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (ComplexSignal, PhysicalParams, SamplingGrid, SeededRng,
                   dbm_to_watt, is_fast_length)
from .errors import ConfigError, GridTooSmall
from .fiber import SsfmConfig, back_propagate

__all__ = [
    "WdmPlan",
    "SymbolFrame",
    "generate_symbols",
    "burst_grid",
    "pulse_waveform",
    "modulate",
    "demodulate_center",
]


@dataclass(frozen=True)
class WdmPlan:
    """Channel layout and launch powers.

    Parameters
    ----------
    channels : tuple of int
        Channel indices; must contain 0 (the channel of interest).
    symbol_period : float
        Single-carrier symbol period T in seconds. The sinc pulse bandwidth is
        1/T, which also equals the channel bandwidth.
    channel_spacing : float
        Spacing in Hz. Omega_c = 2 pi c * spacing.
    power_dbm : float
        Launch power per channel.
    channel_power_dbm : tuple, optional
        Per-channel overrides aligned with ``channels``.
    subcarriers : int
        Number S of subcarriers tiling each channel.
    subcarrier_weights : tuple, optional
        Relative subcarrier powers (mean 1); ``None`` means a flat allocation.
    fourth_moment_ratio : float
        Q_c / E_c^2; 2 for circularly symmetric Gaussian symbols.
    """

    channels: tuple = (-2, -1, 0, 1, 2)
    symbol_period: float = 20e-12
    channel_spacing: float = 50e9
    power_dbm: float = -6.0
    channel_power_dbm: tuple | None = None
    subcarriers: int = 1
    subcarrier_weights: tuple | None = None
    fourth_moment_ratio: float = 2.0

    def __post_init__(self):
        chans = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "channels", chans)
        if 0 not in chans or len(set(chans)) != len(chans):
            raise ConfigError("channels must be distinct and include 0")
        if not self.symbol_period > 0 or not self.channel_spacing > 0:
            raise ConfigError("symbol_period and channel_spacing must be positive")
        if self.subcarriers < 1:
            raise ConfigError("subcarriers must be >= 1")
        if self.channel_power_dbm is not None and len(self.channel_power_dbm) != len(chans):
            raise ConfigError("channel_power_dbm must align with channels")
        if self.subcarrier_weights is not None:
            w = np.asarray(self.subcarrier_weights, dtype=float)
            if w.shape != (self.subcarriers,) or np.any(w < 0):
                raise ConfigError("subcarrier_weights must be S non-negative values")
            if not math.isclose(w.sum(), self.subcarriers, rel_tol=1e-9):
                raise ConfigError("subcarrier_weights must average to 1")
        if self.channel_spacing * self.symbol_period < 1 - 1e-9:
            raise ConfigError("channels overlap: spacing below the pulse bandwidth 1/T")

    def replace(self, **kw) -> "WdmPlan":
        return replace(self, **kw)

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    def omega(self, c: int) -> float:
        return 2 * np.pi * c * self.channel_spacing

    def power(self, c: int) -> float:
        if self.channel_power_dbm is None:
            return float(dbm_to_watt(self.power_dbm))
        return float(dbm_to_watt(self.channel_power_dbm[self.channels.index(c)]))

    def energy(self, c: int) -> float:
        """Single-carrier symbol energy E_c = P_c T."""
        return self.power(c) * self.symbol_period

    def fourth_moment(self, c: int) -> float:
        return self.fourth_moment_ratio * self.energy(c) ** 2

    @property
    def channel_bandwidth(self) -> float:
        return 1.0 / self.symbol_period

    @property
    def subcarrier_period(self) -> float:
        return self.subcarriers * self.symbol_period

    @property
    def weights(self) -> np.ndarray:
        if self.subcarrier_weights is None:
            return np.ones(self.subcarriers)
        return np.asarray(self.subcarrier_weights, dtype=float)

    def subcarrier_power(self, c: int, s: int) -> float:
        return self.power(c) * self.weights[s] / self.subcarriers

    def subcarrier_energy(self, c: int, s: int) -> float:
        return self.subcarrier_power(c, s) * self.subcarrier_period

    def subcarrier_offset(self, s: int) -> float:
        """Angular offset of subcarrier s (0-based) from its channel center."""
        S = self.subcarriers
        return 2 * np.pi * (s + 0.5 - S / 2) / self.subcarrier_period

    @property
    def total_bandwidth(self) -> float:
        lo, hi = min(self.channels), max(self.channels)
        return (hi - lo) * self.channel_spacing + self.channel_bandwidth


@dataclass
class SymbolFrame:
    """Symbols of one burst, shape (num_channels, S, M)."""

    channels: tuple
    symbols: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=complex)
        if self.symbols.ndim != 3 or self.symbols.shape[0] != len(self.channels):
            raise ConfigError("symbols must have shape (channels, S, M)")

    @property
    def num_symbols(self) -> int:
        return self.symbols.shape[2]

    @property
    def subcarriers(self) -> int:
        return self.symbols.shape[1]

    def channel(self, c: int) -> np.ndarray:
        return self.symbols[self.channels.index(c)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "subcarrier", "m", "re", "im"])
            for i, c in enumerate(self.channels):
                for s in range(self.subcarriers):
                    for m, x in enumerate(self.symbols[i, s]):
                        w.writerow([c, s, m, repr(float(x.real)), repr(float(x.imag))])

    @classmethod
    def from_csv(cls, path) -> "SymbolFrame":
        rows = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
        chans = tuple(int(c) for c in dict.fromkeys(rows[:, 0].astype(int)))
        S = int(rows[:, 1].max()) + 1
        M = int(rows[:, 2].max()) + 1
        sym = np.zeros((len(chans), S, M), dtype=complex)
        ci = np.array([chans.index(int(c)) for c in rows[:, 0]])
        sym[ci, rows[:, 1].astype(int), rows[:, 2].astype(int)] = rows[:, 3] + 1j * rows[:, 4]
        return cls(chans, sym)


def generate_symbols(plan: WdmPlan, M: int, rng: SeededRng) -> SymbolFrame:
    """I.i.d. circularly symmetric Gaussian symbols with the plan's energies."""
    if M <= 0:
        raise ConfigError("M must be positive")
    S = plan.subcarriers
    out = np.zeros((plan.num_channels, S, M), dtype=complex)
    for i, c in enumerate(plan.channels):
        for s in range(S):
            e = plan.subcarrier_energy(c, s)
            sub = rng.child(1000 * (c + 500) + s)
            out[i, s] = sub.complex_normal(M, e) if e > 0 else 0.0
    return SymbolFrame(plan.channels, out)


def burst_grid(plan: WdmPlan, M: int, oversampling: float = 4.0) -> SamplingGrid:
    """Cyclic grid spanning exactly M subcarrier symbols.

    The sample count is the smallest 2,3,5-smooth multiple of ``M * S`` bins
    per channel bandwidth that covers ``oversampling`` times the WDM band.
    """
    duration = M * plan.subcarrier_period
    need = oversampling * plan.total_bandwidth * duration
    n = int(math.ceil(need - 1e-9))
    while not is_fast_length(n):
        n += 1
    return SamplingGrid(duration / n, n)


def _bins(plan: WdmPlan, grid: SamplingGrid, M: int):
    """Yield (channel index, s, bin indices in FFT order for r = -M/2..M/2-1)."""
    duration = grid.duration
    if not math.isclose(duration, M * plan.subcarrier_period, rel_tol=1e-9):
        raise GridTooSmall("grid duration must equal M subcarrier periods")
    if M % 2:
        raise ConfigError("M must be even")
    spacing_bins = plan.channel_spacing * duration
    if not math.isclose(spacing_bins, round(spacing_bins), abs_tol=1e-6):
        raise ConfigError("channel spacing is not an integer number of DFT bins")
    spacing_bins = int(round(spacing_bins))
    N = grid.num_samples
    S = plan.subcarriers
    r = np.arange(-M // 2, M // 2)
    for i, c in enumerate(plan.channels):
        for s in range(S):
            center = c * spacing_bins + (2 * s + 1 - S) * M // 2
            b = center + r
            if b.min() < -(N // 2) or b.max() >= N - N // 2:
                raise GridTooSmall(f"channel {c} does not fit in the simulation band")
            yield i, s, np.mod(b, N)


def _amp(grid: SamplingGrid, M: int) -> float:
    return math.sqrt(grid.num_samples / (M * grid.sample_interval))


def pulse_waveform(grid: SamplingGrid, M: int, shift: float = 0.0) -> np.ndarray:
    """Periodic unit-energy sinc of bandwidth M / duration, evaluated in closed form.

    ``s(t) = a/N * sum_{r=-M/2}^{M/2-1} exp(j 2 pi r (t - shift) / D)``.
    """
    D = grid.duration
    x = np.pi * (grid.t - shift) / D
    x = np.where(np.abs(np.sin(x)) < 1e-300, 0.0, x)
    num = np.sin(M * x)
    den = np.sin(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(np.abs(den) < 1e-12, M * np.cos(M * x) / np.cos(x), num / den)
    return _amp(grid, M) / grid.num_samples * np.exp(-1j * x) * ratio


def modulate(frame: SymbolFrame, plan: WdmPlan, grid: SamplingGrid) -> ComplexSignal:
    """Launch waveform of all channels and subcarriers."""
    M = frame.num_symbols
    if frame.subcarriers != plan.subcarriers:
        raise ConfigError("frame and plan disagree on the number of subcarriers")
    if grid.sample_rate < plan.total_bandwidth:
        raise GridTooSmall("grid band narrower than the WDM band")
    U = np.zeros(grid.num_samples, dtype=complex)
    a = _amp(grid, M)
    for i, s, b in _bins(plan, grid, M):
        X = np.fft.fft(frame.symbols[i, s])
        r = np.arange(-M // 2, M // 2)
        U[b] = a * X[np.mod(r, M)]
    return ComplexSignal(grid, np.fft.ifft(U))


def demodulate_center(u: ComplexSignal, plan: WdmPlan, params: PhysicalParams,
                      cfg: SsfmConfig = SsfmConfig(), M: int | None = None,
                      dbp: bool = True, dbp_oversampling: float = 4.0,
                      dbp_steps: int | None = None) -> SymbolFrame:
    """Recover the center channel symbols y_m for every subcarrier.

    The center channel is brick-wall filtered, moved onto a reduced grid of
    ``dbp_oversampling`` times its bandwidth, back-propagated, matched
    filtered and sampled at t = m T_sc.
    """
    grid = u.grid
    if M is None:
        M = int(round(grid.duration / plan.subcarrier_period))
    S = plan.subcarriers
    n_ch = M * S
    U = np.fft.fft(u.samples)
    # reduced grid for the center channel
    n_red = int(math.ceil(dbp_oversampling * n_ch))
    while not is_fast_length(n_red):
        n_red += 1
    red = SamplingGrid(grid.duration / n_red, n_red)
    r = np.arange(-n_ch // 2, n_ch - n_ch // 2)
    V = np.zeros(n_red, dtype=complex)
    V[np.mod(r, n_red)] = U[np.mod(r, grid.num_samples)] * (n_red / grid.num_samples)
    v = ComplexSignal(red, np.fft.ifft(V))
    if dbp:
        v = back_propagate(v, params, cfg, num_steps=dbp_steps)
    Vb = np.fft.fft(v.samples)
    a = _amp(red, M)
    out = np.zeros((1, S, M), dtype=complex)
    sub = plan.replace(channels=(0,), channel_power_dbm=None)
    for _, s, b in _bins(sub, red, M):
        R = np.zeros(M, dtype=complex)
        rr = np.arange(-M // 2, M // 2)
        R[np.mod(rr, M)] = Vb[b]
        out[0, s] = red.sample_interval * a / n_red * M * np.fft.ifft(R)
    return SymbolFrame((0,), out)
