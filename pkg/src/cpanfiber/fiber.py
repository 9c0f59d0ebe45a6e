"""Symmetrized split-step Fourier integration of the NLSE with ASE injection.

The field obeys::

    du/dz = -j beta2/2 d2u/dt2 + j gamma f(z) |u|^2 u + n(z, t) / sqrt(f(z))

with ``f(z) = 1`` for ideal distributed amplification and the in-span power
profile for lumped amplification. ``back_propagate`` runs the noiseless
inverse system over the same step grid in reverse order.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import ComplexSignal, PhysicalParams, SamplingGrid, SeededRng, ase_spectral_density
from .errors import AliasingRisk, ConfigError, StepTooLarge

logger = logging.getLogger(__name__)

__all__ = [
    "SsfmConfig",
    "LossProfile",
    "propagate",
    "back_propagate",
    "write_field_dump",
    "read_field_dump",
]


@dataclass(frozen=True)
class SsfmConfig:
    """Split-step settings.

    ``step_size`` of ``None`` selects the largest step that divides the link
    evenly while keeping the per-step nonlinear phase of the launch field
    (peak power estimate) under ``max_nonlinear_phase_per_step``.
    """

    step_size: float | None = None
    max_nonlinear_phase_per_step: float = 1e-3
    noise_injection: str = "per_step"
    min_steps: int = 16
    check_aliasing: bool = True

    def __post_init__(self):
        if self.noise_injection not in ("per_step", "end_lumped"):
            raise ConfigError(f"unknown noise_injection {self.noise_injection!r}")
        if not self.max_nonlinear_phase_per_step > 0:
            raise ConfigError("max_nonlinear_phase_per_step must be positive")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be positive")


class LossProfile:
    """Normalized power profile f(z) of the link."""

    def __init__(self, params: PhysicalParams):
        self.mode = params.amplification
        self.alpha = params.alpha
        self.span = params.span_length

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.mode == "ida":
            return np.ones_like(z)
        return np.exp(-self.alpha * (z - self.span * np.floor(z / self.span)))

    def mean_over(self, z0: float, z1: float) -> float:
        """Average of f over [z0, z1]; exact for both profiles within a span."""
        h = z1 - z0
        if self.mode == "ida" or h == 0:
            return 1.0
        # Split at span boundaries so the exponential integral stays exact.
        edges = [z0]
        k = math.floor(z0 / self.span) + 1
        while k * self.span < z1:
            edges.append(k * self.span)
            k += 1
        edges.append(z1)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            base = self.span * math.floor((a + 1e-12 * self.span) / self.span)
            total += (math.exp(-self.alpha * (a - base)) - math.exp(-self.alpha * (b - base))) / self.alpha
        return total / h


def _step_grid(params: PhysicalParams, cfg: SsfmConfig, u0: ComplexSignal,
               refine: float = 1.0) -> np.ndarray:
    length = params.length
    if cfg.step_size is not None:
        n = max(1, int(round(length / cfg.step_size)))
    else:
        p = np.abs(u0.samples) ** 2
        # Dispersion turns the launch field into a near-Gaussian process whose
        # peak grows like mean * log(N); guard against that from the start.
        # depends on the mean only (an invariant of the lossless equation) so
        # that back-propagation rebuilds the forward grid from the received field
        peak = float(p.mean()) * (3.0 + math.log(p.size))
        if params.gamma * peak > 0:
            n = math.ceil(refine * params.gamma * peak * length / cfg.max_nonlinear_phase_per_step)
        else:
            n = 1
        n = max(n, cfg.min_steps)
    return np.linspace(0.0, length, n + 1)


def _check_band(u: ComplexSignal):
    spec = np.abs(u.spectrum()) ** 2
    total = spec.sum()
    if total == 0:
        return
    f = np.abs(u.grid.f)
    outside = spec[f > u.grid.sample_rate / 4].sum()
    if outside > 1e-12 * total:
        raise AliasingRisk(
            f"{outside / total:.2e} of the signal energy lies outside half the grid band"
        )


def _run(u: np.ndarray, grid: SamplingGrid, z_edges: np.ndarray, beta2: float,
         gamma: float, profile: LossProfile, phase_cap: float,
         noise_psd: float = 0.0, noise_mode: str = "per_step",
         rng: SeededRng | None = None, length: float = 1.0,
         span: float | None = None) -> np.ndarray:
    """Core stepping loop; z_edges may run backwards for back-propagation."""
    w = grid.omega
    n_fft = grid.num_samples
    steps = np.diff(z_edges)
    # All interior linear operators are full steps; the first and last are halves.
    h_cache: dict[float, np.ndarray] = {}

    def lin(dz):
        key = round(dz, 9)
        if key not in h_cache:
            h_cache[key] = np.exp(0.5j * beta2 * w**2 * dz)
        return h_cache[key]

    noisy = noise_psd > 0 and rng is not None
    gen = rng.generator if noisy else None
    span_ends = set()
    if noisy and noise_mode == "end_lumped":
        edge = span if span is not None else length
        span_ends = {int(round(x / edge)) for x in np.arange(edge, length + 0.5 * edge, edge)}

    uf = np.fft.fft(u) * lin(0.5 * steps[0])
    for i, dz in enumerate(steps):
        ut = np.fft.ifft(uf)
        feff = profile.mean_over(min(z_edges[i], z_edges[i + 1]), max(z_edges[i], z_edges[i + 1]))
        power = ut.real**2 + ut.imag**2
        phi = gamma * feff * dz
        if phase_cap and power.size:
            peak_phase = abs(phi) * float(power.max())
            if peak_phase > phase_cap:
                raise StepTooLarge(
                    f"nonlinear phase {peak_phase:.3g} rad exceeds {phase_cap:.3g} rad at step {i}"
                )
        ut *= np.exp(1j * phi * power)
        uf = np.fft.fft(ut)
        if i + 1 < len(steps):
            uf *= lin(0.5 * (dz + steps[i + 1]))
        else:
            uf *= lin(0.5 * dz)
        if noisy:
            z_here = z_edges[i + 1]
            if noise_mode == "per_step":
                f_mid = profile(0.5 * (z_edges[i] + z_edges[i + 1]))
                psd = noise_psd * abs(dz) / length / float(f_mid)
            else:
                edge = span if span is not None else length
                if int(round(z_here / edge)) in span_ends and abs(z_here / edge - round(z_here / edge)) < 1e-9:
                    psd = noise_psd * edge / length
                else:
                    psd = 0.0
            if psd > 0:
                # time-domain variance psd*fs per sample -> n_fft times that per FFT bin
                s = math.sqrt(psd * grid.sample_rate * n_fft / 2.0)
                uf += s * (gen.standard_normal(n_fft) + 1j * gen.standard_normal(n_fft))
    return np.fft.ifft(uf)


def propagate(u0: ComplexSignal, params: PhysicalParams, cfg: SsfmConfig = SsfmConfig(),
              rng: SeededRng | None = None) -> ComplexSignal:
    """Propagate ``u0`` over the whole link.

    Parameters
    ----------
    u0 : ComplexSignal
        Launch field.
    params : PhysicalParams
    cfg : SsfmConfig
    rng : SeededRng, optional
        Noise source. ASE is injected only when ``params.eta > 0`` and an rng
        is supplied.

    Raises
    ------
    AliasingRisk
        Launch spectrum reaches beyond half the grid band.
    StepTooLarge
        A step would rotate the peak sample by more than the configured cap.
    """
    if cfg.check_aliasing:
        _check_band(u0)
    n_ase = ase_spectral_density(params)
    refine = 1.0
    while True:
        z = _step_grid(params, cfg, u0, refine)
        # a restart must replay the same noise, so each attempt reseeds
        attempt_rng = None if rng is None else SeededRng(rng.seed, rng.stream_id)
        try:
            out = _run(u0.samples.copy(), u0.grid, z, params.beta2, params.gamma,
                       LossProfile(params), cfg.max_nonlinear_phase_per_step,
                       noise_psd=n_ase, noise_mode=cfg.noise_injection, rng=attempt_rng,
                       length=params.length,
                       span=params.span_length if params.amplification == "lumped" else None)
        except StepTooLarge:
            # a user-fixed step is a hard error; the automatic grid is refined instead
            if cfg.step_size is not None or refine > 8:
                raise
            refine *= 1.5
            logger.info("peak power above estimate, refining step grid by %.2f", refine)
            continue
        return u0.with_samples(out)


def back_propagate(u: ComplexSignal, params: PhysicalParams, cfg: SsfmConfig = SsfmConfig(),
                   num_steps: int | None = None) -> ComplexSignal:
    """Noiseless digital back-propagation from z = L to z = 0.

    The step grid follows the same rule as :func:`propagate` (or is fixed by
    ``num_steps``) and is traversed backwards with negated dispersion and
    nonlinearity. On the forward grid the round trip is an exact inverse at
    ``eta = 0``; an automatic forward grid that had to be refined differs.
    """
    if num_steps is not None:
        z = np.linspace(0.0, params.length, num_steps + 1)
    else:
        z = _step_grid(params, cfg, u)
    out = _run(u.samples.copy(), u.grid, z[::-1], params.beta2, params.gamma,
               LossProfile(params), 0.0)
    return u.with_samples(out)


def write_field_dump(path, u: ComplexSignal, **meta) -> None:
    """Write a JSON header line followed by little-endian float64 (re, im) pairs."""
    header = {"sample_interval": u.grid.sample_interval,
              "num_samples": u.grid.num_samples,
              "dtype": "<f8", "layout": "interleaved_re_im", **meta}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.ascontiguousarray(u.samples, dtype="<c16").view("<f8").tobytes())


def read_field_dump(path) -> tuple[ComplexSignal, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = SamplingGrid(header["sample_interval"], header["num_samples"])
    samples = data[0::2] + 1j * data[1::2]
    return ComplexSignal(grid, samples), header
