"""Generative phase and additive noise models.

Phases are handled in Euclidean space throughout (no 2 pi wrapping).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import lfilter, lfiltic

from .core import SeededRng
from .errors import ConfigError, NotPSD, SingularCovariance
from .stats import CovarianceSeq

__all__ = [
    "MpnParams",
    "WpnParams",
    "fit_mpn",
    "generate_mpn",
    "generate_wpn",
    "generate_iid_phase",
    "generate_correlated_noise",
    "synthesize_cpan_channel",
]


@dataclass(frozen=True)
class MpnParams:
    """Gauss-Markov phase noise of memory mu.

    ``g`` multiplies ``(theta[m-mu], ..., theta[m-1])``.
    """

    g: np.ndarray
    sigma: float
    r: np.ndarray
    mean: float = 0.0

    @property
    def memory(self) -> int:
        return len(self.g)


@dataclass(frozen=True)
class WpnParams:
    sigma_delta: float

    def __post_init__(self):
        if self.sigma_delta < 0:
            raise ConfigError("sigma_delta must be non-negative")


def fit_mpn(r, mu: int, mean: float = 0.0, max_cond: float = 1e12) -> MpnParams:
    """Linear-prediction coefficients of order mu from r[0..mu].

    The normal equations are solved by the Levinson-Durbin recursion. When
    the prediction error vanishes at some order p < mu (a perfectly
    predictable process) the recursion stops there and the higher-order
    coefficients are zero.

    Raises
    ------
    SingularCovariance
        If the Toeplitz matrix is numerically indefinite or its condition
        number exceeds ``max_cond`` without the process being predictable.
    """
    if mu < 1:
        raise ConfigError("memory must be >= 1")
    r = np.asarray(r.one_sided(mu + 1) if isinstance(r, CovarianceSeq) else r, dtype=float)
    if r.size < mu + 1:
        r = np.concatenate([r, np.zeros(mu + 1 - r.size)])
    r = r[:mu + 1]
    r0 = r[0]
    if r0 <= 0:
        if np.allclose(r, 0):
            return MpnParams(np.zeros(mu), 0.0, r, mean)
        raise SingularCovariance("r[0] must be positive")
    tol = 1e-12 * r0
    a = np.zeros(0)  # a[i] multiplies theta[m-1-i]
    err = r0
    for p in range(1, mu + 1):
        if err <= tol:
            break
        acc = r[p] - np.dot(a, r[p - 1:0:-1]) if p > 1 else r[1]
        kappa = acc / err
        a = np.concatenate([a - kappa * a[::-1], [kappa]])
        err = err * (1 - kappa**2)
        if err < -tol:
            raise SingularCovariance(f"covariance is not positive definite at order {p}")
    err = max(err, 0.0)
    if err > tol:
        cond = np.linalg.cond(_toeplitz(r[:mu]))
        if cond > max_cond:
            raise SingularCovariance(f"condition number {cond:.3g} exceeds {max_cond:.0e}")
    a = np.concatenate([a, np.zeros(mu - a.size)])
    return MpnParams(a[::-1].copy(), float(np.sqrt(err)), r, mean)


def _toeplitz(col):
    from scipy.linalg import toeplitz
    return toeplitz(col)


def _stationary_start(p: MpnParams, gen: np.random.Generator, size: tuple = ()) -> np.ndarray:
    """Draw (theta[-mu], .., theta[-1]) from the stationary joint Gaussian."""
    w, V = np.linalg.eigh(_toeplitz(p.r[:p.memory]))
    A = V * np.sqrt(np.clip(w, 0, None))
    return gen.standard_normal(tuple(size) + (p.memory,)) @ A.T


def generate_mpn(p: MpnParams, M: int, rng: SeededRng, start=None) -> np.ndarray:
    """Zero-mean MPN realization of length M.

    ``start`` optionally fixes (theta[-mu], ..., theta[-1]); otherwise it is
    drawn from the stationary distribution.
    """
    gen = rng.generator
    if start is None:
        start = _stationary_start(p, gen)
    start = np.asarray(start, dtype=float)
    delta = gen.standard_normal(M)
    # theta[m] - sum_i g_rev[i] theta[m-1-i] = sigma delta[m]
    den = np.concatenate([[1.0], -p.g[::-1]])
    zi = lfiltic([1.0], den, y=start[::-1])
    out, _ = lfilter([1.0], den, p.sigma * delta, zi=zi)
    return out


def generate_wpn(p: WpnParams, M: int, rng: SeededRng) -> np.ndarray:
    """Random walk started at zero: theta[0] = 0, theta[m] = theta[m-1] + sigma delta."""
    steps = p.sigma_delta * rng.generator.standard_normal(M - 1) if M > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(steps)])[:M]


def generate_iid_phase(variance: float, M: int, rng: SeededRng) -> np.ndarray:
    return np.sqrt(variance) * rng.generator.standard_normal(M)


def generate_correlated_noise(r: CovarianceSeq, M: int, rng: SeededRng,
                              rel_tol: float = 1e-6) -> np.ndarray:
    """Circularly symmetric Gaussian sequence with autocorrelation r.

    White noise is shaped in the frequency domain by the square root of the
    sampled spectrum of r on a circulant embedding (spectral factorization).

    Raises
    ------
    NotPSD
        If the spectrum dips below ``-rel_tol`` times its maximum.
    """
    lm = r.l_max
    N = next_fast_len(M + 2 * lm + 1)
    col = np.zeros(N, dtype=complex)
    lags = np.arange(-lm, lm + 1)
    # circulant covariance <z_n z_p^*> = col[n - p], and r[l] = <z_m z_{m+l}^*>
    col[np.mod(-lags, N)] = r(lags)
    S = np.fft.fft(col)
    if np.max(np.abs(S.imag)) > 1e-9 * max(np.max(np.abs(S.real)), 1e-300):
        raise NotPSD("covariance sequence is not Hermitian")
    S = S.real
    smax = S.max()
    if smax <= 0:
        if np.allclose(S, 0):
            return np.zeros(M, dtype=complex)
        raise NotPSD("covariance spectrum is non-positive")
    if S.min() < -rel_tol * smax:
        raise NotPSD(f"spectrum minimum {S.min():.3g} below tolerance")
    S = np.maximum(S, 1e-12 * smax)
    g = rng.generator
    w = (g.standard_normal(N) + 1j * g.standard_normal(N)) / np.sqrt(2)
    # z[n] = sum_k c[k] w[n-k] with |C(f)|^2 = S(f): circulant covariance = r
    z = np.fft.ifft(np.sqrt(S) * np.fft.fft(w))
    return z[:M]


def synthesize_cpan_channel(x: np.ndarray, model, rng: SeededRng,
                            noise: CovarianceSeq | None = None) -> np.ndarray:
    """Draw y = x exp(j theta) + z from a fitted model.

    Parameters
    ----------
    model : CpanModelParams
        Supplies the phase model and its mean; the noise defaults to white
        with variance ``model.sigma_z2`` unless ``noise`` (or the model's own
        stored covariance) is given.
    """
    x = np.asarray(x)
    M = x.size
    phase = model.sample_phase(M, rng.child(1))
    if noise is None:
        noise = model.noise_covariance()
    z = generate_correlated_noise(noise, M, rng.child(2))
    return x * np.exp(1j * (phase + model.mean_phase)) + z
