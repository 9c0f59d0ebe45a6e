"""Mismatched information rates I_q(X;U) = h_q(U) - h_q(U|X).

The output entropy uses the banded Toeplitz Gaussian law of the whitened
output; the conditional entropy is estimated with a particle filter that
tracks the phase state of the auxiliary model.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cholesky_banded, cho_solve_banded
from scipy.signal import lfilter
from scipy.special import logsumexp

from .core import PhysicalParams, SeededRng, ase_spectral_density, dbm_to_watt
from .errors import ConfigError, NotPD, WeightUnderflow
from .estimators import CpanModelParams

__all__ = [
    "whiten_and_derotate",
    "output_autocorrelation",
    "output_entropy",
    "output_entropy_dense",
    "ParticleEnsemble",
    "PfResult",
    "conditional_entropy_pf",
    "default_warmup",
    "RatePoint",
    "mutual_information",
    "awgn_reference",
    "write_rate_csv",
]

LOG2E = math.log2(math.e)


def whiten_and_derotate(y, model: CpanModelParams) -> np.ndarray:
    """u[m] = exp(-j <Theta>) sum_l h[l] y[m-l] (causal, zero initial state).

    Works on a single burst or on a (bursts, M) array.
    """
    y = np.asarray(y, dtype=complex)
    h = model.taps
    return np.exp(-1j * model.mean_phase) * lfilter(h, [1.0], y, axis=-1)


def output_autocorrelation(model: CpanModelParams, E: float) -> np.ndarray:
    """r_U[0..L-1] for Gaussian inputs of energy E."""
    h = model.taps
    L = h.size
    r = np.array([np.dot(h[:L - l], h[l:]) * E for l in range(L)])
    r[0] += model.sigma_z2
    return r


def _neg_log2_q_banded(u: np.ndarray, r: np.ndarray) -> np.ndarray:
    """-log2 q(u) per burst for a real symmetric banded Toeplitz covariance."""
    B, M = u.shape
    p = r.size - 1
    ab = np.zeros((p + 1, M))
    for l in range(p + 1):
        ab[p - l, l:] = r[l]
    try:
        cb = cholesky_banded(ab, lower=False)
    except np.linalg.LinAlgError as exc:
        raise NotPD("output covariance is not positive definite") from exc
    logdet = 2 * np.sum(np.log(cb[p]))
    sol = cho_solve_banded((cb, False), u.T)
    quad = np.real(np.sum(np.conj(u.T) * sol, axis=0))
    return (M * math.log(math.pi) + logdet + quad) * LOG2E


def output_entropy(u, model: CpanModelParams, E: float, warmup: int = 0,
                   per_burst: bool = False):
    """h_q(U) in bits per symbol, averaged over bursts.

    The first ``warmup`` symbols of every burst are dropped; the remaining
    block has the same Toeplitz law.
    """
    u = np.atleast_2d(np.asarray(u, dtype=complex))[:, warmup:]
    vals = _neg_log2_q_banded(u, output_autocorrelation(model, E)) / u.shape[1]
    return vals if per_burst else float(vals.mean())


def output_entropy_dense(u, model: CpanModelParams, E: float, warmup: int = 0) -> float:
    """Reference evaluation with a dense covariance matrix (small M only)."""
    from scipy.linalg import toeplitz

    u = np.atleast_2d(np.asarray(u, dtype=complex))[:, warmup:]
    M = u.shape[1]
    r = np.zeros(M)
    ru = output_autocorrelation(model, E)
    r[:min(M, ru.size)] = ru[:M]
    R = toeplitz(r)
    sign, logdet = np.linalg.slogdet(math.pi * R)
    if sign <= 0:
        raise NotPD("output covariance is not positive definite")
    Ri = np.linalg.inv(R)
    vals = [(logdet + np.real(np.conj(v) @ Ri @ v)) * LOG2E / M for v in u]
    return float(np.mean(vals))


def default_warmup(model: CpanModelParams) -> int:
    """max(mu, L - 1) leading symbols are excluded from both entropy sums."""
    mu = model.memory if model.model_kind == "mpn" else 1
    return max(mu, model.taps.size - 1)


@dataclass
class ParticleEnsemble:
    """Phase histories and log weights of a batch of bursts.

    ``hist[b, k, :]`` holds the last H phases of particle k (oldest first).
    """

    hist: np.ndarray
    log_w: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    @property
    def k_eff(self) -> np.ndarray:
        return 1.0 / np.sum(self.weights**2, axis=-1)


@dataclass
class PfResult:
    """Per-burst sums of -log2 D_m and filter diagnostics."""

    neg_log2_d: np.ndarray
    num_symbols: int
    mean_k_eff: float
    resamples: int
    trace: np.ndarray | None = None

    @property
    def per_burst(self) -> np.ndarray:
        return self.neg_log2_d / self.num_symbols

    @property
    def entropy(self) -> float:
        return float(self.per_burst.mean())


def _init_hist(model: CpanModelParams, H: int, shape, gen) -> np.ndarray:
    kind = model.model_kind
    if kind == "mpn":
        from .noise import _stationary_start
        mp = model.mpn()
        start = _stationary_start(mp, gen, shape)
        if H > mp.memory:
            pad = np.repeat(start[..., :1], H - mp.memory, axis=-1)
            start = np.concatenate([pad, start], axis=-1)
        return start[..., -H:]
    if kind == "wpn":
        return np.zeros(tuple(shape) + (H,))
    return math.sqrt(model.r_theta[0]) * gen.standard_normal(tuple(shape) + (H,))


def conditional_entropy_pf(u, x, model: CpanModelParams, K: int = 512, eps: float = 0.3,
                           rng: SeededRng | None = None, warmup: int | None = None,
                           systematic: bool = False, keep_trace: bool = False) -> PfResult:
    """Particle-filter estimate of h_q(U|X) in bits per symbol.

    Parameters
    ----------
    u, x : arrays of shape (bursts, M) or (M,)
        Whitened outputs and the transmitted symbols.
    K : int
        Number of particles.
    eps : float
        Resample when K_eff < eps K.
    warmup : int, optional
        Leading symbols excluded from the sum; default max(mu, L - 1).
    systematic : bool
        Use systematic instead of multinomial resampling.
    """
    if K < 2:
        raise ConfigError("need at least two particles")
    u = np.atleast_2d(np.asarray(u, dtype=complex))
    x = np.atleast_2d(np.asarray(x, dtype=complex))
    if u.shape != x.shape:
        raise ConfigError("u and x must have the same shape")
    rng = rng or SeededRng(0)
    gen = rng.generator
    B, M = u.shape
    h = model.taps
    L = h.size
    kind = model.model_kind
    mu = model.memory if kind == "mpn" else 1
    if kind == "mpn" and mu < L - 1:
        raise ConfigError("memory must be at least L - 1")
    H = max(mu, L - 1, 1)
    if warmup is None:
        warmup = default_warmup(model)
    s2 = model.sigma_z2
    if not s2 > 0:
        raise ConfigError("sigma_z2 must be positive")
    log_norm = math.log(math.pi * s2)

    if kind == "mpn":
        mp = model.mpn()
        g = mp.g
        step_sd = mp.sigma
    elif kind == "wpn":
        step_sd = model.sigma_delta
    else:
        step_sd = math.sqrt(model.r_theta[0])

    hist = _init_hist(model, H, (B, K), gen)
    log_w = np.full((B, K), -math.log(K))
    total = np.zeros(B)
    keff_acc = 0.0
    resamples = 0
    trace = np.zeros((B, M)) if keep_trace else None
    xpad = np.concatenate([np.zeros((B, L - 1), dtype=complex), x], axis=1)

    for m in range(M):
        noise = gen.standard_normal((B, K))
        if kind == "mpn":
            new = hist[..., H - mu:] @ g + step_sd * noise
        elif kind == "wpn":
            new = hist[..., -1] + step_sd * noise
        else:
            new = step_sd * noise
        # mean of u[m] given the particle: sum_l h[l] x[m-l] exp(j theta[m-l])
        s = h[0] * xpad[:, m + L - 1, None] * np.exp(1j * new)
        for l in range(1, L):
            if h[l] != 0:
                s = s + h[l] * xpad[:, m + L - 1 - l, None] * np.exp(1j * hist[..., H - l])
        d = u[:, m, None] - s
        log_p = -(d.real**2 + d.imag**2) / s2 - log_norm
        a = log_w + log_p
        log_d = logsumexp(a, axis=1)
        if not np.all(np.isfinite(log_d)):
            raise WeightUnderflow(f"all particle likelihoods vanished at symbol {m}")
        log_w = a - log_d[:, None]
        if m >= warmup:
            total -= log_d * LOG2E
        if trace is not None:
            trace[:, m] = -log_d * LOG2E
        hist = np.concatenate([hist[..., 1:], new[..., None]], axis=-1) if H > 1 else new[..., None]
        w = np.exp(log_w)
        keff = 1.0 / np.sum(w**2, axis=1)
        keff_acc += keff.mean()
        need = np.nonzero(keff < eps * K)[0]
        if need.size:
            resamples += need.size
            cw = np.cumsum(w[need], axis=1)
            cw[:, -1] = 1.0
            if systematic:
                draws = (gen.random((need.size, 1)) + np.arange(K)) / K
            else:
                draws = gen.random((need.size, K))
            idx = np.stack([np.searchsorted(cw[i], draws[i]) for i in range(need.size)])
            hist[need] = hist[need[:, None], idx]
            log_w[need] = -math.log(K)
    return PfResult(total, M - warmup, keff_acc / M, resamples, trace)


@dataclass
class RatePoint:
    """Rate estimate at one launch power."""

    power_dbm: float
    hu: float
    hux: float
    stderr: float
    model: str = "cpan"
    spectral_efficiency_factor: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def iq(self) -> float:
        return self.hu - self.hux

    @property
    def se(self) -> float:
        """Spectral efficiency in bits/s/Hz."""
        return self.iq * self.spectral_efficiency_factor

    def to_json(self) -> str:
        d = asdict(self)
        d["iq"] = self.iq
        d["se"] = self.se
        return json.dumps(d, sort_keys=True, default=float)

    @classmethod
    def from_json(cls, text: str) -> "RatePoint":
        d = json.loads(text)
        d.pop("iq", None)
        d.pop("se", None)
        return cls(**d)


def mutual_information(u, x, model: CpanModelParams, E: float, power_dbm: float,
                       K: int = 512, eps: float = 0.3, rng: SeededRng | None = None,
                       warmup: int | None = None, se_factor: float = 1.0,
                       label: str | None = None) -> RatePoint:
    """I_q for a batch of bursts with the per-burst spread as standard error."""
    u = np.atleast_2d(u)
    if warmup is None:
        warmup = default_warmup(model)
    pf = conditional_entropy_pf(u, x, model, K, eps, rng, warmup)
    hu = output_entropy(u, model, E, warmup=warmup, per_burst=True)
    per = hu - pf.per_burst
    n = per.size
    stderr = float(per.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return RatePoint(power_dbm, float(hu.mean()), pf.entropy, stderr,
                     label or model.model_kind, se_factor,
                     {"mean_k_eff": pf.mean_k_eff, "resamples": pf.resamples,
                      "warmup": warmup, "bursts": n, "K": K, "eps": eps})


def awgn_reference(power_dbm, params: PhysicalParams, bandwidth: float = 50e9):
    """log2(1 + P / (N_ASE B)) in bits/s/Hz."""
    p = dbm_to_watt(power_dbm)
    return np.log2(1 + p / (ase_spectral_density(params) * bandwidth))


def write_rate_csv(path, points, comment: str | None = None) -> None:
    """Aggregate CSV; ``comment`` becomes a leading '# ' line (e.g. a config hash)."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["power_dbm", "se_bits", "hu", "hux", "stderr", "model"])
        for p in sorted(points, key=lambda p: (p.model, p.power_dbm)):
            w.writerow([repr(float(p.power_dbm)), repr(float(p.se)), repr(float(p.hu)),
                        repr(float(p.hux)), repr(float(p.stderr)), p.model])
