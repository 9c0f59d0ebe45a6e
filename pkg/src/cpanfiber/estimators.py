"""Training-phase estimation of the auxiliary channel parameters."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import i0e

from .core import SeededRng
from .errors import ConfigError, DegenerateSum, NoBracket

logger = logging.getLogger(__name__)

__all__ = [
    "CpanModelParams",
    "TrainTestSplit",
    "estimate_sigma_z",
    "estimate_mean_phase",
    "fit_theta_scale",
    "fit_whitening_tap",
    "fit_wpn_sigma",
    "golden_section",
]

MODEL_KINDS = ("memoryless", "wpn", "mpn")


@dataclass
class CpanModelParams:
    """Auxiliary channel u = sum_l h_l x_{m-l} exp(j theta_{m-l}) + z.

    Parameters
    ----------
    model_kind : {"memoryless", "wpn", "mpn"}
    mean_phase : float
        <Theta> in rad.
    sigma_z2 : float
        Variance of the whitened additive noise (W s).
    r_theta : sequence
        Phase covariance r[0..mu] (MPN) or the i.i.d. phase variance as r[0]
        (memoryless). Unused by WPN.
    memory : int
    h2 : float
        Outer tap of the symmetric whitening filter (h2, sqrt(1-2 h2^2), h2).
    sigma_delta : float
        WPN step standard deviation.
    noise_r : sequence, optional
        One-sided covariance of the unwhitened noise, used only for synthesis.
    """

    model_kind: str = "mpn"
    mean_phase: float = 0.0
    sigma_z2: float = 1.0
    r_theta: tuple = (0.0, 0.0, 0.0)
    memory: int = 2
    h2: float = 0.0
    sigma_delta: float = 0.0
    theta_scale: float = 1.0
    noise_r: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model_kind {self.model_kind!r}")
        if not abs(self.h2) <= 1 / math.sqrt(2):
            raise ConfigError("|h2| must not exceed 1/sqrt(2)")
        self.r_theta = tuple(float(v) for v in np.atleast_1d(self.r_theta))
        if self.noise_r is not None:
            self.noise_r = tuple(complex(v) for v in self.noise_r)

    def replace(self, **kw) -> "CpanModelParams":
        return replace(self, **kw)

    @property
    def taps(self) -> np.ndarray:
        h2 = self.h2
        return np.array([h2, math.sqrt(max(0.0, 1 - 2 * h2 * h2)), h2])

    def mpn(self):
        from .noise import fit_mpn
        return fit_mpn(np.asarray(self.r_theta), self.memory, self.mean_phase)

    def sample_phase(self, M: int, rng: SeededRng) -> np.ndarray:
        """Zero-mean phase realization under this model."""
        from .noise import WpnParams, generate_iid_phase, generate_mpn, generate_wpn
        if self.model_kind == "mpn":
            return generate_mpn(self.mpn(), M, rng)
        if self.model_kind == "wpn":
            return generate_wpn(WpnParams(self.sigma_delta), M, rng)
        return generate_iid_phase(self.r_theta[0], M, rng)

    def noise_covariance(self):
        from .stats import CovarianceSeq
        if self.noise_r is None:
            return CovarianceSeq(np.array([self.sigma_z2], dtype=complex), "additive")
        one = np.asarray(self.noise_r, dtype=complex)
        return CovarianceSeq(np.concatenate([np.conj(one[:0:-1]), one]), "additive")

    def to_json(self) -> str:
        d = asdict(self)
        if d["noise_r"] is not None:
            d["noise_r"] = [[v.real, v.imag] for v in self.noise_r]
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CpanModelParams":
        d = json.loads(text)
        if d.get("noise_r") is not None:
            d["noise_r"] = [complex(a, b) for a, b in d["noise_r"]]
        d["r_theta"] = tuple(d["r_theta"])
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "CpanModelParams":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class TrainTestSplit:
    """Training and testing bursts, each an (x, y) pair of (bursts, M) arrays."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def __post_init__(self):
        for a, b in ((self.x_train, self.y_train), (self.x_test, self.y_test)):
            if np.shape(a) != np.shape(b):
                raise ConfigError("x and y bursts must have equal shapes")


def golden_section(f, lo: float, hi: float, tol: float = 1e-4, max_iter: int = 200):
    """Minimize a unimodal f on [lo, hi]; returns (x, f(x))."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _rice_nll(log_s2: float, ay: np.ndarray, ax: np.ndarray) -> float:
    s2 = math.exp(log_s2)
    z = 2 * ay * ax / s2
    # log I0(z) = log(i0e(z)) + z keeps large arguments finite
    ll = np.log(2 * ay / s2) - (ay**2 + ax**2) / s2 + np.log(i0e(z)) + z
    return -float(ll.sum())


def estimate_sigma_z(abs_y, abs_x, rel_tol: float = 1e-6) -> float:
    """Rice maximum-likelihood estimate of the complex noise variance.

    Raises
    ------
    NoBracket
        If the likelihood has no interior maximum within [1e-6, 1e6] times
        the moment-based initial guess.
    """
    ay = np.abs(np.asarray(abs_y, dtype=float)).ravel()
    ax = np.abs(np.asarray(abs_x, dtype=float)).ravel()
    if ay.shape != ax.shape:
        raise ConfigError("|y| and |x| must have equal length")
    if np.any(ay == 0):
        ay = np.where(ay == 0, np.finfo(float).tiny, ay)
    guess = max(np.mean(ay**2) - np.mean(ax**2), 1e-3 * np.mean(ay**2))
    grid = math.log(guess) + np.linspace(math.log(1e-6), math.log(1e6), 49)
    vals = np.array([_rice_nll(g, ay, ax) for g in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == grid.size - 1:
        raise NoBracket("Rice likelihood is monotone over the search range")
    x, _ = golden_section(lambda t: _rice_nll(t, ay, ax), grid[i - 1], grid[i + 1],
                          tol=rel_tol)
    return math.exp(x)


def estimate_mean_phase(y, x) -> float:
    """angle(mean(y x*))."""
    y = np.asarray(y).ravel()
    x = np.asarray(x).ravel()
    s = np.sum(y * np.conj(x))
    if abs(s) < 1e-3 * np.sum(np.abs(y) * np.abs(x)):
        raise DegenerateSum("correlation too small to define a mean phase")
    return float(np.angle(s))


def _pf_cost(model, y, x, E, K, eps, seed, rate: bool = False) -> float:
    from .rates import conditional_entropy_pf, output_entropy, whiten_and_derotate
    u = whiten_and_derotate(y, model)
    h = conditional_entropy_pf(u, x, model, K=K, eps=eps, rng=SeededRng(seed, 77)).entropy
    if not rate:
        return h
    from .rates import default_warmup
    # negative training rate, so that minimizing it maximizes I_q
    return h - output_entropy(u, model, E, warmup=default_warmup(model))


def fit_theta_scale(y, x, model: CpanModelParams, base_r, E: float | None = None,
                    scales=None, K: int = 256, eps: float = 0.3, seed: int = 0,
                    refine: bool = True):
    """Scale factor s minimizing h_q(U|X) for r_theta = s * base_r.

    Common random numbers (a fixed particle-filter seed) make the cost a
    deterministic function of s. Returns ``(s, model, table)`` where table
    lists every evaluated (s, cost).
    """
    base_r = np.asarray(base_r, dtype=float)
    if scales is None:
        scales = np.logspace(-1, 1, 25)
    scales = np.asarray(scales, dtype=float)
    table = []

    def cost(s):
        m = model.replace(r_theta=tuple(s * base_r[:model.memory + 1]), theta_scale=float(s))
        c = _pf_cost(m, y, x, E, K, eps, seed)
        table.append((float(s), float(c)))
        return c

    vals = np.array([cost(s) for s in scales])
    i = int(np.argmin(vals))
    best = scales[i]
    if refine and 0 < i < scales.size - 1:
        fine = np.exp(np.linspace(math.log(scales[i - 1]), math.log(scales[i + 1]), 9))[1:-1]
        fv = np.array([cost(s) for s in fine])
        if fv.min() < vals[i]:
            best = fine[int(np.argmin(fv))]
    flagged = i in (0, scales.size - 1)
    if flagged:
        logger.warning("theta scale fit hit the grid edge (s=%g)", best)
    m = model.replace(r_theta=tuple(best * base_r[:model.memory + 1]), theta_scale=float(best),
                      meta={**model.meta, "theta_scale_at_edge": bool(flagged)})
    return float(best), m, sorted(table)


def fit_whitening_tap(y, x, model: CpanModelParams, E: float | None = None, K: int = 256,
                      eps: float = 0.3, seed: int = 0, lo: float = -0.5, hi: float = 0.5,
                      tol: float = 5e-3, resigma=None):
    """Golden-section search of the outer whitening tap h2.

    With ``E`` given the search maximizes the training rate h_q(U) - h_q(U|X).
    Without it, it minimizes h_q(U|X) alone, which is only meaningful when
    h2 stays small: a filter with spectral nulls lowers both entropies.

    ``resigma`` optionally maps a candidate model to one with re-estimated
    sigma_z2 (the whitened noise variance depends on h2).
    """
    def cand(h2):
        m = model.replace(h2=float(h2))
        return resigma(m) if resigma is not None else m

    rate = E is not None
    h2, _ = golden_section(lambda t: _pf_cost(cand(t), y, x, E, K, eps, seed, rate=rate),
                           lo, hi, tol)
    return float(h2), cand(h2)


def fit_wpn_sigma(y, x, model: CpanModelParams, sigmas=None, K: int = 256, eps: float = 0.3,
                  seed: int = 0):
    """Log-grid search of the WPN step deviation minimizing h_q(U|X)."""
    if sigmas is None:
        sigmas = np.logspace(-4, -0.5, 22)
    costs = [_pf_cost(model.replace(sigma_delta=float(s)), y, x, None, K, eps, seed)
             for s in sigmas]
    i = int(np.argmin(costs))
    best = float(sigmas[i])
    if 0 < i < len(sigmas) - 1:
        lo, hi = math.log(sigmas[i - 1]), math.log(sigmas[i + 1])
        t, _ = golden_section(lambda t: _pf_cost(model.replace(sigma_delta=math.exp(t)),
                                                 y, x, None, K, eps, seed), lo, hi, tol=0.05)
        best = math.exp(t)
    return best, model.replace(sigma_delta=best)
