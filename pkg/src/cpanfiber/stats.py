"""First- and second-order statistics of the CPAN model from the NLI tensor.

All sums over the walk-off index k are evaluated as FFT correlations over the
stored k window. The tensor layout is ``data[n, d, k]`` with ``d = k' - k``
(see :class:`cpanfiber.nli.ChannelCoeffs`).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len
from scipy.linalg import toeplitz

from .core import PhysicalParams, ase_spectral_density
from .errors import ConfigError
from .modem import WdmPlan
from .nli import ChannelCoeffs, NliCoeffTensor, walk_off

__all__ = [
    "CovarianceSeq",
    "theta_mean",
    "isi_mean_taps",
    "theta_covariance",
    "theta_covariance_analytic",
    "additive_covariance",
    "additive_pseudo_covariance",
    "residual_covariance",
    "conditional_noise_covariance",
    "intra_crosscorr",
    "subcarrier_theta_covariance",
    "synthesize_rp_terms",
    "default_lag_max",
]


@dataclass
class CovarianceSeq:
    """Covariance sequence r[l] for l = -l_max .. l_max."""

    values: np.ndarray
    kind: str = "phase"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 1 or self.values.size % 2 == 0:
            raise ConfigError("covariance sequences have odd length 2*l_max+1")

    @property
    def l_max(self) -> int:
        return self.values.size // 2

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.l_max, self.l_max + 1)

    def __call__(self, lag):
        lag = np.asarray(lag)
        out = np.zeros(lag.shape, dtype=self.values.dtype)
        ok = np.abs(lag) <= self.l_max
        out[ok] = self.values[lag[ok] + self.l_max]
        return out if out.ndim else out[()]

    def one_sided(self, n: int | None = None) -> np.ndarray:
        """r[0], r[1], ... r[n-1] (zero beyond l_max)."""
        n = self.l_max + 1 if n is None else n
        return self(np.arange(n))

    def toeplitz(self, n: int) -> np.ndarray:
        """n x n covariance matrix with entries r[j - i]."""
        col = self.one_sided(n)
        return toeplitz(np.conj(col), col) if np.iscomplexobj(col) else toeplitz(col)

    def __add__(self, other: "CovarianceSeq") -> "CovarianceSeq":
        lm = max(self.l_max, other.l_max)
        lags = np.arange(-lm, lm + 1)
        return CovarianceSeq(self(lags) + other(lags), self.kind)

    def scaled(self, a: float) -> "CovarianceSeq":
        return CovarianceSeq(self.values * a, self.kind)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "re", "im"])
            for l, v in zip(self.lags, self.values):
                w.writerow([int(l), repr(float(np.real(v))), repr(float(np.imag(v)))])

    @classmethod
    def from_csv(cls, path, kind: str = "phase") -> "CovarianceSeq":
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        order = np.argsort(raw[:, 0])
        raw = raw[order]
        vals = raw[:, 1] + 1j * raw[:, 2]
        if kind == "phase":
            vals = vals.real
        return cls(vals, kind)


def default_lag_max(plan: WdmPlan, params, tensor: NliCoeffTensor | None = None) -> int:
    """Largest walk-off over the interfering channels (total phase support)."""
    if tensor is not None:
        return max(ch.window.num_k for ch in tensor.channels.values())
    return int(np.ceil(max(walk_off(c, plan, params) for c in plan.channels if c != 0)))


def _xcorr(a: np.ndarray, b: np.ndarray, l_max: int) -> np.ndarray:
    """sum_k a[..., k] conj(b[..., k - l]) for l = -l_max .. l_max (last axis)."""
    n = a.shape[-1]
    nfft = next_fast_len(n + l_max + 1)
    A = np.fft.fft(a, nfft)
    Bf = np.fft.fft(b, nfft)
    r = np.fft.ifft(A * np.conj(Bf))
    idx = np.mod(np.arange(-l_max, l_max + 1), nfft)
    out = r[..., idx]
    if l_max >= n:
        lags = np.arange(-l_max, l_max + 1)
        out[..., np.abs(lags) >= n] = 0
    return out


def theta_mean(tensor: NliCoeffTensor, plan: WdmPlan):
    """Mean phase per interfering channel and in total (rad)."""
    per = {c: float(np.real(ch.block(0, 0).sum())) * plan.energy(c)
           for c, ch in tensor.channels.items()}
    return per, float(sum(per.values()))


def isi_mean_taps(tensor: NliCoeffTensor, plan: WdmPlan) -> dict:
    """ISI taps j sum_c sum_k C_{n,k,k} E_c for n != 0."""
    n_max = max(ch.window.n_max for ch in tensor.channels.values())
    taps = {}
    for n in range(-n_max, n_max + 1):
        if n == 0:
            continue
        taps[n] = 1j * sum(ch.block(n, 0).sum() * plan.energy(c)
                           for c, ch in tensor.channels.items())
    return taps


def _theta_cov_channel(ch: ChannelCoeffs, E: float, Q: float, l_max: int) -> np.ndarray:
    W = ch.window
    c0 = ch.data[W.n_max]  # (d, k)
    diag = c0[W.d_max]
    r = (Q - E**2) * _xcorr(diag, diag, l_max)
    off = np.delete(c0, W.d_max, axis=0)
    if off.size:
        r = r + E**2 * _xcorr(off, off, l_max).sum(axis=0)
    return r


def theta_covariance(tensor: NliCoeffTensor, plan: WdmPlan, l_max: int | None = None,
                     per_channel: bool = False):
    """Phase covariance r_Theta[l], summed over interfering channels.

    Different channels contribute independently, so no cross terms appear.
    With ``per_channel`` a dict of the individual sequences is returned too.
    """
    if l_max is None:
        l_max = default_lag_max(plan, None, tensor)
    total = np.zeros(2 * l_max + 1, dtype=complex)
    per = {}
    for c, ch in tensor.channels.items():
        r = _theta_cov_channel(ch, plan.energy(c), plan.fourth_moment(c), l_max)
        per[c] = CovarianceSeq(r.real, "phase")
        total += r
    seq = CovarianceSeq(total.real, "phase")
    return (seq, per) if per_channel else seq


def theta_covariance_analytic(plan: WdmPlan, params: PhysicalParams,
                              l_max: int | None = None, omega_shift: float = 0.0,
                              lag_period: float | None = None) -> CovarianceSeq:
    """Tent-sum approximation of r_Theta for large accumulated dispersion.

    ``omega_shift`` moves the receiver frequency (subcarrier center) and
    ``lag_period`` sets the time step of one lag (defaults to T).
    """
    T = plan.symbol_period
    tau = T if lag_period is None else lag_period
    L = params.length
    if l_max is None:
        l_max = default_lag_max(plan, params)
    lags = np.arange(-l_max, l_max + 1)
    r = np.zeros(lags.shape)
    for c in plan.channels:
        if c == 0:
            continue
        bw = abs(params.beta2 * (plan.omega(c) - omega_shift))
        if bw == 0:
            continue
        E = plan.energy(c)
        Q = plan.fourth_moment(c)
        r += (4 * params.gamma**2 * L / T) * (Q - E**2) / bw * np.maximum(
            0.0, 1 - np.abs(lags) * tau / (bw * L))
    return CovarianceSeq(r, "phase")


def subcarrier_theta_covariance(plan: WdmPlan, params: PhysicalParams, s: int,
                                l_max: int | None = None) -> CovarianceSeq:
    """Closed-form phase covariance seen by subcarrier s (0-based).

    The interfering channels are referred to the subcarrier center and lags
    count subcarrier symbols.
    """
    if not 0 <= s < plan.subcarriers:
        raise ConfigError(f"subcarrier {s} out of range")
    if l_max is None:
        l_max = int(np.ceil(default_lag_max(plan, params) / plan.subcarriers)) + 1
    return theta_covariance_analytic(plan, params, l_max,
                                     omega_shift=plan.subcarrier_offset(s),
                                     lag_period=plan.subcarrier_period)


def _channel_sums(tensor: NliCoeffTensor, plan: WdmPlan):
    """T_n = sum_c E_c sum_k C^{(c)}_{n,k,k} over a common n range."""
    n_max = max(ch.window.n_max for ch in tensor.channels.values())
    Tn = np.zeros(2 * n_max + 1, dtype=complex)
    for c, ch in tensor.channels.items():
        W = ch.window
        s = ch.data[:, W.d_max, :].sum(axis=1)
        Tn[n_max - W.n_max:n_max + W.n_max + 1] += plan.energy(c) * s
    return Tn, n_max


def additive_covariance(tensor: NliCoeffTensor, plan: WdmPlan,
                        l_max: int | None = None) -> CovarianceSeq:
    """Unconditional covariance r_N[l] = <V_m V_{m+l}^*> of the total NLI noise.

    Combines the single-channel terms of every interferer with the
    inter-channel cross terms; the ISI part is included since V has zero
    unconditional mean.
    """
    E = plan.energy(0)
    n_max = max(ch.window.n_max for ch in tensor.channels.values())
    if l_max is None:
        l_max = 2 * n_max
    lags = np.arange(-l_max, l_max + 1)
    r = np.zeros(lags.shape, dtype=complex)
    for c, ch in tensor.channels.items():
        W = ch.window
        Ec, Qc = plan.energy(c), plan.fourth_moment(c)
        for li, l in enumerate(lags):
            if abs(l) > 2 * W.n_max:
                continue
            acc = 0j
            for n in range(-W.n_max, W.n_max + 1):
                m = n - l
                if n == 0 or m == 0 or abs(m) > W.n_max:
                    continue
                a = ch.data[n + W.n_max]
                b = ch.data[m + W.n_max]
                # sum_k a[d, k] conj(b[d, k - l])
                if l >= 0:
                    prod = a[:, l:] * np.conj(b[:, :b.shape[1] - l]) if l else a * np.conj(b)
                else:
                    prod = a[:, :l] * np.conj(b[:, -l:])
                sums = prod.sum(axis=1)
                acc += (Qc - Ec**2) * sums[W.d_max] + Ec**2 * (sums.sum() - sums[W.d_max])
            r[li] += E * acc
    # E * sum_{n != 0, l} T_n conj(T_{n-l}) collects the S_n S_{n-l}^* products
    # of all channel pairs, including c = c'.
    Tn, nm = _channel_sums(tensor, plan)
    for li, l in enumerate(lags):
        acc = 0j
        for n in range(-nm, nm + 1):
            m = n - l
            if n == 0 or m == 0 or abs(m) > nm:
                continue
            acc += Tn[n + nm] * np.conj(Tn[m + nm])
        r[li] += E * acc
    return CovarianceSeq(r, "additive")


def additive_pseudo_covariance(tensor: NliCoeffTensor, plan: WdmPlan,
                               l_max: int | None = None) -> CovarianceSeq:
    """<V_m V_{m+l}> vanishes for proper symbols; returned as exact zeros."""
    if l_max is None:
        l_max = 2 * max(ch.window.n_max for ch in tensor.channels.values())
    return CovarianceSeq(np.zeros(2 * l_max + 1, dtype=complex), "additive")


def residual_covariance(tensor: NliCoeffTensor, plan: WdmPlan, params: PhysicalParams,
                        l_max: int | None = None) -> CovarianceSeq:
    """r_Z[l] = N_ASE delta[l] + r_N[l]."""
    rn = additive_covariance(tensor, plan, l_max)
    v = rn.values.copy()
    v[rn.l_max] += ase_spectral_density(params)
    return CovarianceSeq(v, "additive")


def conditional_noise_covariance(tensor: NliCoeffTensor, plan: WdmPlan, x, m: int, l: int,
                                 channels=None, dominant_only: bool = False):
    """Covariance and pseudo-covariance of V given the center-channel symbols.

    Parameters
    ----------
    x : callable or array
        Symbol realization; an array is read cyclically.
    m, l : int
        Time index and lag.
    dominant_only : bool
        Keep only the terms with n~ = n - l.

    Returns
    -------
    (complex, complex)
        Summed over ``channels`` (all interferers by default).
    """
    if not callable(x):
        arr = np.asarray(x)
        x = (lambda i, a=arr: a[i % a.size])
    cov = 0j
    pcov = 0j
    for c, ch in tensor.channels.items():
        if channels is not None and c not in channels:
            continue
        W = ch.window
        Ec, Qc = plan.energy(c), plan.fourth_moment(c)
        nr = range(-W.n_max, W.n_max + 1)
        for n in nr:
            if n == 0:
                continue
            a = ch.data[n + W.n_max]
            xn = x(n + m)
            for nt in nr:
                if nt == 0 or (dominant_only and nt != n - l):
                    continue
                b = ch.data[nt + W.n_max]
                # covariance: sum_k a[d,k] conj(b[d,k-l])
                sh = _shift(b, l)
                sums = (a * np.conj(sh)).sum(axis=1)
                val = (Qc - Ec**2) * sums[W.d_max] + Ec**2 * (sums.sum() - sums[W.d_max])
                cov += val * xn * np.conj(x(nt + m + l))
                # pseudo: -sum_k a[d,k] b[-d, k+d-l]
                bf = b[::-1]
                sp = np.stack([_shift(bf[i], l - (i - W.d_max)) for i in range(bf.shape[0])])
                ps = (a * sp).sum(axis=1)
                val = (Qc - Ec**2) * ps[W.d_max] + Ec**2 * (ps.sum() - ps[W.d_max])
                pcov -= val * xn * x(nt + m + l)
    return complex(cov), complex(pcov)


def _shift(b: np.ndarray, s: int) -> np.ndarray:
    """out[..., k] = b[..., k - s] with zero fill."""
    out = np.zeros_like(b)
    n = b.shape[-1]
    if abs(s) >= n:
        return out
    if s >= 0:
        out[..., s:] = b[..., :n - s]
    else:
        out[..., :n + s] = b[..., -s:]
    return out


def intra_crosscorr(tensor: NliCoeffTensor, plan: WdmPlan, lag: int, channel: int | None = None):
    """<X_m V_l^*> for lag = m - l, optionally restricted to one interferer.

    Zero at lag 0; the remaining identities <X Theta>, <V Theta>, <X_m V_l>
    vanish identically and are not computed.
    """
    if lag == 0:
        return 0j
    E = plan.energy(0)
    out = 0j
    for c, ch in tensor.channels.items():
        if channel is not None and c != channel:
            continue
        s = ch.block(lag, 0).sum()
        out += -1j * np.conj(s) * E * plan.energy(c)
    return complex(out)


def synthesize_rp_terms(tensor: NliCoeffTensor, x: np.ndarray, b: dict):
    """Phase and additive NLI terms of a cyclic burst.

    Evaluates ``theta_m = sum_c sum_{k,k'} C_{0,k,k'} b_{k+m} b*_{k'+m}`` and
    ``v_m = j sum_c sum_{n != 0,k,k'} C_{n,k,k'} x_{n+m} b_{k+m} b*_{k'+m}``
    for every m, with all sequences read cyclically.

    Parameters
    ----------
    x : array
        Center-channel symbols (length M).
    b : dict
        Interferer symbols keyed by channel index, each of length M.

    Returns
    -------
    theta, v : arrays of length M
    """
    x = np.asarray(x)
    M = x.size
    theta = np.zeros(M)
    v = np.zeros(M, dtype=complex)
    for c, ch in tensor.channels.items():
        W = ch.window
        if W.num_k > M:
            raise ConfigError("burst shorter than the coefficient window")
        bc = np.asarray(b[c])
        # g_{n}[m] = sum_d sum_k C[n,d,k] p_d[k+m],  p_d[j] = b_j conj(b_{j+d})
        kk = np.mod(np.arange(W.k_lo, W.k_hi + 1), M)
        P = np.stack([bc * np.conj(np.roll(bc, -d)) for d in range(-W.d_max, W.d_max + 1)])
        Pf = np.fft.fft(P, axis=1)
        for ni, n in enumerate(range(-W.n_max, W.n_max + 1)):
            A = np.zeros((2 * W.d_max + 1, M), dtype=complex)
            A[:, kk] = ch.data[ni]
            # sum_j A[j] p[j+m] = ifft(conj(fft(conj(A))) * fft(p))
            g = np.fft.ifft((np.conj(np.fft.fft(np.conj(A), axis=1)) * Pf).sum(axis=0))
            if n == 0:
                theta += g.real
            else:
                v += 1j * np.roll(x, -n) * g
    return theta, v
