"""Acceptance suite: one pass/fail line per criterion A-G.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed in the
terminal summary. Expensive artifacts (the Table I NLI tensor, the desk-scale
sweep) are cached under ``$CPANFIBER_CACHE`` (default ``<repo>/.cache``).
The full-scale reproduction F only runs with ``CPANFIBER_FULL=1``.
"""
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from conftest import crandn, record_acceptance
from cpanfiber.core import (ComplexSignal, PhysicalParams, SamplingGrid, SeededRng,
                            dbm_to_watt, dispersion_operator, watt_to_dbm)
from cpanfiber.estimators import CpanModelParams
from cpanfiber.experiment import emit_report, load_config, read_curve_csv, run_sweep
from cpanfiber.fdpa import UtilityCurve, fdpa_allocate
from cpanfiber.fiber import SsfmConfig, back_propagate, propagate
from cpanfiber.modem import WdmPlan, burst_grid, pulse_waveform
from cpanfiber.nli import QuadratureSpec, compute_channel, compute_tensor
from cpanfiber.noise import synthesize_cpan_channel
from cpanfiber.rates import (awgn_reference, conditional_entropy_pf, mutual_information,
                             output_entropy, output_entropy_dense, whiten_and_derotate)
from cpanfiber.stats import (additive_covariance, intra_crosscorr, residual_covariance,
                             synthesize_rp_terms, theta_covariance, theta_covariance_analytic)

CACHE = Path(os.environ.get("CPANFIBER_CACHE", Path(__file__).resolve().parents[1] / ".cache"))
SHORT = PhysicalParams(link_length_km=50)
PLAN3 = WdmPlan(channels=(-1, 0, 1), power_dbm=0.0)
SMALLQ = QuadratureSpec(n_max=4, d_max=4, k_pad=8, window_symbols=256)


def _finish(letter, checks):
    """checks: list of (name, ok, detail)."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{n} {'ok' if good else 'FAIL'} ({d})" for n, good, d in checks)
    record_acceptance(letter, "PASS" if ok else "FAIL", detail)
    assert ok, detail


def _bandlimited(gen, n=2048, dt=2.5e-12, power=1e-3, frac=0.2):
    g = SamplingGrid(dt, n)
    spec = crandn(gen, n)
    spec[np.abs(g.f) > frac * g.sample_rate / 2] = 0
    u = np.fft.ifft(spec)
    u *= np.sqrt(power / np.mean(np.abs(u) ** 2))
    return ComplexSignal(g, u)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# ---------------------------------------------------------------------------

def test_a_operator_identities():
    gen = np.random.default_rng(100)
    checks = []
    u = _bandlimited(gen)
    b2 = PhysicalParams().beta2
    worst = 0.0
    for z in (1e3, 5e4, 1e6):
        v = dispersion_operator(u, z, b2)
        worst = max(worst, abs(v.energy - u.energy) / u.energy,
                    _rel(dispersion_operator(v, -z, b2).samples, u.samples))
    checks.append(("dispersion unitarity", worst <= 1e-12, f"{worst:.1e} <= 1e-12"))

    lin = PhysicalParams(gamma_per_w_km=0.0, eta=0.0)
    e_lin = _rel(propagate(u, lin, SsfmConfig(step_size=1e5)).samples,
                 dispersion_operator(u, lin.length, lin.beta2).samples)
    spm = PhysicalParams(beta2_ps2_km=0.0, eta=0.0, link_length_km=200)
    us = _bandlimited(gen, power=2e-3)
    ref = us.samples * np.exp(1j * spm.gamma * np.abs(us.samples) ** 2 * spm.length)
    e_spm = _rel(propagate(us, spm, SsfmConfig(step_size=2e3,
                                               max_nonlinear_phase_per_step=0.1)).samples, ref)
    checks.append(("SSFM limits", max(e_lin, e_spm) <= 1e-9,
                   f"linear {e_lin:.1e}, SPM {e_spm:.1e} <= 1e-9"))

    p = PhysicalParams(eta=0.0)
    cfg = SsfmConfig(step_size=1e3, max_nonlinear_phase_per_step=1.0)
    ur = _bandlimited(gen, power=3e-3)
    e_rt = _rel(back_propagate(propagate(ur, p, cfg), p, cfg).samples, ur.samples)
    checks.append(("back-propagation round trip", e_rt <= 1e-6, f"{e_rt:.1e} <= 1e-6"))

    a = compute_channel(1, PLAN3, SHORT, SMALLQ)
    b = compute_channel(-1, PLAN3, SHORT, SMALLQ)
    scale = np.abs(a.data).max()
    w = a.window
    e16 = e18 = 0.0
    for n in range(-w.n_max, w.n_max + 1):
        for k in range(w.k_lo, w.k_hi + 1):
            for kp in range(k - w.d_max, k + w.d_max + 1):
                v = a.get(n, k, kp)
                if w.k_lo <= kp - n <= w.k_hi:
                    e16 = max(e16, abs(v - np.conj(a.get(-n, kp - n, k - n))))
                e18 = max(e18, abs(b.get(-n, -k, -kp) - v))
    checks.append(("NLI symmetries", max(e16, e18) <= 1e-8 * scale,
                   f"{e16 / scale:.1e}, {e18 / scale:.1e} <= 1e-8"))

    plan = WdmPlan(channels=(0,))
    M = 128
    grid = burst_grid(plan, M)
    s0 = pulse_waveform(grid, M)
    e_orth = max(abs(np.vdot(pulse_waveform(grid, M, shift=n * plan.symbol_period), s0)
                     * grid.sample_interval - (n == 0)) for n in range(-20, 21))
    checks.append(("pulse orthonormality", e_orth <= 1e-6, f"{e_orth:.1e} <= 1e-6"))
    _finish("A", checks)


# ---------------------------------------------------------------------------

def _close(est, ref, r0, tol=0.05):
    """Relative agreement; lags whose value is below 10% of r[0] are compared against r[0]."""
    base = abs(ref) if abs(ref) >= 0.1 * abs(r0) else abs(r0)
    return abs(est - ref) <= tol * base, abs(est - ref) / base


def test_b_statistics_vs_closed_forms():
    tensor = compute_tensor(PLAN3, SHORT, SMALLQ)
    g = np.random.default_rng(101)
    M, B = 512, 600
    xs, ths, vs = [], [], []
    for _ in range(B):
        x = crandn(g, M, PLAN3.energy(0))
        bb = {c: crandn(g, M, PLAN3.energy(c)) for c in (-1, 1)}
        th, v = synthesize_rp_terms(tensor, x, bb)
        xs.append(x)
        ths.append(th)
        vs.append(v)
    x, th, v = np.array(xs), np.array(ths), np.array(vs)
    d = th - th.mean()
    rt = theta_covariance(tensor, PLAN3, 4)
    rn = additive_covariance(tensor, PLAN3, 4)
    checks = []
    errs_t, errs_n, ok_t, ok_n = [], [], True, True
    for l in range(3):
        ok, e = _close(np.mean(d[:, :M - l] * d[:, l:]), rt(l), rt(0))
        ok_t &= ok
        errs_t.append(e)
        ok, e = _close(np.mean(v[:, :M - l] * np.conj(v[:, l:])), rn(l), rn(0))
        ok_n &= ok
        errs_n.append(e)
    checks.append(("theta covariance", ok_t, "errors " + ", ".join(f"{e:.3f}" for e in errs_t)
                   + " <= 0.05"))
    checks.append(("additive covariance", ok_n,
                   "errors " + ", ".join(f"{e:.3f}" for e in errs_n) + " <= 0.05"))

    # identities at 3 sigma, sigma from the spread of per-burst means
    def z_score(per_burst, target):
        m = per_burst.mean()
        se = np.sqrt((np.var(per_burst.real, ddof=1) + np.var(per_burst.imag, ddof=1)) / B)
        return abs(m - target) / se

    zs = {}
    for lag in (-2, -1, 1, 2):
        # <X_m V_l^*> with m - l = lag
        xv = np.mean(np.roll(x, -lag, axis=1) * np.conj(v), axis=1)
        zs[f"XV*[{lag}]"] = z_score(xv, intra_crosscorr(tensor, PLAN3, lag))
        zs[f"XV[{lag}]"] = z_score(np.mean(np.roll(x, -lag, axis=1) * v, axis=1), 0)
    for lag in (-2, 0, 2):
        tv = np.mean(np.roll(d, -lag, axis=1) * np.conj(v), axis=1)
        zs[f"ThetaV*[{lag}]"] = z_score(tv, 0)
    worst = max(zs, key=zs.get)
    checks.append(("cross identities", zs[worst] <= 3,
                   f"max |z| {zs[worst]:.2f} at {worst} <= 3"))
    _finish("B", checks)


# ---------------------------------------------------------------------------

def _support(r, frac=0.01):
    """Smallest lag beyond which |r| stays below frac * r[0]."""
    one = np.abs(r.one_sided())
    above = np.nonzero(one > frac * one[0])[0]
    return int(above[-1]) + 1


def test_c_table1_phase_and_noise():
    plan, p = WdmPlan(), PhysicalParams()
    tensor = compute_tensor(plan, p, cache_dir=CACHE / "nli")
    rt = theta_covariance(tensor, plan)
    tent = theta_covariance_analytic(plan, p, l_max=rt.l_max)
    checks = []
    r0 = float(rt(0))
    checks.append(("r_theta[0]", abs(r0 - 0.0034) <= 0.15 * 0.0034, f"{r0:.5f} rad^2 vs 0.0034"))
    lags = np.arange(-600, 601)
    dev = float(np.max(np.abs(rt(lags) - tent(lags))) / tent(0))
    checks.append(("tent shape", dev <= 0.15, f"max deviation {dev:.3f} of r[0] <= 0.15"))
    sup = _support(rt)
    checks.append(("support", abs(sup - 700) <= 70, f"{sup} symbols vs 700 +- 70"))
    rz = residual_covariance(tensor, plan, p, l_max=2)
    z0, z1, zm1 = rz(0).real, rz(1).real, rz(-1).real
    checks.append(("r_Z[0]", abs(z0 - 1.03e-17) <= 0.2 * 1.03e-17,
                   f"{z0:.3e} W s vs 1.03e-17"))
    checks.append(("r_Z[+-1] sign", z1 < 0 and zm1 < 0 and z0 > 0,
                   f"r_Z[1] = {z1:.2e}, r_Z[-1] = {zm1:.2e}"))
    _finish("C", checks)


# ---------------------------------------------------------------------------

def test_d_rate_engine_oracles():
    gen = np.random.default_rng(102)
    checks = []
    errs = []
    for snr_db in (10.0, 25.0):
        E, s2 = 1.0, 10 ** (-snr_db / 10)
        m = CpanModelParams(model_kind="memoryless", sigma_z2=s2, r_theta=(0.0,), memory=0)
        x = crandn(gen, (50, 4000), E)
        u = whiten_and_derotate(x + crandn(gen, x.shape, s2), m)
        pt = mutual_information(u, x, m, E, 0.0, K=4, rng=SeededRng(1))
        errs.append(abs(pt.iq - math.log2(1 + E / s2)))
    checks.append(("AWGN I_q", max(errs) <= 0.02,
                   "errors " + ", ".join(f"{e:.4f}" for e in errs) + " bits <= 0.02"))

    var, s2 = 0.05, 0.05
    m = CpanModelParams(model_kind="memoryless", sigma_z2=s2, r_theta=(var,), memory=0)
    x = crandn(gen, (8, 500))
    y = np.array([synthesize_cpan_channel(x[b], m, SeededRng(2, b)) for b in range(8)])
    th = np.linspace(-8, 8, 1001) * math.sqrt(var)
    w = np.exp(-th**2 / (2 * var))
    w /= w.sum()
    dd = y[..., None] - x[..., None] * np.exp(1j * th)
    dens = (w * np.exp(-np.abs(dd) ** 2 / s2)).sum(axis=-1) / (math.pi * s2)
    exact = float(np.mean(-np.log2(dens[:, 1:-1])))
    pf = conditional_entropy_pf(whiten_and_derotate(y, m), x, m, K=2048, rng=SeededRng(3))
    e = abs(pf.entropy - exact)
    checks.append(("memoryless PF vs phase grid", e <= 0.01, f"{e:.4f} bits <= 0.01"))

    worst = 0.0
    for h2 in (-0.4, 0.0, 0.2, 0.45):
        mm = CpanModelParams(h2=h2, sigma_z2=0.3)
        uu = crandn(gen, (3, 64), 1.3)
        worst = max(worst, abs(output_entropy(uu, mm, 1.0, warmup=2)
                               - output_entropy_dense(uu, mm, 1.0, warmup=2)))
    checks.append(("banded vs dense", worst <= 1e-9, f"{worst:.1e} bits <= 1e-9"))

    a = float(awgn_reference(-6.0, PhysicalParams()))
    checks.append(("AWGN reference", abs(a - 9.735) <= 0.01, f"{a:.4f} vs 9.735"))
    _finish("D", checks)


# ---------------------------------------------------------------------------

def _sweep_curves(cfg, labels):
    """Reuse a finished sweep under cfg.out_dir when its config hash matches."""
    out = Path(cfg.out_dir)
    man = out / "manifest.json"
    if man.exists() and json.loads(man.read_text()).get("config_hash") == cfg.config_hash():
        paths = {lab: out / "curves" / f"{lab}.csv" for lab in labels}
        if all(pth.exists() for pth in paths.values()):
            return {lab: read_curve_csv(pth) for lab, pth in paths.items()}, True
    curves = run_sweep(cfg)
    emit_report(curves, cfg.out_dir, cfg.params)
    return curves, False


def test_e_desk_end_to_end():
    cfg = load_config(preset="desk").replace(out_dir=str(CACHE / "desk"),
                                             workers=os.cpu_count() or 1)
    curves, cached = _sweep_curves(cfg, ("cpan", "wpn", "memoryless"))
    c, wpn, mem = curves["cpan"], curves["wpn"], curves["memoryless"]
    checks = []
    bad = []
    for i, pw in enumerate(c.powers):
        if pw < -9:
            continue
        for hi, lo in ((c, wpn), (wpn, mem)):
            tol = 2 * math.hypot(hi.stderr[i], lo.stderr[i])
            if hi.se[i] < lo.se[i] - tol:
                bad.append(f"{hi.label}<{lo.label} at {pw:+.0f} dBm")
    checks.append(("ordering", not bad, ", ".join(bad) or
                   "cpan >= wpn >= memoryless at " + ", ".join(
                       f"{pw:+.0f}" for pw in c.powers if pw >= -9) + " dBm"))
    peaks = {cv.label: cv.peak()[0] for cv in (c, wpn, mem)}
    interior = all(cv.powers[0] < peaks[cv.label] < cv.powers[-1] for cv in (c, wpn, mem))
    checks.append(("peak", interior, ", ".join(f"{k} at {v:+.0f} dBm" for k, v in peaks.items())))
    awgn = awgn_reference(c.powers, cfg.params)
    margin = min(float(np.min(awgn - cv.se)) for cv in (c, wpn, mem))
    checks.append(("below AWGN", margin >= 0, f"min margin {margin:.3f} bit/s/Hz"))
    checks.append(("peak SE", True, ", ".join(f"{cv.label} {cv.peak()[1]:.3f}"
                                              for cv in (c, wpn, mem))
                   + (" (cached sweep)" if cached else "")))
    _finish("E", checks)


# ---------------------------------------------------------------------------

@pytest.mark.skipif(os.environ.get("CPANFIBER_FULL") != "1",
                    reason="full-scale reproduction needs CPANFIBER_FULL=1")
def test_f_full_scale():
    base = load_config(preset="table1").replace(workers=os.cpu_count() or 1)
    sc, _ = _sweep_curves(base.replace(out_dir=str(CACHE / "table1_sc")),
                          ("cpan", "wpn", "memoryless"))
    six_cfg = base.replace(out_dir=str(CACHE / "table1_6sc"), fdpa=True,
                           plan=base.plan.replace(subcarriers=6))
    six, _ = _sweep_curves(six_cfg, ("cpan", "wpn", "memoryless", "cpan-fdpa"))
    checks = []
    pp, pr = sc["cpan"].peak()
    checks.append(("1SC CPAN peak", abs(pr - 8.83) <= 0.1 and abs(pp + 7) <= 1,
                   f"{pr:.3f} at {pp:+.1f} dBm"))
    r6 = six["cpan"].peak()[1]
    checks.append(("6SC CPAN", abs(r6 - 9.01) <= 0.1, f"{r6:.3f}"))
    rf = six["cpan-fdpa"].peak()[1]
    checks.append(("6SC FDPA CPAN", abs(rf - 9.13) <= 0.1, f"{rf:.3f}"))
    mp, mr = sc["memoryless"].peak()
    at = sc["cpan"].power_at_rate(mr)
    gain = mp - at if at is not None else float("nan")
    checks.append(("power gain", abs(gain - 0.35) <= 0.15, f"{gain:.3f} dB"))
    dg = rf - six["wpn"].peak()[1]
    checks.append(("FDPA over WPN 6SC", abs(dg - 0.14) <= 0.07, f"{dg:.3f}"))
    _finish("F", checks)


def test_f_reported_when_skipped():
    if os.environ.get("CPANFIBER_FULL") == "1":
        return
    record_acceptance("F", "NOT RUN", "full-scale reproduction is optional; set CPANFIBER_FULL=1")


# ---------------------------------------------------------------------------

def test_g_fdpa():
    checks = []
    grid = np.arange(-20.0, 15.001, 0.05)
    mw = dbm_to_watt(grid) * 1e3
    curves = [UtilityCurve(grid, np.log2(1 + mw)), UtilityCurve(grid, np.log2(1 + mw / 4))]
    step = 0.25
    res = fdpa_allocate(curves, 10e-3, step_db=step, symmetric=False)
    exact = watt_to_dbm(np.array([6.5e-3, 3.5e-3]))
    err = np.abs(res.power_dbm - exact)
    # the free subcarrier sits on the grid; the other absorbs the remainder
    ok = err[0] <= step / 2 + 1e-9 and abs(res.power_w.sum() - 10e-3) <= 1e-12
    checks.append(("water-filling", ok, f"dB errors {err[0]:.3f}, {err[1]:.3f} "
                   f"(grid {step} dB)"))
    same = [curves[0]] * 6
    u = fdpa_allocate(same, 6e-3, step_db=step)
    uniform = float(watt_to_dbm(1e-3))
    exact_uniform = bool(np.all(u.power_dbm == uniform))
    checks.append(("symmetric utilities", exact_uniform,
                   "allocation " + ", ".join(f"{v:.4f}" for v in u.power_dbm) + " dBm"))
    _finish("G", checks)
