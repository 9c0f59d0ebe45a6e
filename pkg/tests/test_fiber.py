import numpy as np
import pytest

from cpanfiber.core import (ComplexSignal, PhysicalParams, SamplingGrid, SeededRng,
                            ase_spectral_density, dispersion_operator)
from cpanfiber.errors import AliasingRisk, StepTooLarge
from cpanfiber.fiber import (LossProfile, SsfmConfig, back_propagate, propagate,
                             read_field_dump, write_field_dump)

from conftest import crandn


def _bandlimited(gen, n=2048, dt=2.5e-12, power=1e-3, frac=0.2):
    """Random field occupying the central ``frac`` of the grid band."""
    g = SamplingGrid(dt, n)
    spec = crandn(gen, n)
    spec[np.abs(g.f) > frac * g.sample_rate / 2] = 0
    u = np.fft.ifft(spec)
    u *= np.sqrt(power / np.mean(np.abs(u) ** 2))
    return ComplexSignal(g, u)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_linear_limit(gen):
    u = _bandlimited(gen)
    p = PhysicalParams(gamma_per_w_km=0.0, eta=0.0)
    out = propagate(u, p, SsfmConfig(step_size=1e5))
    ref = dispersion_operator(u, p.length, p.beta2)
    assert _rel(out.samples, ref.samples) <= 1e-9


def test_spm_limit(gen):
    u = _bandlimited(gen, power=2e-3)
    p = PhysicalParams(beta2_ps2_km=0.0, eta=0.0, link_length_km=200)
    out = propagate(u, p, SsfmConfig(step_size=2e3, max_nonlinear_phase_per_step=0.1))
    ref = u.samples * np.exp(1j * p.gamma * np.abs(u.samples) ** 2 * p.length)
    assert _rel(out.samples, ref) <= 1e-9


def test_energy_conserved_and_round_trip(gen):
    u = _bandlimited(gen, power=3e-3)
    p = PhysicalParams(eta=0.0)
    # the inverse needs the forward step grid, so fix it explicitly
    cfg = SsfmConfig(step_size=1e3, max_nonlinear_phase_per_step=1.0)
    out = propagate(u, p, cfg)
    assert abs(out.energy - u.energy) <= 1e-6 * u.energy
    back = back_propagate(out, p, cfg)
    assert _rel(back.samples, u.samples) <= 1e-6


def test_linear_back_propagation(gen):
    u = _bandlimited(gen)
    p = PhysicalParams(gamma_per_w_km=0.0, eta=0.0)
    out = back_propagate(u, p, num_steps=10)
    ref = dispersion_operator(u, -p.length, p.beta2)
    assert _rel(out.samples, ref.samples) <= 1e-9


def test_second_order_convergence(gen):
    u = _bandlimited(gen, power=20e-3)
    p = PhysicalParams(eta=0.0, link_length_km=100)
    outs = [propagate(u, p, SsfmConfig(step_size=p.length / n, max_nonlinear_phase_per_step=10))
            for n in (200, 400, 800, 1600)]
    # successive differences shrink by 4 per halving in the asymptotic regime
    e = [np.linalg.norm(a.samples - b.samples) for a, b in zip(outs, outs[1:])]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.2)
    assert e[1] / e[2] == pytest.approx(4.0, rel=0.2)


@pytest.mark.parametrize("mode", ["per_step", "end_lumped"])
def test_ase_accumulation(mode):
    g = SamplingGrid(1e-11, 2**17)
    u = ComplexSignal(g, np.zeros(g.num_samples))
    p = PhysicalParams(gamma_per_w_km=0.0)
    out = propagate(u, p, SsfmConfig(noise_injection=mode), SeededRng(3))
    var = np.mean(np.abs(out.samples) ** 2)
    assert var == pytest.approx(ase_spectral_density(p) * g.sample_rate, rel=0.02)


def test_noise_reproducible():
    g = SamplingGrid(1e-11, 4096)
    u = ComplexSignal(g, np.zeros(g.num_samples))
    a = propagate(u, PhysicalParams(), rng=SeededRng(9))
    b = propagate(u, PhysicalParams(), rng=SeededRng(9))
    assert np.array_equal(a.samples, b.samples)


def test_fixed_step_too_large(gen):
    u = _bandlimited(gen, power=50e-3)
    with pytest.raises(StepTooLarge):
        propagate(u, PhysicalParams(eta=0.0), SsfmConfig(step_size=1e5))


def test_aliasing_risk(gen):
    u = _bandlimited(gen, frac=0.9)
    with pytest.raises(AliasingRisk):
        propagate(u, PhysicalParams(eta=0.0), SsfmConfig(step_size=1e5))


def test_loss_profile():
    ida = LossProfile(PhysicalParams())
    assert ida(123.0) == 1.0
    assert ida.mean_over(0.0, 5e4) == pytest.approx(1.0)
    p = PhysicalParams(amplification="lumped")
    f = LossProfile(p)
    assert f(0.0) == pytest.approx(1.0)
    assert f(p.span_length - 1.0) == pytest.approx(np.exp(-p.alpha * (p.span_length - 1.0)))
    z = np.linspace(0, 3e4, 30001)
    assert f.mean_over(0, 3e4) == pytest.approx(np.mean(f(z)), rel=1e-4)


def test_field_dump_round_trip(tmp_path, gen):
    u = _bandlimited(gen, n=256)
    path = tmp_path / "field.bin"
    write_field_dump(path, u, note="x")
    v, meta = read_field_dump(path)
    assert np.array_equal(v.samples, u.samples)
    assert meta["note"] == "x"
    assert v.grid == u.grid
