"""End-to-end experiments: simulate, train, test, sweep and report."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import PhysicalParams, SeededRng, dbm_to_watt
from .errors import ConfigError, CpanError
from .estimators import (CpanModelParams, estimate_mean_phase, estimate_sigma_z,
                         fit_theta_scale, fit_whitening_tap, fit_wpn_sigma)
from .fdpa import UtilityCurve, fdpa_allocate
from .fiber import SsfmConfig, propagate
from .modem import WdmPlan, burst_grid, demodulate_center, generate_symbols, modulate
from .rates import RatePoint, awgn_reference, default_warmup, mutual_information, \
    whiten_and_derotate, write_rate_csv
from .stats import subcarrier_theta_covariance

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RateCurve",
    "PRESETS",
    "load_config",
    "simulate_bursts",
    "fit_models",
    "evaluate_models",
    "run_sweep",
    "emit_report",
    "read_curve_csv",
]

try:
    from importlib.metadata import version as _pkg_version
    CODE_VERSION = _pkg_version("artifact")
except Exception:  # pragma: no cover - source checkout without metadata
    CODE_VERSION = "unknown"

# user-facing label -> model kind
MODEL_LABELS = {"memoryless": "memoryless", "wpn": "wpn", "cpan": "mpn"}


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's outputs.

    ``out_dir`` and ``workers`` do not affect results and are left out of the
    config hash.
    """

    params: PhysicalParams = field(default_factory=PhysicalParams)
    plan: WdmPlan = field(default_factory=WdmPlan)
    ssfm: SsfmConfig = field(default_factory=lambda: SsfmConfig(max_nonlinear_phase_per_step=0.01))
    models: tuple = ("memoryless", "wpn", "cpan")
    memory: int = 2
    particles: int = 512
    fit_particles: int = 256
    eps: float = 0.3
    powers_dbm: tuple = (-10.0, -9.0, -8.0, -7.0, -6.0, -5.0, -4.0, -3.0, -2.0)
    fdpa: bool = False
    fdpa_step_db: float = 0.25
    train_bursts: int = 24
    test_bursts: int = 120
    symbols_per_burst: int = 6912
    oversampling: float = 4.0
    seed: int = 1
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        self.powers_dbm = tuple(float(p) for p in self.powers_dbm)
        for m in self.models:
            if m not in MODEL_LABELS:
                raise ConfigError(f"unknown model {m!r}; expected one of {sorted(MODEL_LABELS)}")
        if not self.models:
            raise ConfigError("no models selected")
        if not self.powers_dbm or np.any(np.diff(self.powers_dbm) <= 0):
            raise ConfigError("powers must be a non-empty strictly increasing list")
        if self.memory < 2:
            raise ConfigError("memory must be at least 2 for the 3-tap whitening filter")
        if self.particles < 2 or self.fit_particles < 2:
            raise ConfigError("need at least two particles")
        if not 0 < self.eps <= 1:
            raise ConfigError("eps must lie in (0, 1]")
        if self.train_bursts < 1 or self.test_bursts < 1:
            raise ConfigError("burst counts must be positive")
        if self.symbols_per_burst // self.plan.subcarriers < 16:
            raise ConfigError("bursts must hold at least 16 symbols per subcarrier")
        if self.fdpa and self.plan.subcarriers < 2:
            raise ConfigError("FDPA needs at least two subcarriers")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    @property
    def symbols_per_subcarrier(self) -> int:
        """Burst length counts single-carrier symbols; S subcarriers share it."""
        return self.symbols_per_burst // self.plan.subcarriers

    def to_dict(self) -> dict:
        d = {
            "physical": dataclasses.asdict(self.params),
            "plan": dataclasses.asdict(self.plan),
            "ssfm": dataclasses.asdict(self.ssfm),
        }
        d["run"] = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                    if f.name not in ("params", "plan", "ssfm")}
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k not in ("out_dir", "workers")}
        text = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


PRESETS = {
    "table1": {},
    "desk": {
        "plan": {"channels": (-1, 0, 1)},
        "ssfm": {"max_nonlinear_phase_per_step": 0.03},
        "run": {"train_bursts": 8, "test_bursts": 24, "symbols_per_burst": 2048,
                "powers_dbm": (-10.0, -8.0, -6.0, -4.0, -2.0)},
    },
}


def _parse_value(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(default, tuple) or (default is None and "," in text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        out = []
        for t in items:
            try:
                out.append(int(t))
            except ValueError:
                try:
                    out.append(float(t))
                except ValueError:
                    out.append(t)
        return tuple(out)
    if default is None:
        if text.lower() in ("", "none"):
            return None
        try:
            return float(text)
        except ValueError:
            return text
    try:
        return type(default)(text)
    except (TypeError, ValueError):
        # ints given as floats and the like
        try:
            return type(default)(float(text))
        except (TypeError, ValueError):
            raise ConfigError(f"cannot parse {text!r} as {type(default).__name__}") from None


def _apply(obj, updates: dict, section: str):
    names = {f.name: f for f in dataclasses.fields(obj)}
    kw = {}
    for k, v in updates.items():
        if k not in names:
            raise ConfigError(f"unknown key {k!r} in section [{section}]")
        cur = getattr(obj, k)
        kw[k] = _parse_value(v, cur) if isinstance(v, str) else v
    try:
        return dataclasses.replace(obj, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}]: {e}") from e


def _merge(cfg: ExperimentConfig, sections: dict) -> ExperimentConfig:
    unknown = set(sections) - {"physical", "plan", "ssfm", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    params = _apply(cfg.params, sections.get("physical", {}), "physical")
    plan = _apply(cfg.plan, sections.get("plan", {}), "plan")
    ssfm = _apply(cfg.ssfm, sections.get("ssfm", {}), "ssfm")
    run = dict(sections.get("run", {}))
    run_fields = {f.name for f in dataclasses.fields(cfg)} - {"params", "plan", "ssfm"}
    bad = set(run) - run_fields
    if bad:
        raise ConfigError(f"unknown keys {sorted(bad)} in section [run]")
    kw = {k: (_parse_value(v, getattr(cfg, k)) if isinstance(v, str) else v) for k, v in run.items()}
    if "models" in kw and isinstance(kw["models"], str):
        kw["models"] = (kw["models"],)
    return cfg.replace(params=params, plan=plan, ssfm=ssfm, **kw)


def load_config(path=None, preset: str | None = None) -> ExperimentConfig:
    """Build a config from an optional preset overlaid with an INI file.

    Sections are ``[physical]``, ``[plan]``, ``[ssfm]`` and ``[run]``; keys are
    the field names of the corresponding classes.
    """
    cfg = ExperimentConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        cfg = _merge(cfg, {s: dict(cp[s]) for s in cp.sections()})
    return cfg


# ---------------------------------------------------------------------------
# simulation

def _power_code(p: float) -> int:
    return int(round((p + 100.0) * 100))


def _sim_key(cfg: ExperimentConfig, plan: WdmPlan, split: str) -> str:
    d = {"physical": dataclasses.asdict(cfg.params), "plan": dataclasses.asdict(plan),
         "ssfm": dataclasses.asdict(cfg.ssfm), "M": cfg.symbols_per_subcarrier,
         "os": cfg.oversampling, "seed": cfg.seed, "split": split}
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()[:16]


def _simulate_one(args):
    cfg, plan, split_id, b = args
    rng = SeededRng(cfg.seed, (split_id, _power_code(plan.power_dbm), b))
    M = cfg.symbols_per_subcarrier
    frame = generate_symbols(plan, M, rng.child(1))
    grid = burst_grid(plan, M, cfg.oversampling)
    out = propagate(modulate(frame, plan, grid), cfg.params, cfg.ssfm, rng.child(2))
    y = demodulate_center(out, plan, cfg.params, cfg.ssfm, M=M).symbols[0]
    return frame.channel(0), y


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def simulate_bursts(cfg: ExperimentConfig, power_dbm: float, split: str,
                    weights=None, cache: bool = True):
    """Simulate (or load cached) bursts of one split at one power.

    Returns ``(x, y)`` of shape (bursts, S, M): transmitted and received
    center-channel symbols.
    """
    if split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    plan = cfg.plan.replace(power_dbm=float(power_dbm),
                            subcarrier_weights=None if weights is None else tuple(map(float, weights)))
    n = cfg.train_bursts if split == "train" else cfg.test_bursts
    split_id = 1 if split == "train" else 2
    path = Path(cfg.out_dir) / "bursts" / f"{split}_{_sim_key(cfg, plan, split)}.npz"
    if cache and path.exists():
        with np.load(path) as z:
            if z["x"].shape[0] == n:
                return z["x"], z["y"]
    jobs = [(cfg, plan, split_id, b) for b in range(n)]
    try:
        res = _map(_simulate_one, jobs, cfg.workers)
    except CpanError as e:
        raise type(e)(f"{split} bursts at {power_dbm} dBm: {e}") from e
    x = np.stack([r[0] for r in res])
    y = np.stack([r[1] for r in res])
    if cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, x=x, y=y)
    return x, y


# ---------------------------------------------------------------------------
# training

def _resigma_factory(y, x):
    """sigma_Z^2 re-estimated on whitened data for each candidate filter.

    The phase varies slowly compared with the filter span, so |u_m| is close to
    Rice distributed around |sum_l h_l x_{m-l}|.
    """
    def resigma(m: CpanModelParams) -> CpanModelParams:
        u = whiten_and_derotate(y, m)
        xf = lfilter(m.taps, [1.0], x, axis=-1)
        w = default_warmup(m)
        s2 = estimate_sigma_z(np.abs(u[:, w:]), np.abs(xf[:, w:]))
        return m.replace(sigma_z2=s2)
    return resigma


def fit_models(cfg: ExperimentConfig, plan: WdmPlan, s: int, x, y,
               labels=None) -> dict:
    """Fit every requested model on training bursts of subcarrier s.

    ``x`` and ``y`` are (bursts, M). Returns {label: CpanModelParams}.
    """
    labels = tuple(labels or cfg.models)
    x = np.asarray(x)
    y = np.asarray(y)
    mean = estimate_mean_phase(y, x)
    sigma_pre = estimate_sigma_z(np.abs(y), np.abs(x))
    resigma = _resigma_factory(y, x)
    base_r = subcarrier_theta_covariance(plan, cfg.params, s).one_sided(cfg.memory + 1)
    E = plan.subcarrier_energy(0, s)
    seed = cfg.seed * 1000 + s
    kw = dict(K=cfg.fit_particles, eps=cfg.eps, seed=seed)
    meta = {"sigma_z2_prewhitening": sigma_pre, "power_dbm": plan.power_dbm, "subcarrier": s}
    out = {}
    for label in labels:
        kind = MODEL_LABELS[label]
        if kind == "mpn":
            m = resigma(CpanModelParams("mpn", mean, sigma_pre, tuple(base_r), cfg.memory,
                                        meta=dict(meta)))
            _, m, _ = fit_theta_scale(y, x, m, base_r, E, **kw)
            _, m = fit_whitening_tap(y, x, m, E, resigma=resigma, **kw)
        elif kind == "wpn":
            m = resigma(CpanModelParams("wpn", mean, sigma_pre, (0.0,), 1, meta=dict(meta)))
            _, m = fit_wpn_sigma(y, x, m, **kw)
        else:
            m = resigma(CpanModelParams("memoryless", mean, sigma_pre, (base_r[0],), 0,
                                        meta=dict(meta)))
            _, m, _ = fit_theta_scale(y, x, m, base_r, E, **kw)
        out[label] = m.replace(meta={**m.meta, "label": label})
        logger.info("fitted %s at %.2f dBm, subcarrier %d: %s", label, plan.power_dbm, s,
                    {k: v for k, v in dataclasses.asdict(out[label]).items() if k != "meta"})
    return out


def evaluate_models(cfg: ExperimentConfig, plan: WdmPlan, s: int, x, y, models: dict) -> dict:
    """RatePoint per model on testing bursts of subcarrier s."""
    se_factor = 1.0 / (plan.symbol_period * plan.channel_spacing)
    E = plan.subcarrier_energy(0, s)
    out = {}
    for i, (label, m) in enumerate(sorted(models.items())):
        u = whiten_and_derotate(y, m)
        rng = SeededRng(cfg.seed, (3, _power_code(plan.power_dbm), s, i))
        out[label] = mutual_information(u, x, m, E, plan.power_dbm, K=cfg.particles,
                                        eps=cfg.eps, rng=rng, se_factor=se_factor, label=label)
    return out


# ---------------------------------------------------------------------------
# curves and sweep

@dataclass
class RateCurve:
    """Rate points of one model ordered by power, with provenance."""

    label: str
    points: list
    manifest: dict = field(default_factory=dict)
    subcarrier_points: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.power_dbm)
        pw = [p.power_dbm for p in self.points]
        if np.any(np.diff(pw) <= 0):
            raise ConfigError("curve powers must be strictly increasing")

    @property
    def powers(self) -> np.ndarray:
        return np.array([p.power_dbm for p in self.points])

    @property
    def se(self) -> np.ndarray:
        return np.array([p.se for p in self.points])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([p.stderr * p.spectral_efficiency_factor for p in self.points])

    def peak(self) -> tuple[float, float]:
        """(power, SE) of the best sampled point."""
        i = int(np.argmax(self.se))
        return float(self.powers[i]), float(self.se[i])

    def power_at_rate(self, rate: float) -> float | None:
        """Lowest power reaching ``rate``, linearly interpolated in dB."""
        p, r = self.powers, self.se
        for i in range(len(p)):
            if r[i] >= rate:
                if i == 0:
                    return float(p[0]) if r[0] == rate else None
                t = (rate - r[i - 1]) / (r[i] - r[i - 1])
                return float(p[i - 1] + t * (p[i] - p[i - 1]))
        return None


def _aggregate(per_sub: list, label: str) -> RatePoint:
    """Average subcarrier rate points into a channel rate point."""
    S = len(per_sub)
    hu = float(np.mean([p.hu for p in per_sub]))
    hux = float(np.mean([p.hux for p in per_sub]))
    stderr = float(math.sqrt(sum(p.stderr**2 for p in per_sub)) / S)
    diag = {"subcarriers": S,
            "mean_k_eff": float(np.mean([p.diagnostics.get("mean_k_eff", np.nan) for p in per_sub])),
            "resamples": int(sum(p.diagnostics.get("resamples", 0) for p in per_sub))}
    return RatePoint(per_sub[0].power_dbm, hu, hux, stderr, label,
                     per_sub[0].spectral_efficiency_factor, diag)


def _power_job(args):
    cfg, p, weights, suffix = args
    plan = cfg.plan.replace(power_dbm=p, subcarrier_weights=weights)
    xtr, ytr = simulate_bursts(cfg, p, "train", weights)
    xte, yte = simulate_bursts(cfg, p, "test", weights)
    models, points = {}, {}
    for s in range(plan.subcarriers):
        try:
            fitted = fit_models(cfg, plan, s, xtr[:, s], ytr[:, s])
            pts = evaluate_models(cfg, plan, s, xte[:, s], yte[:, s], fitted)
        except CpanError as e:
            raise type(e)(f"power {p} dBm, subcarrier {s}: {e}") from e
        for label in fitted:
            models[(label + suffix, s)] = fitted[label]
            points[(label + suffix, s)] = dataclasses.replace(pts[label], model=label + suffix)
    return p, models, points


def _write_point_files(cfg: ExperimentConfig, models: dict, points: dict, h: str):
    out = Path(cfg.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "points").mkdir(parents=True, exist_ok=True)
    for (label, s), m in models.items():
        p = points[(label, s)].power_dbm
        m = m.replace(meta={**m.meta, "config_hash": h})
        m.save(out / "models" / f"{label}_p{p:+.2f}_s{s}.json")
    for (label, s), pt in points.items():
        d = json.loads(pt.to_json())
        d["config_hash"] = h
        with open(out / "points" / f"{label}_p{pt.power_dbm:+.2f}_s{s}.json", "w") as fh:
            json.dump(d, fh, sort_keys=True, indent=1)


def _collect(results, S: int, manifest: dict) -> dict:
    per = {}
    for _, _, points in results:
        for (label, s), pt in points.items():
            per.setdefault(label, {}).setdefault(pt.power_dbm, [None] * S)[s] = pt
    curves = {}
    for label, by_power in per.items():
        agg = [_aggregate(v, label) for _, v in sorted(by_power.items())]
        sub = {s: [v[s] for _, v in sorted(by_power.items())] for s in range(S)}
        curves[label] = RateCurve(label, agg, dict(manifest), sub)
    return curves


def manifest_for(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "code_version": CODE_VERSION,
            "config": cfg.to_dict()}


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Train and test every model at every power; returns {label: RateCurve}.

    With ``cfg.fdpa`` the CPAN per-subcarrier curves of the uniform sweep serve
    as utilities for one allocation pass, whose sweep is added as "cpan-fdpa".
    """
    manifest = manifest_for(cfg)
    h = manifest["config_hash"]
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    S = cfg.plan.subcarriers
    inner = cfg.replace(workers=1)
    # powers go to the pool; each job owns its bursts and particle filters
    jobs = [(inner, p, None, "") for p in cfg.powers_dbm]
    results = _map(_power_job, jobs, cfg.workers)
    for _, models, points in results:
        _write_point_files(cfg, models, points, h)
    curves = _collect(results, S, manifest)

    if cfg.fdpa:
        base = curves.get("cpan") or next(iter(curves.values()))
        alloc = fdpa_from_curve(base, cfg.plan, cfg.fdpa_step_db)
        manifest["fdpa_weights"] = {f"{p:+.2f}": list(w) for p, w in alloc.items()}
        fcfg = inner.replace(models=tuple(m for m in cfg.models if m == "cpan") or cfg.models[:1])
        jobs = [(fcfg, p, tuple(alloc[p]), "-fdpa") for p in cfg.powers_dbm]
        fres = _map(_power_job, jobs, cfg.workers)
        for _, models, points in fres:
            _write_point_files(cfg, models, points, h)
        curves.update(_collect(fres, S, manifest))
        for c in curves.values():
            c.manifest = dict(manifest)
    with open(Path(cfg.out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1, default=list)
    return curves


def fdpa_from_curve(curve: RateCurve, plan: WdmPlan, step_db: float = 0.25) -> dict:
    """Per-power subcarrier weights from a uniform sweep's subcarrier curves.

    Utilities are the measured per-subcarrier SE against per-subcarrier power,
    interpolated by a monotone cubic.
    """
    S = plan.subcarriers
    utils = []
    for s in range(S):
        pts = curve.subcarrier_points[s]
        utils.append(UtilityCurve(np.array([p.power_dbm for p in pts]) - 10 * math.log10(S),
                                  np.array([p.se for p in pts])))
    out = {}
    for p in curve.powers:
        res = fdpa_allocate(utils, float(dbm_to_watt(p)), step_db=step_db)
        out[float(p)] = tuple(float(w) for w in res.weights)
    return out


# ---------------------------------------------------------------------------
# reporting

def read_curve_csv(path) -> RateCurve:
    """Inverse of the per-curve CSV written by :func:`emit_report`."""
    manifest = {}
    points = []
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            for item in first[1:].split():
                if "=" in item:
                    k, v = item.split("=", 1)
                    manifest[k] = v
        else:
            fh.seek(0)
        for row in csv.DictReader(fh):
            hu, hux = float(row["hu"]), float(row["hux"])
            se = float(row["se_bits"])
            factor = se / (hu - hux) if hu != hux else 1.0
            points.append(RatePoint(float(row["power_dbm"]), hu, hux, float(row["stderr"]),
                                    row["model"], factor))
    label = points[0].model if points else Path(path).stem
    return RateCurve(label, points, manifest)


def emit_report(curves: dict, out_dir, params: PhysicalParams | None = None,
                reference: str = "memoryless", bandwidth: float = 50e9) -> dict:
    """Write per-curve CSVs, a combined CSV and a Markdown summary.

    Power gains are measured at the reference curve's peak rate: the power
    at which each curve first reaches that rate (linear in dB) subtracted from
    the reference peak power. Returns the paths written.
    """
    if not curves:
        raise ConfigError("no curves to report")
    out = Path(out_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    params = params or PhysicalParams()
    hashes = {c.manifest.get("config_hash", "") for c in curves.values()}
    h = ",".join(sorted(x for x in hashes if x)) or "none"
    written = {}
    for label, c in sorted(curves.items()):
        path = out / "curves" / f"{label}.csv"
        write_rate_csv(path, c.points, comment=f"config_hash={h}")
        written[label] = path
        for s, pts in sorted(c.subcarrier_points.items()):
            if len(c.subcarrier_points) > 1:
                p = out / "curves" / f"{label}_sc{s + 1}.csv"
                write_rate_csv(p, pts, comment=f"config_hash={h} subcarrier={s + 1}")
                written[f"{label}_sc{s + 1}"] = p

    powers = sorted({float(p) for c in curves.values() for p in c.powers})
    labels = sorted(curves)
    comb = out / "combined.csv"
    with open(comb, "w", newline="") as fh:
        fh.write(f"# config_hash={h}\n")
        w = csv.writer(fh)
        w.writerow(["power_dbm", "awgn"] + [f"{lab}_{k}" for lab in labels for k in ("se", "stderr")])
        for p in powers:
            row = [repr(p), repr(float(awgn_reference(p, params, bandwidth)))]
            for lab in labels:
                c = curves[lab]
                idx = np.nonzero(np.isclose(c.powers, p))[0]
                if idx.size:
                    row += [repr(float(c.se[idx[0]])), repr(float(c.stderr[idx[0]]))]
                else:
                    row += ["", ""]
            w.writerow(row)
    written["combined"] = comb

    ref = curves.get(reference)
    lines = [f"# Rate summary", "", f"config hash: `{h}`", ""]
    lines.append("| model | peak SE (bit/s/Hz) | peak power (dBm) | power gain at reference peak (dB) |")
    lines.append("|---|---|---|---|")
    ref_p, ref_r = ref.peak() if ref is not None else (None, None)
    for lab in labels:
        pp, pr = curves[lab].peak()
        gain = "n/a"
        if ref is not None:
            c = curves[lab]
            at = c.power_at_rate(ref_r)
            if at is not None:
                gain = f"{ref_p - at:.3f}"
            elif c.se[0] >= ref_r:
                # already above the reference peak at the lowest sampled power
                gain = f">= {ref_p - c.powers[0]:.3f}"
        lines.append(f"| {lab} | {pr:.4f} | {pp:.2f} | {gain} |")
    lines.append("")
    if ref is not None:
        lines.append(f"Reference curve `{reference}` peaks at {ref_r:.4f} bit/s/Hz "
                     f"({ref_p:.2f} dBm). Gains interpolate power linearly in dB.")
    else:
        lines.append(f"Reference curve `{reference}` not present; gains omitted.")
    lines.append("")
    summ = out / "summary.md"
    summ.write_text("\n".join(lines))
    written["summary"] = summ
    return written
