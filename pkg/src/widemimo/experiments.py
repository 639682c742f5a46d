"""Seeded Monte Carlo harness: MSE, mis-detection, ROC, localization.

Every curve is a deterministic function of its spec: per-trial random
streams are keyed by (seed, curve point index, trial index), so running
trials [0, 500) and [500, 1000) separately concatenates to the same
result as one [0, 1000) run, and re-running any spec with the same seed
reproduces output files byte for byte.

Two execution paths exist.  Detection curves (mis-detection, ROC) with
genie delays sample the matched-filter outputs directly from their
exact joint law at the true delay matrix, which is orders of magnitude
cheaper than synthesizing sample-level snapshots and supports the 1e5+
trial counts the slope fits need.  Estimation curves (delay MSE,
localization) run the full pipeline per trial: synthesize, search,
refine, and optionally localize.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from hashlib import sha256

import numpy as np

from . import __version__
from .geometry import SceneConfig, true_delays, mimo_scene, phased_array_scene
from .waveforms import WaveformBank, gram, bank_for_scene
from .synth import (SnrSpec, ChannelRealization, energy_for_snr, ctau_pow,
                    synth_extended, synth_point, synth_phased_array, _rng)
from .estimation import (EstimatorKind, SearchSpec, build_grid, estimate,
                         _steering, _as_kind)
from .detection import (DetectorKind, detector_for, statistic, threshold,
                        null_law, _gram_matrix, _point_weights)
from .localization import localize

_ROLE_GENIE = 0x51E7

_SCENARIOS = ("mimo_extended", "mimo_point", "phased_array")


def _energy_for(spec: "ExperimentSpec", scene, bank, snr_db: float) -> float:
    """Received-SNR energy under the spec's scenario convention.

    Co-located arrays measure received SNR per element after steering,
    so their energy is normalized against the steered sums; widely
    spaced scenes use the per-path loss.
    """
    steering = None
    if spec.scenario == "phased_array":
        steering = "point" if _as_kind(spec.estimator).is_point else "extended"
    return energy_for_snr(SnrSpec(snr_db), scene, bank, steering=steering)


# ---------------------------------------------------------------------------
# Spec and result containers


@dataclass(frozen=True)
class ExperimentSpec:
    """Declarative description of one curve run.

    The spec is a plain bag of primitives so it hashes and serializes
    canonically; scene, bank and search objects are derived from it on
    demand.
    """

    scenario: str = "mimo_extended"
    estimator: str = "mimo_extended_map"
    detector: str = "mimo_extended"
    snr_grid_db: tuple = tuple(range(-10, 21, 2))
    pfa: float = 1e-2
    trials: int = 1000
    seed: int = 0
    n_tx: int = 2
    n_rx: int = 2
    target_km: tuple = (20.0, 15.0, 0.0)
    carrier_freq_hz: float = 5e6
    path_loss_exp: float = 2.0
    pa_spacing_m: float | None = None
    zeta_mode: str = "unit_phase"
    search_half_extent_m: float = 2000.0
    search_nodes: int = 41
    refine: bool = True
    outputs: str | None = None

    def __post_init__(self):
        if self.scenario not in _SCENARIOS:
            raise ValueError(f"scenario must be one of {_SCENARIOS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.snr_grid_db) == 0:
            raise ValueError("snr_grid_db must be non-empty")
        est = _as_kind(self.estimator)
        if self.scenario == "mimo_extended" and est.is_pa:
            raise ValueError("mimo_extended scenario needs a MIMO estimator")
        if self.scenario == "mimo_point" and est is not EstimatorKind.MIMO_POINT:
            raise ValueError("mimo_point scenario needs the mimo_point estimator")
        if self.scenario == "phased_array" and not est.is_pa:
            raise ValueError("phased_array scenario needs a pa_* estimator")

    def scene(self) -> SceneConfig:
        if self.scenario == "phased_array":
            return phased_array_scene(self.n_tx, self.n_rx, self.target_km,
                                      self.carrier_freq_hz, self.path_loss_exp,
                                      spacing_m=self.pa_spacing_m)
        return mimo_scene(self.n_tx, self.n_rx, self.target_km,
                          self.carrier_freq_hz, self.path_loss_exp)

    def bank(self, scene: SceneConfig | None = None) -> WaveformBank:
        return bank_for_scene(scene if scene is not None else self.scene())

    def search(self) -> SearchSpec:
        return SearchSpec(half_extent_m=self.search_half_extent_m,
                          nodes=self.search_nodes, refine=self.refine)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_grid_db"] = list(self.snr_grid_db)
        d["target_km"] = list(self.target_km)
        return d

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return sha256(blob).hexdigest()[:16]


@dataclass
class CurveResult:
    """One curve: (x, y, stderr, n) points plus provenance metadata."""

    kind: str                   # mse_delay | mse_position | pmd | roc | slope
    points: list                # of (x, y, stderr, n_trials)
    metadata: dict = field(default_factory=dict)

    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def stderrs(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def to_csv(self) -> str:
        lines = ["x,y,stderr,n_trials"]
        for x, y, se, n in self.points:
            lines.append(f"{float(x)!r},{float(y)!r},{float(se)!r},{int(n)}")
        return "\n".join(lines) + "\n"


@dataclass
class DiversityFit:
    slope: float                # decades of P_md per decade of SNR, positive
    fit_range: tuple            # (snr_lo_db, snr_hi_db) actually used
    r_squared: float
    n_points: int


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_curve(result: CurveResult, out_dir: str, name: str,
                force: bool = False) -> tuple:
    """Write `<name>.csv` and `<name>.json`; refuse hash mismatches.

    An existing sidecar with a different spec hash means the directory
    holds results of a different experiment; overwriting needs `force`.
    """
    csv_path = os.path.join(out_dir, name + ".csv")
    json_path = os.path.join(out_dir, name + ".json")
    new_hash = result.metadata.get("spec_hash")
    if not force and os.path.exists(json_path):
        try:
            with open(json_path) as f:
                old_hash = json.load(f).get("spec_hash")
        except (OSError, ValueError):
            old_hash = None
        if old_hash is not None and old_hash != new_hash:
            raise FileExistsError(
                f"{json_path} holds results for spec {old_hash}, "
                f"refusing to overwrite with {new_hash} (use force)")
    _atomic_write(csv_path, result.to_csv())
    _atomic_write(json_path, json.dumps(result.metadata, sort_keys=True,
                                        indent=2) + "\n")
    return csv_path, json_path


def _base_metadata(spec: ExperimentSpec, kind: str) -> dict:
    return {"kind": kind, "spec": spec.to_dict(),
            "spec_hash": spec.spec_hash(), "seed": spec.seed,
            "version": __version__}


# ---------------------------------------------------------------------------
# Genie detection engine: matched-filter outputs sampled in closed form


def _h1_setup(spec: ExperimentSpec, scene: SceneConfig, bank: WaveformBank):
    """Precompute the per-receiver mixing used by the H1 sampler."""
    tau = true_delays(scene).tau
    rel = tau - bank.window_start
    beta = scene.path_loss_exp
    kind = detector_for(spec.detector)
    pre = {"tau": tau, "kind": kind,
           "loss": ctau_pow(scene.c, tau, -beta)}
    if kind in (DetectorKind.PA_EXTENDED, DetectorKind.PA_POINT):
        pre["g11"] = float(np.real(gram(bank, rel[0, 0], rel[0, 0], 1, 1)))
        pre["s_n"] = _steering(scene, tau,
                               reflected=(kind is DetectorKind.PA_POINT))
        return pre
    grams, chols = [], []
    for n in range(tau.shape[1]):
        g = _gram_matrix(bank, rel[:, n])
        g = 0.5 * (g + g.conj().T)
        grams.append(g)
        chols.append(np.linalg.cholesky(g + 1e-300 * np.eye(tau.shape[0])))
    pre["grams"] = grams
    pre["chols"] = chols
    if kind is DetectorKind.MIMO_POINT:
        pre["w"] = _point_weights(scene, tau)
    return pre


def _draw_trial_normals(spec: ExperimentSpec, point_idx: int, lo: int,
                        hi: int, per_trial: int) -> np.ndarray:
    """Per-trial standard normals under per-trial keyed streams.

    Each trial owns an independent stream keyed by (seed, point, trial),
    so any partition of [0, trials) reproduces the same numbers.
    """
    out = np.empty((hi - lo, per_trial))
    for t in range(lo, hi):
        rng = _rng([spec.seed, point_idx, t], _ROLE_GENIE)
        out[t - lo] = rng.standard_normal(per_trial)
    return out


def sample_h1_statistics(spec: ExperimentSpec, scene: SceneConfig,
                         bank: WaveformBank, energy: float, point_idx: int,
                         lo: int, hi: int, pre: dict | None = None) -> np.ndarray:
    """Detection statistics under H1 at the true delays, trials [lo, hi).

    Sampled in matched-filter space: per receiver the outputs are the
    gram mixing of the (channel-weighted) transmitted columns plus
    correlated CN(0, Gamma) noise, which is their exact law, so the
    statistics match the full synthesize-and-correlate pipeline in
    distribution.  Unit-tested against that pipeline.
    """
    if pre is None:
        pre = _h1_setup(spec, scene, bank)
    kind = pre["kind"]
    tau, loss = pre["tau"], pre["loss"]
    n_t, n_r = tau.shape
    amp = np.sqrt(energy / n_t) * loss
    f_c = scene.carrier_freq_hz
    m = hi - lo

    if kind in (DetectorKind.PA_EXTENDED, DetectorKind.PA_POINT):
        # channel: one CN(0,1) gain (extended) or one reflectivity (point)
        raw = _draw_trial_normals(spec, point_idx, lo, hi, 2 + 2 * n_r)
        if kind is DetectorKind.PA_EXTENDED:
            g = (raw[:, 0] + 1j * raw[:, 1]) / np.sqrt(2.0)
        else:
            g = _zeta_from_normals(spec.zeta_mode, raw[:, 0], raw[:, 1])
        z = (raw[:, 2:2 + n_r] + 1j * raw[:, 2 + n_r:]) / np.sqrt(2.0)
        s_n, g11 = pre["s_n"], pre["g11"]
        y = (np.sqrt(energy / n_t) * g[:, None] * s_n[None, :] * g11
             + np.sqrt(g11) * z)
        return np.abs(y @ np.conj(s_n)) ** 2

    cells = n_t * n_r
    raw = _draw_trial_normals(spec, point_idx, lo, hi, 4 * cells)
    if kind is DetectorKind.MIMO_EXTENDED:
        h = ((raw[:, :cells] + 1j * raw[:, cells:2 * cells])
             / np.sqrt(2.0)).reshape(m, n_t, n_r)
    else:
        zeta = _zeta_from_normals(spec.zeta_mode, raw[:, 0], raw[:, 1])
        h = zeta[:, None, None] * np.exp(-2j * np.pi * f_c * tau)[None]
    z = ((raw[:, 2 * cells:3 * cells] + 1j * raw[:, 3 * cells:])
         / np.sqrt(2.0)).reshape(m, n_t, n_r)
    b = np.empty((m, n_t, n_r), dtype=complex)
    for n in range(n_r):
        g_n, l_n = pre["grams"][n], pre["chols"][n]
        mean = np.conj(amp[:, n] * h[:, :, n]) @ g_n.T
        b[:, :, n] = mean + z[:, :, n] @ l_n.T
    if kind is DetectorKind.MIMO_EXTENDED:
        beta = scene.path_loss_exp
        l = energy / (bank.sample_period * n_t) + ctau_pow(scene.c, tau,
                                                           2 * beta)
        return np.sum(np.abs(b) ** 2 / l, axis=(1, 2))
    return np.abs(np.sum(pre["w"] * np.conj(b), axis=(1, 2))) ** 2


def _phase_from_normals(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Uniform phase in [0, 1) from two normals (angle of a CN draw)."""
    return (np.arctan2(b, a) / (2.0 * np.pi)) % 1.0


def _zeta_from_normals(zeta_mode: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reflectivity draws matching the snapshot synthesizer's modes.

    "rayleigh" is the fluctuating-target model under which the point
    detector's mis-detection slope is meaningful; "unit_phase" keeps
    |zeta| = 1 for estimation-style runs.
    """
    if zeta_mode == "rayleigh":
        return (a + 1j * b) / np.sqrt(2.0)
    if zeta_mode == "unit_phase":
        return np.exp(2j * np.pi * _phase_from_normals(a, b))
    if zeta_mode == "fixed_one":
        return np.ones_like(a, dtype=complex)
    raise ValueError(f"unknown zeta_mode {zeta_mode!r}")


def _h1_stats_all(spec: ExperimentSpec, scene, bank, energy, point_idx,
                  chunk: int = 20000) -> np.ndarray:
    pre = _h1_setup(spec, scene, bank)
    parts = [sample_h1_statistics(spec, scene, bank, energy, point_idx,
                                  lo, min(lo + chunk, spec.trials), pre)
             for lo in range(0, spec.trials, chunk)]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Detection curves


def run_pmd_curve(spec: ExperimentSpec, genie_delays: bool = True,
                  progress=None) -> CurveResult:
    """Mis-detection probability vs SNR at fixed false-alarm rate.

    With `genie_delays` (the default, matching the diversity analysis)
    the detector is evaluated at the true delay matrix; otherwise each
    trial runs the full estimation search first, which is far slower
    and labeled as such in the metadata.
    """
    scene = spec.scene()
    bank = spec.bank(scene)
    tau0 = true_delays(scene)
    points = []
    t0 = time.time()
    for i, snr_db in enumerate(spec.snr_grid_db):
        energy = _energy_for(spec, scene, bank, snr_db)
        theta = threshold(spec.detector, tau0, scene, bank, energy, spec.pfa)
        if genie_delays:
            stats = _h1_stats_all(spec, scene, bank, energy, i)
        else:
            stats = _pipeline_detect_stats(spec, scene, bank, energy, i)
        pmd = float(np.mean(stats <= theta))
        se = float(np.sqrt(max(pmd * (1.0 - pmd), 1e-300) / spec.trials))
        points.append((float(snr_db), pmd, se, spec.trials))
        if progress is not None:
            progress(f"pmd {snr_db:+.1f} dB: {pmd:.3e} "
                     f"[{i + 1}/{len(spec.snr_grid_db)}]")
    meta = _base_metadata(spec, "pmd")
    meta["genie_delays"] = bool(genie_delays)
    meta["wall_time_s"] = time.time() - t0
    return CurveResult(kind="pmd", points=points, metadata=meta)


def _pipeline_detect_stats(spec, scene, bank, energy, point_idx) -> np.ndarray:
    """End-to-end H1 statistics: estimate tau, evaluate at tau-hat."""
    search = spec.search()
    plan = build_grid(scene, search)
    tau0 = true_delays(scene)
    snr = SnrSpec(float(spec.snr_grid_db[point_idx]))
    out = np.empty(spec.trials)
    from .estimation import matched_filter
    for t in range(spec.trials):
        snap = _synth_for(spec, scene, bank, tau0, snr,
                          [spec.seed, point_idx, t])
        res = estimate(spec.estimator, snap, scene, bank, energy=energy,
                       search=search, plan=plan)
        mf = matched_filter(snap.r, bank, res.tau_hat, energy, scene)
        out[t] = statistic(spec.detector, mf, scene, bank)
    return out


def run_roc(spec: ExperimentSpec, snr_fixed: float = 0.0,
            pfa_grid=None, progress=None) -> CurveResult:
    """Detection probability vs false-alarm rate at one fixed SNR.

    Thresholds for every pfa come from the same analytic null law, and
    one set of H1 statistics is reused across the grid, so the curve is
    monotone up to Monte Carlo noise by construction.
    """
    scene = spec.scene()
    bank = spec.bank(scene)
    tau0 = true_delays(scene)
    if pfa_grid is None:
        pfa_grid = np.concatenate([np.logspace(-3.0, -0.25, 12), [1.0]])
    energy = _energy_for(spec, scene, bank, snr_fixed)
    t0 = time.time()
    stats = _h1_stats_all(spec, scene, bank, energy, 0)
    law = null_law(spec.detector, tau0, scene, bank, energy)
    points = []
    for pfa in np.sort(np.asarray(pfa_grid, dtype=float)):
        theta = 0.0 if pfa == 1.0 else law.quantile(1.0 - pfa)
        pd = float(np.mean(stats > theta))
        se = float(np.sqrt(max(pd * (1.0 - pd), 1e-300) / spec.trials))
        points.append((float(pfa), pd, se, spec.trials))
        if progress is not None:
            progress(f"roc pfa={pfa:.3e}: P_d={pd:.4f}")
    meta = _base_metadata(spec, "roc")
    meta["snr_fixed_db"] = float(snr_fixed)
    meta["wall_time_s"] = time.time() - t0
    return CurveResult(kind="roc", points=points, metadata=meta)


def fit_diversity(curve: CurveResult, pmd_lo: float | None = None,
                  pmd_hi: float | None = None) -> DiversityFit:
    """Slope of -log10(P_md) against log10(SNR) over the usable window.

    Points outside (pmd_lo, pmd_hi) are dropped: high P_md sits outside
    the asymptotic regime and tiny P_md is dominated by Monte Carlo
    error.  Defaults: 10/trials below, 0.5 above.
    """
    xs, ys = curve.xs(), curve.ys()
    ns = np.array([p[3] for p in curve.points], dtype=float)
    lo = np.where(ns > 0, 10.0 / ns, 0.0) if pmd_lo is None else pmd_lo
    hi = 0.5 if pmd_hi is None else pmd_hi
    mask = (ys > lo) & (ys < hi)
    if int(np.sum(mask)) < 3:
        raise ValueError("need at least 3 points inside the fit window")
    x = xs[mask] / 10.0                      # dB to decades of linear SNR
    y = np.log10(ys[mask])
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DiversityFit(slope=float(-coef[0]),
                        fit_range=(float(xs[mask].min()), float(xs[mask].max())),
                        r_squared=r2, n_points=int(np.sum(mask)))


def verify_lemma6(m_terms: int, rho_grid=None, sigma: float = 1.0,
                  sigma_mu_list=None, gamma: float = 9.0,
                  trials: int = 2_000_000, seed: int = 0) -> DiversityFit:
    """Simulate the small-ball probability power law directly.

    Draws Y_i ~ Normal(rho * mu_i, sigma^2) with mu_i ~ Normal(0,
    sigma_i^2) and fits the log-log slope of P(sum Y_i^2 < gamma)
    against rho.  The probability scales as rho^(-m) once rho dominates
    sigma/sigma_i; only grid points with at least 100 hits enter the
    fit so the regression never leans on empty bins.
    """
    if m_terms < 1:
        raise ValueError("need at least one squared term")
    if rho_grid is None:
        rho_grid = np.logspace(0.6, 1.4, 5)
    sig_mu = (np.ones(m_terms) if sigma_mu_list is None
              else np.asarray(sigma_mu_list, dtype=float))
    if sig_mu.shape != (m_terms,):
        raise ValueError("sigma_mu_list must have one entry per term")
    probs, used_rho = [], []
    for j, rho in enumerate(np.asarray(rho_grid, dtype=float)):
        rng = _rng([seed, j], _ROLE_GENIE)
        hits = 0
        chunk = 250_000
        done = 0
        while done < trials:
            c = min(chunk, trials - done)
            mu = rng.standard_normal((c, m_terms)) * sig_mu
            y = rho * mu + sigma * rng.standard_normal((c, m_terms))
            hits += int(np.sum(np.sum(y * y, axis=1) < gamma))
            done += c
        if hits >= 100:
            probs.append(hits / trials)
            used_rho.append(rho)
    if len(probs) < 2:
        raise ValueError("too few populated grid points; lower rho_grid")
    x = np.log10(np.asarray(used_rho))
    y = np.log10(np.asarray(probs))
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return DiversityFit(slope=float(-coef[0]),
                        fit_range=(float(min(used_rho)), float(max(used_rho))),
                        r_squared=r2, n_points=len(probs))


# ---------------------------------------------------------------------------
# Estimation curves (full pipeline)


def _synth_for(spec: ExperimentSpec, scene, bank, tau0, snr, seed):
    if spec.scenario == "mimo_extended":
        return synth_extended(scene, bank, tau0, snr, seed)
    if spec.scenario == "mimo_point":
        return synth_point(scene, bank, tau0, snr, seed,
                           zeta_mode=spec.zeta_mode)
    model = "point" if _as_kind(spec.estimator).is_point else "extended"
    return synth_phased_array(scene, bank, tau0, snr, seed,
                              target_model=model)


def _mse_trial_range(spec: ExperimentSpec, point_idx: int, lo: int,
                     hi: int, want_position: bool) -> dict:
    """Worker: per-trial normalized errors for trials [lo, hi)."""
    scene = spec.scene()
    bank = spec.bank(scene)
    tau0 = true_delays(scene)
    search = spec.search()
    plan = build_grid(scene, search)
    snr = SnrSpec(float(spec.snr_grid_db[point_idx]))
    energy = _energy_for(spec, scene, bank, snr.snr_db)
    cells = scene.n_tx * scene.n_rx
    errs = np.empty(hi - lo)
    diverged = 0
    keep = []
    norm_x = float(np.dot(scene.target, scene.target))
    for t in range(lo, hi):
        snap = _synth_for(spec, scene, bank, tau0, snr,
                          [spec.seed, point_idx, t])
        res = estimate(spec.estimator, snap, scene, bank, energy=energy,
                       search=search, plan=plan)
        if want_position:
            loc = localize(scene, res.tau_hat, res.grid_point)
            if not loc.converged:
                diverged += 1
                continue
            keep.append(float(np.sum((loc.x_hat - scene.target) ** 2)) / norm_x)
        else:
            d = (res.tau_hat.tau - tau0.tau) / tau0.tau
            errs[t - lo] = float(np.sum(np.abs(d) ** 2)) / cells
    if want_position:
        return {"errs": np.asarray(keep), "diverged": diverged}
    return {"errs": errs, "diverged": 0}


def _run_trial_curve(spec: ExperimentSpec, want_position: bool,
                     threads: int, progress) -> CurveResult:
    kind = "mse_position" if want_position else "mse_delay"
    points = []
    div_counts = []
    t0 = time.time()
    chunk = max(25, spec.trials // max(4 * threads, 1))
    for i, snr_db in enumerate(spec.snr_grid_db):
        ranges = [(lo, min(lo + chunk, spec.trials))
                  for lo in range(0, spec.trials, chunk)]
        if threads > 1 and len(ranges) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(
                    _mse_worker,
                    [(spec, i, lo, hi, want_position) for lo, hi in ranges]))
        else:
            parts = [_mse_trial_range(spec, i, lo, hi, want_position)
                     for lo, hi in ranges]
        errs = np.concatenate([p["errs"] for p in parts])
        diverged = int(sum(p["diverged"] for p in parts))
        div_counts.append(diverged)
        n = errs.size
        mean = float(np.mean(errs)) if n else float("nan")
        se = float(np.std(errs, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        points.append((float(snr_db), mean, se, n))
        if progress is not None:
            progress(f"{kind} {snr_db:+.1f} dB: {mean:.3e} "
                     f"[{i + 1}/{len(spec.snr_grid_db)}]")
    meta = _base_metadata(spec, kind)
    if want_position:
        meta["diverged_counts"] = div_counts
    if _as_kind(spec.estimator).is_point:
        # carrier-cyclic objectives ripple at the carrier period; MSE
        # floors near that scale are the ripple, not search failure
        meta["oscillation_width_s"] = 1.0 / spec.carrier_freq_hz
    meta["wall_time_s"] = time.time() - t0
    return CurveResult(kind=kind, points=points, metadata=meta)


def _mse_worker(args):
    return _mse_trial_range(*args)


def run_mse_curve(spec: ExperimentSpec, threads: int = 1,
                  progress=None) -> CurveResult:
    """Average normalized delay MSE vs SNR.

    Per trial: mean over cells of |(tau_hat - tau) / tau|^2, fresh
    channel and noise; stderr from the trial sample variance.
    """
    return _run_trial_curve(spec, want_position=False, threads=threads,
                            progress=progress)


def run_localization_curve(spec: ExperimentSpec, threads: int = 1,
                           progress=None) -> CurveResult:
    """Normalized position MSE vs SNR through the full pipeline.

    Each trial synthesizes, estimates the delay matrix, and solves for
    position starting from the search's best grid node.  Trials whose
    position solve fails to converge are excluded from the mean and
    counted in metadata["diverged_counts"].
    """
    return _run_trial_curve(spec, want_position=True, threads=threads,
                            progress=progress)
