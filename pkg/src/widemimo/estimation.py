"""Delay estimation: matched filtering, likelihood objectives, search.

The estimators all share one structure: correlate the snapshot against
every transmit waveform at a candidate delay matrix, combine the
correlator outputs into a scalar objective, and maximize over the set
of physically consistent delay matrices.  Consistency means tau[m, n]
splits as t[m] + t'[n] with the per-antenna components respecting the
array geometry, so the search runs over candidate target locations
first (coarse grid, every node feasible by construction) and then over
the (t, t') components directly (pattern descent with feasibility
rejection).

Six objective kinds cover the two target models and the co-located
reference system:

  mimo_extended_map   sum |b|^2 / (1/T_s + (N_t/E) (c tau)^(2 beta))
  mimo_extended_ave   the MAP sum minus sum log(1 + per-cell SNR)
  mimo_point          |sum (1/tau^beta) e^{j 2 pi f_c tau} b|^2
                        / sum tau^(-2 beta)
  pa_extended_map     |sum_n conj(S_n) b_n|^2
                        / ((1/T_s) sum |S_n|^2 + N_t/E)
  pa_extended_ave     the MAP ratio minus log(E sum|S_n|^2/(T_s N_t)+1)
  pa_point            |sum_n conj(S~_n) b_n|^2 / sum |S~_n|^2

where b are matched-filter outputs, S_n the transmit steering sums and
S~_n their reflected-phase variant.  The MAP/ave pair differ only by a
delay-dependent penalty that prices the channel prior in; both peak at
the target, they just trade bias differently at low SNR.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import SceneConfig, DelayVector, is_feasible
from .waveforms import WaveformBank
from .synth import ctau_pow


class EstimatorKind(str, enum.Enum):
    MIMO_EXTENDED_MAP = "mimo_extended_map"
    MIMO_EXTENDED_AVE = "mimo_extended_ave"
    MIMO_POINT = "mimo_point"
    PA_EXTENDED_MAP = "pa_extended_map"
    PA_EXTENDED_AVE = "pa_extended_ave"
    PA_POINT = "pa_point"

    @property
    def is_pa(self) -> bool:
        return self.value.startswith("pa_")

    @property
    def is_point(self) -> bool:
        return self.value.endswith("point")

    @property
    def envelope_kind(self) -> "EstimatorKind":
        """Phase-free surrogate used to pre-localize carrier-cyclic kinds."""
        if self is EstimatorKind.MIMO_POINT:
            return EstimatorKind.MIMO_EXTENDED_MAP
        if self is EstimatorKind.PA_POINT:
            return EstimatorKind.PA_EXTENDED_MAP
        return self


def _as_kind(kind) -> EstimatorKind:
    return kind if isinstance(kind, EstimatorKind) else EstimatorKind(str(kind))


# ---------------------------------------------------------------------------
# Matched filtering


@dataclass
class MatchedFilterBank:
    """Correlator outputs of one snapshot at one candidate delay matrix.

    b[m, n] = sum_k conj(r_n[k]) s_m[k; tau[m, n]] and a[m, n] is the
    loss-weighted conjugate form sqrt(E/N_t) (c tau)^-beta
    sum_k r_n[k] conj(s_m[k; tau]); l[m, n] = E/(T_s N_t) +
    (c tau)^(2 beta) weights the detection statistic and cell_snr is
    the per-cell post-filter SNR E (c tau)^(-2 beta)/(T_s N_t).
    pa_corr[n] correlates receiver n against the single shared waveform
    at tau[0, 0] (s-conjugated orientation); co-located objectives use
    it instead of the full matrix.  gates holds sum_k |s_m[k; tau]|^2,
    equal to 1/T_s whenever the support sits fully inside the window.
    """

    b: np.ndarray               # (N_t, N_r) complex
    a: np.ndarray               # (N_t, N_r) complex
    l: np.ndarray               # (N_t, N_r) float
    cell_snr: np.ndarray        # (N_t, N_r) float
    gates: np.ndarray           # (N_t, N_r) float
    pa_corr: np.ndarray         # (N_r,) complex
    pa_gate: float
    candidate: DelayVector
    energy: float

    @property
    def corr(self) -> np.ndarray:
        """sum_k r_n[k] conj(s_m[k; tau]): the s-conjugated orientation."""
        return np.conj(self.b)

    @property
    def tau(self) -> np.ndarray:
        return self.candidate.tau

    @property
    def shape(self):
        return self.b.shape


def matched_filter(snapshot, bank: WaveformBank, candidate, energy: float,
                   scene: SceneConfig) -> MatchedFilterBank:
    """Correlate a snapshot against the bank at a candidate delay matrix.

    `candidate` is a DelayVector or an (N_t, N_r) array of absolute
    delays; `energy` may be zero (the weights degrade gracefully) but
    not negative.
    """
    if energy < 0 or not np.isfinite(energy):
        raise ValueError("energy must be finite and >= 0")
    r = snapshot.r if hasattr(snapshot, "r") else np.asarray(snapshot)
    if not isinstance(candidate, DelayVector):
        candidate = DelayVector(tau=np.asarray(candidate, dtype=float))
    tau = candidate.tau
    fc = FastCorrelator(r, bank, tau.shape[0])
    corr, gates = fc.correlate(tau - bank.window_start)
    pa_corr, pa_gate = fc.correlate_tone(1, tau[0, 0] - bank.window_start)
    beta = scene.path_loss_exp
    loss = ctau_pow(scene.c, tau, -beta)
    a = np.sqrt(energy / scene.n_tx) * loss * corr
    l = energy / (bank.sample_period * scene.n_tx) + ctau_pow(
        scene.c, tau, 2.0 * beta)
    cell_snr = energy * loss**2 / (bank.sample_period * scene.n_tx)
    return MatchedFilterBank(b=np.conj(corr), a=a, l=l, cell_snr=cell_snr,
                             gates=gates, pa_corr=pa_corr, pa_gate=pa_gate,
                             candidate=candidate, energy=float(energy))


class FastCorrelator:
    """Gate sums via per-tone cumulative sums.

    The filter output for tone m at window-relative delay u is

        (1/sqrt(T)) e^{j 2 pi m u / T}
            * sum_{k : u <= k T_s < u + T} r_n[k] e^{-j 2 pi m k T_s / T}

    so after one cumulative sum per tone every candidate costs two
    lookups.  Gate boundaries come from searchsorted against the shared
    sample-time grid, the same comparison the closed-form sampler uses,
    so both paths agree sample for sample.
    """

    def __init__(self, r: np.ndarray, bank: WaveformBank, n_tones: int):
        r = np.asarray(r)
        if r.ndim != 2 or r.shape[0] != bank.num_samples:
            raise ValueError("snapshot must be (num_samples, n_rx)")
        self.bank = bank
        self.times = bank.sample_times
        k = np.arange(1, bank.num_samples + 1)
        tones = np.arange(1, n_tones + 1)
        mix = np.exp(-2j * np.pi * np.outer(tones, k)
                     * (bank.sample_period / bank.duration))
        q = mix[:, :, None] * r[None, :, :]          # (M, K, N_r)
        zero = np.zeros((n_tones, 1, r.shape[1]), dtype=complex)
        self.csum = np.concatenate([zero, np.cumsum(q, axis=1)], axis=1)
        self._root_t = np.sqrt(bank.duration)

    def correlate(self, tau_rel):
        """Outputs and gate energies for a delay matrix, or a batch.

        tau_rel has shape (..., M, N_r) with row m tied to tone m + 1;
        the return shapes match.  Orientation: sum_k r s* (conjugate of
        the b convention).
        """
        tau_rel = np.asarray(tau_rel, dtype=float)
        m = tau_rel.shape[-2]
        n = tau_rel.shape[-1]
        lo = np.searchsorted(self.times, tau_rel)
        hi = np.searchsorted(self.times, tau_rel + self.bank.duration)
        m_idx = np.arange(m).reshape((1,) * (tau_rel.ndim - 2) + (m, 1))
        n_idx = np.arange(n).reshape((1,) * (tau_rel.ndim - 1) + (n,))
        seg = self.csum[m_idx, hi, n_idx] - self.csum[m_idx, lo, n_idx]
        tones = np.arange(1, m + 1).reshape(m_idx.shape)
        phase = np.exp(2j * np.pi * tones * tau_rel / self.bank.duration)
        gates = (hi - lo) / self.bank.duration
        return phase * seg / self._root_t, gates

    def correlate_tone(self, tone: int, tau_rel: float):
        """Per-receiver outputs for one tone at one shared delay."""
        lo = int(np.searchsorted(self.times, tau_rel))
        hi = int(np.searchsorted(self.times, tau_rel + self.bank.duration))
        seg = self.csum[tone - 1, hi, :] - self.csum[tone - 1, lo, :]
        phase = np.exp(2j * np.pi * tone * tau_rel / self.bank.duration)
        return phase * seg / self._root_t, (hi - lo) / self.bank.duration

    def correlate_tone_batch(self, tau_rel, tone: int = 1):
        """Tone outputs for a vector of shared delays: (G, N_r)."""
        tau_rel = np.asarray(tau_rel, dtype=float)
        lo = np.searchsorted(self.times, tau_rel)
        hi = np.searchsorted(self.times, tau_rel + self.bank.duration)
        seg = self.csum[tone - 1, hi, :] - self.csum[tone - 1, lo, :]
        phase = np.exp(2j * np.pi * tone * tau_rel / self.bank.duration)
        gates = (hi - lo) / self.bank.duration
        return phase[:, None] * seg / self._root_t, gates


# ---------------------------------------------------------------------------
# Objectives


def _steering(scene: SceneConfig, tau, reflected: bool) -> np.ndarray:
    """Transmit steering sums, vectorized over leading axes of tau."""
    tau = np.asarray(tau, dtype=float)
    beta = scene.path_loss_exp
    loss = ctau_pow(scene.c, tau, -beta)
    ref = tau[..., 0:1, 0:1]
    factor = 2.0 if reflected else 1.0
    phases = np.exp(2j * np.pi * scene.carrier_freq_hz * (ref - factor * tau))
    return np.sum(loss * phases, axis=-2)            # (..., N_r)


def _objective_arrays(kind: EstimatorKind, corr, pa_corr, tau,
                      scene: SceneConfig, bank: WaveformBank,
                      energy: float) -> np.ndarray:
    """Objective values, broadcast over any leading batch axes.

    `corr` is the s-conjugated orientation (conj of b); the objectives
    are modulus-squared in it except for the coherent point sums, which
    use it exactly as the formulas are written.
    """
    beta = scene.path_loss_exp
    n_t = scene.n_tx
    if kind is EstimatorKind.MIMO_EXTENDED_MAP or kind is EstimatorKind.MIMO_EXTENDED_AVE:
        denom = 1.0 / bank.sample_period + (n_t / energy) * ctau_pow(scene.c, tau, 2 * beta)
        val = np.sum(np.abs(corr) ** 2 / denom, axis=(-2, -1))
        if kind is EstimatorKind.MIMO_EXTENDED_AVE:
            cell_snr = energy * ctau_pow(scene.c, tau, -2 * beta) / (bank.sample_period * n_t)
            val = val - np.sum(np.log1p(cell_snr), axis=(-2, -1))
        return val
    if kind is EstimatorKind.MIMO_POINT:
        w = np.exp(-beta * np.log(tau)) * np.exp(
            2j * np.pi * scene.carrier_freq_hz * tau)
        num = np.abs(np.sum(w * corr, axis=(-2, -1))) ** 2
        return num / np.sum(np.exp(-2 * beta * np.log(tau)), axis=(-2, -1))
    if kind is EstimatorKind.PA_EXTENDED_MAP or kind is EstimatorKind.PA_EXTENDED_AVE:
        s_n = _steering(scene, tau, reflected=False)
        num = np.abs(np.sum(np.conj(s_n) * pa_corr, axis=-1)) ** 2
        s2 = np.sum(np.abs(s_n) ** 2, axis=-1)
        val = num / (s2 / bank.sample_period + n_t / energy)
        if kind is EstimatorKind.PA_EXTENDED_AVE:
            val = val - np.log1p(energy * s2 / (bank.sample_period * n_t))
        return val
    if kind is EstimatorKind.PA_POINT:
        s_n = _steering(scene, tau, reflected=True)
        num = np.abs(np.sum(np.conj(s_n) * pa_corr, axis=-1)) ** 2
        return num / np.sum(np.abs(s_n) ** 2, axis=-1)
    raise ValueError(f"unknown estimator kind {kind!r}")


def objective(kind, mf: MatchedFilterBank, scene: SceneConfig,
              bank: WaveformBank) -> float:
    """Scalar objective for one candidate's matched-filter outputs.

    The transmit energy enters through the weights and is taken from
    the filter bank, which carries it from synthesis.
    """
    kind = _as_kind(kind)
    if not np.isfinite(mf.energy) or mf.energy <= 0:
        raise ValueError("objective needs the positive transmit energy "
                         "recorded in the filter bank")
    val = _objective_arrays(kind, mf.corr, mf.pa_corr, mf.tau,
                            scene, bank, mf.energy)
    return float(val)


# ---------------------------------------------------------------------------
# Point estimates of the nuisance channel parameters


def estimate_h_map(mf: MatchedFilterBank) -> np.ndarray:
    """Posterior-mean channel gains given the correlator outputs.

    With a CN(0, 1) prior per cell the normal-equations matrix is
    diagonal, so the solve is elementwise: a / (cell_snr + 1).  Strong
    cells pass through, weak cells shrink toward the prior mean.
    """
    return mf.a / (mf.cell_snr + 1.0)


def estimate_zeta(mf: MatchedFilterBank, scene: SceneConfig,
                  bank: WaveformBank) -> complex:
    """Least-squares point reflectivity from phase-aligned outputs."""
    beta = scene.path_loss_exp
    w = ctau_pow(scene.c, mf.tau, -beta) * np.exp(
        2j * np.pi * scene.carrier_freq_hz * mf.tau)
    num = np.sum(w * mf.corr)
    den = np.sqrt(mf.energy / scene.n_tx) * np.sum(
        ctau_pow(scene.c, mf.tau, -2 * beta)) / bank.sample_period
    return complex(num / den)


def phase_aligned_sum(values) -> tuple:
    """Maximum of |sum g_i e^{j phi_i}| over free phases, and the phases.

    The maximum is sum |g_i|, attained by rotating every term onto the
    positive real axis; any other phase choice can only lose.
    """
    g = np.asarray(values, dtype=complex)
    return float(np.sum(np.abs(g))), -np.angle(g)


# ---------------------------------------------------------------------------
# Search


@dataclass(frozen=True)
class SearchSpec:
    """Two-stage search configuration.

    Stage one scans candidate target locations on a rectangular grid
    (axes picks which coordinates vary; the rest stay at the center)
    and keeps the best objective, ties broken toward the lowest flat
    index.  Stage two descends on the per-antenna delay components with
    a halving step, rejecting moves that break the pairwise geometric
    delay constraints, until the step falls below `coord_floor`
    (defaults to sample_period / 200).
    """

    center: tuple | None = None
    half_extent_m: float = 2000.0
    nodes: int = 41
    axes: tuple = (0, 1)
    refine: bool = True
    max_sweeps: int = 200
    shrink: float = 0.5
    coord_floor: float | None = None
    envelope_prerefine: bool = True

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("nodes must be at least 1")
        if self.half_extent_m <= 0:
            raise ValueError("half_extent_m must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if len(self.axes) < 1 or any(a not in (0, 1, 2) for a in self.axes):
            raise ValueError("axes must name coordinates 0, 1, 2")


@dataclass
class GridPlan:
    """Precomputed stage-one candidates for one (scene, search) pair."""

    points: np.ndarray          # (G, 3)
    tau: np.ndarray             # (G, N_t, N_r)
    t: np.ndarray               # (G, N_t)
    t_prime: np.ndarray         # (G, N_r)
    step_m: float


def build_grid(scene: SceneConfig, search: SearchSpec) -> GridPlan:
    center = np.asarray(scene.target if search.center is None
                        else search.center, dtype=float)
    offs = (np.linspace(-search.half_extent_m, search.half_extent_m, search.nodes)
            if search.nodes > 1 else np.zeros(1))
    meshes = np.meshgrid(*([offs] * len(search.axes)), indexing="ij")
    pts = np.tile(center, (meshes[0].size, 1))
    for ax, mesh in zip(search.axes, meshes):
        pts[:, ax] += mesh.ravel(order="C")
    d_t = np.linalg.norm(pts[:, None, :] - scene.tx[None, :, :], axis=2)
    d_r = np.linalg.norm(pts[:, None, :] - scene.rx[None, :, :], axis=2)
    step = (offs[1] - offs[0]) if search.nodes > 1 else search.half_extent_m
    return GridPlan(points=pts,
                    tau=(d_t[:, :, None] + d_r[:, None, :]) / scene.c,
                    t=d_t / scene.c, t_prime=d_r / scene.c,
                    step_m=float(abs(step)))


@dataclass
class EstimateAux:
    """Channel nuisance estimates evaluated at the final tau-hat."""

    h_hat: np.ndarray
    zeta_hat: complex | None = None


@dataclass
class EstimateResult:
    tau_hat: DelayVector
    objective: float
    kind: EstimatorKind
    aux: EstimateAux
    grid_index: int
    grid_point: np.ndarray
    sweeps: int = 0
    converged: bool = True
    search_trace: list | None = None
    # Carrier-cyclic objectives ripple with period 1/f_c in delay; any
    # error floor near (c / f_c)^2 in position MSE is that ripple, not a
    # search failure.  None for envelope-only kinds.
    oscillation_width_s: float | None = None

    def trace_csv(self) -> str:
        """Dump the accepted search steps as CSV (needs keep_trace=True)."""
        if self.search_trace is None:
            raise ValueError("estimate() was called without keep_trace=True")
        lines = ["step,objective," + ",".join(
            f"tau_{m}_{n}" for m in range(self.tau_hat.tau.shape[0])
            for n in range(self.tau_hat.tau.shape[1]))]
        for i, (dv, val) in enumerate(self.search_trace):
            flat = ",".join(repr(v) for v in dv.tau.ravel())
            lines.append(f"{i},{repr(val)},{flat}")
        return "\n".join(lines) + "\n"


def _eval_components(fc: FastCorrelator, scene, bank, kind, energy, t, tp):
    tau = t[:, None] + tp[None, :]
    if kind.is_pa:
        pa_corr, _ = fc.correlate_tone(1, tau[0, 0] - bank.window_start)
        return _objective_arrays(kind, None, pa_corr, tau, scene, bank, energy)
    corr, _ = fc.correlate(tau - bank.window_start)
    return _objective_arrays(kind, corr, None, tau, scene, bank, energy)


def _descend(fc, scene, bank, kind, energy, t, tp, step0, floor, search,
             trace):
    """Pattern descent on the stacked (t, t') vector; returns best point."""
    t = t.copy()
    tp = tp.copy()
    best = float(_eval_components(fc, scene, bank, kind, energy, t, tp))
    step = step0
    sweeps = 0
    n_t = t.size
    while step > floor and sweeps < search.max_sweeps:
        improved = False
        for j in range(n_t + tp.size):
            for sign in (1.0, -1.0):
                tt, tpp = t.copy(), tp.copy()
                if j < n_t:
                    tt[j] += sign * step
                else:
                    tpp[j - n_t] += sign * step
                tau = tt[:, None] + tpp[None, :]
                if np.any(tau <= 0) or not is_feasible(tau, scene):
                    continue
                val = float(_eval_components(fc, scene, bank, kind, energy, tt, tpp))
                if val > best:
                    best, t, tp = val, tt, tpp
                    improved = True
                    if trace is not None:
                        trace.append((DelayVector(tau=tau, t=tt, t_prime=tpp),
                                      best))
                    break
        if not improved:
            step *= search.shrink
        sweeps += 1
    return t, tp, best, sweeps


def estimate(kind, snapshot, scene: SceneConfig, bank: WaveformBank,
             energy: float | None = None, search: SearchSpec | None = None,
             plan: GridPlan | None = None,
             keep_trace: bool = False) -> EstimateResult:
    """Two-stage delay estimate for one snapshot.

    `energy` defaults to the snapshot's recorded transmit energy; pass
    `plan` to reuse a prebuilt location grid across many snapshots of
    the same scene.  Carrier-cyclic kinds (the point objectives) run
    stage one and a first descent on their phase-free envelope
    surrogate, then polish with the full objective starting from a
    quarter carrier period so the search cannot alias onto a
    neighboring carrier cycle.
    """
    kind = _as_kind(kind)
    if energy is None:
        energy = getattr(getattr(snapshot, "meta", None), "energy", None)
        if energy is None or not np.isfinite(energy):
            raise ValueError("pass energy explicitly for raw snapshots")
    if search is None:
        search = SearchSpec()
    if plan is None:
        plan = build_grid(scene, search)
    if plan.points.shape[0] == 0:
        raise ValueError("empty search region")
    r = snapshot.r if hasattr(snapshot, "r") else np.asarray(snapshot)
    fc = FastCorrelator(r, bank, scene.n_tx)

    stage1_kind = kind.envelope_kind if (kind.is_point and search.envelope_prerefine) else kind
    if stage1_kind.is_pa:
        pa_corr, _ = fc.correlate_tone_batch(plan.tau[:, 0, 0] - bank.window_start)
        vals = _objective_arrays(stage1_kind, None, pa_corr, plan.tau,
                                 scene, bank, energy)
    else:
        corr, _ = fc.correlate(plan.tau - bank.window_start)
        vals = _objective_arrays(stage1_kind, corr, None, plan.tau,
                                 scene, bank, energy)
    g = int(np.argmax(vals))     # first maximum wins ties
    t, tp = plan.t[g].copy(), plan.t_prime[g].copy()
    value = float(vals[g])
    trace = [(DelayVector(tau=plan.tau[g], t=t.copy(), t_prime=tp.copy()),
              value)] if keep_trace else None
    sweeps = 0

    if search.refine:
        floor = (bank.sample_period / 200.0 if search.coord_floor is None
                 else search.coord_floor)
        # One grid cell of delay: the largest delay change a move of one
        # grid step can make is 2 * step / c (both legs shortening).
        step0 = 2.0 * plan.step_m / scene.c
        if kind.is_point and search.envelope_prerefine:
            env_floor = max(floor, 1.0 / (8.0 * scene.carrier_freq_hz))
            t, tp, _, s1 = _descend(fc, scene, bank, kind.envelope_kind, energy,
                                    t, tp, step0, env_floor, search, trace)
            # polish within the local carrier cycle; the floor must sit
            # well below the cycle or this stage is a no-op
            phase_step = 1.0 / (4.0 * scene.carrier_freq_hz)
            phase_floor = min(floor, 1.0 / (256.0 * scene.carrier_freq_hz))
            t, tp, value, s2 = _descend(fc, scene, bank, kind, energy,
                                        t, tp, phase_step, phase_floor,
                                        search, trace)
            sweeps = s1 + s2
        else:
            t, tp, value, sweeps = _descend(fc, scene, bank, kind, energy,
                                            t, tp, step0, floor, search, trace)
    elif stage1_kind is not kind:
        value = float(_eval_components(fc, scene, bank, kind, energy, t, tp))

    tau_hat = DelayVector(tau=t[:, None] + tp[None, :], t=t, t_prime=tp)
    mf_final = matched_filter(r, bank, tau_hat, energy, scene)
    aux = EstimateAux(h_hat=estimate_h_map(mf_final))
    if kind.is_point:
        aux.zeta_hat = estimate_zeta(mf_final, scene, bank)
    width = 1.0 / scene.carrier_freq_hz if kind.is_point else None
    return EstimateResult(tau_hat=tau_hat, objective=value, kind=kind,
                          aux=aux, grid_index=g,
                          grid_point=plan.points[g].copy(),
                          sweeps=sweeps, converged=sweeps < search.max_sweeps,
                          search_trace=trace, oscillation_width_s=width)
