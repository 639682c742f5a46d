"""Likelihood-ratio target detection with analytic false-alarm control.

The detector compares the estimation objective, evaluated at the
estimated delay matrix, against a threshold chosen so the false-alarm
probability is exactly `pfa` under the noise-only hypothesis with the
delay estimate held fixed.  With the delays fixed the statistics are
quadratic forms in circular Gaussians, so their null laws are sums of
independent exponentials:

  mimo_extended   sum_{m,n} |b_mn|^2 / l_mn     hypoexponential
  mimo_point      |sum w_mn b_mn|^2             single exponential
  pa_extended     |sum_n conj(S_n) b_n|^2       single exponential
  pa_point        same with reflected steering  single exponential

Rates come from the correlator covariance: per receiver, b_n is
CN(0, Gamma_n) with Gamma_n the waveform gram matrix at the candidate
column delays, so the weighted-sum statistic has rates equal to the
reciprocal eigenvalues of W^(1/2) Gamma_n W^(1/2).  With orthogonal
gate-complete waveforms Gamma = I / T_s and the rates collapse to the
textbook T_s * l_mn; the eigenvalue route keeps the threshold exact
when residual cross-correlation or gate clipping perturbs Gamma.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .geometry import SceneConfig, DelayVector
from .waveforms import WaveformBank, gram
from .synth import ctau_pow
from .estimation import (EstimatorKind, MatchedFilterBank, matched_filter,
                         _steering, _as_kind)


class DetectorKind(str, enum.Enum):
    MIMO_EXTENDED = "mimo_extended"
    MIMO_POINT = "mimo_point"
    PA_EXTENDED = "pa_extended"
    PA_POINT = "pa_point"


_FROM_ESTIMATOR = {
    EstimatorKind.MIMO_EXTENDED_MAP: DetectorKind.MIMO_EXTENDED,
    EstimatorKind.MIMO_EXTENDED_AVE: DetectorKind.MIMO_EXTENDED,
    EstimatorKind.MIMO_POINT: DetectorKind.MIMO_POINT,
    EstimatorKind.PA_EXTENDED_MAP: DetectorKind.PA_EXTENDED,
    EstimatorKind.PA_EXTENDED_AVE: DetectorKind.PA_EXTENDED,
    EstimatorKind.PA_POINT: DetectorKind.PA_POINT,
}


def detector_for(kind) -> DetectorKind:
    """Map an estimator kind (or name) to the matching detector."""
    if isinstance(kind, DetectorKind):
        return kind
    if isinstance(kind, EstimatorKind):
        return _FROM_ESTIMATOR[kind]
    s = str(kind)
    try:
        return DetectorKind(s)
    except ValueError:
        return _FROM_ESTIMATOR[EstimatorKind(s)]


# ---------------------------------------------------------------------------
# Hypoexponential law


class Hypoexponential:
    """Sum of independent exponentials with arbitrary positive rates.

    Evaluation runs through uniformization: the sum is the absorption
    time of a pure-birth chain, so the survival function is a Poisson
    mixture of the chain's transient mass,

        P(X > x) = sum_k Poisson(k; L x) * s_k,   L = max rate,

    with s_k computed by a stable nonneg recursion.  Repeated or nearly
    equal rates need no special casing, unlike the partial-fraction
    expansion (kept as `sf_distinct` for cross-checks) whose weights
    blow up as rates collide.
    """

    def __init__(self, rates):
        rates = np.sort(np.asarray(rates, dtype=float))[::-1]
        if rates.size == 0:
            raise ValueError("need at least one rate")
        if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
            raise ValueError("rates must be positive and finite")
        self.rates = rates

    @property
    def mean(self) -> float:
        return float(np.sum(1.0 / self.rates))

    @property
    def var(self) -> float:
        return float(np.sum(1.0 / self.rates**2))

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        pos = x > 0
        if np.any(pos):
            out[pos] = self._sf_positive(x[pos])
        return out if out.ndim else float(out)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def _sf_positive(self, x: np.ndarray) -> np.ndarray:
        lam = self.rates
        big = lam[0]
        stay = 1.0 - lam / big
        move = lam / big
        z = big * x                                   # (B,)
        logz = np.log(z)
        k_cap = int(np.max(z + 12.0 * np.sqrt(z + 1.0) + 40.0))
        v = np.zeros((lam.size, x.size))
        v[0] = 1.0                                    # mass per stage
        surv = np.zeros_like(x)
        for k in range(k_cap + 1):
            s_k = v.sum(axis=0)
            if not np.any(s_k > 1e-18):
                break
            log_pois = -z + k * logz - gammaln(k + 1)
            surv += np.exp(log_pois) * s_k
            shifted = v[:-1] * move[:-1, None]
            v = v * stay[:, None]
            v[1:] += shifted
        return np.minimum(surv, 1.0)

    def sf_distinct(self, x):
        """Partial-fraction survival; requires well-separated rates."""
        lam = self.rates
        rel_gap = np.min(np.abs(lam[:, None] - lam[None, :])
                         + np.diag(np.full(lam.size, np.inf))) / lam[0]
        if lam.size > 1 and rel_gap < 1e-6:
            raise ValueError("rates too close for the distinct-rate form")
        w = np.empty(lam.size)
        for i in range(lam.size):
            others = np.delete(lam, i)
            w[i] = np.prod(others / (others - lam[i]))
        x = np.asarray(x, dtype=float)
        return np.clip(np.sum(w * np.exp(-np.outer(x, lam)), axis=1), 0.0, 1.0)

    def quantile(self, p: float) -> float:
        """Inverse CDF by bracketed bisection; p in (0, 1)."""
        if not 0.0 < p < 1.0:
            raise ValueError("p must lie strictly inside (0, 1)")
        hi = self.mean + 12.0 * np.sqrt(self.var)
        while self.cdf(hi) < p:
            hi *= 2.0
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < p:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return 0.5 * (lo + hi)


def hypoexp_cdf(d: Hypoexponential, x):
    return d.cdf(x)


def hypoexp_quantile(d: Hypoexponential, p: float) -> float:
    return d.quantile(p)


# ---------------------------------------------------------------------------
# Statistics


def _point_weights(scene: SceneConfig, tau: np.ndarray) -> np.ndarray:
    """Coherent combining weights for the single-reflector statistic."""
    return np.exp(-scene.path_loss_exp * np.log(tau)) * np.exp(
        2j * np.pi * scene.carrier_freq_hz * tau)


def statistic(kind, mf: MatchedFilterBank, scene: SceneConfig,
              bank: WaveformBank) -> float:
    """Detection statistic from matched-filter outputs at tau-hat."""
    kind = detector_for(kind)
    if kind is DetectorKind.MIMO_EXTENDED:
        return float(np.sum(np.abs(mf.b) ** 2 / mf.l))
    if kind is DetectorKind.MIMO_POINT:
        w = _point_weights(scene, mf.tau)
        return float(np.abs(np.sum(w * mf.corr)) ** 2)
    if kind is DetectorKind.PA_EXTENDED:
        s_n = _steering(scene, mf.tau, reflected=False)
        return float(np.abs(np.sum(np.conj(s_n) * mf.pa_corr)) ** 2)
    if kind is DetectorKind.PA_POINT:
        s_n = _steering(scene, mf.tau, reflected=True)
        return float(np.abs(np.sum(np.conj(s_n) * mf.pa_corr)) ** 2)
    raise ValueError(f"unknown detector kind {kind!r}")


# ---------------------------------------------------------------------------
# Null law and thresholds


def _gram_matrix(bank: WaveformBank, tau_col: np.ndarray) -> np.ndarray:
    """Waveform gram matrix at one receiver's column of delays."""
    m = tau_col.size
    g = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            g[i, j] = gram(bank, tau_col[i], tau_col[j], i + 1, j + 1)
    return g


def null_rates(scene: SceneConfig, bank: WaveformBank, tau_hat,
               energy: float) -> np.ndarray:
    """Exponential rates of the extended-statistic null law at tau-hat.

    Per receiver the statistic adds sum_m |b_mn|^2 / l_mn, a weighted
    norm of CN(0, Gamma_n); its law is a rate vector equal to the
    reciprocal nonzero eigenvalues of W^(1/2) Gamma_n W^(1/2) with
    W = diag(1 / l).  Eigenvalues below 1e-12 of the largest are
    dropped as numerically zero (fully clipped gates contribute no
    noise power).
    """
    tau = tau_hat.tau if isinstance(tau_hat, DelayVector) else np.asarray(tau_hat)
    beta = scene.path_loss_exp
    rel = tau - bank.window_start
    l = energy / (bank.sample_period * scene.n_tx) + ctau_pow(scene.c, tau, 2 * beta)
    rates = []
    for n in range(tau.shape[1]):
        g = _gram_matrix(bank, rel[:, n])
        w_half = np.diag(1.0 / np.sqrt(l[:, n]))
        mat = w_half @ g @ w_half
        mu = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
        mu = mu[mu > 1e-12 * max(mu.max(), 1e-300)]
        rates.extend(1.0 / mu)
    if not rates:
        raise ValueError("null law degenerate: no gate overlaps the window")
    return np.asarray(rates, dtype=float)


def _exponential_mean(kind: DetectorKind, scene: SceneConfig,
                      bank: WaveformBank, tau: np.ndarray) -> float:
    """Null mean of the single-exponential statistics (quadratic form)."""
    rel = tau - bank.window_start
    if kind is DetectorKind.MIMO_POINT:
        w = _point_weights(scene, tau)
        total = 0.0
        for n in range(tau.shape[1]):
            g = _gram_matrix(bank, rel[:, n])
            total += float(np.real(np.vdot(w[:, n], g @ w[:, n])))
        return total
    s_n = _steering(scene, tau, reflected=(kind is DetectorKind.PA_POINT))
    g11 = float(np.real(gram(bank, rel[0, 0], rel[0, 0], 1, 1)))
    return g11 * float(np.sum(np.abs(s_n) ** 2))


def null_law(kind, tau_hat, scene: SceneConfig, bank: WaveformBank,
             energy: float) -> Hypoexponential:
    """Analytic noise-only law of the statistic with tau-hat held fixed."""
    kind = detector_for(kind)
    tau = tau_hat.tau if isinstance(tau_hat, DelayVector) else np.asarray(tau_hat)
    if kind is DetectorKind.MIMO_EXTENDED:
        return Hypoexponential(null_rates(scene, bank, tau, energy))
    mean = _exponential_mean(kind, scene, bank, tau)
    if mean <= 0:
        raise ValueError("null law degenerate: zero statistic variance")
    return Hypoexponential([1.0 / mean])


def threshold(kind, tau_hat, scene: SceneConfig, bank: WaveformBank,
              energy: float, pfa: float) -> float:
    """Threshold with exact false-alarm rate under the fixed-delay null.

    pfa = 1 returns 0: the statistic is positive almost surely, so a
    zero threshold fires always (the ROC's right endpoint).
    """
    if pfa == 1.0:
        return 0.0
    if not 0.0 < pfa < 1.0:
        raise ValueError("pfa must lie in (0, 1]")
    return null_law(kind, tau_hat, scene, bank, energy).quantile(1.0 - pfa)


# ---------------------------------------------------------------------------
# Decision


@dataclass
class DetectionOutcome:
    statistic: float
    threshold: float
    decision: str               # "H1" target present, "H0" noise only
    pfa_target: float
    kind: DetectorKind

    @property
    def detected(self) -> bool:
        return self.decision == "H1"


def detect(kind, snapshot, estimate_result, scene: SceneConfig,
           bank: WaveformBank, energy: float, pfa: float) -> DetectionOutcome:
    """Threshold test at the estimated delays.

    The estimate must come from an estimator whose objective matches
    this detector family; mixing, say, a point-target delay estimate
    into the extended-target statistic silently changes the null law,
    so it is rejected.  Declares H1 only on strict exceedance: the
    statistic is continuous, so the boundary carries no probability,
    and ties in exported tables stay reproducible.
    """
    kind = detector_for(kind)
    if detector_for(estimate_result.kind) is not kind:
        raise ValueError(
            f"estimate kind {estimate_result.kind.value!r} does not match "
            f"detector {kind.value!r}")
    mf = matched_filter(snapshot, bank, estimate_result.tau_hat, energy, scene)
    stat = statistic(kind, mf, scene, bank)
    theta = threshold(kind, estimate_result.tau_hat, scene, bank, energy, pfa)
    return DetectionOutcome(statistic=stat, threshold=theta,
                            decision="H1" if stat > theta else "H0",
                            pfa_target=float(pfa), kind=kind)


# ---------------------------------------------------------------------------
# Null-law sampling (calibration checks)


def sample_null_statistics(kind, tau_hat, scene: SceneConfig,
                           bank: WaveformBank, energy: float, n: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Draw the statistic under noise only with tau-hat held fixed.

    Samples the correlator outputs directly from their joint Gaussian
    law (per receiver, CN(0, Gamma_n)) instead of synthesizing full
    snapshots, so large calibration runs stay cheap.
    """
    kind = detector_for(kind)
    tau = tau_hat.tau if isinstance(tau_hat, DelayVector) else np.asarray(tau_hat)
    rel = tau - bank.window_start
    n_t, n_r = tau.shape
    beta = scene.path_loss_exp
    if kind in (DetectorKind.PA_EXTENDED, DetectorKind.PA_POINT):
        # single shared waveform: per-receiver scalar output at tau[0, 0]
        g11 = float(np.real(gram(bank, rel[0, 0], rel[0, 0], 1, 1)))
        u = np.sqrt(g11 / 2.0) * (rng.standard_normal((n, n_r))
                                  + 1j * rng.standard_normal((n, n_r)))
        s_n = _steering(scene, tau, reflected=(kind is DetectorKind.PA_POINT))
        return np.abs(u @ np.conj(s_n)) ** 2
    cols = []
    for j in range(n_r):
        g = _gram_matrix(bank, rel[:, j])
        chol = np.linalg.cholesky(0.5 * (g + g.conj().T)
                                  + 1e-300 * np.eye(n_t))
        z = (rng.standard_normal((n, n_t)) + 1j * rng.standard_normal((n, n_t))) / np.sqrt(2.0)
        cols.append(z @ chol.T)      # E[b_i b_j*] = G_ij per row
    b = np.stack(cols, axis=2)                        # (n, N_t, N_r)
    if kind is DetectorKind.MIMO_EXTENDED:
        l = energy / (bank.sample_period * scene.n_tx) + ctau_pow(
            scene.c, tau, 2 * beta)
        return np.sum(np.abs(b) ** 2 / l, axis=(1, 2))
    w = _point_weights(scene, tau)
    return np.abs(np.sum(w * np.conj(b), axis=(1, 2))) ** 2
