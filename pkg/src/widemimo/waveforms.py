"""Orthonormal transmit waveforms and their sampled correlation structure.

Transmitter m emits s_m(t) = (1/sqrt(T)) * exp(j 2 pi m t / T) gated to
0 <= t < T, so the bank is orthonormal over one duration.  The receiver
records K complex samples spaced T_s apart; sample k of a waveform
delayed by tau is s_m(k*T_s - tau), evaluated in closed form with the
rectangular gate (no interpolation).

Real scenes have absolute delays far larger than T, so the receive
window opens at `window_start` seconds: the k-th recorded sample sits at
absolute time window_start + k*T_s, and all synthesis and matched
filtering shift delays by window_start before touching the closed form.
The window must also outlast the latest echo: a delay estimator only
sees where a waveform ends if the end lies inside the window, so the
recorded sample count K exceeds one duration's worth (T/T_s) by the
scene's delay spread plus a guard.  `bank_for_scene` sizes this
automatically; grams quantify the loss whenever a window is too short.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WaveformBank:
    """Sampled bank of gated complex exponentials.

    Attributes
    ----------
    n_waveforms : int
        Number of transmit waveforms (indices 1..n_waveforms enter the
        closed form as the tone number).
    duration : float
        Waveform duration T in seconds.
    sample_period : float
        Receiver sampling period T_s in seconds.
    num_samples : int
        Number of recorded samples K (k = 1..K).  May exceed one
        duration's worth of samples so that late echoes end inside the
        window; `slack` reports the excess.
    window_start : float
        Absolute time at which the receive window opens; sample k is
        taken at window_start + k * sample_period.
    eps_orth : float
        Declared orthogonality tolerance on |gram| * T_s for m != n.
    literal_sampling : bool
        True when the bank was built with the coarse T_s = T/10 grid
        (kept for compatibility); the default grid is T_s = T/K.
    """

    n_waveforms: int
    duration: float = 1e-4
    sample_period: float = 2.5e-6
    num_samples: int = 40
    window_start: float = 0.0
    eps_orth: float = 1e-3
    literal_sampling: bool = False

    def __post_init__(self):
        if self.n_waveforms < 1:
            raise ValueError("need at least one waveform")
        if self.duration <= 0 or self.sample_period <= 0:
            raise ValueError("duration and sample_period must be positive")
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")
        if not self.literal_sampling:
            span = self.num_samples * self.sample_period
            if span > 8.0 * self.duration:
                raise ValueError("receive window longer than 8 durations; "
                                 "check num_samples / sample_period")

    @property
    def sample_times(self) -> np.ndarray:
        """Window-relative sample instants k*T_s for k = 1..K."""
        return np.arange(1, self.num_samples + 1) * self.sample_period

    @property
    def wave_samples(self) -> int:
        """Samples spanned by one waveform duration (T / T_s, rounded)."""
        return int(round(self.duration / self.sample_period))

    @property
    def slack(self) -> float:
        """Fractional excess of the window over one duration, >= 0."""
        return max(0.0, self.num_samples * self.sample_period
                   / self.duration - 1.0)


def make_bank(n_waveforms: int, duration: float = 1e-4,
              num_samples: int = 40, literal_sampling: bool = False,
              window_start: float = 0.0, window_pad: int = 0,
              eps_orth: float = 1e-3) -> WaveformBank:
    """Construct a bank with the standard sampling grid.

    The default grid spaces samples so that `num_samples` of them span
    exactly one duration (T_s = T/num_samples); `window_pad` extra
    samples lengthen the receive window beyond that duration so delayed
    echoes end inside it.  `literal_sampling` instead uses T_s = T/10
    regardless of the count, reproducing a coarser historical
    convention in which samples beyond k = 10 fall outside the gate and
    read zero.
    """
    if literal_sampling:
        ts = duration / 10.0
    else:
        if num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        ts = duration / num_samples
    if window_pad < 0:
        raise ValueError("window_pad must be >= 0")
    return WaveformBank(n_waveforms=n_waveforms, duration=duration,
                        sample_period=ts, num_samples=num_samples + window_pad,
                        window_start=window_start, eps_orth=eps_orth,
                        literal_sampling=literal_sampling)


def bank_for_scene(scene, n_waveforms: int | None = None,
                   duration: float = 1e-4, num_samples: int = 40,
                   guard: int = 2, eps_orth: float = 1e-3) -> WaveformBank:
    """Bank whose receive window brackets every echo of a scene.

    Opens the window half a sample before the earliest true delay and
    pads it so the latest echo's full duration, plus `guard` samples,
    fits inside.  Delay searches near the true target then see complete
    waveform support at every candidate.
    """
    from .geometry import true_delays
    tau = true_delays(scene).tau
    ts = duration / num_samples
    start = float(tau.min()) - 0.5 * ts
    spread = float(tau.max() - tau.min())
    pad = int(np.ceil((spread + ts) / ts)) + guard
    n_wav = scene.n_tx if n_waveforms is None else n_waveforms
    return make_bank(n_wav, duration=duration, num_samples=num_samples,
                     window_start=start, window_pad=pad, eps_orth=eps_orth)


def sample(bank: WaveformBank, m: int, k: int, tau: float) -> complex:
    """Value of waveform m, delayed by tau, at sample instant k.

    Computes s_m(k*T_s - tau) from the closed form including the
    rectangular gate: zero whenever k*T_s - tau falls outside [0, T).
    Indices are the physical ones, m in 1..n_waveforms and k in 1..K
    (m enters the complex exponential as the tone number).
    """
    if not 1 <= m <= bank.n_waveforms:
        raise ValueError(f"waveform index m={m} outside 1..{bank.n_waveforms}")
    if not 1 <= k <= bank.num_samples:
        raise ValueError(f"sample index k={k} outside 1..{bank.num_samples}")
    t_k = k * bank.sample_period
    if t_k < tau or t_k >= tau + bank.duration:
        return 0.0 + 0.0j
    t = t_k - tau
    return np.exp(2j * np.pi * m * t / bank.duration) / np.sqrt(bank.duration)


def sample_row(bank: WaveformBank, m: int, tau: float) -> np.ndarray:
    """All K samples of waveform m delayed by tau (window-relative)."""
    gate = (bank.sample_times >= tau) & (bank.sample_times < tau + bank.duration)
    t = bank.sample_times - tau
    out = np.zeros(bank.num_samples, dtype=complex)
    if np.any(gate):
        out[gate] = np.exp(2j * np.pi * m * t[gate] / bank.duration)
        out[gate] /= np.sqrt(bank.duration)
    return out


def sample_matrix(bank: WaveformBank, tau_abs: np.ndarray) -> np.ndarray:
    """Sampled waveforms for a full (N_t, N_r) matrix of absolute delays.

    Entry [m, n, k] is waveform m+1 delayed by tau_abs[m, n], observed
    through the receive window (the window offset is applied here).
    """
    tau = np.asarray(tau_abs, dtype=float) - bank.window_start
    n_t, n_r = tau.shape
    if n_t > bank.n_waveforms:
        raise ValueError("more delay rows than waveforms in the bank")
    times = bank.sample_times[None, None, :]
    gate = (times >= tau[:, :, None]) & (times < (tau + bank.duration)[:, :, None])
    t = times - tau[:, :, None]
    m = np.arange(1, n_t + 1, dtype=float)[:, None, None]
    vals = np.exp(2j * np.pi * m * t / bank.duration) / np.sqrt(bank.duration)
    return np.where(gate, vals, 0.0)


def gram(bank: WaveformBank, tau_a: float, tau_b: float,
         m: int, n: int) -> complex:
    """Sampled correlation sum_k s_m[k; tau_a] * conj(s_n[k; tau_b]).

    Delays are window-relative, matching `sample`.  With both supports
    fully inside the window this is (1/T_s) when m == n and
    tau_a == tau_b, and zero for m != n at equal delays; unequal delays
    leak a partial geometric sum, and supports cut by the window edge
    lose diagonal energy.
    """
    if bank.num_samples == 0:
        return 0.0 + 0.0j
    a = sample_row(bank, m, tau_a)
    b = sample_row(bank, n, tau_b)
    return complex(np.sum(a * np.conj(b)))


def gram_matrix(bank: WaveformBank, tau_abs_col: np.ndarray) -> np.ndarray:
    """Cross-gram of all bank waveforms at a column of absolute delays.

    `tau_abs_col` has one delay per waveform (length N_t' <= n_waveforms);
    entry [i, j] is sum_k s_{i+1}[k; tau_i] * conj(s_{j+1}[k; tau_j])
    with window offsets applied.  This is the noise covariance of the
    matched-filter outputs at one receiver.
    """
    tau = np.asarray(tau_abs_col, dtype=float)
    s = sample_matrix(bank, tau[:, None])[:, 0, :]  # (N_t', K)
    return s @ np.conj(s.T)


def orthogonality_report(bank: WaveformBank, delay_spread: float,
                         grid: int = 33) -> dict:
    """Measure worst-case gram deviations over a window-relative spread.

    Scans pairs of relative delays in [0, delay_spread] on a uniform
    grid and reports, scaled by T_s: the largest off-diagonal |gram|
    (cross-talk between distinct waveforms) and the largest deviation of
    the matched diagonal gram from 1 (energy lost to the gate).
    """
    if delay_spread < 0:
        raise ValueError("delay_spread must be >= 0")
    taus = np.linspace(0.0, delay_spread, grid) if delay_spread > 0 else np.array([0.0])
    s = []
    for tau in taus:
        rows = np.vstack([sample_row(bank, m, tau)
                          for m in range(1, bank.n_waveforms + 1)])
        s.append(rows)
    s = np.array(s)  # (grid, N_t, K)
    ts = bank.sample_period
    worst_cross = 0.0
    worst_diag = 0.0
    for ia in range(len(taus)):
        g = np.einsum("mk,bnk->bmn", s[ia], np.conj(s))  # vs all other delays
        mags = np.abs(g) * ts
        eye = np.eye(bank.n_waveforms, dtype=bool)
        worst_cross = max(worst_cross, float(mags[:, ~eye].max()) if bank.n_waveforms > 1 else 0.0)
        diag_matched = np.abs(g[ia][eye] * ts - 1.0)
        worst_diag = max(worst_diag, float(diag_matched.max()))
    return {
        "delay_spread": float(delay_spread),
        "worst_cross": float(worst_cross),
        "worst_diag_deficit": float(worst_diag),
        "eps_orth_declared": float(bank.eps_orth),
    }
