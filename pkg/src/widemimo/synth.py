"""Receive-snapshot synthesis for extended, point, and co-located targets.

A snapshot is the K x N_r matrix of complex baseband samples recorded by
the receivers during one coherent interval.  Under the target-present
hypothesis receiver n records

    r_n[k] = sqrt(E/N_t) * sum_m (c*tau[m,n])**-beta * h[m,n]
             * s_m[k; tau[m,n]]  +  z_n[k]

with unit-variance complex white noise z.  The channel gain h[m,n] is an
independent CN(0, 1) draw for an extended target, and zeta *
exp(-j 2 pi f_c tau[m,n]) with a single reflectivity zeta for a point
target.  Co-located (phased-array style) scenes transmit one common
waveform; the per-element carrier phases then collapse into a steering
sum over transmitters.

Randomness is counter-based (Philox) and fully keyed: a seed plus the
role split (channel draws vs noise draws) reproduces any snapshot in
isolation, so trials can run out of order or in parallel.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import SceneConfig, DelayVector, true_delays
from .waveforms import WaveformBank, sample_matrix, sample_row

# Role constants appended to the user seed so channel and noise draws
# come from distinct named streams.
_ROLE_CHANNEL = 0x67A1
_ROLE_NOISE = 0x9E3D


def _rng(seed, role: int) -> np.random.Generator:
    if seed is None:
        raise ValueError("synthesis requires an explicit seed")
    entropy = [int(v) for v in np.atleast_1d(np.asarray(seed, dtype=np.uint64))]
    ss = np.random.SeedSequence(entropy + [role])
    return np.random.Generator(np.random.Philox(ss))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) draws: unit complex variance, 1/2 per real component."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def ctau_pow(c: float, tau, p: float) -> np.ndarray:
    """(c * tau)**p computed through logs to keep huge exponents exact-ish."""
    ct = np.asarray(c * np.asarray(tau, dtype=float))
    if np.any(ct <= 0):
        raise ValueError("c * tau must be positive")
    return np.exp(p * np.log(ct))


@dataclass(frozen=True)
class SnrSpec:
    """Target signal-to-noise ratio and the convention defining it.

    convention "received" solves the transmit energy E so that the
    per-path matched-filter SNR, E * (c*tau_ref)**(-2 beta) / (N_t T_s),
    equals the requested ratio at the scene's reference delay.  The
    reference is the generalized mean with (c*tau_ref)**(-2 beta) equal
    to the average of (c*tau[m,n])**(-2 beta) over cells, which makes
    the cell-averaged post-filter SNR match the request exactly.

    convention "transmit" uses E = snr * T, leaving path loss in: the
    numbers are astronomically small at realistic ranges, but the knob
    exists for comparisons that want to hold radiated energy fixed.
    """

    snr_db: float
    convention: str = "received"

    def __post_init__(self):
        if self.convention not in ("received", "transmit"):
            raise ValueError("convention must be 'received' or 'transmit'")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @property
    def linear(self) -> float:
        return float(10.0 ** (self.snr_db / 10.0))


def energy_for_snr(snr: SnrSpec, scene: SceneConfig, bank: WaveformBank,
                   tau: DelayVector | None = None,
                   steering: str | None = None) -> float:
    """Transmit energy E realizing `snr` for the given scene and bank.

    `steering` selects the co-located-array reading of "received": the
    per-element quantity at a receiver is the whole cluster's steered
    sum, so E is solved against mean_n |S_n|**2 instead of the per-path
    loss.  Pass "extended" or "point" to match the array's target model
    (the point model steers with the reflected phase); None keeps the
    per-path convention used for widely spaced antennas.
    """
    if snr.convention == "transmit":
        return snr.linear * bank.duration
    if tau is None:
        tau = true_delays(scene)
    n_t = tau.tau.shape[0]
    if steering is not None:
        if steering not in ("extended", "point"):
            raise ValueError("steering must be 'extended', 'point', or None")
        s_n = steering_sums(scene, tau, reflected=(steering == "point"))
        gain = float(np.mean(np.abs(s_n) ** 2))
    else:
        beta = scene.path_loss_exp
        gain = float(np.mean(ctau_pow(scene.c, tau.tau, -2.0 * beta)))
    return snr.linear * n_t * bank.sample_period / gain


@dataclass
class ChannelRealization:
    """Concrete channel draw used for one snapshot.

    kind "extended" carries an (N_t, N_r) gain matrix; "point" carries a
    scalar reflectivity; the co-located variants carry a scalar gain
    ("pa_extended") or reflectivity ("pa_point").
    """

    kind: str
    gains: np.ndarray | None = None
    reflectivity: complex | None = None

    def __post_init__(self):
        if self.kind not in ("extended", "point", "pa_extended", "pa_point"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "extended" and self.gains is None:
            raise ValueError("extended channel needs a gain matrix")
        if self.kind != "extended" and self.reflectivity is None:
            raise ValueError(f"{self.kind} channel needs a scalar reflectivity")


def scatterer_gains(scene: SceneConfig, seed, target=None) -> np.ndarray:
    """Channel gains built from discrete scatterers around the target.

    Draws `scene.num_scatterers` point scatterers uniformly in a ball of
    radius `scene.target_radius_m` around the target, each with a
    CN(0, 1/P) reflectivity, and sums their carrier phasors per antenna
    pair.  For widely separated antennas the per-pair phases decorrelate
    and the resulting gains behave as independent CN(0, 1) draws; this
    is the physical construction the white extended-target channel
    stands in for.
    """
    rng = _rng(seed, _ROLE_CHANNEL)
    x0 = scene.target if target is None else np.asarray(target, dtype=float)
    p = scene.num_scatterers
    # Uniform in a ball via rejection-free radius transform.
    direc = rng.standard_normal((p, 3))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    radii = scene.target_radius_m * rng.random(p) ** (1.0 / 3.0)
    pts = x0[None, :] + direc * radii[:, None]
    zeta = complex_normal(rng, p) / np.sqrt(p)
    d_t = np.linalg.norm(pts[:, None, :] - scene.tx[None, :, :], axis=2)
    d_r = np.linalg.norm(pts[:, None, :] - scene.rx[None, :, :], axis=2)
    tau_p = (d_t[:, :, None] + d_r[:, None, :]) / scene.c  # (P, N_t, N_r)
    phases = np.exp(-2j * np.pi * scene.carrier_freq_hz * tau_p)
    return np.einsum("p,pmn->mn", zeta, phases)


@dataclass
class SnapshotMeta:
    scene_hash: str
    snr_db: float
    snr_convention: str
    energy: float
    seed: object
    hypothesis: str             # "H0" or "H1"
    kind: str                   # channel kind, or "null"
    tau_true: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "scene_hash": self.scene_hash,
            "snr_db": self.snr_db,
            "snr_convention": self.snr_convention,
            "energy": self.energy,
            "seed": np.atleast_1d(np.asarray(self.seed)).astype(int).tolist()
            if self.seed is not None else None,
            "hypothesis": self.hypothesis,
            "kind": self.kind,
            "tau_true": None if self.tau_true is None else self.tau_true.tolist(),
        }


@dataclass
class SnapshotMatrix:
    """One coherent interval of receive samples plus its provenance."""

    r: np.ndarray               # (K, N_r) complex
    meta: SnapshotMeta
    channel: ChannelRealization | None = None

    @property
    def num_samples(self) -> int:
        return self.r.shape[0]

    @property
    def n_rx(self) -> int:
        return self.r.shape[1]


def _noise(scene: SceneConfig, bank: WaveformBank, seed,
           noise_scale: float) -> np.ndarray:
    z = complex_normal(_rng(seed, _ROLE_NOISE), (bank.num_samples, scene.n_rx))
    return z * noise_scale


def _resolve_energy(snr: SnrSpec | None, scene, bank, tau, energy,
                    steering: str | None = None):
    if energy is not None:
        return float(energy), (snr.snr_db if snr is not None else float("nan"))
    if snr is None:
        raise ValueError("need an SnrSpec or an explicit energy")
    return energy_for_snr(snr, scene, bank, tau, steering), snr.snr_db


def synth_extended(scene: SceneConfig, bank: WaveformBank, tau: DelayVector,
                   snr: SnrSpec | None, seed, channel: ChannelRealization | None = None,
                   noise_scale: float = 1.0, energy: float | None = None,
                   use_scatterers: bool = False) -> SnapshotMatrix:
    """Snapshot with an extended target at the delays `tau`.

    Gains are i.i.d. CN(0, 1) per transmit-receive pair (the white
    channel the scatterer construction justifies); pass
    `use_scatterers=True` to draw them from the physical construction
    instead, or `channel` to inject specific gains.  `noise_scale=0`
    suppresses the noise entirely (test hook).
    """
    e, snr_db = _resolve_energy(snr, scene, bank, tau, energy)
    if channel is None:
        if use_scatterers:
            gains = scatterer_gains(scene, seed)
        else:
            gains = complex_normal(_rng(seed, _ROLE_CHANNEL),
                                   (scene.n_tx, scene.n_rx))
        channel = ChannelRealization(kind="extended", gains=gains)
    beta = scene.path_loss_exp
    amp = np.sqrt(e / scene.n_tx) * ctau_pow(scene.c, tau.tau, -beta)
    s = sample_matrix(bank, tau.tau)                     # (N_t, N_r, K)
    sig = np.einsum("mn,mnk->kn", amp * channel.gains, s)
    r = sig + _noise(scene, bank, seed, noise_scale)
    conv = snr.convention if snr is not None else "energy"
    meta = SnapshotMeta(scene.content_hash(), snr_db, conv, e, seed,
                        "H1", "extended", tau.tau.copy())
    return SnapshotMatrix(r=r, meta=meta, channel=channel)


def synth_point(scene: SceneConfig, bank: WaveformBank, tau: DelayVector,
                snr: SnrSpec | None, seed, channel: ChannelRealization | None = None,
                noise_scale: float = 1.0, energy: float | None = None,
                zeta_mode: str = "unit_phase") -> SnapshotMatrix:
    """Snapshot with a point target: one reflectivity, carrier phases.

    The gain of pair (m, n) is zeta * exp(-j 2 pi f_c tau[m, n]).
    zeta_mode picks the reflectivity law: "unit_phase" (|zeta| = 1,
    uniform phase, the default), "fixed_one" (zeta = 1), or "rayleigh"
    (CN(0, 1)).
    """
    e, snr_db = _resolve_energy(snr, scene, bank, tau, energy)
    if channel is None:
        rng = _rng(seed, _ROLE_CHANNEL)
        if zeta_mode == "unit_phase":
            zeta = np.exp(2j * np.pi * rng.random())
        elif zeta_mode == "fixed_one":
            zeta = 1.0 + 0.0j
        elif zeta_mode == "rayleigh":
            zeta = complex(complex_normal(rng, ()))
        else:
            raise ValueError(f"unknown zeta_mode {zeta_mode!r}")
        channel = ChannelRealization(kind="point", reflectivity=zeta)
    beta = scene.path_loss_exp
    f_c = scene.carrier_freq_hz
    gains = channel.reflectivity * np.exp(-2j * np.pi * f_c * tau.tau)
    amp = np.sqrt(e / scene.n_tx) * ctau_pow(scene.c, tau.tau, -beta)
    s = sample_matrix(bank, tau.tau)
    sig = np.einsum("mn,mnk->kn", amp * gains, s)
    r = sig + _noise(scene, bank, seed, noise_scale)
    conv = snr.convention if snr is not None else "energy"
    meta = SnapshotMeta(scene.content_hash(), snr_db, conv, e, seed,
                        "H1", "point", tau.tau.copy())
    return SnapshotMatrix(r=r, meta=meta, channel=channel)


def steering_sums(scene: SceneConfig, tau: DelayVector,
                  reflected: bool = False) -> np.ndarray:
    """Per-receiver transmit steering sums for co-located scenes.

    Element n is sum_m (c tau[m,n])**-beta * exp(j 2 pi f_c
    (tau[1,1] - tau[m,n])); with `reflected=True` the phase argument is
    tau[1,1] - 2 tau[m,n], the form a point target's conjugated carrier
    produces.  All transmit weights are one (uniform illumination).
    """
    beta = scene.path_loss_exp
    f_c = scene.carrier_freq_hz
    loss = ctau_pow(scene.c, tau.tau, -beta)
    ref = tau.tau[0, 0]
    factor = 2.0 if reflected else 1.0
    phases = np.exp(2j * np.pi * f_c * (ref - factor * tau.tau))
    return np.sum(loss * phases, axis=0)  # (N_r,)


def synth_phased_array(scene: SceneConfig, bank: WaveformBank,
                       tau: DelayVector, snr: SnrSpec | None, seed,
                       channel: ChannelRealization | None = None,
                       noise_scale: float = 1.0, energy: float | None = None,
                       target_model: str = "extended") -> SnapshotMatrix:
    """Snapshot for a co-located array transmitting one common waveform.

    All transmitters radiate s_1 with unit weights; for a cluster the
    per-element envelope delays are indistinguishable, so receiver n
    sees the common waveform at tau[1,1] scaled by its steering sum:

        r_n[k] = sqrt(E/N_t) * g * S_n * s_1[k; tau[1,1]] + z_n[k]

    with g a single CN(0, 1) gain for an extended target, or a unit
    reflectivity phasor and the reflected steering sum for a point one.
    """
    if target_model not in ("extended", "point"):
        raise ValueError("target_model must be 'extended' or 'point'")
    e, snr_db = _resolve_energy(snr, scene, bank, tau, energy,
                                steering=target_model)
    if channel is None:
        rng = _rng(seed, _ROLE_CHANNEL)
        if target_model == "extended":
            channel = ChannelRealization(kind="pa_extended",
                                         reflectivity=complex(complex_normal(rng, ())))
        else:
            channel = ChannelRealization(kind="pa_point",
                                         reflectivity=np.exp(2j * np.pi * rng.random()))
    s_n = steering_sums(scene, tau, reflected=(target_model == "point"))
    wave = sample_row(bank, 1, tau.tau[0, 0] - bank.window_start)  # (K,)
    amp = np.sqrt(e / scene.n_tx) * channel.reflectivity
    sig = amp * s_n[None, :] * wave[:, None]
    r = sig + _noise(scene, bank, seed, noise_scale)
    conv = snr.convention if snr is not None else "energy"
    meta = SnapshotMeta(scene.content_hash(), snr_db, conv, e, seed, "H1",
                        channel.kind, tau.tau.copy())
    return SnapshotMatrix(r=r, meta=meta, channel=channel)


def synth_null(scene: SceneConfig, bank: WaveformBank, seed,
               snr: SnrSpec | None = None, energy: float | None = None) -> SnapshotMatrix:
    """Noise-only snapshot (target absent).

    The SNR/energy arguments only annotate the metadata so detection
    code can recover the E it was calibrated for; the samples are pure
    CN(0, 1) noise either way.
    """
    e = float("nan")
    snr_db = float("nan")
    conv = "none"
    if energy is not None or snr is not None:
        tau = true_delays(scene)
        e, snr_db = _resolve_energy(snr, scene, bank, tau, energy)
        conv = snr.convention if snr is not None else "energy"
    r = _noise(scene, bank, seed, 1.0)
    meta = SnapshotMeta(scene.content_hash(), snr_db, conv, e, seed,
                        "H0", "null", None)
    return SnapshotMatrix(r=r, meta=meta, channel=None)


def save_snapshot(snap: SnapshotMatrix, path_prefix: str) -> tuple:
    """Write samples as little-endian interleaved float64 plus metadata.

    Produces `<prefix>.bin` holding re/im pairs in row-major (K, N_r)
    order and `<prefix>.json` with the provenance.  Returns both paths.
    """
    bin_path = f"{path_prefix}.bin"
    json_path = f"{path_prefix}.json"
    inter = np.empty(snap.r.shape + (2,), dtype="<f8")
    inter[..., 0] = snap.r.real
    inter[..., 1] = snap.r.imag
    with open(bin_path, "wb") as f:
        f.write(inter.tobytes(order="C"))
    payload = dict(snap.meta.to_dict())
    payload["shape"] = list(snap.r.shape)
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
    return bin_path, json_path


def load_snapshot(path_prefix: str) -> SnapshotMatrix:
    """Inverse of `save_snapshot`."""
    with open(f"{path_prefix}.json") as f:
        payload = json.load(f)
    shape = tuple(payload.pop("shape"))
    raw = np.fromfile(f"{path_prefix}.bin", dtype="<f8").reshape(shape + (2,))
    r = raw[..., 0] + 1j * raw[..., 1]
    tau = payload.get("tau_true")
    meta = SnapshotMeta(
        scene_hash=payload["scene_hash"], snr_db=payload["snr_db"],
        snr_convention=payload["snr_convention"], energy=payload["energy"],
        seed=payload["seed"], hypothesis=payload["hypothesis"],
        kind=payload["kind"],
        tau_true=None if tau is None else np.asarray(tau, dtype=float))
    return SnapshotMatrix(r=r, meta=meta, channel=None)
