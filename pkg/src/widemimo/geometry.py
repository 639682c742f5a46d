"""Scene geometry: antenna layouts, propagation delays, feasible delay sets.

Positions are stored in meters.  A scene holds the transmit and receive
antenna positions, the nominal target position, the carrier frequency and
the path-loss exponent.  The n-th receiver sees the m-th transmitter's
echo after tau[m][n] = t_m + t'_n seconds, where t_m is the one-way delay
from transmitter m to the target and t'_n the one-way delay from the
target to receiver n.  Because each tau[m][n] shares its t_m with every
other receiver and its t'_n with every other transmitter, a physical
delay matrix satisfies pairwise box constraints derived from the antenna
separations; `is_feasible` checks them and `project_feasible` maps an
arbitrary matrix to the nearest separable one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s


@dataclass(frozen=True)
class SceneConfig:
    """Antenna and target geometry plus propagation constants.

    Attributes
    ----------
    tx : ndarray, shape (N_t, 3)
        Transmitter positions in meters.
    rx : ndarray, shape (N_r, 3)
        Receiver positions in meters.
    target : ndarray, shape (3,)
        Nominal target position in meters.
    carrier_freq_hz : float
        Carrier frequency f_c in Hz.
    path_loss_exp : float
        One-way path-loss exponent beta; amplitude decays as distance**-beta.
    num_scatterers : int
        Scatterer count for the extended-target channel construction.
    target_radius_m : float
        Radius of the ball around `target` in which scatterers are drawn.
    c : float
        Propagation speed in m/s.
    """

    tx: np.ndarray
    rx: np.ndarray
    target: np.ndarray
    carrier_freq_hz: float = 5e6
    path_loss_exp: float = 2.0
    num_scatterers: int = 10
    target_radius_m: float = 200.0
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        tx = np.atleast_2d(np.asarray(self.tx, dtype=float))
        rx = np.atleast_2d(np.asarray(self.rx, dtype=float))
        target = np.asarray(self.target, dtype=float).reshape(3)
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "rx", rx)
        object.__setattr__(self, "target", target)
        if tx.ndim != 2 or tx.shape[1] != 3 or tx.shape[0] < 1:
            raise ValueError("tx must be an (N_t, 3) array with N_t >= 1")
        if rx.ndim != 2 or rx.shape[1] != 3 or rx.shape[0] < 1:
            raise ValueError("rx must be an (N_r, 3) array with N_r >= 1")
        for name, arr in (("tx", tx), ("rx", rx), ("target", target)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} positions must be finite")
        if self.carrier_freq_hz <= 0:
            raise ValueError("carrier_freq_hz must be positive")
        if self.path_loss_exp <= 0:
            raise ValueError("path_loss_exp must be positive")
        if self.num_scatterers < 1:
            raise ValueError("num_scatterers must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be positive")
        # A target sitting on an antenna has zero range and an undefined
        # path loss; refuse it outright.
        d_t = np.linalg.norm(target - tx, axis=1)
        d_r = np.linalg.norm(target - rx, axis=1)
        if np.any(d_t <= 0) or np.any(d_r <= 0):
            raise ValueError("target must not coincide with an antenna")

    @property
    def n_tx(self) -> int:
        return self.tx.shape[0]

    @property
    def n_rx(self) -> int:
        return self.rx.shape[0]

    def with_target(self, target) -> "SceneConfig":
        """Copy of the scene with a different nominal target position."""
        return SceneConfig(
            tx=self.tx, rx=self.rx, target=np.asarray(target, dtype=float),
            carrier_freq_hz=self.carrier_freq_hz,
            path_loss_exp=self.path_loss_exp,
            num_scatterers=self.num_scatterers,
            target_radius_m=self.target_radius_m, c=self.c,
        )

    def to_dict(self) -> dict:
        return {
            "tx_m": self.tx.tolist(),
            "rx_m": self.rx.tolist(),
            "target_m": self.target.tolist(),
            "carrier_freq_hz": self.carrier_freq_hz,
            "path_loss_exp": self.path_loss_exp,
            "num_scatterers": self.num_scatterers,
            "target_radius_m": self.target_radius_m,
            "c": self.c,
        }

    def content_hash(self) -> str:
        """Stable short hash of the scene contents, used in file metadata."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @staticmethod
    def from_dict(d: dict) -> "SceneConfig":
        """Build a scene from a plain mapping.

        Positions may be given as ``tx_km``/``rx_km``/``target_km`` (the
        usual kilometer convention of the bundled experiment configs) or
        as ``tx_m``/``rx_m``/``target_m``.
        """
        def positions(stem):
            if f"{stem}_km" in d and f"{stem}_m" in d:
                raise ValueError(f"give {stem}_km or {stem}_m, not both")
            if f"{stem}_km" in d:
                return np.asarray(d[f"{stem}_km"], dtype=float) * 1e3
            if f"{stem}_m" in d:
                return np.asarray(d[f"{stem}_m"], dtype=float)
            raise ValueError(f"missing {stem}_km / {stem}_m")

        kwargs = {}
        for key in ("carrier_freq_hz", "path_loss_exp", "num_scatterers",
                    "target_radius_m", "c"):
            if key in d:
                kwargs[key] = d[key]
        return SceneConfig(tx=positions("tx"), rx=positions("rx"),
                           target=positions("target"), **kwargs)


@dataclass
class DelayVector:
    """An N_t x N_r matrix of transmit-to-receive delays in seconds.

    `tau[m, n]` is the total propagation delay from transmitter m via the
    target to receiver n.  When the matrix is known to be separable, the
    optional decomposition stores per-transmitter delays `t` (length N_t)
    and per-receiver delays `t_prime` (length N_r) with
    tau[m, n] = t[m] + t_prime[n].  The decomposition carries a gauge
    freedom (t + delta, t_prime - delta); only the sums are physical.
    """

    tau: np.ndarray
    t: np.ndarray | None = None
    t_prime: np.ndarray | None = None

    def __post_init__(self):
        self.tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        if not np.all(np.isfinite(self.tau)):
            raise ValueError("delays must be finite")
        if np.any(self.tau <= 0):
            raise ValueError("delays must be strictly positive")
        if (self.t is None) != (self.t_prime is None):
            raise ValueError("decomposition needs both t and t_prime")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=float).reshape(-1)
            self.t_prime = np.asarray(self.t_prime, dtype=float).reshape(-1)
            if self.t.shape[0] != self.tau.shape[0]:
                raise ValueError("t length must equal N_t")
            if self.t_prime.shape[0] != self.tau.shape[1]:
                raise ValueError("t_prime length must equal N_r")
            recon = self.t[:, None] + self.t_prime[None, :]
            err = np.max(np.abs(recon - self.tau)) / np.max(np.abs(self.tau))
            if err > 1e-12:
                raise ValueError(
                    f"decomposition does not reconstruct tau (rel err {err:.3e})")

    @property
    def shape(self) -> tuple:
        return self.tau.shape

    def copy(self) -> "DelayVector":
        t = None if self.t is None else self.t.copy()
        tp = None if self.t_prime is None else self.t_prime.copy()
        return DelayVector(self.tau.copy(), t, tp)


def true_delays(scene: SceneConfig, target=None) -> DelayVector:
    """Delay matrix produced by a target at `target` (default: scene's).

    Returns a DelayVector with the physical decomposition
    t[m] = ||X - tx_m|| / c, t_prime[n] = ||X - rx_n|| / c.
    """
    x = scene.target if target is None else np.asarray(target, dtype=float)
    t = np.linalg.norm(x[None, :] - scene.tx, axis=1) / scene.c
    t_prime = np.linalg.norm(x[None, :] - scene.rx, axis=1) / scene.c
    tau = t[:, None] + t_prime[None, :]
    return DelayVector(tau, t, t_prime)


def _pairwise_bounds(scene: SceneConfig):
    """Upper bounds (seconds) on |t_m - t_i| and |t'_n - t'_j|."""
    d_t = np.linalg.norm(scene.tx[:, None, :] - scene.tx[None, :, :], axis=2)
    d_r = np.linalg.norm(scene.rx[:, None, :] - scene.rx[None, :, :], axis=2)
    return d_t / scene.c, d_r / scene.c


def is_feasible(tau, scene: SceneConfig, tol: float = 1e-12) -> bool:
    """Check the geometric consistency constraints on a delay matrix.

    For every pair of transmitters (m, i) and every receiver n the delays
    must satisfy |tau[m, n] - tau[i, n]| <= ||tx_m - tx_i|| / c, and the
    mirrored condition holds across receiver pairs.  `tol` (seconds) is
    an additive slack on each comparison.

    Accepts either a DelayVector or a bare matrix.
    """
    mat = tau.tau if isinstance(tau, DelayVector) else np.atleast_2d(np.asarray(tau, float))
    if mat.shape != (scene.n_tx, scene.n_rx):
        raise ValueError(
            f"delay matrix shape {mat.shape} does not match scene "
            f"({scene.n_tx}, {scene.n_rx})")
    bound_t, bound_r = _pairwise_bounds(scene)
    # |tau[m,n] - tau[i,n]| over transmitter pairs, all receivers at once.
    diff_t = np.abs(mat[:, None, :] - mat[None, :, :])
    if np.any(diff_t > bound_t[:, :, None] + tol):
        return False
    diff_r = np.abs(mat[:, :, None] - mat[:, None, :])
    if np.any(diff_r > bound_r[None, :, :] + tol):
        return False
    return True


def project_feasible(tau_raw, scene: SceneConfig) -> DelayVector:
    """Least-squares separable approximation of an arbitrary delay matrix.

    Finds (t, t') minimizing sum_mn (tau_raw[m][n] - t_m - t'_n)^2.  The
    gauge is fixed by setting each t'_n to the column mean, which leaves
    t_m = (row mean) - (grand mean).  A matrix that already came from a
    physical target location is reproduced exactly and stays feasible.
    """
    mat = tau_raw.tau if isinstance(tau_raw, DelayVector) else np.atleast_2d(np.asarray(tau_raw, float))
    if mat.shape != (scene.n_tx, scene.n_rx):
        raise ValueError("delay matrix shape does not match scene")
    col_mean = mat.mean(axis=0)
    row_mean = mat.mean(axis=1)
    grand = mat.mean()
    t = row_mean - grand
    t_prime = col_mean
    tau = t[:, None] + t_prime[None, :]
    return DelayVector(tau, t, t_prime)


def mimo_scene(n_tx: int = 2, n_rx: int = 2, target_km=(20.0, 15.0, 0.0),
               carrier_freq_hz: float = 5e6, path_loss_exp: float = 2.0,
               num_scatterers: int = 10) -> SceneConfig:
    """Widely spaced layout: tx at (m, 0, 0) km and rx at (0, n, 0) km.

    Transmitters sit at x = 1..N_t km on the x axis, receivers at
    y = 1..N_r km on the y axis, with the default target at (20, 15, 0) km.
    """
    tx = np.array([[m * 1e3, 0.0, 0.0] for m in range(1, n_tx + 1)])
    rx = np.array([[0.0, n * 1e3, 0.0] for n in range(1, n_rx + 1)])
    return SceneConfig(tx=tx, rx=rx,
                       target=np.asarray(target_km, dtype=float) * 1e3,
                       carrier_freq_hz=carrier_freq_hz,
                       path_loss_exp=path_loss_exp,
                       num_scatterers=num_scatterers)


def phased_array_scene(n_tx: int = 2, n_rx: int = 2,
                       target_km=(20.0, 15.0, 0.0),
                       carrier_freq_hz: float = 5e6,
                       path_loss_exp: float = 2.0,
                       num_scatterers: int = 10,
                       spacing_m: float | None = None) -> SceneConfig:
    """Co-located layout: clustered antennas emulating a phased array.

    The transmit cluster is centered at (1, 0, 0) km with elements spaced
    along x; the receive cluster at (0, 1, 0) km with elements spaced
    along y.  Element spacing defaults to 1 m, deep sub-wavelength at the
    default carrier (lambda = 60 m), so the cluster acts as a single
    coherent aperture; pass e.g. lambda/2 for a conventional array pitch.
    """
    if spacing_m is None:
        spacing_m = 1.0
    off_t = (np.arange(n_tx) - (n_tx - 1) / 2.0) * spacing_m
    off_r = (np.arange(n_rx) - (n_rx - 1) / 2.0) * spacing_m
    tx = np.array([[1e3 + o, 0.0, 0.0] for o in off_t])
    rx = np.array([[0.0, 1e3 + o, 0.0] for o in off_r])
    return SceneConfig(tx=tx, rx=rx,
                       target=np.asarray(target_km, dtype=float) * 1e3,
                       carrier_freq_hz=carrier_freq_hz,
                       path_loss_exp=path_loss_exp,
                       num_scatterers=num_scatterers)
