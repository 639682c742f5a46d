"""Target position from a transmit-receive delay matrix.

Each delay pins the target to an ellipsoid with one transmitter and one
receiver at the foci; the position estimate is the least-squares
intersection of all N_t * N_r of them, found by Gauss-Newton.  The
model and Jacobian are

    tau[m, n](x) = (|x - tx_m| + |x - rx_n|) / c
    d tau[m, n] / dx = (u_m(x) + v_n(x)) / c

with u, v the unit vectors from the antennas toward x.  Iterations
solve the c-scaled linear system in meters, which keeps the Jacobian
entries O(1) regardless of the absurd second-scale units.

Planar scenes (all antennas and the target in one plane) make the
out-of-plane derivative vanish, so the scaled Jacobian has rank 2; the
minimum-norm least-squares step then leaves the out-of-plane coordinate
at its initial value, which is the right behavior, and the result
reports the rank so callers can tell.  Rank below 2 means the geometry
cannot localize at all and the solve flags failure instead of walking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SceneConfig, DelayVector


def phi(scene: SceneConfig, x) -> np.ndarray:
    """Model delay matrix (N_t, N_r) for a hypothetical target at x."""
    x = np.asarray(x, dtype=float)
    d_t = np.linalg.norm(x[None, :] - scene.tx, axis=1)
    d_r = np.linalg.norm(x[None, :] - scene.rx, axis=1)
    return (d_t[:, None] + d_r[None, :]) / scene.c


def jacobian(scene: SceneConfig, x) -> np.ndarray:
    """d tau / dx, shape (N_t * N_r, 3), rows in C order over (m, n)."""
    x = np.asarray(x, dtype=float)
    dt_vec = x[None, :] - scene.tx
    dr_vec = x[None, :] - scene.rx
    dt = np.linalg.norm(dt_vec, axis=1, keepdims=True)
    dr = np.linalg.norm(dr_vec, axis=1, keepdims=True)
    if np.any(dt == 0) or np.any(dr == 0):
        raise ValueError("Jacobian undefined exactly at an antenna")
    u = dt_vec / dt                       # (N_t, 3)
    v = dr_vec / dr                       # (N_r, 3)
    rows = u[:, None, :] + v[None, :, :]  # (N_t, N_r, 3)
    return rows.reshape(-1, 3) / scene.c


@dataclass
class LocalizationResult:
    x_hat: np.ndarray
    iterations: int
    residual_norm: float        # euclidean norm of tau residual, seconds
    converged: bool
    rank: int
    failure: str | None = None  # "rank_deficient" | "diverged" | "max_iters"


def localize(scene: SceneConfig, tau, x0, max_iters: int = 50,
             step_tol_m: float = 1e-3) -> LocalizationResult:
    """Gauss-Newton position fit to a measured delay matrix.

    `tau` is a DelayVector or an (N_t, N_r) array; `x0` the starting
    position (callers coming from the delay search pass its best grid
    location).  Convergence is declared when the step length falls
    under `step_tol_m`; three successive step-length increases abort
    the solve as divergent.
    """
    target = tau.tau if isinstance(tau, DelayVector) else np.asarray(tau, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (3,):
        raise ValueError("x0 must be a 3-vector")
    rank = 3
    prev_step = np.inf
    growth = 0
    for it in range(1, max_iters + 1):
        resid = (phi(scene, x) - target).ravel()
        jac_m = scene.c * jacobian(scene, x)          # meters per meter
        step, _, rank, _ = np.linalg.lstsq(jac_m, -scene.c * resid, rcond=1e-10)
        rank = int(rank)
        if rank < 2:
            return LocalizationResult(x_hat=x, iterations=it,
                                      residual_norm=float(np.linalg.norm(resid)),
                                      converged=False, rank=rank,
                                      failure="rank_deficient")
        x = x + step
        step_len = float(np.linalg.norm(step))
        if step_len > prev_step:
            growth += 1
            if growth >= 3:
                resid = (phi(scene, x) - target).ravel()
                return LocalizationResult(x_hat=x, iterations=it,
                                          residual_norm=float(np.linalg.norm(resid)),
                                          converged=False, rank=rank,
                                          failure="diverged")
        else:
            growth = 0
        prev_step = step_len
        if step_len <= step_tol_m:
            resid = (phi(scene, x) - target).ravel()
            return LocalizationResult(x_hat=x, iterations=it,
                                      residual_norm=float(np.linalg.norm(resid)),
                                      converged=True, rank=rank)
    resid = (phi(scene, x) - target).ravel()
    return LocalizationResult(x_hat=x, iterations=max_iters,
                              residual_norm=float(np.linalg.norm(resid)),
                              converged=False, rank=rank, failure="max_iters")


@dataclass
class LocalizationProblem:
    """Bundled inputs for one solve; convenience wrapper over `localize`."""

    scene: SceneConfig
    tau: object
    x0: object
    max_iters: int = 50
    step_tol_m: float = 1e-3

    def solve(self) -> LocalizationResult:
        return localize(self.scene, self.tau, self.x0,
                        max_iters=self.max_iters, step_tol_m=self.step_tol_m)
