"""Exact sensitivity computation and empirical approximation-error curves.

Forward sensitivity is the displacement at time t between two trajectories
whose initial states differ by v; inverse sensitivity is the initial-state
displacement that produces a given time-t displacement. Both are computed
here by pairs of simulations, which serves as the ground-truth oracle for
everything the learned approximators do.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .dynamics import (
    ClosedLoopSystem,
    Trajectory,
    simulate_batch,
    simulate_backward_batch,
)
from .errors import InputError

DEFAULT_RADII = (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05)
DEFAULT_SAMPLES_PER_RADIUS = 200


def _check_vec(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise InputError(f"perturbation must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError("perturbation contains non-finite entries")
    return v


def sensitivity_exact(system: ClosedLoopSystem, x0, v, t: float) -> np.ndarray:
    """Displacement at time t between trajectories from x0+v and x0."""
    k = system.time_index(t)
    x0 = np.asarray(x0, dtype=float)
    v = _check_vec(v, system.dimension)
    paths = simulate_batch(system, np.stack([x0 + v, x0]), k)
    return paths[0, k] - paths[1, k]


def inverse_sensitivity_oracle(system: ClosedLoopSystem, x_t, v, t: float) -> np.ndarray:
    """Initial-state displacement for a time-t displacement v, by backward runs."""
    k = system.time_index(t)
    x_t = np.asarray(x_t, dtype=float)
    v = _check_vec(v, system.dimension)
    paths = simulate_backward_batch(system, np.stack([x_t + v, x_t]), k)
    return paths[0, k] - paths[1, k]


def inverse_sensitivity_from_pair(
    traj_a: Trajectory, traj_b: Trajectory, t: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Form the (x_t, v, v_minus) tuple realized by two forward trajectories.

    By construction the inverse sensitivity of v at (x_t, t) is exactly
    v_minus: the two trajectories themselves witness it.
    """
    if abs(traj_a.h - traj_b.h) > 1e-15:
        raise InputError("trajectory pair must share the same step size")
    k = int(round(t / traj_a.h))
    if k < 0 or k > min(traj_a.steps, traj_b.steps):
        raise InputError(f"time {t} not covered by both trajectories")
    x_t = traj_a.samples[k]
    v = traj_b.samples[k] - x_t
    v_minus = traj_b.samples[0] - traj_a.samples[0]
    return x_t, v, v_minus


# ---------------------------------------------------------------------------
# Discrepancy witnesses for linear plants


def linear_state_matrix(system: ClosedLoopSystem) -> np.ndarray:
    """The A matrix of an autonomous linear plant; errors otherwise."""
    if system.plant.kind != "linear" or system.plant.control_dim > 0:
        raise InputError("eta bounds need an autonomous linear plant")
    return system.plant._A


def eta_bounds(A: np.ndarray, t: float) -> tuple[float, float]:
    """Extreme singular values of the flow map e^{At}.

    eta1 lower-bounds and eta2 upper-bounds the trajectory-distance growth
    between initial states, which is exactly what the convergence analysis
    of the guided explorer consumes.
    """
    A = np.asarray(A, dtype=float)
    expAt = scipy.linalg.expm(A * float(t))
    svals = np.linalg.svd(expAt, compute_uv=False)
    return float(svals[-1]), float(svals[0])


# ---------------------------------------------------------------------------
# Empirical absolute-error curves


@dataclass(frozen=True)
class ErrorCurve:
    radii: np.ndarray
    eps_abs: np.ndarray
    samples_per_radius: int

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        eps = np.asarray(self.eps_abs, dtype=float)
        if radii.ndim != 1 or radii.shape != eps.shape:
            raise InputError("radii and eps_abs must be vectors of equal length")
        if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
            raise InputError("radii must be strictly increasing and positive")
        if np.any(eps < 0):
            raise InputError("eps_abs entries must be nonnegative")
        radii.setflags(write=False)
        eps.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "eps_abs", eps)

    def save_csv(self, path) -> None:
        lines = ["radius,eps_abs,samples"]
        for r, e in zip(self.radii, self.eps_abs):
            lines.append(f"{float(r)!r},{float(e)!r},{self.samples_per_radius}")
        Path(path).write_text("\n".join(lines) + "\n")


def _eps_abs_at_radius(approx, system, radius, samples, seed_seq) -> float:
    """Mean norm error of the oracle-estimator at one evaluation radius.

    Draws (x_t, v_hat, t) from fresh test trajectories, supplies the exact
    magnitude from backward integration, and measures the residual against
    the exact inverse sensitivity.
    """
    rng = np.random.default_rng(seed_seq)
    theta = system.initial_set
    if theta is None:
        raise InputError("system needs an initial_set to sample test trajectories")
    x0s = theta.sample(rng, samples)
    paths = simulate_batch(system, x0s, system.T)
    t_idx = rng.integers(1, system.T + 1, size=samples)
    x_ts = paths[np.arange(samples), t_idx]
    vhats = rng.normal(size=(samples, system.dimension))
    vhats /= np.linalg.norm(vhats, axis=1, keepdims=True)

    # One batched backward pass covers every sample's own duration.
    max_k = int(t_idx.max())
    starts = np.concatenate([x_ts + radius * vhats, x_ts])
    back = simulate_backward_batch(system, starts, max_k)
    idx = np.arange(samples)
    exact = back[idx, t_idx] - back[samples + idx, t_idx]

    errs = np.empty(samples)
    for i in range(samples):
        t = float(t_idx[i] * system.h)
        direction = approx.predict(x_ts[i], vhats[i], t)
        estimate = direction * np.linalg.norm(exact[i])
        errs[i] = np.linalg.norm(estimate - exact[i])
    return float(errs.mean())


def abs_error_curve(
    approx,
    system: ClosedLoopSystem,
    radii=DEFAULT_RADII,
    samples_per_radius: int = DEFAULT_SAMPLES_PER_RADIUS,
    seed: int = 0,
    threads: int = 1,
) -> ErrorCurve:
    """Empirical eps_abs(r) of a directional approximator on fresh trajectories.

    The random stream is split per radius, so results are identical whether
    radii are evaluated serially or concurrently.
    """
    radii = np.asarray(radii, dtype=float)
    if samples_per_radius < 1:
        raise InputError("samples_per_radius must be at least 1")
    streams = np.random.SeedSequence(seed).spawn(len(radii))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            eps = list(
                pool.map(
                    lambda i: _eps_abs_at_radius(
                        approx, system, radii[i], samples_per_radius, streams[i]
                    ),
                    range(len(radii)),
                )
            )
    else:
        eps = [
            _eps_abs_at_radius(approx, system, radii[i], samples_per_radius, streams[i])
            for i in range(len(radii))
        ]
    return ErrorCurve(radii, np.asarray(eps), samples_per_radius)
