"""Falsification of always-avoid specifications over an initial set.

A specification is an unsafe box plus a time window; a run falsifies it
when some trajectory sample inside the window enters the box. Robustness
is the signed distance from the window's samples to the box: positive
when safe, negative once inside, so falsification is the search for an
initial condition with negative robustness.

Two searches are provided: a guided one that retargets the reach loop at
a point inside the unsafe box, and a simulated-annealing baseline that
only looks at robustness values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Box, ClosedLoopSystem, Trajectory, simulate
from .errors import InputError
from .explorer import RDParams, _correction, project_to_box

FALSIFY_BOUND = 50
_TIME_TOL = 1e-9


@dataclass(frozen=True)
class SafetySpec:
    """Unsafe box with the time window in which it must be avoided."""

    unsafe_box: Box
    interval: tuple[float, float]

    def __post_init__(self):
        lo, hi = self.interval
        if lo < 0 or hi < lo:
            raise InputError(f"bad time interval {self.interval}")
        object.__setattr__(self, "interval", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, d: dict) -> "SafetySpec":
        try:
            box = Box.from_dict(d["unsafe_box"])
            interval = d["interval"]
        except KeyError as exc:
            raise InputError(f"specification is missing field {exc}") from exc
        if not isinstance(interval, (list, tuple)) or len(interval) != 2:
            raise InputError("interval must be a [t_lo, t_hi] pair")
        return cls(unsafe_box=box, interval=(interval[0], interval[1]))

    def to_dict(self) -> dict:
        return {
            "unsafe_box": self.unsafe_box.to_dict(),
            "interval": [self.interval[0], self.interval[1]],
        }


def load_spec(path) -> SafetySpec:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read specification file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"specification file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError("specification file must hold a JSON object")
    return SafetySpec.from_dict(doc)


def signed_distance_to_box(x, box: Box) -> float | np.ndarray:
    """Euclidean distance to the box, negated inside (margin to a face)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    outside = np.maximum(0.0, np.maximum(box.lo - X, X - box.hi))
    dist = np.linalg.norm(outside, axis=1)
    margin = np.min(np.minimum(X - box.lo, box.hi - X), axis=1)
    rho = np.where(dist > 0, dist, -margin)
    return float(rho[0]) if single else rho


def _window_indices(traj: Trajectory, spec: SafetySpec) -> np.ndarray:
    t_lo, t_hi = spec.interval
    h = traj.h
    horizon = traj.steps * h
    if t_hi > horizon * (1 + _TIME_TOL) + _TIME_TOL:
        raise InputError(
            f"specification window ends at {t_hi} but the trajectory "
            f"stops at {horizon}"
        )
    i_lo = math.ceil(t_lo / h - _TIME_TOL)
    i_hi = math.floor(t_hi / h + _TIME_TOL)
    i_lo = max(i_lo, 0)
    i_hi = min(i_hi, traj.steps)
    if i_lo > i_hi:
        raise InputError(
            f"no trajectory sample falls inside the window [{t_lo}, {t_hi}]"
        )
    return np.arange(i_lo, i_hi + 1)


def robustness(traj: Trajectory, spec: SafetySpec) -> float:
    """Worst signed distance to the unsafe box over the window's samples."""
    idx = _window_indices(traj, spec)
    rho = signed_distance_to_box(traj.samples[idx], spec.unsafe_box)
    return float(np.min(rho))


def pick_target(traj: Trajectory, spec: SafetySpec, rng) -> tuple[np.ndarray, float]:
    """Target point inside the unsafe box and the most promising window time.

    The time is where the trajectory currently comes closest to the box,
    earliest on ties; the point is drawn uniformly from the box.
    """
    idx = _window_indices(traj, spec)
    rho = signed_distance_to_box(traj.samples[idx], spec.unsafe_box)
    i = idx[int(np.argmin(rho))]
    z = spec.unsafe_box.sample(rng)
    return z, i * traj.h


@dataclass
class FalsificationResult:
    method: str
    falsified: bool
    k: int
    rho: float
    x0: np.ndarray
    trajectory: Trajectory
    rho_history: list[float] = field(default_factory=list)
    target: np.ndarray | None = None
    t: float | None = None
    simulations: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "falsified": self.falsified,
            "k": self.k,
            "rho": self.rho,
            "x0": self.x0.tolist(),
            "target": self.target.tolist() if self.target is not None else None,
            "t": self.t,
            "rho_history": self.rho_history,
        }


def _spec_steps(system: ClosedLoopSystem, spec: SafetySpec) -> int:
    steps = math.floor(spec.interval[1] / system.h + _TIME_TOL)
    if steps > system.T:
        raise InputError(
            f"specification window ends past the simulation horizon "
            f"({spec.interval[1]} > {system.T * system.h})"
        )
    return max(steps, 1)


def falsify_rd(
    system: ClosedLoopSystem,
    spec: SafetySpec,
    approx=None,
    params: RDParams | None = None,
    seed: int = 0,
    max_resample: int = 100,
) -> FalsificationResult:
    """Guided falsification: steer toward a point in the unsafe box.

    Starts from a random non-falsifying initial condition, aims the reach
    loop at a box sample at the window time where the seed trajectory is
    closest to it, and iterates until the robustness of an anchor drops
    below zero or the budget runs out. Returns the lowest-robustness
    anchor found either way.
    """
    from .approximator import ExactOracle

    if approx is None:
        approx = ExactOracle(system, kind="inverse")
    if params is None:
        params = RDParams(bound=FALSIFY_BOUND)
    theta = system.initial_set
    if theta is None:
        raise InputError(f"system {system.name!r} has no initial set to search")
    rng = np.random.default_rng(seed)
    steps = _spec_steps(system, spec)

    simulations = 0
    x0 = theta.sample(rng)
    anchor = simulate(system, x0, steps=steps)
    simulations += 1
    rho = robustness(anchor, spec)
    resamples = 0
    while rho < 0 and resamples < max_resample:
        x0 = theta.sample(rng)
        anchor = simulate(system, x0, steps=steps)
        simulations += 1
        rho = robustness(anchor, spec)
        resamples += 1

    z, t_val = pick_target(anchor, spec, rng)
    steps_t = system.time_index(t_val)

    best_rho = rho
    best_x0 = x0.copy()
    best_traj = anchor
    best_k = 0
    history = [rho]

    k = 0
    while rho > 0 and k < params.bound:
        x_t = anchor.samples[steps_t]
        w = z - x_t
        d_a = float(np.linalg.norm(w))
        if d_a < 1e-15:
            break
        v = params.s * w
        x_t_virtual = x_t.copy()
        for _ in range(params.p):
            v_minus = _correction(approx, x_t_virtual, v, t_val, params.s)
            x0 = project_to_box(x0 + v_minus, theta)
            x_t_virtual = x_t_virtual + v
        anchor = simulate(system, x0, steps=steps)
        simulations += 1
        rho = robustness(anchor, spec)
        k += 1
        history.append(rho)
        if rho < best_rho:
            best_rho = rho
            best_x0 = x0.copy()
            best_traj = anchor
            best_k = k

    return FalsificationResult(
        method="guided",
        falsified=best_rho < 0,
        k=best_k if best_rho < 0 else k,
        rho=best_rho,
        x0=best_x0,
        trajectory=best_traj,
        rho_history=history,
        target=z,
        t=t_val,
        simulations=simulations,
    )


def falsify_baseline(
    system: ClosedLoopSystem,
    spec: SafetySpec,
    seed: int = 0,
    budget: int = FALSIFY_BOUND,
    beta: float = 50.0,
) -> FalsificationResult:
    """Simulated-annealing falsification over the initial set.

    Proposes Gaussian moves with a tenth of each axis width as standard
    deviation, clamped back into the set, accepting any robustness
    decrease and an increase with probability exp(-beta * increase /
    scale). Stops at the first falsifying sample or after `budget`
    proposals.
    """
    theta = system.initial_set
    if theta is None:
        raise InputError(f"system {system.name!r} has no initial set to search")
    if budget < 1:
        raise InputError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    steps = _spec_steps(system, spec)
    sigma = 0.1 * theta.width

    x_cur = theta.sample(rng)
    traj_cur = simulate(system, x_cur, steps=steps)
    rho_cur = robustness(traj_cur, spec)
    history = [rho_cur]
    scale = abs(rho_cur) if rho_cur != 0 else 1.0

    best_rho = rho_cur
    best_x = x_cur.copy()
    best_traj = traj_cur
    best_k = 0

    k = 0
    while best_rho >= 0 and k < budget:
        prop = theta.clamp(x_cur + rng.normal(size=theta.dimension) * sigma)
        traj = simulate(system, prop, steps=steps)
        rho = robustness(traj, spec)
        k += 1
        history.append(rho)
        if rho < best_rho:
            best_rho = rho
            best_x = prop.copy()
            best_traj = traj
            best_k = k
        if rho < rho_cur or rng.random() < math.exp(
            -beta * (rho - rho_cur) / scale
        ):
            x_cur, rho_cur = prop, rho

    return FalsificationResult(
        method="annealing",
        falsified=best_rho < 0,
        k=best_k if best_rho < 0 else k,
        rho=best_rho,
        x0=best_x,
        trajectory=best_traj,
        rho_history=history,
        simulations=k + 1,
    )
