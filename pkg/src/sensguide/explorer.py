"""Guided state-space exploration driven by inverse-sensitivity estimates.

`reach_destination` iteratively corrects an initial condition until the
closed-loop trajectory it generates passes near a requested target state
at a requested time. Each outer iteration walks a virtual copy of the
reached state toward the target in `p` straight-line steps of relative
size `s`, accumulating inverse-sensitivity corrections on the initial
condition, then spends one simulation to re-anchor. The same machinery
pushed along a fixed direction estimates the extent of the reachable set
(`reach_extreme`, `coverage`).

Termination guarantees for well-behaved linear systems are provided by
`convergence_bound` and `k_star`, parameterized by the approximator error
model (`ConvergenceParams`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Box, ClosedLoopSystem, Trajectory, simulate
from .errors import InputError, NoTerminationGuaranteeError

DEFAULT_S = 0.5
DEFAULT_P = 2
DEFAULT_DELTA = 0.004
DEFAULT_BOUND = 30


@dataclass(frozen=True)
class RDParams:
    """Knobs of the guided-reach loop.

    s: fraction of the remaining gap covered by one virtual step.
    p: virtual steps (inverse-sensitivity queries) per simulation.
    delta: success threshold on the anchor distance to the target.
    bound: simulation budget for the correction loop.
    """

    s: float = DEFAULT_S
    p: int = DEFAULT_P
    delta: float = DEFAULT_DELTA
    bound: int = DEFAULT_BOUND

    def __post_init__(self):
        if not 0 < self.s:
            raise InputError(f"s must be positive, got {self.s}")
        if self.s * self.p > 1 + 1e-12:
            raise InputError(
                f"s*p must not exceed 1, got {self.s * self.p}"
            )
        if not (isinstance(self.p, (int, np.integer)) and self.p >= 1):
            raise InputError(f"p must be a positive integer, got {self.p}")
        if self.delta <= 0:
            raise InputError(f"delta must be positive, got {self.delta}")
        if not (isinstance(self.bound, (int, np.integer)) and self.bound >= 1):
            raise InputError(f"bound must be a positive integer, got {self.bound}")


@dataclass(frozen=True)
class RDIteration:
    k: int
    d_a: float
    d_r: float
    x0: np.ndarray
    x_t: np.ndarray

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d_a": self.d_a,
            "d_r": self.d_r,
            "x0": self.x0.tolist(),
            "x_t": self.x_t.tolist(),
        }


@dataclass
class RDResult:
    """Outcome of a guided-reach run.

    k counts the simulations spent by the correction loop; the anchor
    simulation that seeds the loop is not included. `iterations` holds
    one entry per anchor, so its length is k + 1.
    """

    k: int
    d_init: float
    d_a: float
    d_r: float
    x0: np.ndarray
    x_t: np.ndarray
    target: np.ndarray
    t: float
    delta: float
    trajectory: Trajectory
    iterations: list[RDIteration] = field(default_factory=list)
    simulations: int = 0

    @property
    def converged(self) -> bool:
        return self.d_a <= self.delta

    def best_iteration(self) -> RDIteration:
        return min(self.iterations, key=lambda it: it.d_a)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d_init": self.d_init,
            "d_a": self.d_a,
            "d_r": self.d_r,
            "converged": self.converged,
            "target": self.target.tolist(),
            "t": self.t,
            "x0": self.x0.tolist(),
            "x_t": self.x_t.tolist(),
            "iterations": [it.to_dict() for it in self.iterations],
        }


def project_to_box(x: np.ndarray, box: Box) -> np.ndarray:
    """Euclidean projection onto an axis-aligned box."""
    return box.clamp(x)


def axis_aligned_direction(w) -> np.ndarray:
    """Signed unit basis vector closest in direction to w."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.shape[0] == 0:
        raise InputError("direction source must be a nonempty vector")
    if not np.any(w):
        raise InputError("cannot pick an axis for the zero vector")
    i = int(np.argmax(np.abs(w)))
    e = np.zeros_like(w)
    e[i] = 1.0 if w[i] >= 0 else -1.0
    return e


def _correction(approx, x_t: np.ndarray, v: np.ndarray, t: float, s: float) -> np.ndarray:
    """One inverse-sensitivity query under either approximator contract.

    Full-vector approximators (`estimate`) answer for the perturbation as
    given. Directional ones (`predict`) only see the unit direction, so
    the returned unit estimate is rescaled by s times the perturbation
    magnitude.
    """
    if hasattr(approx, "estimate"):
        return np.asarray(approx.estimate(x_t, v, t), dtype=float)
    norm_v = float(np.linalg.norm(v))
    d_hat = approx.predict(x_t, v / norm_v, t)
    return (s * norm_v) * np.asarray(d_hat, dtype=float)


def reach_destination(
    system: ClosedLoopSystem,
    approx,
    z,
    t: float,
    x0=None,
    params: RDParams | None = None,
    seed: int = 0,
) -> RDResult:
    """Steer the initial condition until the time-t state lands near z.

    x0 seeds the search; when omitted it is sampled uniformly from the
    system's initial set. Requires the system to carry an initial set,
    which also constrains every intermediate candidate.
    """
    if params is None:
        params = RDParams()
    theta = system.initial_set
    if theta is None:
        raise InputError(f"system {system.name!r} has no initial set to search")
    z = np.asarray(z, dtype=float)
    if z.shape != (system.dimension,):
        raise InputError(
            f"target must have shape ({system.dimension},), got {z.shape}"
        )
    steps_t = system.time_index(t)
    t_val = steps_t * system.h
    if x0 is None:
        x0 = theta.sample(np.random.default_rng(seed))
    x0 = project_to_box(np.asarray(x0, dtype=float), theta)

    anchor = simulate(system, x0, steps=steps_t)
    simulations = 1
    x_t = anchor.samples[steps_t].copy()
    d_init = float(np.linalg.norm(z - x_t))
    d_a = d_init

    def rel(d: float) -> float:
        return d / d_init if d_init > 0 else 0.0

    iterations = [RDIteration(0, d_a, rel(d_a), x0.copy(), x_t.copy())]
    k = 0
    while d_a > params.delta and k < params.bound:
        w = z - x_t
        v = params.s * w
        x_t_virtual = x_t.copy()
        for _ in range(params.p):
            v_minus = _correction(approx, x_t_virtual, v, t_val, params.s)
            x0 = project_to_box(x0 + v_minus, theta)
            x_t_virtual = x_t_virtual + v
        anchor = simulate(system, x0, steps=steps_t)
        simulations += 1
        x_t = anchor.samples[steps_t].copy()
        d_a = float(np.linalg.norm(z - x_t))
        k += 1
        iterations.append(RDIteration(k, d_a, rel(d_a), x0.copy(), x_t.copy()))

    return RDResult(
        k=k,
        d_init=d_init,
        d_a=d_a,
        d_r=rel(d_a),
        x0=x0,
        x_t=x_t,
        target=z,
        t=t_val,
        delta=params.delta,
        trajectory=anchor,
        iterations=iterations,
        simulations=simulations,
    )


@dataclass
class ExtremeResult:
    direction: np.ndarray
    x0: np.ndarray
    x_t: np.ndarray
    value: float
    k: int
    simulations: int = 0

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.tolist(),
            "x0": self.x0.tolist(),
            "x_t": self.x_t.tolist(),
            "value": self.value,
            "k": self.k,
        }


def reach_extreme(
    system: ClosedLoopSystem,
    approx,
    direction,
    t: float,
    x0=None,
    params: RDParams | None = None,
    step_scale: float | None = None,
    seed: int = 0,
) -> ExtremeResult:
    """Push the time-t state as far as possible along a fixed direction.

    Runs the guided-reach correction loop against a target that recedes
    along `direction`, keeping the best reached state by inner product.
    Stops early once a full round of corrections no longer moves the
    initial condition (it is pinned to the initial-set boundary).
    """
    if params is None:
        params = RDParams()
    theta = system.initial_set
    if theta is None:
        raise InputError(f"system {system.name!r} has no initial set to search")
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if direction.shape != (system.dimension,) or norm < 1e-12:
        raise InputError("direction must be a nonzero vector of system dimension")
    direction = direction / norm
    if step_scale is None:
        step_scale = theta.diameter
    if step_scale <= 0:
        step_scale = 1.0

    steps_t = system.time_index(t)
    t_val = steps_t * system.h
    if x0 is None:
        x0 = theta.sample(np.random.default_rng(seed))
    x0 = project_to_box(np.asarray(x0, dtype=float), theta)

    anchor = simulate(system, x0, steps=steps_t)
    simulations = 1
    x_t = anchor.samples[steps_t].copy()
    best_val = float(direction @ x_t)
    best_x0, best_xt = x0.copy(), x_t.copy()

    k = 0
    move_tol = params.delta
    while k < params.bound:
        v = params.s * step_scale * direction
        x_t_virtual = x_t.copy()
        stagnant = 0
        for _ in range(params.p):
            v_minus = _correction(approx, x_t_virtual, v, t_val, params.s)
            moved = project_to_box(x0 + v_minus, theta)
            if np.linalg.norm(moved - x0) < move_tol:
                stagnant += 1
            x0 = moved
            x_t_virtual = x_t_virtual + v
        if stagnant >= params.p:
            break
        anchor = simulate(system, x0, steps=steps_t)
        simulations += 1
        x_t = anchor.samples[steps_t].copy()
        k += 1
        val = float(direction @ x_t)
        if val > best_val:
            best_val = val
            best_x0, best_xt = x0.copy(), x_t.copy()

    return ExtremeResult(
        direction=direction,
        x0=best_x0,
        x_t=best_xt,
        value=best_val,
        k=k,
        simulations=simulations,
    )


@dataclass
class CoverageTarget:
    target: np.ndarray
    k: int
    d_a: float
    d_r: float
    x0: np.ndarray
    converged: bool

    def to_dict(self) -> dict:
        return {
            "target": self.target.tolist(),
            "k": self.k,
            "d_a": self.d_a,
            "d_r": self.d_r,
            "x0": self.x0.tolist(),
            "converged": self.converged,
        }


@dataclass
class CoverageReport:
    t: float
    box: Box
    corners: np.ndarray
    extremes: list[ExtremeResult]
    targets: list[CoverageTarget]
    fraction: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "box": self.box.to_dict(),
            "corners": self.corners.tolist(),
            "fraction": self.fraction,
            "extremes": [e.to_dict() for e in self.extremes],
            "targets": [c.to_dict() for c in self.targets],
        }


def coverage(
    system: ClosedLoopSystem,
    approx,
    t: float,
    num_targets: int = 50,
    seed: int = 0,
    params: RDParams | None = None,
    targets=None,
) -> CoverageReport:
    """Estimate the reachable extent at time t and probe it with reach runs.

    The extent is bracketed by pushing along plus and minus each axis; the
    resulting box is then sampled (or `targets` is used verbatim) and each
    target is attacked with `reach_destination`. The convergence fraction
    is a proxy for how much of the candidate region is actually reachable.
    """
    if params is None:
        params = RDParams()
    theta = system.initial_set
    if theta is None:
        raise InputError(f"system {system.name!r} has no initial set to search")
    n = system.dimension
    center = (theta.lo + theta.hi) / 2.0

    extremes = []
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        top = reach_extreme(system, approx, e, t, x0=center, params=params)
        bot = reach_extreme(system, approx, -e, t, x0=center, params=params)
        extremes.extend([top, bot])
        hi[i] = top.x_t[i]
        lo[i] = bot.x_t[i]
    bad = lo > hi
    if np.any(bad):
        lo[bad], hi[bad] = hi[bad], lo[bad]
    box = Box(lo, hi)

    rng = np.random.default_rng(seed)
    if targets is None:
        targets = box.sample(rng, size=num_targets)
    else:
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if targets.shape[1] != n:
            raise InputError(
                f"targets must have {n} columns, got {targets.shape[1]}"
            )

    rows = []
    hits = 0
    for z in targets:
        anchor0 = theta.sample(rng)
        res = reach_destination(system, approx, z, t, x0=anchor0, params=params)
        rows.append(
            CoverageTarget(
                target=np.asarray(z, dtype=float),
                k=res.k,
                d_a=res.d_a,
                d_r=res.d_r,
                x0=res.x0,
                converged=res.converged,
            )
        )
        hits += res.converged

    steps_t = system.time_index(t)
    return CoverageReport(
        t=steps_t * system.h,
        box=box,
        corners=box.corners(),
        extremes=extremes,
        targets=rows,
        fraction=hits / len(rows) if rows else 0.0,
    )


# ---------------------------------------------------------------------------
# Convergence guarantees


@dataclass(frozen=True)
class ConvergenceParams:
    """Error model and conditioning constants behind the guarantees.

    eps_rel, eps_abs: relative and absolute approximator error levels.
    eta1, eta2: lower and upper gains of the flow between times 0 and t
    (extreme singular values for a linear system).
    r: radius around the data where the error model is trusted.
    """

    eps_rel: float
    eps_abs: float
    eta1: float
    eta2: float
    r: float

    def __post_init__(self):
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise InputError("flow gains must be positive")
        if self.eta2 < self.eta1:
            raise InputError("eta2 must be at least eta1")
        if self.eps_rel < 0 or self.eps_abs < 0:
            raise InputError("error levels must be nonnegative")
        if self.r <= 0:
            raise InputError("validity radius must be positive")

    @property
    def gamma(self) -> float:
        g = 1.0 - self.eps_rel * self.eta2 / self.eta1
        if g <= 0:
            raise NoTerminationGuaranteeError(
                "relative error too large for any progress guarantee"
            )
        return g

    @property
    def r_eps(self) -> float:
        return self.eps_abs * self.eta2 / self.gamma


def admissible_step_range(params: ConvergenceParams, d_init: float, p: int) -> tuple[float, float]:
    """Interval of step fractions s for which the guarantee applies."""
    if d_init <= 0:
        raise InputError("d_init must be positive")
    if p < 1:
        raise InputError("p must be at least 1")
    lo = params.r_eps / d_init
    hi = min(params.r / d_init, 1.0 / p)
    if lo > hi:
        raise NoTerminationGuaranteeError(
            f"no admissible step size: need s >= {lo} but s <= {hi}"
        )
    return lo, hi


def convergence_bound(params: ConvergenceParams, s: float, p: int,
                      d_init: float, k: int) -> float:
    """Guaranteed ceiling on the anchor distance after k corrections."""
    if s <= 0 or s * p > 1 + 1e-12:
        raise InputError("need 0 < s and s*p <= 1")
    rate = 1.0 - s * p * params.gamma
    return rate**k * d_init + params.r_eps / s


def k_star(params: ConvergenceParams, s: float, p: int,
           d_init: float, delta: float) -> int:
    """Simulations guaranteed to bring the anchor distance below delta."""
    if delta <= 0:
        raise InputError("delta must be positive")
    if s <= 0 or s * p > 1 + 1e-12:
        raise InputError("need 0 < s and s*p <= 1")
    floor = params.r_eps / s
    if delta <= floor:
        raise NoTerminationGuaranteeError(
            f"threshold {delta} is at or below the error floor {floor}"
        )
    gap = delta - floor
    if d_init <= gap:
        return 0
    rate = 1.0 - s * p * params.gamma
    if rate <= 0:
        return 1
    return math.ceil(math.log(gap / d_init) / math.log(rate))


def exact_convergence_params(eta: float = 1.0, r: float = math.inf) -> ConvergenceParams:
    """Error-free instance, useful against the exact oracle."""
    r = r if math.isfinite(r) else 1e30
    return ConvergenceParams(eps_rel=0.0, eps_abs=0.0, eta1=eta, eta2=eta, r=r)


# ---------------------------------------------------------------------------
# Forward prediction from a trained forward-kind model


@dataclass
class MagnitudeModel:
    """Per-time gain fitted from a forward dataset by least squares."""

    times: np.ndarray
    gains: np.ndarray

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.abs(self.times[None, :] - t[:, None]).argmin(axis=1)
        return self.gains[idx]


def fit_magnitude_model(ds) -> MagnitudeModel:
    """Fit ||output|| / ||input perturbation|| against time."""
    if ds.kind != "forward":
        raise InputError("magnitude fitting expects a forward-kind dataset")
    times = np.unique(ds.t)
    gains = np.empty_like(times)
    for j, tv in enumerate(times):
        sel = ds.t == tv
        mv = ds.mag_v[sel]
        md = ds.mag_vminus[sel]
        denom = float(mv @ mv)
        gains[j] = float(md @ mv) / denom if denom > 0 else 1.0
    return MagnitudeModel(times=times, gains=gains)


def predict_trajectory(
    model,
    system: ClosedLoopSystem,
    x0,
    v0,
    times=None,
    magnitude: MagnitudeModel | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Predict the trajectory from x0+v0 without simulating it.

    Simulates only the base trajectory from x0 and displaces it by the
    model's predicted sensitivity directions, scaled by ||v0|| times the
    per-time gain (1 when no magnitude model is supplied). Returns the
    sample times and the matrix of predicted states.
    """
    if getattr(model, "kind", None) != "forward":
        raise InputError("trajectory prediction requires a forward-kind model")
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    norm0 = np.linalg.norm(v0)
    if norm0 < 1e-12:
        raise InputError("perturbation v0 must be nonzero")
    radius = getattr(model, "neighbor_radius", None)
    if radius and norm0 > 5.0 * radius:
        warnings.warn(
            f"perturbation norm {norm0:.3g} is far above the training "
            f"radius {radius:.3g}; predictions extrapolate",
            stacklevel=2,
        )
    base = simulate(system, x0)
    if times is None:
        steps = np.arange(1, base.steps + 1)
    else:
        steps = np.array([system.time_index(tv) for tv in np.atleast_1d(times)])
    t_vals = steps * system.h

    v_hat = v0 / norm0
    X = base.samples[steps]
    dirs = model.predict_batch(X, np.tile(v_hat, (len(steps), 1)), t_vals)
    gains = magnitude(t_vals) if magnitude is not None else np.ones_like(t_vals)
    preds = X + (norm0 * gains)[:, None] * dirs
    return t_vals, preds
