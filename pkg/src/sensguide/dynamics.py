"""Closed-loop system definitions and fixed-step trajectory generation.

A system couples a plant vector field f(x, u) with an optional feedforward
neural controller u = g(x). Trajectories are produced by a classical
fixed-step 4th-order Runge-Kutta scheme so that sample i sits exactly at
t = i*h, forward or backward in time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, InputError

# Integration aborts once any coordinate magnitude passes this guard.
BLOWUP_LIMIT = 1.0e6

_TIME_SNAP_TOL = 1e-9


def _as_state(x, n: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InputError(f"state must be a flat vector, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise InputError(f"state has dimension {arr.shape[0]}, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise InputError("state contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box [lo, hi] used for initial sets, domains and unsafe sets."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InputError("box lo/hi must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if np.any(lo > hi):
            raise InputError("box has lo > hi on some axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    @property
    def dimension(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def clamp(self, x) -> np.ndarray:
        """Element-wise projection onto the box; works on (..., n) arrays."""
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        if size is None:
            return rng.uniform(self.lo, self.hi)
        return rng.uniform(self.lo, self.hi, size=(size, self.dimension))

    def corners(self) -> np.ndarray:
        """All 2^n corners; for n = 2 ordered counterclockwise from lo."""
        n = self.dimension
        if n == 2:
            lo, hi = self.lo, self.hi
            return np.array(
                [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]
            )
        grids = np.stack(
            np.meshgrid(*[(self.lo[i], self.hi[i]) for i in range(n)], indexing="ij"),
            axis=-1,
        )
        return grids.reshape(-1, n)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Box":
        try:
            return Box(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed box specification: {exc}") from exc


_ACTIVATIONS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "tanh": np.tanh,
    "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
    "linear": lambda z: z,
}


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float)
        if w.ndim != 2:
            raise InputError("layer weights must be a 2-D matrix")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise InputError("layer bias length must match weight rows")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("layer parameters must be finite")
        if self.activation not in _ACTIVATIONS:
            raise InputError(
                f"unknown activation {self.activation!r}; "
                f"expected one of {sorted(_ACTIVATIONS)}"
            )
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class NeuralController:
    """Feedforward controller u = g(x): an ordered chain of dense layers."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InputError("controller needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise InputError(
                    "controller layer widths do not chain: "
                    f"{prev.weights.shape[0]} -> {nxt.weights.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_width(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_width(self) -> int:
        return self.layers[-1].weights.shape[0]


def controller_eval(controller: NeuralController, x) -> np.ndarray:
    """Forward pass through all layers; x may be (n,) or a batch (m, n)."""
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != controller.input_width:
        raise InputError(
            f"controller expects input width {controller.input_width}, "
            f"got {a.shape[-1]}"
        )
    for layer in controller.layers:
        a = _ACTIVATIONS[layer.activation](a @ layer.weights.T + layer.bias)
    return a


# ---------------------------------------------------------------------------
# Plants


def _constant_field(x, u):
    out = np.zeros_like(x)
    out[..., 0] = 1.0
    return out


def _vanderpol_field(x, u):
    # mu = 1
    out = np.empty_like(x)
    out[..., 0] = x[..., 1]
    out[..., 1] = (1.0 - x[..., 0] ** 2) * x[..., 1] - x[..., 0]
    return out


def _double_integrator_field(x, u):
    out = np.empty_like(x)
    out[..., 0] = x[..., 1]
    out[..., 1] = u[..., 0]
    return out


# name -> (state dim, control dim, field)
_BUILTIN_PLANTS = {
    "constant": (2, 0, _constant_field),
    "vanderpol": (2, 0, _vanderpol_field),
    "double_integrator": (2, 1, _double_integrator_field),
}


class _Plant:
    """Compiled plant: batched callable f(x, u) plus dimension metadata."""

    def __init__(self, kind: str, spec: dict, dimension: int):
        self.kind = kind
        self.spec = spec
        if kind == "builtin":
            name = spec.get("name")
            if name not in _BUILTIN_PLANTS:
                raise InputError(
                    f"unknown builtin plant {name!r}; expected one of "
                    f"{sorted(_BUILTIN_PLANTS)}"
                )
            n, m, fn = _BUILTIN_PLANTS[name]
            if n != dimension:
                raise InputError(
                    f"builtin plant {name!r} has dimension {n}, system says {dimension}"
                )
            self.state_dim, self.control_dim, self._fn = n, m, fn
        elif kind == "linear":
            try:
                A = np.asarray(spec["A"], dtype=float)
            except (KeyError, TypeError, ValueError) as exc:
                raise InputError(f"linear plant needs a square matrix A: {exc}") from exc
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise InputError("linear plant matrix A must be square")
            if A.shape[0] != dimension:
                raise InputError(
                    f"A is {A.shape[0]}x{A.shape[1]}, system dimension is {dimension}"
                )
            B = None
            if spec.get("B") is not None:
                B = np.asarray(spec["B"], dtype=float)
                if B.ndim != 2 or B.shape[0] != dimension:
                    raise InputError("linear plant matrix B must be n x m")
            self.state_dim = dimension
            self.control_dim = 0 if B is None else B.shape[1]
            self._A, self._B = A, B
            self._fn = self._linear_fn
        elif kind == "polynomial":
            terms = spec.get("terms")
            if not isinstance(terms, list) or len(terms) != dimension:
                raise InputError("polynomial plant needs one term list per dimension")
            control_dim = 0
            compiled = []
            for dim_terms in terms:
                row = []
                for term in dim_terms:
                    try:
                        coeff = float(term["coeff"])
                        powers = np.asarray(term["powers"], dtype=int)
                    except (KeyError, TypeError, ValueError) as exc:
                        raise InputError(f"malformed polynomial term: {exc}") from exc
                    if powers.shape != (dimension,):
                        raise InputError(
                            "polynomial term powers must list one exponent per state"
                        )
                    cpowers = np.asarray(term.get("control_powers", []), dtype=int)
                    control_dim = max(control_dim, cpowers.shape[0])
                    row.append((coeff, powers, cpowers))
                compiled.append(row)
            self.state_dim = dimension
            self.control_dim = control_dim
            self._terms = compiled
            self._fn = self._poly_fn
        else:
            raise InputError(
                f"unknown plant kind {kind!r}; expected builtin, linear or polynomial"
            )

    def _linear_fn(self, x, u):
        dx = x @ self._A.T
        if self._B is not None and u is not None:
            dx = dx + u @ self._B.T
        return dx

    def _poly_fn(self, x, u):
        out = np.zeros_like(x)
        for i, row in enumerate(self._terms):
            acc = np.zeros(x.shape[:-1])
            for coeff, powers, cpowers in row:
                term = np.full(x.shape[:-1], coeff)
                for j, pw in enumerate(powers):
                    if pw:
                        term = term * x[..., j] ** pw
                for j, pw in enumerate(cpowers):
                    if pw:
                        term = term * u[..., j] ** pw
                acc = acc + term
            out[..., i] = acc
        return out

    def __call__(self, x, u):
        return self._fn(x, u)


@dataclass
class ClosedLoopSystem:
    """Plant closed with an optional neural controller plus integration setup."""

    name: str
    dimension: int
    plant: _Plant
    controller: NeuralController | None
    h: float
    T: int
    domain: Box | None = None
    initial_set: Box | None = None
    _negate: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.h <= 0:
            raise InputError("step size h must be positive")
        if self.T < 1:
            raise InputError("max steps T must be at least 1")
        if self.dimension < 1:
            raise InputError("system dimension must be positive")
        if self.plant.state_dim != self.dimension:
            raise InputError("plant output dimension must equal system dimension")
        if self.controller is not None:
            if self.controller.input_width != self.dimension:
                raise InputError("controller input width must equal system dimension")
            if self.controller.output_width != self.plant.control_dim:
                raise InputError(
                    "controller output width "
                    f"{self.controller.output_width} does not match plant control "
                    f"dimension {self.plant.control_dim}"
                )
        for box_name in ("domain", "initial_set"):
            box = getattr(self, box_name)
            if box is not None and box.dimension != self.dimension:
                raise InputError(f"{box_name} dimension must equal system dimension")

    def field_at(self, x: np.ndarray) -> np.ndarray:
        """Closed-loop vector field f(x, g(x)), batched over leading axes."""
        u = None
        if self.plant.control_dim > 0:
            if self.controller is not None:
                u = controller_eval(self.controller, x)
            else:
                u = np.zeros(x.shape[:-1] + (self.plant.control_dim,))
        dx = self.plant(x, u)
        return -dx if self._negate else dx

    def reversed(self) -> "ClosedLoopSystem":
        """Same system integrated under the negated vector field."""
        return ClosedLoopSystem(
            name=self.name,
            dimension=self.dimension,
            plant=self.plant,
            controller=self.controller,
            h=self.h,
            T=self.T,
            domain=self.domain,
            initial_set=self.initial_set,
            _negate=not self._negate,
        )

    def time_index(self, t: float) -> int:
        """Snap a time to the nearest step index; reject times off the horizon."""
        k = int(round(t / self.h))
        if abs(t - k * self.h) > _TIME_SNAP_TOL * max(1.0, abs(t)) + 1e-12:
            warnings.warn(
                f"time {t} snapped to grid index {k} (t = {k * self.h})", stacklevel=2
            )
        if k < 0 or k > self.T:
            raise InputError(f"time {t} is outside the horizon [0, {self.T * self.h}]")
        return k


@dataclass(frozen=True)
class Trajectory:
    """Fixed-step sampled solution; samples[i] approximates the state at i*h."""

    samples: np.ndarray  # (steps+1, n)
    h: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise InputError("trajectory needs samples shaped (steps+1, n)")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def initial_state(self) -> np.ndarray:
        return self.samples[0]

    @property
    def steps(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) * self.h

    def state_at_index(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.steps:
            raise InputError(f"sample index {k} outside 0..{self.steps}")
        return self.samples[k]

    def state_at(self, t: float) -> np.ndarray:
        k = int(round(t / self.h))
        if abs(t - k * self.h) > _TIME_SNAP_TOL * max(1.0, abs(t)) + 1e-12:
            warnings.warn(f"time {t} snapped to sample index {k}", stacklevel=2)
        return self.state_at_index(k)

    def truncated(self, steps: int) -> "Trajectory":
        if not 0 <= steps <= self.steps:
            raise InputError(f"cannot truncate to {steps} steps")
        return Trajectory(self.samples[: steps + 1].copy(), self.h)


def _rk4_path(field_at, x0: np.ndarray, h: float, steps: int) -> np.ndarray:
    """Classical RK4 over a batch (m, n); returns (m, steps+1, n)."""
    out = np.empty((x0.shape[0], steps + 1, x0.shape[1]))
    x = x0
    out[:, 0] = x
    half = 0.5 * h
    sixth = h / 6.0
    for i in range(steps):
        k1 = field_at(x)
        k2 = field_at(x + half * k1)
        k3 = field_at(x + half * k2)
        k4 = field_at(x + h * k3)
        x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
            raise DivergenceError("state blew up during integration", i)
        out[:, i + 1] = x
    return out


def simulate_batch(system: ClosedLoopSystem, x0s, steps: int) -> np.ndarray:
    """Integrate a batch of initial states forward; returns (m, steps+1, n)."""
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 2 or x0s.shape[1] != system.dimension:
        raise InputError(
            f"batch must be (m, {system.dimension}), got shape {x0s.shape}"
        )
    if not np.all(np.isfinite(x0s)):
        raise InputError("initial states contain non-finite entries")
    if steps < 0 or steps > system.T:
        raise InputError(f"steps must lie in 0..{system.T}, got {steps}")
    return _rk4_path(system.field_at, x0s, system.h, steps)


def simulate(system: ClosedLoopSystem, x0, steps: int | None = None) -> Trajectory:
    """Forward trajectory from x0 for the given number of steps (default T)."""
    if steps is None:
        steps = system.T
    x0 = _as_state(x0, system.dimension)
    if system.domain is not None and not system.domain.contains(x0):
        warnings.warn("initial state lies outside the declared domain", stacklevel=2)
    path = simulate_batch(system, x0[None, :], steps)
    return Trajectory(path[0], system.h)


def simulate_backward(system: ClosedLoopSystem, x1, steps: int | None = None) -> Trajectory:
    """Backward trajectory from x1: integrates the negated vector field."""
    if steps is None:
        steps = system.T
    x1 = _as_state(x1, system.dimension)
    path = simulate_batch(system.reversed(), x1[None, :], steps)
    return Trajectory(path[0], system.h)


def simulate_backward_batch(system: ClosedLoopSystem, x1s, steps: int) -> np.ndarray:
    return simulate_batch(system.reversed(), x1s, steps)


# ---------------------------------------------------------------------------
# File formats


def save_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header step,t,x1,...,xn; floats use shortest round-trip repr."""
    n = traj.dimension
    header = "step,t," + ",".join(f"x{i + 1}" for i in range(n))
    lines = [header]
    for i, row in enumerate(traj.samples):
        vals = [str(i), repr(i * traj.h)] + [repr(float(v)) for v in row]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def controller_from_list(layer_specs: list) -> NeuralController:
    if not isinstance(layer_specs, list) or not layer_specs:
        raise InputError("controller file must hold a non-empty list of layers")
    layers = []
    for i, spec in enumerate(layer_specs):
        try:
            layers.append(
                Layer(
                    weights=np.asarray(spec["weights"], dtype=float),
                    bias=np.asarray(spec["bias"], dtype=float),
                    activation=spec["activation"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed controller layer {i}: {exc}") from exc
    return NeuralController(tuple(layers))


def load_controller(path) -> NeuralController:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read controller file {path}: {exc}") from exc
    return controller_from_list(raw)


def system_from_dict(d: dict, base_dir: Path | None = None) -> ClosedLoopSystem:
    """Build a system from its JSON dictionary form.

    Expected keys: name, dimension, plant {kind: builtin|linear|polynomial, ...},
    optional controller_file, h, T, optional domain/initial_set boxes.
    """
    try:
        name = d["name"]
        dimension = int(d["dimension"])
        plant_spec = d["plant"]
        h = float(d["h"])
        T = int(d["T"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed system specification: {exc}") from exc
    if not isinstance(plant_spec, dict) or "kind" not in plant_spec:
        raise InputError("plant specification must be an object with a 'kind'")
    plant = _Plant(plant_spec["kind"], plant_spec, dimension)
    controller = None
    if d.get("controller_file"):
        ctl_path = Path(d["controller_file"])
        if base_dir is not None and not ctl_path.is_absolute():
            ctl_path = base_dir / ctl_path
        controller = load_controller(ctl_path)
    elif d.get("controller"):
        controller = controller_from_list(d["controller"])
    domain = Box.from_dict(d["domain"]) if d.get("domain") else None
    initial_set = Box.from_dict(d["initial_set"]) if d.get("initial_set") else None
    return ClosedLoopSystem(
        name=name,
        dimension=dimension,
        plant=plant,
        controller=controller,
        h=h,
        T=T,
        domain=domain,
        initial_set=initial_set,
    )


def load_system(path) -> ClosedLoopSystem:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read system file {path}: {exc}") from exc
    return system_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Catalog

_DBLINT_CONTROLLER = [
    {
        "weights": [[1.0, 0.0], [0.0, 1.0]],
        "bias": [0.0, 0.0],
        "activation": "tanh",
    },
    {
        "weights": [[-1.0, -1.0]],
        "bias": [0.0],
        "activation": "linear",
    },
]

_CATALOG_SPECS = {
    # f = (1, 0): translation at unit speed, closed-form everything.
    "constant2d": {
        "name": "constant2d",
        "dimension": 2,
        "plant": {"kind": "builtin", "name": "constant"},
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]},
    },
    # Circular flow: the flow map is orthogonal, so distances are preserved.
    "rotation2d": {
        "name": "rotation2d",
        "dimension": 2,
        "plant": {"kind": "linear", "A": [[0.0, 1.0], [-1.0, 0.0]]},
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [1.0, 1.0], "hi": [2.0, 2.0]},
    },
    # Lightly damped oscillator: non-orthogonal flow map, distinct eta bounds.
    "damped2d": {
        "name": "damped2d",
        "dimension": 2,
        "plant": {"kind": "linear", "A": [[0.0, 1.0], [-1.0, -0.5]]},
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [1.0, 1.0], "hi": [2.0, 2.0]},
    },
    # Van der Pol oscillator (mu = 1): the 2-D nonlinear benchmark.
    "vdp2d": {
        "name": "vdp2d",
        "dimension": 2,
        "plant": {"kind": "builtin", "name": "vanderpol"},
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [1.0, 1.0], "hi": [1.5, 1.5]},
    },
    # 3-D polynomial plant exercising the polynomial loader.
    "poly3d": {
        "name": "poly3d",
        "dimension": 3,
        "plant": {
            "kind": "polynomial",
            "terms": [
                [
                    {"coeff": -0.1, "powers": [1, 0, 0]},
                    {"coeff": 1.0, "powers": [0, 1, 0]},
                ],
                [
                    {"coeff": -1.0, "powers": [1, 0, 0]},
                    {"coeff": -0.1, "powers": [0, 1, 0]},
                    {"coeff": 0.1, "powers": [0, 0, 2]},
                ],
                [
                    {"coeff": -0.2, "powers": [0, 0, 1]},
                    {"coeff": 0.05, "powers": [1, 1, 0]},
                ],
            ],
        },
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [0.5, 0.5, 0.5], "hi": [1.0, 1.0, 1.0]},
    },
    # Double integrator with a small hand-set tanh controller closing the loop.
    "dblint2d": {
        "name": "dblint2d",
        "dimension": 2,
        "plant": {"kind": "builtin", "name": "double_integrator"},
        "controller": _DBLINT_CONTROLLER,
        "h": 0.01,
        "T": 250,
        "initial_set": {"lo": [0.2, 0.2], "hi": [0.8, 0.8]},
    },
}

CATALOG_NAMES = tuple(sorted(_CATALOG_SPECS))


def make_system(name: str, **overrides) -> ClosedLoopSystem:
    """Instantiate a catalog system; overrides replace top-level spec keys."""
    if name not in _CATALOG_SPECS:
        raise InputError(
            f"unknown catalog system {name!r}; expected one of {CATALOG_NAMES}"
        )
    spec = json.loads(json.dumps(_CATALOG_SPECS[name]))
    spec.update(overrides)
    return system_from_dict(spec)


def resolve_system(name_or_path) -> ClosedLoopSystem:
    """Accept either a catalog name or a path to a system JSON file."""
    text = str(name_or_path)
    if text in _CATALOG_SPECS:
        return make_system(text)
    if Path(text).exists():
        return load_system(text)
    raise InputError(
        f"{text!r} is neither a catalog system {CATALOG_NAMES} nor an existing file"
    )
