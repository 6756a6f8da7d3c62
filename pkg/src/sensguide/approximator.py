"""Directional sensitivity predictors: trained network and exact oracles.

The trained model maps (state, unit perturbation direction, scaled time) to
the unit direction of the corresponding sensitivity vector. Architecture:
a Gaussian radial-basis layer of 512 units, two 512-wide rectified-linear
layers, and a linear output head, trained with mini-batch SGD on mean
absolute error. A backward-integration oracle provides the exact answers
behind the same calling contract, plus a full-vector `estimate` used by the
explorer when exactness matters.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import SensitivityDataset, split_dataset
from .dynamics import ClosedLoopSystem
from .errors import (
    DegeneratePredictionError,
    InputError,
    ModelFormatError,
    TrainingDivergedError,
)
from .sensitivity import inverse_sensitivity_oracle, sensitivity_exact

MODEL_FORMAT_VERSION = "1"
RBF_UNITS = 512
HIDDEN_UNITS = 512
ORACLE_PROBE_RADIUS = 1e-4

_UNIT_TOL = 1e-6


def _check_unit(v_hat, n: int) -> np.ndarray:
    v_hat = np.asarray(v_hat, dtype=float)
    if v_hat.shape != (n,):
        raise InputError(f"direction must have shape ({n},), got {v_hat.shape}")
    norm = np.linalg.norm(v_hat)
    if abs(norm - 1.0) > _UNIT_TOL:
        raise InputError(f"direction must be unit norm, got {norm}")
    return v_hat


def _normalize(raw: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(raw)
    if norm < 1e-12:
        raise DegeneratePredictionError(
            "approximator produced a near-zero direction"
        )
    return raw / norm


@dataclass
class MLPModel:
    """RBF + rectified-linear network predicting unit sensitivity directions."""

    system_name: str
    kind: str
    n: int
    t_scale: float
    centers: np.ndarray  # (C, 2n+1)
    widths: np.ndarray  # (C,)
    w1: np.ndarray  # (H, C)
    b1: np.ndarray
    w2: np.ndarray  # (H, H)
    b2: np.ndarray
    w3: np.ndarray  # (n, H)
    b3: np.ndarray
    neighbor_radius: float | None = None

    @property
    def input_width(self) -> int:
        return self.centers.shape[1]

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Raw (un-normalized) network output for a batch of inputs (B, 2n+1)."""
        r = _rbf_activations(X, self.centers, self.widths)
        h1 = np.maximum(r @ self.w1.T + self.b1, 0.0)
        h2 = np.maximum(h1 @ self.w2.T + self.b2, 0.0)
        return h2 @ self.w3.T + self.b3

    def inputs_for(self, x_t, v_hat, t) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=float)
        v_hat = np.asarray(v_hat, dtype=float)
        t = np.asarray(t, dtype=float)
        scaled = t / self.t_scale
        if x_t.ndim == 1:
            return np.concatenate([x_t, v_hat, [float(scaled)]])[None, :]
        return np.concatenate([x_t, v_hat, scaled[:, None]], axis=1)

    def predict(self, x_t, v_hat, t: float) -> np.ndarray:
        """Unit direction prediction; the directional approximator contract."""
        v_hat = _check_unit(v_hat, self.n)
        raw = self.forward(self.inputs_for(x_t, v_hat, t))[0]
        return _normalize(raw)

    def predict_batch(self, x_t: np.ndarray, v_hat: np.ndarray, t: np.ndarray) -> np.ndarray:
        raw = self.forward(self.inputs_for(x_t, v_hat, t))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return raw / np.maximum(norms, 1e-12)


def _rbf_activations(X: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    # ||x - c||^2 via the expansion; tiny negatives are clipped away.
    sq = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ centers.T
        + np.sum(centers * centers, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (widths * widths))


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 120
    batch_size: int = 128
    seed: int = 0
    train_fraction: float = 0.9
    dtype: str = "float32"


@dataclass
class TrainingReport:
    mse: float
    mre_percent: float
    epochs_run: int
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mre_percent": self.mre_percent,
            "epochs_run": self.epochs_run,
            "timing": {"wall_time": self.wall_time},
        }


def _dataset_matrices(ds: SensitivityDataset, t_scale: float, dtype) -> tuple[np.ndarray, np.ndarray]:
    X = np.concatenate(
        [ds.x_t, ds.v_hat, (ds.t / t_scale)[:, None]], axis=1
    ).astype(dtype)
    Y = ds.d_hat.astype(dtype)
    return X, Y


def loss_and_grads(model: MLPModel, X: np.ndarray, Y: np.ndarray):
    """Mean-absolute-error loss and gradients for every trainable tensor."""
    B = X.shape[0]
    sq = (
        np.sum(X * X, axis=1)[:, None]
        - 2.0 * X @ model.centers.T
        + np.sum(model.centers * model.centers, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    inv_w2 = 1.0 / (model.widths * model.widths)
    r = np.exp(-sq * inv_w2)
    z1 = r @ model.w1.T + model.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ model.w2.T + model.b2
    h2 = np.maximum(z2, 0.0)
    out = h2 @ model.w3.T + model.b3

    resid = out - Y
    loss = float(np.mean(np.abs(resid)))
    g = np.sign(resid) / resid.size

    grads = {}
    grads["w3"] = g.T @ h2
    grads["b3"] = g.sum(axis=0)
    dh2 = g @ model.w3
    dz2 = dh2 * (z2 > 0)
    grads["w2"] = dz2.T @ h1
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ model.w2
    dz1 = dh1 * (z1 > 0)
    grads["w1"] = dz1.T @ r
    grads["b1"] = dz1.sum(axis=0)
    dr = dz1 @ model.w1
    dsq = -dr * r * inv_w2
    colsum = dsq.sum(axis=0)
    grads["centers"] = 2.0 * (colsum[:, None] * model.centers - dsq.T @ X)
    grads["widths"] = (dr * r * sq).sum(axis=0) * 2.0 / model.widths**3
    return loss, grads


_PARAM_NAMES = ("centers", "widths", "w1", "b1", "w2", "b2", "w3", "b3")


def _init_model(ds: SensitivityDataset, config: TrainConfig, X: np.ndarray) -> MLPModel:
    rng = np.random.default_rng(config.seed)
    dtype = np.dtype(config.dtype)
    N = X.shape[0]
    idx = rng.choice(N, size=RBF_UNITS, replace=N < RBF_UNITS)
    centers = X[idx].astype(dtype)
    dists = pdist(centers.astype(float))
    med = float(np.median(dists)) if dists.size else 1.0
    if not np.isfinite(med) or med <= 0:
        med = 1.0
    widths = np.full(RBF_UNITS, med, dtype=dtype)

    def dense(rows, cols):
        bound = 1.0 / np.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)

    n = ds.dimension
    t_scale = float(ds.generation_config.get("t_scale") or max(ds.t.max(), 1.0))
    radius = ds.generation_config.get("neighbor_radius")
    return MLPModel(
        system_name=ds.system_name,
        kind=ds.kind,
        n=n,
        t_scale=t_scale,
        centers=centers,
        widths=widths,
        w1=dense(HIDDEN_UNITS, RBF_UNITS),
        b1=np.zeros(HIDDEN_UNITS, dtype=dtype),
        w2=dense(HIDDEN_UNITS, HIDDEN_UNITS),
        b2=np.zeros(HIDDEN_UNITS, dtype=dtype),
        w3=dense(n, HIDDEN_UNITS),
        b3=np.zeros(n, dtype=dtype),
        neighbor_radius=float(radius) if radius is not None else None,
    )


def train(ds: SensitivityDataset, config: TrainConfig | None = None) -> tuple[MLPModel, TrainingReport]:
    """Mini-batch SGD on MAE; reports held-out error on normalized predictions."""
    if config is None:
        config = TrainConfig()
    if len(ds) < 1:
        raise InputError("cannot train on an empty dataset")
    started = time.perf_counter()

    if config.train_fraction >= 1.0:
        train_ds = test_ds = ds
    else:
        train_ds, test_ds = split_dataset(ds, config.train_fraction, seed=config.seed)

    dtype = np.dtype(config.dtype)
    t_scale = float(ds.generation_config.get("t_scale") or max(ds.t.max(), 1.0))
    X, Y = _dataset_matrices(train_ds, t_scale, dtype)
    model = _init_model(train_ds, config, X)

    rng = np.random.default_rng(config.seed + 1)
    lr = config.learning_rate
    N = X.shape[0]
    bs = min(config.batch_size, N)
    for epoch in range(config.epochs):
        perm = rng.permutation(N)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, N, bs):
            sel = perm[start : start + bs]
            loss, grads = loss_and_grads(model, X[sel], Y[sel])
            if not np.isfinite(loss):
                raise TrainingDivergedError("training loss became non-finite", epoch - 1)
            for name in _PARAM_NAMES:
                arr = getattr(model, name)
                arr -= (lr * grads[name]).astype(arr.dtype, copy=False)
            epoch_loss += loss
            batches += 1
        if not np.isfinite(epoch_loss / max(batches, 1)):
            raise TrainingDivergedError("training loss became non-finite", epoch - 1)

    # Parameters are kept in float64 from here on; prediction is always f64.
    for name in _PARAM_NAMES:
        setattr(model, name, np.ascontiguousarray(getattr(model, name), dtype=float))

    metrics = evaluate_model(model, test_ds)
    report = TrainingReport(
        mse=metrics["mse"],
        mre_percent=metrics["mre_percent"],
        epochs_run=config.epochs,
        wall_time=time.perf_counter() - started,
    )
    return model, report


def evaluate_model(model: MLPModel, ds: SensitivityDataset) -> dict:
    """MSE and MRE of normalized predictions against the unit labels."""
    if len(ds) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    preds = model.predict_batch(ds.x_t, ds.v_hat, ds.t)
    err = np.linalg.norm(preds - ds.d_hat, axis=1)
    return {
        "mse": float(np.mean(err**2)),
        "mre_percent": float(np.mean(err) * 100.0),
        "count": len(ds),
    }


def predict_direction(model_or_oracle, x_t, v_hat, t: float) -> np.ndarray:
    """Unit direction from any approximator honoring the predict contract."""
    if not hasattr(model_or_oracle, "predict"):
        raise InputError("object does not expose a predict(x_t, v_hat, t) contract")
    return model_or_oracle.predict(x_t, v_hat, t)


# ---------------------------------------------------------------------------
# Oracles


class ExactOracle:
    """Simulation-backed exact sensitivity answers behind both contracts.

    `estimate` returns the exact vector by a pair of simulations;
    `predict` probes the oracle at a small radius and normalizes, matching
    the directional contract of the trained models.
    """

    trained = False

    def __init__(self, system: ClosedLoopSystem, kind: str = "inverse",
                 probe_radius: float = ORACLE_PROBE_RADIUS):
        if kind not in ("inverse", "forward"):
            raise InputError("oracle kind must be 'inverse' or 'forward'")
        self.system = system
        self.kind = kind
        self.probe_radius = probe_radius

    @property
    def system_name(self) -> str:
        return self.system.name

    def estimate(self, x_t, v, t: float) -> np.ndarray:
        if self.kind == "inverse":
            return inverse_sensitivity_oracle(self.system, x_t, v, t)
        return sensitivity_exact(self.system, x_t, v, t)

    def predict(self, x_t, v_hat, t: float) -> np.ndarray:
        v_hat = _check_unit(v_hat, self.system.dimension)
        raw = self.estimate(x_t, self.probe_radius * v_hat, t)
        return _normalize(raw)


class CorruptedOracle:
    """Exact oracle plus seeded synthetic error for convergence-bound tests.

    Adds a relative term eps_rel*||exact|| and an absolute term eps_abs,
    each along an independently drawn random unit vector, so the result
    stays within the (eps_rel, eps_abs) error model by the triangle
    inequality.
    """

    trained = False

    def __init__(self, system: ClosedLoopSystem, eps_rel: float, eps_abs: float,
                 seed: int = 0, kind: str = "inverse"):
        if eps_rel < 0 or eps_abs < 0:
            raise InputError("error levels must be nonnegative")
        self._inner = ExactOracle(system, kind=kind)
        self.eps_rel = eps_rel
        self.eps_abs = eps_abs
        self._rng = np.random.default_rng(seed)

    @property
    def system_name(self) -> str:
        return self._inner.system_name

    def _unit(self, n: int) -> np.ndarray:
        u = self._rng.normal(size=n)
        norm = np.linalg.norm(u)
        while norm < 1e-12:  # pragma: no cover - essentially impossible
            u = self._rng.normal(size=n)
            norm = np.linalg.norm(u)
        return u / norm

    def estimate(self, x_t, v, t: float) -> np.ndarray:
        exact = self._inner.estimate(x_t, v, t)
        n = exact.shape[0]
        err = self.eps_rel * np.linalg.norm(exact) * self._unit(n)
        err += self.eps_abs * self._unit(n)
        return exact + err


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: MLPModel, path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "system_name": model.system_name,
        "kind": model.kind,
        "arch": {
            "input": model.input_width,
            "rbf_units": int(model.centers.shape[0]),
            "hidden": [int(model.w1.shape[0]), int(model.w2.shape[0])],
            "output": model.n,
        },
        "normalization": {
            "t_scale": model.t_scale,
            "neighbor_radius": model.neighbor_radius,
        },
        "layers": [
            {
                "type": "rbf",
                "centers": model.centers.tolist(),
                "widths": model.widths.tolist(),
            },
            {
                "type": "dense",
                "activation": "relu",
                "weights": model.w1.tolist(),
                "bias": model.b1.tolist(),
            },
            {
                "type": "dense",
                "activation": "relu",
                "weights": model.w2.tolist(),
                "bias": model.b2.tolist(),
            },
            {
                "type": "dense",
                "activation": "linear",
                "weights": model.w3.tolist(),
                "bias": model.b3.tolist(),
            },
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def _field(doc: dict, path: str, outer: str = ""):
    cur = doc
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise ModelFormatError("missing field", f"{outer}{path}")
        cur = cur[part]
    return cur


def _dense_from(doc: dict, index: int, activation: str) -> tuple[np.ndarray, np.ndarray]:
    where = f"layers[{index}]"
    if doc.get("type") != "dense" or doc.get("activation") != activation:
        raise ModelFormatError(
            f"expected a dense {activation} layer", where
        )
    try:
        w = np.asarray(_field(doc, "weights", where + "."), dtype=float)
        b = np.asarray(_field(doc, "bias", where + "."), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"non-numeric parameters: {exc}", where) from exc
    if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ModelFormatError("weight/bias shapes do not chain", where)
    return w, b


def load_model(path) -> MLPModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model file must hold a JSON object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r}, "
            f"expected {MODEL_FORMAT_VERSION!r}",
            "version",
        )
    layers = _field(doc, "layers")
    if not isinstance(layers, list) or len(layers) != 4:
        raise ModelFormatError("expected exactly 4 layers", "layers")
    rbf = layers[0]
    if rbf.get("type") != "rbf":
        raise ModelFormatError("first layer must be the rbf layer", "layers[0]")
    try:
        centers = np.asarray(_field(rbf, "centers", "layers[0]."), dtype=float)
        widths = np.asarray(_field(rbf, "widths", "layers[0]."), dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"non-numeric parameters: {exc}", "layers[0]") from exc
    if centers.ndim != 2 or widths.ndim != 1 or widths.shape[0] != centers.shape[0]:
        raise ModelFormatError("rbf centers/widths shapes disagree", "layers[0]")
    if np.any(widths <= 0):
        raise ModelFormatError("rbf widths must be positive", "layers[0].widths")
    w1, b1 = _dense_from(layers[1], 1, "relu")
    w2, b2 = _dense_from(layers[2], 2, "relu")
    w3, b3 = _dense_from(layers[3], 3, "linear")
    if w1.shape[1] != centers.shape[0] or w2.shape[1] != w1.shape[0] \
            or w3.shape[1] != w2.shape[0]:
        raise ModelFormatError("layer widths do not chain", "layers")
    n = w3.shape[0]
    if centers.shape[1] != 2 * n + 1:
        raise ModelFormatError(
            f"input width {centers.shape[1]} does not match 2*{n}+1", "arch.input"
        )
    norm = _field(doc, "normalization")
    t_scale = norm.get("t_scale")
    if not isinstance(t_scale, (int, float)) or t_scale <= 0:
        raise ModelFormatError("t_scale must be positive", "normalization.t_scale")
    radius = norm.get("neighbor_radius")
    model = MLPModel(
        system_name=str(_field(doc, "system_name")),
        kind=str(_field(doc, "kind")),
        n=n,
        t_scale=float(t_scale),
        centers=centers,
        widths=widths,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        w3=w3,
        b3=b3,
        neighbor_radius=float(radius) if radius is not None else None,
    )
    if model.kind not in ("inverse", "forward"):
        raise ModelFormatError(f"unknown model kind {model.kind!r}", "kind")
    return model
