"""Directional sensitivity training data from anchor/neighbor trajectory pairs.

Each anchor trajectory gets a ring of neighbors started on a small sphere
around its initial state. Every (anchor, neighbor, time) combination yields
one tuple holding the states, the unit perturbation direction, the unit
label direction and both magnitudes. The inverse kind labels the
initial-state direction for a time-t displacement; the forward kind labels
the time-t direction for an initial-state displacement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import Box, ClosedLoopSystem, simulate_batch
from .errors import GenerationError, InputError

DEGENERATE_NORM = 1e-12

KINDS = ("inverse", "forward")


@dataclass(frozen=True)
class SampleTuple:
    x_t: np.ndarray
    v_hat: np.ndarray
    t: float
    d_hat: np.ndarray
    mag_v: float
    mag_vminus: float
    kind: str


@dataclass
class SensitivityDataset:
    """Columnar tuple storage: row i is the i-th SampleTuple."""

    system_name: str
    h: float
    kind: str
    x_t: np.ndarray  # (N, n) state input
    v_hat: np.ndarray  # (N, n) unit perturbation direction
    t: np.ndarray  # (N,) times
    d_hat: np.ndarray  # (N, n) unit label direction
    mag_v: np.ndarray  # (N,)
    mag_vminus: np.ndarray  # (N,)
    generation_config: dict = field(default_factory=dict)
    skipped_degenerate: int = 0

    def __len__(self) -> int:
        return self.x_t.shape[0]

    @property
    def dimension(self) -> int:
        return self.x_t.shape[1]

    def tuple_at(self, i: int) -> SampleTuple:
        return SampleTuple(
            x_t=self.x_t[i],
            v_hat=self.v_hat[i],
            t=float(self.t[i]),
            d_hat=self.d_hat[i],
            mag_v=float(self.mag_v[i]),
            mag_vminus=float(self.mag_vminus[i]),
            kind=self.kind,
        )

    def subset(self, idx) -> "SensitivityDataset":
        return SensitivityDataset(
            system_name=self.system_name,
            h=self.h,
            kind=self.kind,
            x_t=self.x_t[idx],
            v_hat=self.v_hat[idx],
            t=self.t[idx],
            d_hat=self.d_hat[idx],
            mag_v=self.mag_v[idx],
            mag_vminus=self.mag_vminus[idx],
            generation_config=dict(self.generation_config),
            skipped_degenerate=self.skipped_degenerate,
        )


def generate_dataset(
    system: ClosedLoopSystem,
    theta: Box | None = None,
    num_anchors: int = 40,
    num_neighbors: int = 10,
    neighbor_radius: float = 0.01,
    time_subsample: int = 5,
    kind: str = "inverse",
    seed: int = 0,
) -> SensitivityDataset:
    """Sample anchors in theta, ring them with sphere neighbors, emit tuples.

    Tuples are taken at time indices {ts, 2*ts, ...} <= T, all cut from the
    same full-length simulations (prefixes are trajectories too, so nothing
    is re-simulated). Neighbor starts sit exactly on the sphere of the given
    radius, matching how the perturbation magnitude is later interpreted.
    """
    if kind not in KINDS:
        raise InputError(f"kind must be one of {KINDS}, got {kind!r}")
    if theta is None:
        theta = system.initial_set
    if theta is None:
        raise InputError("no initial set: pass theta or set system.initial_set")
    if num_anchors < 1 or num_neighbors < 1:
        raise InputError("need at least one anchor and one neighbor")
    if neighbor_radius <= 0:
        raise InputError("neighbor_radius must be positive")
    if time_subsample < 1:
        raise InputError("time_subsample must be at least 1")

    n = system.dimension
    rng = np.random.default_rng(seed)
    anchors = theta.sample(rng, num_anchors)
    offsets = rng.normal(size=(num_anchors, num_neighbors, n))
    offsets *= neighbor_radius / np.linalg.norm(offsets, axis=2, keepdims=True)
    neighbors = anchors[:, None, :] + offsets

    starts = np.concatenate([anchors, neighbors.reshape(-1, n)])
    paths = simulate_batch(system, starts, system.T)
    anchor_paths = paths[:num_anchors]
    neighbor_paths = paths[num_anchors:].reshape(
        num_anchors, num_neighbors, system.T + 1, n
    )

    t_idx = np.arange(time_subsample, system.T + 1, time_subsample)
    if t_idx.size == 0:
        raise InputError("time_subsample exceeds the horizon; no sample times")

    # (A, Nn, K, n) blocks, flattened in (anchor, neighbor, time) order.
    at_t = anchor_paths[:, None, t_idx, :]
    diff_t = neighbor_paths[:, :, t_idx, :] - at_t
    diff_0 = (neighbors - anchors[:, None, :])[:, :, None, :]
    diff_0 = np.broadcast_to(diff_0, diff_t.shape)

    if kind == "inverse":
        state = np.broadcast_to(at_t, diff_t.shape)
        v_raw, d_raw = diff_t, diff_0
    else:
        state = np.broadcast_to(anchors[:, None, None, :], diff_t.shape)
        v_raw, d_raw = diff_0, diff_t

    flat = (-1, n)
    state = state.reshape(flat)
    v_raw = v_raw.reshape(flat)
    d_raw = d_raw.reshape(flat)
    times = np.broadcast_to(
        t_idx[None, None, :] * system.h, diff_t.shape[:3]
    ).reshape(-1)

    mag_v = np.linalg.norm(v_raw, axis=1)
    mag_d = np.linalg.norm(d_raw, axis=1)
    keep = (mag_v >= DEGENERATE_NORM) & (mag_d >= DEGENERATE_NORM)
    skipped = int(np.count_nonzero(~keep))
    if not np.any(keep):
        raise GenerationError(
            "all generated pairs were degenerate (trajectories collapsed)"
        )

    config = {
        "num_anchors": num_anchors,
        "num_neighbors": num_neighbors,
        "neighbor_radius": neighbor_radius,
        "time_subsample": time_subsample,
        "seed": seed,
        "t_scale": system.T * system.h,
    }
    return SensitivityDataset(
        system_name=system.name,
        h=system.h,
        kind=kind,
        x_t=state[keep],
        v_hat=v_raw[keep] / mag_v[keep, None],
        t=times[keep],
        d_hat=d_raw[keep] / mag_d[keep, None],
        mag_v=mag_v[keep],
        mag_vminus=mag_d[keep],
        generation_config=config,
        skipped_degenerate=skipped,
    )


def split_dataset(
    ds: SensitivityDataset, train_fraction: float, seed: int = 0
) -> tuple[SensitivityDataset, SensitivityDataset]:
    """Random train/test partition; deterministic for a given seed."""
    if not 0.0 < train_fraction < 1.0:
        raise InputError("train_fraction must lie strictly between 0 and 1")
    if len(ds) < 2:
        raise InputError("need at least 2 tuples to split")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_train = int(round(train_fraction * len(ds)))
    n_train = min(max(n_train, 1), len(ds) - 1)
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


# ---------------------------------------------------------------------------
# File formats


def dataset_csv_header(n: int) -> str:
    cols = ["kind", "t"]
    cols += [f"x_t_{i + 1}" for i in range(n)]
    cols += [f"vhat_{i + 1}" for i in range(n)]
    cols += [f"dhat_{i + 1}" for i in range(n)]
    cols += ["mag_v", "mag_vminus"]
    return ",".join(cols)


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_dataset_csv(ds: SensitivityDataset, path) -> None:
    """Write tuples as CSV plus a JSON sidecar holding the generation config."""
    path = Path(path)
    lines = [dataset_csv_header(ds.dimension)]
    for i in range(len(ds)):
        row = [ds.kind, repr(float(ds.t[i]))]
        row += [repr(float(v)) for v in ds.x_t[i]]
        row += [repr(float(v)) for v in ds.v_hat[i]]
        row += [repr(float(v)) for v in ds.d_hat[i]]
        row += [repr(float(ds.mag_v[i])), repr(float(ds.mag_vminus[i]))]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "system_name": ds.system_name,
        "h": ds.h,
        "kind": ds.kind,
        "count": len(ds),
        "skipped_degenerate": ds.skipped_degenerate,
        "generation_config": ds.generation_config,
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_dataset_csv(path) -> SensitivityDataset:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read dataset file {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln]
    if len(lines) < 2:
        raise InputError(f"dataset file {path} holds no tuples")
    header = lines[0].split(",")
    n = (len(header) - 4) // 3
    if dataset_csv_header(n) != lines[0]:
        raise InputError(f"unexpected dataset header in {path}")
    kinds, ts, rows = [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise InputError(f"malformed dataset row in {path}: {ln!r}")
        kinds.append(parts[0])
        ts.append(float(parts[1]))
        rows.append([float(v) for v in parts[2:]])
    if len(set(kinds)) != 1:
        raise InputError("dataset rows mix tuple kinds")
    data = np.asarray(rows)
    try:
        sidecar = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read dataset sidecar for {path}: {exc}") from exc
    return SensitivityDataset(
        system_name=sidecar.get("system_name", "unknown"),
        h=float(sidecar.get("h", 0.01)),
        kind=kinds[0],
        x_t=data[:, 0:n],
        v_hat=data[:, n : 2 * n],
        t=np.asarray(ts),
        d_hat=data[:, 2 * n : 3 * n],
        mag_v=data[:, 3 * n],
        mag_vminus=data[:, 3 * n + 1],
        generation_config=sidecar.get("generation_config", {}),
        skipped_degenerate=int(sidecar.get("skipped_degenerate", 0)),
    )
