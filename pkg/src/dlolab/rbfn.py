"""Radial-basis-function model of the global deformation Jacobian.

The model maps the relative state to one 3x12 Jacobian block per feature:
stacking Gaussian activations theta(s) and contracting them with a weight
tensor gives feature velocities that are linear in the scaled end
velocity u = T nu. Weight layout is (feature k, coordinate j, velocity
component i, neuron a), so reshaping to (3m, 12q) exposes the training
and rollout contractions as plain matrix products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .staterep import relative_state, relative_state_batch, scale_diagonal


@dataclass
class RbfnModel:
    feature_count: int
    centers: np.ndarray      # (q, D) with D = 3m + 11
    log_widths: np.ndarray   # (q,)
    weights: np.ndarray      # (m, 3, 12, q)
    scale_normalized: bool = True
    provenance: dict = field(default_factory=dict)

    @property
    def neuron_count(self) -> int:
        return self.centers.shape[0]

    @property
    def input_dim(self) -> int:
        return self.centers.shape[1]

    def validate(self) -> None:
        m, q = self.feature_count, self.neuron_count
        if self.centers.shape != (q, 3 * m + 11):
            raise ValueError(f"centers shape {self.centers.shape} does not match m={m}")
        if self.log_widths.shape != (q,):
            raise ValueError("log_widths must have one entry per neuron")
        if self.weights.shape != (m, 3, 12, q):
            raise ValueError(f"weights shape {self.weights.shape} != {(m, 3, 12, q)}")

    def copy(self) -> "RbfnModel":
        return RbfnModel(
            feature_count=self.feature_count,
            centers=self.centers.copy(),
            log_widths=self.log_widths.copy(),
            weights=self.weights.copy(),
            scale_normalized=self.scale_normalized,
            provenance=dict(self.provenance),
        )

    def velocity_scale(self, length: float) -> np.ndarray:
        """Diagonal of T: identity when trained without scale normalization."""
        if self.scale_normalized:
            return scale_diagonal(length)
        return np.ones(12)


def activations(model: RbfnModel, inputs: np.ndarray) -> np.ndarray:
    """Gaussian activations theta, shape (B, q) for inputs (B, D)."""
    sq = (
        np.sum(inputs**2, axis=1)[:, None]
        + np.sum(model.centers**2, axis=1)[None, :]
        - 2.0 * inputs @ model.centers.T
    )
    np.maximum(sq, 0.0, out=sq)
    widths = np.exp(model.log_widths)
    return np.exp(-sq / widths[None, :] ** 2)


def predict_jacobian(model: RbfnModel, x: np.ndarray, r: np.ndarray,
                     length: float) -> np.ndarray:
    """Estimated deformation Jacobian (3m x 12) at one observed state."""
    s = relative_state(x, r, normalize=model.scale_normalized)
    theta = activations(model, s[None])[0]
    blocks = model.weights @ theta  # (m, 3, 12)
    jac = blocks.reshape(3 * model.feature_count, 12)
    return jac * model.velocity_scale(length)[None, :]


def predict_velocity_batch(
    model: RbfnModel,
    inputs: np.ndarray,
    scaled_nu: np.ndarray,
    theta: np.ndarray | None = None,
) -> np.ndarray:
    """Feature velocities (B, 3m) for relative states (B, D) and u = T nu (B, 12)."""
    if theta is None:
        theta = activations(model, inputs)
    b = theta.shape[0]
    q = model.neuron_count
    v = (scaled_nu[:, :, None] * theta[:, None, :]).reshape(b, 12 * q)
    w2 = model.weights.reshape(3 * model.feature_count, 12 * q)
    return v @ w2.T


def model_inputs(model: RbfnModel, x: np.ndarray, r: np.ndarray,
                 nu: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relative states and scaled velocities for a batch of raw samples."""
    s = relative_state_batch(x, r, normalize=model.scale_normalized)
    if model.scale_normalized:
        u = nu.copy()
        u[:, 3:6] *= lengths[:, None]
        u[:, 9:12] *= lengths[:, None]
    else:
        u = nu
    return s, u


def rollout(
    model: RbfnModel,
    x0: np.ndarray,
    r0: np.ndarray,
    nus: np.ndarray,
    length: float,
    dt: float,
) -> np.ndarray:
    """Integrate predicted feature motion under a velocity sequence.

    Gripper poses advance with the exact kinematics; features move with
    the predicted Jacobian. Returns features after each of the len(nus)
    steps, shape (T, m, 3).
    """
    from .rodsim import advance_ends  # local import to avoid a cycle
    from .staterep import EndPose

    x = x0.copy()
    ends = EndPose.from_vector(r0)
    out = np.empty((len(nus), x0.shape[0], 3))
    for i, nu in enumerate(nus):
        jac = predict_jacobian(model, x, ends.as_vector(), length)
        x = x + (jac @ nu).reshape(-1, 3) * dt
        ends = advance_ends(ends, nu, dt)
        out[i] = x
    return out


# ---------------------------------------------------------------------------
# Center initialization


def kmeans_centers(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 100,
    rel_tol: float = 1e-6,
) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding.

    Stops after max_iter rounds or when the relative inertia improvement
    falls below rel_tol. Returns (centers, inertia).
    """
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} points to place {k} centers, got {n}")
    centers = _kmeans_pp_seed(points, k, rng)
    inertia = np.inf
    for _ in range(max_iter):
        d2 = _sq_distances(points, centers)
        assign = np.argmin(d2, axis=1)
        own = d2[np.arange(n), assign]
        new_inertia = float(np.sum(own))
        far_order = np.argsort(-own)
        far_ptr = 0
        for c in range(k):
            mask = assign == c
            if np.any(mask):
                centers[c] = points[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster on the worst-covered point.
                centers[c] = points[far_order[far_ptr]]
                far_ptr += 1
        if np.isfinite(inertia) and inertia - new_inertia <= rel_tol * max(inertia, 1e-300):
            inertia = new_inertia
            break
        inertia = new_inertia
    return centers, inertia


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_distances(points, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            centers[i:] = points[rng.integers(n, size=k - i)]
            break
        probs = closest / total
        centers[i] = points[rng.choice(n, p=probs)]
        d = _sq_distances(points, centers[i : i + 1])[:, 0]
        np.minimum(closest, d, out=closest)
    return centers


def _sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a**2, axis=1)[:, None]
        + np.sum(b**2, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def widths_from_centers(centers: np.ndarray, neighbors: int = 3) -> np.ndarray:
    """Per-neuron width: mean distance to the nearest other centers."""
    q = centers.shape[0]
    if q == 1:
        return np.ones(1)
    nn = min(neighbors, q - 1)
    d = np.sqrt(_sq_distances(centers, centers))
    np.fill_diagonal(d, np.inf)
    nearest = np.sort(d, axis=1)[:, :nn]
    return np.maximum(nearest.mean(axis=1), 1e-6)


# ---------------------------------------------------------------------------
# Serialization


def model_to_dict(model: RbfnModel) -> dict:
    model.validate()
    return {
        "kind": "dlolab-rbfn",
        "version": 1,
        "feature_count": model.feature_count,
        "neuron_count": model.neuron_count,
        "input_dim": model.input_dim,
        "scale_normalized": model.scale_normalized,
        "centers": model.centers.tolist(),
        "log_widths": model.log_widths.tolist(),
        "weights": model.weights.tolist(),
        "provenance": model.provenance,
    }


def model_from_dict(data: dict) -> RbfnModel:
    if data.get("kind") != "dlolab-rbfn":
        raise ValueError("not a serialized model")
    model = RbfnModel(
        feature_count=int(data["feature_count"]),
        centers=np.asarray(data["centers"], dtype=float),
        log_widths=np.asarray(data["log_widths"], dtype=float),
        weights=np.asarray(data["weights"], dtype=float),
        scale_normalized=bool(data["scale_normalized"]),
        provenance=data.get("provenance", {}),
    )
    model.validate()
    return model


def save_model(model: RbfnModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path: str) -> RbfnModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
