"""Offline training of the deformation-Jacobian model.

Smooth-L1 regression of recorded feature velocities onto model
predictions with Adam, a 90/10 train/validation split, and optional
on-the-fly rotation augmentation about the vertical axis. Centers come
from k-means on the relative states; widths start at width_scale times
the mean distance to the three nearest other centers and are trained in
log space together with the centers and the weight tensor. The returned model carries the
parameters of the epoch with the lowest validation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .rbfn import RbfnModel, activations, kmeans_centers, widths_from_centers
from .staterep import relative_state_batch, rotate_relative_inputs


@dataclass
class TrainConfig:
    neuron_count: int = 256
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    smooth_l1_beta: float = 1.0
    val_fraction: float = 0.1
    kmeans_subset: int = 10_000
    width_scale: float = 1.5
    augment_rotations: bool = True
    scale_normalize: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")
        if self.neuron_count < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("neuron_count, epochs, batch_size must be positive")
        if self.width_scale <= 0:
            raise ValueError("width_scale must be positive")


def smooth_l1(z: np.ndarray, beta: float) -> np.ndarray:
    """Elementwise smooth-L1: quadratic inside |z| < beta, linear outside."""
    az = np.abs(z)
    return np.where(az < beta, 0.5 * z**2 / beta, az - 0.5 * beta)


def smooth_l1_grad(z: np.ndarray, beta: float) -> np.ndarray:
    return np.clip(z / beta, -1.0, 1.0)


def loss_and_gradients(
    model: RbfnModel,
    s: np.ndarray,
    u: np.ndarray,
    y: np.ndarray,
    beta: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean smooth-L1 loss of one batch and its gradients.

    Inputs: relative states s (B,D), scaled velocities u (B,12), stacked
    target velocities y (B,3m). Returns (loss, dweights, dcenters,
    dlog_widths) with gradient shapes matching the parameters.
    """
    b, q = s.shape[0], model.neuron_count
    m = model.feature_count
    widths = np.exp(model.log_widths)
    d2 = (
        np.sum(s**2, axis=1)[:, None]
        + np.sum(model.centers**2, axis=1)[None, :]
        - 2.0 * s @ model.centers.T
    )
    np.maximum(d2, 0.0, out=d2)
    theta = np.exp(-d2 / widths[None, :] ** 2)

    w2 = model.weights.reshape(3 * m, 12 * q)
    v = (u[:, :, None] * theta[:, None, :]).reshape(b, 12 * q)
    pred = v @ w2.T
    z = pred - y
    loss = float(np.mean(smooth_l1(z, beta)))
    g = smooth_l1_grad(z, beta) / z.size  # (B, 3m)

    dw = (g.T @ v).reshape(model.weights.shape)
    dv = (g @ w2).reshape(b, 12, q)
    dtheta = np.einsum("biq,bi->bq", dv, u)
    ct = dtheta * theta  # (B, q), shared factor of the center/width grads
    inv_w2 = 1.0 / widths**2
    dcenters = (2.0 * inv_w2)[:, None] * (ct.T @ s - ct.sum(axis=0)[:, None] * model.centers)
    dlog_widths = 2.0 * inv_w2 * np.sum(ct * d2, axis=0)
    return loss, dw, dcenters, dlog_widths


def _validation_loss(model: RbfnModel, s: np.ndarray, u: np.ndarray,
                     y: np.ndarray, beta: float, chunk: int = 4096) -> float:
    total = 0.0
    m = model.feature_count
    w2 = model.weights.reshape(3 * m, 12 * model.neuron_count)
    for i in range(0, s.shape[0], chunk):
        sl = slice(i, i + chunk)
        theta = activations(model, s[sl])
        v = (u[sl][:, :, None] * theta[:, None, :]).reshape(theta.shape[0], -1)
        z = v @ w2.T - y[sl]
        total += float(np.sum(smooth_l1(z, beta)))
    return total / (s.shape[0] * 3 * m)


class _Adam:
    def __init__(self, shapes: dict[str, tuple], lr: float, b1: float,
                 b2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros(v) for k, v in shapes.items()}
        self.v = {k: np.zeros(v) for k, v in shapes.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g**2
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def train_offline(dataset: Dataset, config: TrainConfig) -> RbfnModel:
    """Fit an RbfnModel to a dataset; provenance carries the loss history."""
    config.validate()
    if len(dataset) < 2:
        raise ValueError("dataset too small to split")
    rng = np.random.default_rng(config.seed)
    m = dataset.feature_count
    n = len(dataset)

    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < config.neuron_count:
        raise ValueError(
            f"{train_idx.size} training tuples cannot support "
            f"{config.neuron_count} neurons"
        )

    s_all = relative_state_batch(dataset.x, dataset.r, normalize=config.scale_normalize)
    u_all = dataset.nu.copy()
    if config.scale_normalize:
        lengths = dataset.lengths
        u_all[:, 3:6] *= lengths[:, None]
        u_all[:, 9:12] *= lengths[:, None]
    y_all = dataset.xdot.reshape(n, 3 * m)

    subset = train_idx
    if subset.size > config.kmeans_subset:
        subset = rng.choice(train_idx, size=config.kmeans_subset, replace=False)
    centers, _ = kmeans_centers(s_all[subset], config.neuron_count, rng)
    # Widths a bit above the k-means spacing trade a little in-sample
    # accuracy for smoother extrapolation, which matters when a model
    # trained on one cable is evaluated on another.
    model = RbfnModel(
        feature_count=m,
        centers=centers,
        log_widths=np.log(config.width_scale * widths_from_centers(centers)),
        weights=np.zeros((m, 3, 12, config.neuron_count)),
        scale_normalized=config.scale_normalize,
    )

    adam = _Adam(
        {"weights": model.weights.shape, "centers": model.centers.shape,
         "log_widths": model.log_widths.shape},
        config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps,
    )
    s_val, u_val, y_val = s_all[val_idx], u_all[val_idx], y_all[val_idx]

    history = {"train_loss": [], "val_loss": []}
    best_val = np.inf
    best = (model.weights.copy(), model.centers.copy(), model.log_widths.copy())
    t_start = time.perf_counter()
    for _ in range(config.epochs):
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for i in range(0, order.size, config.batch_size):
            idx = order[i : i + config.batch_size]
            s_b, u_b, y_b = s_all[idx], u_all[idx], y_all[idx]
            if config.augment_rotations:
                angles = rng.uniform(0.0, 2.0 * np.pi, size=idx.size)
                s_b, u_b, y_b = rotate_relative_inputs(s_b, u_b, y_b, angles, m)
            loss, dw, dc, dlw = loss_and_gradients(model, s_b, u_b, y_b,
                                                   config.smooth_l1_beta)
            adam.step(
                {"weights": model.weights, "centers": model.centers,
                 "log_widths": model.log_widths},
                {"weights": dw, "centers": dc, "log_widths": dlw},
            )
            epoch_loss += loss * idx.size
        history["train_loss"].append(epoch_loss / order.size)
        val_loss = _validation_loss(model, s_val, u_val, y_val, config.smooth_l1_beta)
        history["val_loss"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = (model.weights.copy(), model.centers.copy(), model.log_widths.copy())

    model.weights, model.centers, model.log_widths = best
    model.provenance = {
        "config": {
            "neuron_count": config.neuron_count, "epochs": config.epochs,
            "batch_size": config.batch_size, "learning_rate": config.learning_rate,
            "smooth_l1_beta": config.smooth_l1_beta,
            "val_fraction": config.val_fraction,
            "augment_rotations": config.augment_rotations,
            "scale_normalize": config.scale_normalize, "seed": config.seed,
        },
        "dataset": {"tuples": n, "metadata": dataset.metadata,
                    "lengths": sorted({d.length for d in dataset.dlos})},
        "best_val_loss": best_val,
        "train_seconds": time.perf_counter() - t_start,
        "history": history,
    }
    return model
