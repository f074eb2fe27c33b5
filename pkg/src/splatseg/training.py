"""Object-feature training: linear classifier, losses, Adam, and the loop.

Each iteration renders the feature channel for one uniformly sampled
view, maps every pixel's 16-dim blended feature to 256 class logits
through a shared linear layer, takes the softmax cross-entropy against
that view's label mask, and backpropagates to the per-splat features
and the layer. Geometry, opacities, and color coefficients are frozen
throughout; only the features and the classifier move.

Because the frozen geometry fixes every view's blend weights, the
per-view weight matrices are computed once up front and reused, which
makes an iteration two sparse matrix products plus the classifier math.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IoError, LabelError, NumericError, ParseError, ShapeError
from .masks import LabelMap
from .rasterizer import view_weight_matrix
from .scene import FEATURE_DIM, NUM_LABELS, Scene


@dataclass
class LinearClassifier:
    """Affine map from 16-dim features to 256 class logits."""

    weights: np.ndarray  # (256, 16)
    bias: np.ndarray  # (256,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(
            NUM_LABELS, FEATURE_DIM
        )
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(NUM_LABELS)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise NumericError("classifier parameters must be finite")

    @classmethod
    def init(cls, seed: int = 0) -> "LinearClassifier":
        """Seeded init: weights uniform in +-1/sqrt(16), bias zero."""
        rng = np.random.default_rng(seed)
        half_width = 1.0 / np.sqrt(FEATURE_DIM)
        weights = rng.uniform(-half_width, half_width, size=(NUM_LABELS, FEATURE_DIM))
        return cls(weights, np.zeros(NUM_LABELS))

    def copy(self) -> "LinearClassifier":
        return LinearClassifier(self.weights.copy(), self.bias.copy())

    def logits(self, features: np.ndarray) -> np.ndarray:
        """(..., 16) features -> (..., 256) logits."""
        return np.asarray(features, dtype=np.float64) @ self.weights.T + self.bias


@dataclass(frozen=True)
class TrainConfig:
    lr_features: float = 0.005
    lr_linear: float = 0.0005
    iterations: int = 30000
    gamma_obj: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr_features <= 0 or self.lr_linear <= 0:
            raise ConfigError("learning rates must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64))


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update. Mutates the state, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape}, state {state.m.shape} must match"
        )
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def _softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, max-shifted for stability."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _ce_loss_and_grad(probs: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows plus the gradient w.r.t. the logits."""
    n = len(targets)
    picked = probs[np.arange(n), targets]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad = probs / n
    grad[np.arange(n), targets] -= 1.0 / n
    return loss, grad


def class_probabilities(clf: LinearClassifier, feature_image: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities for an (H, W, 16) feature image."""
    feats = np.asarray(feature_image, dtype=np.float64)
    if feats.shape[-1] != FEATURE_DIM:
        raise ShapeError(f"feature image last dim must be {FEATURE_DIM}, got {feats.shape[-1]}")
    if not np.isfinite(feats).all():
        raise NumericError("feature image contains non-finite values")
    return _softmax(clf.logits(feats))


def cross_entropy(probs: np.ndarray, target: LabelMap | np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-probability of the target labels.

    Returns the scalar loss and the gradient with respect to the logits,
    (P - onehot(target)) / n_pixels, shaped like ``probs``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    target_arr = target.labels if isinstance(target, LabelMap) else np.asarray(target)
    if probs.shape[:-1] != target_arr.shape:
        raise ShapeError(f"probs {probs.shape[:-1]} vs target {target_arr.shape}")
    if probs.shape[-1] != NUM_LABELS:
        raise ShapeError(f"probs last dim must be {NUM_LABELS}, got {probs.shape[-1]}")
    flat_t = target_arr.reshape(-1).astype(np.int64)
    if flat_t.size and (flat_t.min() < 0 or flat_t.max() >= NUM_LABELS):
        raise LabelError(f"target labels must lie in [0, {NUM_LABELS - 1}]")
    loss, grad = _ce_loss_and_grad(probs.reshape(-1, NUM_LABELS).copy(), flat_t)
    return loss, grad.reshape(probs.shape)


def total_loss(l_rgb: float, l_obj: float, gamma_obj: float) -> float:
    """Combined objective: photometric term plus weighted segmentation term.

    The photometric term is reported, not optimized, in this pipeline
    (geometry and colors are frozen), so the trained objective reduces
    to gamma_obj * l_obj.
    """
    return l_rgb + gamma_obj * l_obj


def train(
    scene: Scene,
    clf: LinearClassifier,
    cameras,
    masks,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[Scene, LinearClassifier, np.ndarray]:
    """Optimize per-splat features and the classifier against label masks.

    Returns a new scene (trained features, all other fields shared
    bit-identical), the trained classifier, and the per-iteration loss
    history. Deterministic for a fixed seed and thread count.
    """
    cameras = list(cameras)
    masks = list(masks)
    if not cameras:
        raise ConfigError("at least one camera is required")
    if len(cameras) != len(masks):
        raise ConfigError(f"{len(cameras)} cameras but {len(masks)} masks")

    weight_mats = [view_weight_matrix(scene, cam) for cam in cameras]
    targets = []
    for v, (cam, mask) in enumerate(zip(cameras, masks)):
        arr = mask.labels if isinstance(mask, LabelMap) else np.asarray(mask)
        if arr.shape != (cam.height, cam.width):
            raise ConfigError(f"view {v}: mask shape {arr.shape} != camera image size")
        targets.append(arr.reshape(-1).astype(np.int64))

    features = scene.obj_features.astype(np.float64)
    weights = clf.weights.copy()
    bias = clf.bias.copy()
    feat_state = AdamState.like(features)
    w_state = AdamState.like(weights)
    b_state = AdamState.like(bias)

    rng = np.random.default_rng(cfg.seed)
    history = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        v = int(rng.integers(len(cameras)))
        feat_img = weight_mats[v] @ features  # (pixels, 16)
        probs = _softmax(feat_img @ weights.T + bias)
        loss, grad_z = _ce_loss_and_grad(probs, targets[v])
        history[it] = loss
        if cfg.gamma_obj == 0.0:
            continue
        grad_z *= cfg.gamma_obj
        grad_w = grad_z.T @ feat_img
        grad_b = grad_z.sum(axis=0)
        grad_feat = weight_mats[v].T @ (grad_z @ weights)
        features = adam_step(
            feat_state, features, grad_feat, cfg.lr_features, cfg.beta1, cfg.beta2, cfg.eps
        )
        weights = adam_step(w_state, weights, grad_w, cfg.lr_linear, cfg.beta1, cfg.beta2, cfg.eps)
        bias = adam_step(b_state, bias, grad_b, cfg.lr_linear, cfg.beta1, cfg.beta2, cfg.eps)

    out_scene = Scene(
        scene.positions,
        scene.scales,
        scene.rotations,
        scene.opacities,
        scene.sh_coeffs,
        features.astype(np.float32),
        scene.labels,
        scene.sh_degree,
    )
    return out_scene, LinearClassifier(weights, bias), history


# ---------------------------------------------------------------------------
# Checkpoints: magic header, version byte, config, classifier parameters,
# all little-endian.

_CKPT_MAGIC = b"SPLATSEG"
_CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sB")
_CKPT_CFG = struct.Struct("<ddIddddq")  # lr_f, lr_l, iters, gamma, b1, b2, eps, seed


def save_checkpoint(path, clf: LinearClassifier, cfg: TrainConfig) -> None:
    try:
        with open(path, "wb") as f:
            f.write(_CKPT_HEAD.pack(_CKPT_MAGIC, _CKPT_VERSION))
            f.write(
                _CKPT_CFG.pack(
                    cfg.lr_features, cfg.lr_linear, cfg.iterations, cfg.gamma_obj,
                    cfg.beta1, cfg.beta2, cfg.eps, cfg.seed,
                )
            )
            f.write(clf.weights.astype("<f8").tobytes())
            f.write(clf.bias.astype("<f8").tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_checkpoint(path) -> tuple[LinearClassifier, TrainConfig]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(blob) < _CKPT_HEAD.size:
        raise ParseError(f"{path}: truncated checkpoint", offset=len(blob))
    magic, version = _CKPT_HEAD.unpack_from(blob, 0)
    if magic != _CKPT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic {magic!r}", offset=0)
    if version != _CKPT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}", offset=8)
    off = _CKPT_HEAD.size
    need = off + _CKPT_CFG.size + 8 * (NUM_LABELS * FEATURE_DIM + NUM_LABELS)
    if len(blob) != need:
        raise ParseError(f"{path}: expected {need} bytes, got {len(blob)}", offset=len(blob))
    lr_f, lr_l, iters, gamma, b1, b2, eps, seed = _CKPT_CFG.unpack_from(blob, off)
    off += _CKPT_CFG.size
    w = np.frombuffer(blob, dtype="<f8", count=NUM_LABELS * FEATURE_DIM, offset=off)
    off += 8 * NUM_LABELS * FEATURE_DIM
    b = np.frombuffer(blob, dtype="<f8", count=NUM_LABELS, offset=off)
    cfg = TrainConfig(
        lr_features=lr_f, lr_linear=lr_l, iterations=iters, gamma_obj=gamma,
        beta1=b1, beta2=b2, eps=eps, seed=seed,
    )
    return LinearClassifier(w.reshape(NUM_LABELS, FEATURE_DIM).copy(), b.copy()), cfg
