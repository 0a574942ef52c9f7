"""Deterministic MLP trainer producing matched standard/QAT checkpoint pairs.

The network is a plain ReLU MLP: rank-2 backbone weights named
layers.{i}.weight (so the per-channel quantizer has real output channels
to act on) plus a linear classifier named head.weight/head.bias. Under
quantization-aware training every backbone weight matrix passes through
the fake quantizer in the forward pass and receives straight-through
(identity) gradients; the head is never quantized.

Training is single-threaded and fully deterministic for a fixed config:
seeded fan-in-uniform initialization, a seeded shuffle stream, sequential
mini-batches, float32 arithmetic. Two runs with the same config produce
bitwise-identical checkpoints, which the golden-file tests rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .containers import Checkpoint, canonical_json
from .errors import DivergenceError, ValidationError
from .optim import AdamWState, adamw_step
from .quantize import QuantSpec, ste_apply
from .tasks import ToyTask


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 3e-3
    weight_decay: float = 0.03
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    qat: bool = False
    quant: QuantSpec = field(default_factory=QuantSpec)
    hidden_dims: tuple[int, ...] = (64, 64)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps_adam": self.eps_adam,
            "seed": self.seed,
            "qat": self.qat,
            "quant": self.quant.to_meta(),
            "hidden_dims": list(self.hidden_dims),
        }

    def config_hash(self, include_qat: bool = True) -> str:
        payload = self.to_dict()
        if not include_qat:
            payload.pop("qat")
        return hashlib.sha256(canonical_json(payload)).hexdigest()

    def as_pair(self) -> tuple[TrainConfig, TrainConfig]:
        """Matched (standard, quantization-aware) configs differing only in qat."""
        return replace(self, qat=False), replace(self, qat=True)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        if not isinstance(data, dict):
            raise ValidationError(f"training config must be a JSON object, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown training-config fields: {unknown}")
        data = dict(data)
        if "quant" in data:
            q = data["quant"]
            data["quant"] = QuantSpec(
                bits=int(q.get("bits", 3)),
                granularity=q.get("granularity", "per-channel"),
                tie_rule=q.get("tie_rule", "half-to-even"),
            )
        if "hidden_dims" in data:
            data["hidden_dims"] = tuple(int(h) for h in data["hidden_dims"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Parameters and the forward/backward pass
# ---------------------------------------------------------------------------


def init_params(d_in: int, hidden_dims: tuple[int, ...], n_classes: int, seed: int) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform weights, zero biases, one seeded draw order."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    params: dict[str, np.ndarray] = {}
    fan_in = d_in
    for i, width in enumerate(hidden_dims):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"layers.{i}.weight"] = rng.uniform(-bound, bound, size=(width, fan_in)).astype(np.float32)
        params[f"layers.{i}.bias"] = np.zeros(width, np.float32)
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    params["head.weight"] = rng.uniform(-bound, bound, size=(n_classes, fan_in)).astype(np.float32)
    params["head.bias"] = np.zeros(n_classes, np.float32)
    return params


def _layer_indices(params: dict[str, np.ndarray]) -> list[int]:
    idx = sorted(
        int(name.split(".")[1]) for name in params if name.startswith("layers.") and name.endswith(".weight")
    )
    if "head.weight" not in params or "head.bias" not in params:
        raise ValidationError("checkpoint has no head.weight/head.bias tensors")
    return idx


def forward_logits(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    qat: bool = False,
    spec: QuantSpec | None = None,
) -> tuple[np.ndarray, list]:
    """Logits plus the activation cache needed for backprop."""
    spec = spec or QuantSpec()
    h = np.asarray(x, np.float32)
    cache = []
    for i in _layer_indices(params):
        w = params[f"layers.{i}.weight"]
        if qat:
            w = ste_apply(w, spec)
        z = h @ w.T + params[f"layers.{i}.bias"]
        a = np.maximum(z, np.float32(0.0))
        cache.append((h, w, z))
        h = a
    logits = h @ params["head.weight"].T + params["head.bias"]
    cache.append((h, params["head.weight"], None))
    return logits, cache


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_and_grads(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    qat: bool = False,
    spec: QuantSpec | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and gradients for every parameter tensor.

    Under qat the forward pass used fake-quantized backbone weights; the
    gradients computed against those quantized values are returned for the
    latent weights unchanged (straight-through contract).
    """
    logits, cache = forward_logits(params, x, qat, spec)
    batch = np.float32(x.shape[0])
    probs = _softmax(logits)
    eps = np.float32(1e-12)
    loss = float(-np.mean(np.log(probs[np.arange(len(y)), y] + eps)))

    grads: dict[str, np.ndarray] = {}
    dlogits = probs
    dlogits[np.arange(len(y)), y] -= np.float32(1.0)
    dlogits /= batch

    h_last, w_head, _ = cache[-1]
    grads["head.weight"] = dlogits.T @ h_last
    grads["head.bias"] = dlogits.sum(axis=0)
    dh = dlogits @ w_head

    for i, (h_in, w_eff, z) in zip(reversed(_layer_indices(params)), reversed(cache[:-1])):
        dz = dh * (z > 0)
        grads[f"layers.{i}.weight"] = dz.T @ h_in
        grads[f"layers.{i}.bias"] = dz.sum(axis=0)
        dh = dz @ w_eff
    return loss, grads


# ---------------------------------------------------------------------------
# Flat parameter views for the optimizer
# ---------------------------------------------------------------------------


def flatten(tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(tensors[n], np.float32).ravel() for n in sorted(tensors)])


def unflatten(flat: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name in sorted(like):
        size = like[name].size
        out[name] = flat[pos : pos + size].reshape(like[name].shape).copy()
        pos += size
    return out


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------


def train(task: ToyTask, cfg: TrainConfig) -> Checkpoint:
    """Train the MLP; returns a tagged checkpoint of the latent weights.

    QAT checkpoints store the latent (un-quantized) parameters: evaluation
    always re-applies the same fake quantizer afterwards, so standard and
    QAT checkpoints are compared under identical inference conditions.
    """
    params = init_params(task.d_in, cfg.hidden_dims, task.n_classes, cfg.seed)
    state = AdamWState.zeros(sum(p.size for p in params.values()))
    rng = np.random.default_rng(np.random.PCG64(cfg.seed + 0x5EED))
    x_train, y_train = task.split("train")

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y_train))
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            loss, grads = cross_entropy_and_grads(
                params, x_train[batch], y_train[batch], cfg.qat, cfg.quant
            )
            if not np.isfinite(loss):
                raise DivergenceError(step=step, epoch=epoch)
            try:
                state, flat = adamw_step(state, flatten(params), flatten(grads), cfg)
            except DivergenceError as exc:
                raise DivergenceError(step=step, epoch=epoch, detail="non-finite gradient") from exc
            params = unflatten(flat, params)

    meta = {
        "task": task.name,
        "seed": str(cfg.seed),
        "regime": "QAT" if cfg.qat else "FT",
        "config_hash": cfg.config_hash(),
        "config_hash_noqat": cfg.config_hash(include_qat=False),
    }
    if cfg.qat:
        meta["bits"] = str(cfg.quant.bits)
    return Checkpoint(dict(params), meta)


def accuracy_on(ckpt: Checkpoint, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy on raw arrays; argmax ties resolve to the lowest class."""
    params = dict(ckpt.entries)
    idx = _layer_indices(params)
    first = params[f"layers.{idx[0]}.weight"] if idx else params["head.weight"]
    if first.shape[1] != x.shape[1]:
        raise ValidationError(
            f"checkpoint expects {first.shape[1]}-dim inputs, task provides {x.shape[1]}"
        )
    logits, _ = forward_logits(params, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def evaluate_top1(ckpt: Checkpoint, task: ToyTask, split: str) -> float:
    """Deterministic Top-1 accuracy of a checkpoint on one task split."""
    x, y = task.split(split)
    if ckpt.entries["head.weight"].shape[0] != task.n_classes:
        raise ValidationError(
            f"checkpoint head has {ckpt.entries['head.weight'].shape[0]} classes, "
            f"task {task.name} has {task.n_classes}"
        )
    return accuracy_on(ckpt, x, y)
