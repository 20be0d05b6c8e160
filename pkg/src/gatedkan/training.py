"""Training loop: Adam, cosine schedule with warmup, early stopping.

Fully deterministic per seed: data order, parameter init, and shuffling all
derive from named sub-streams of the run seed, and the loop is single
threaded over batches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import SeriesDataset
from .model import GatedModel, windows_to_rows
from .rng import stream

__all__ = [
    "TrainConfig",
    "LossReport",
    "AdamState",
    "TrainingDiverged",
    "gated_loss",
    "adam_step",
    "cosine_lr",
    "train",
    "evaluate_mse",
    "evaluate_window_losses",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 50
    patience: int = 10
    batch_size: int = 64
    lambda_g: float = 0.0
    seed: int = 0
    warmup_steps: int | None = None  # None -> 5% of total steps
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be >= 0")
        if self.patience > self.epochs:
            raise ValueError("patience must be <= epochs")


@dataclass
class LossReport:
    """Per-step loss components plus the per-epoch validation trace."""

    steps: list = field(default_factory=list)  # (step, lr, mse, gate_penalty, total)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    epochs_run: int = 0


def gated_loss(
    y_hat: Tensor, y: Tensor, gates: dict, lambda_g: float, channels: int
) -> tuple[Tensor, Tensor, Tensor]:
    """Total loss = MSE + lambda_g * (E||g_t||_1 + E||g_r||_1).

    The L1 norm of a gate vector per window is its sum over channels; since
    gates are per-channel rows here, E_batch[sum_c g] == channels * mean(rows).
    Returns (total, mse, penalty) tensors; penalty is the unweighted sum.
    """
    if lambda_g < 0:
        raise ValueError("lambda_g must be >= 0")
    if y_hat.shape != y.shape:
        raise ad.ShapeMismatchError(f"loss: prediction {y_hat.shape} vs target {y.shape}")
    mse = ad.square(y_hat - y).mean()
    if gates:
        penalty = (gates["trend"].mean() + gates["resid"].mean()) * float(channels)
    else:
        penalty = Tensor(0.0)
    total = mse + penalty * lambda_g
    return total, mse, penalty


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Standard Adam update, in place on the parameter arrays."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def cosine_lr(step: int, total_steps: int, lr0: float, warmup: int = 0) -> float:
    """Linear warmup to lr0, then cosine decay to zero at total_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup > 0 and step < warmup:
        return lr0 * step / warmup
    span = max(total_steps - warmup, 1)
    progress = min(max((step - warmup) / span, 0.0), 1.0)
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * progress))


def _clip_gradients(grads: dict, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


def evaluate_window_losses(model: GatedModel, x: np.ndarray, y: np.ndarray, batch: int = 512):
    """Per-window mean squared error in the original (denormalized) scale."""
    if x.shape[0] == 0:
        raise ValueError("evaluate: empty split")
    pred = model.predict_windows(x, batch=batch)
    err = pred - y
    return np.mean(err.reshape(err.shape[0], -1) ** 2, axis=1)


def evaluate_mse(model: GatedModel, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    return float(np.mean(evaluate_window_losses(model, x, y, batch=batch)))


def train(
    model: GatedModel,
    dataset: SeriesDataset,
    config: TrainConfig,
    log_path=None,
) -> tuple[GatedModel, LossReport]:
    """Optimize the model in place; restores the best-validation parameters.

    Early-stops after `patience` epochs without a validation improvement.
    The validation metric is plain MSE (no gate penalty): model selection
    tracks forecast quality.
    """
    x_train, y_train = dataset.windows("train")
    x_val, y_val = dataset.windows("val")
    n_train = x_train.shape[0]
    channels = dataset.n_channels

    report = LossReport()
    if config.epochs == 0:
        report.best_val_mse = evaluate_mse(model, x_val, y_val)
        report.best_epoch = -1
        return model, report

    steps_per_epoch = max(1, (n_train + config.batch_size - 1) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup = (
        config.warmup_steps
        if config.warmup_steps is not None
        else int(round(0.05 * total_steps))
    )

    state = AdamState.for_params(model.named_parameters())
    best_snapshot = model.parameter_snapshot()
    bad_epochs = 0
    step = 0
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(config.epochs):
            order = stream(config.seed, f"shuffle-{epoch}").permutation(n_train)
            for lo in range(0, n_train, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                xb = windows_to_rows(x_train[idx])
                yb = windows_to_rows(y_train[idx])
                lr = cosine_lr(step, total_steps, config.lr0, warmup)

                tape = Tape()
                tensors, wrap = model._binding(tape)
                res = model.forward_rows(xb, binding=wrap)
                total, mse, penalty = gated_loss(
                    res.y, Tensor(yb), res.gates, config.lambda_g, channels
                )
                if not np.isfinite(total.values).all():
                    raise TrainingDiverged(f"non-finite loss at step {step}")
                names = list(tensors)
                grad_list = tape.gradients(total, [tensors[k] for k in names])
                grads = dict(zip(names, grad_list))
                _clip_gradients(grads, config.clip_norm)
                adam_step(model.named_parameters(), grads, state, lr)

                record = (step, lr, mse.item(), penalty.item(), total.item())
                report.steps.append(record)
                if log_fh is not None:
                    log_fh.write(
                        json.dumps(
                            {
                                "step": step,
                                "lr": lr,
                                "mse": record[2],
                                "gate_penalty": record[3],
                                "total": record[4],
                            }
                        )
                        + "\n"
                    )
                step += 1

            val_mse = evaluate_mse(model, x_val, y_val)
            report.val_mse.append(val_mse)
            report.epochs_run = epoch + 1
            if log_fh is not None:
                log_fh.write(json.dumps({"epoch": epoch, "val_mse": val_mse}) + "\n")
            if val_mse < report.best_val_mse:
                report.best_val_mse = val_mse
                report.best_epoch = epoch
                best_snapshot = model.parameter_snapshot()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    model.load_snapshot(best_snapshot)
    return model, report


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: GatedModel, state: AdamState, epoch: int) -> None:
    from .model import _encode_array, model_document

    doc = {
        "format": "gated-kan-checkpoint",
        "version": 1,
        "model": model_document(model),
        "optimizer": {
            "t": state.t,
            "m": {k: _encode_array(v) for k, v in state.m.items()},
            "v": {k: _encode_array(v) for k, v in state.v.items()},
        },
        "epoch": epoch,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[GatedModel, AdamState, int]:
    from .model import ModelConfig, ModelFormatError, _decode_array

    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "gated-kan-checkpoint":
        raise ModelFormatError(f"{path}: not a checkpoint file")
    mdoc = doc["model"]
    config = ModelConfig.from_dict(mdoc["config"])
    model = GatedModel(config, rng=stream(0, "load-init"))
    for name, tdoc in mdoc["tensors"].items():
        model.set_parameter(name, _decode_array(tdoc))
    state = AdamState(
        m={k: _decode_array(v) for k, v in doc["optimizer"]["m"].items()},
        v={k: _decode_array(v) for k, v in doc["optimizer"]["v"].items()},
        t=doc["optimizer"]["t"],
    )
    return model, state, doc["epoch"]
