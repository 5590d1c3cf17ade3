"""Per-fold training: Adam, per-epoch cosine schedule, clipping, best-val checkpointing."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from ._util import derive_seed, fingerprint
from .data import DatasetManifest, load_images
from .errors import DataError, TrainingError
from .metrics import balanced_accuracy, confusion
from .model import BackboneSpec, bce_with_logits, build_model, save_checkpoint
from .preprocess import CropSpec, NormalizationStats, PreprocessConfig, preprocess_eval, preprocess_train
from .splits import FoldAssignment, fold_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 1e-4
    weight_decay: float = 1e-6
    batch_size: int = 64
    epochs: int = 5
    clip_norm: float = 1000.0
    mixed_precision: bool = False
    seed: int = 42
    lr_min: float = 0.0
    device: str = "cpu"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_max <= 0 or self.lr_min < 0 or self.weight_decay < 0 or self.clip_norm <= 0:
            raise ValueError("lr_max and clip_norm must be positive; lr_min, weight_decay non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class CheckpointMeta:
    fold: int
    best_epoch: int  # 1-based
    best_val_loss: float
    val_metrics_per_epoch: list[dict]
    config_fingerprint: str
    seed: int
    initial_train_loss: float | None = None
    final_train_loss: float | None = None
    checkpoint_path: str | None = None

    def to_dict(self):
        return asdict(self)


def cosine_lr(t: float, T: float, lr_max: float, lr_min: float = 0.0) -> float:
    if T <= 0:
        raise ValueError("total steps T must be positive")
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * t / T))


def clip_gradients(grads: Sequence[torch.Tensor], max_norm: float = 1000.0, context: str = "") -> list[torch.Tensor]:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [g for g in grads if g is not None]
    if not grads:
        return grads
    norm = torch.sqrt(sum(g.detach().double().pow(2).sum() for g in grads))
    if not torch.isfinite(norm):
        raise TrainingError(f"non-finite gradient norm{' at ' + context if context else ''}")
    if norm > max_norm:
        scale = max_norm / float(norm)
        for g in grads:
            g.mul_(scale)
    return grads


def select_best_epoch(val_losses: Sequence[float]) -> int:
    """0-based index of the minimal loss; ties keep the earliest epoch."""
    if not val_losses:
        raise ValueError("no validation losses recorded")
    best = 0
    for i, v in enumerate(val_losses):
        if v < val_losses[best]:
            best = i
    return best


_P_LO, _P_HI = np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)


def _stack(arrays) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrays))


@torch.no_grad()
def _evaluate_tensor(model, x: torch.Tensor, y: torch.Tensor, batch_size: int):
    model.eval()
    logits = torch.cat([model(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]).float()
    per_sample = logits.clamp(min=0) - logits * y + torch.log1p(torch.exp(-logits.abs()))
    return float(per_sample.mean()), np.clip(torch.sigmoid(logits.double()).numpy(), _P_LO, _P_HI)


def validate(model, images: Sequence[np.ndarray], labels: Sequence[int], crop: CropSpec,
             stats: NormalizationStats, batch_size: int = 64):
    """Mean BCE and per-sample probabilities on un-augmented inputs."""
    if len(images) == 0:
        raise ValueError("validation set is empty")
    x = _stack([preprocess_eval(im, crop, stats) for im in images])
    y = torch.tensor(list(labels), dtype=torch.float32)
    return _evaluate_tensor(model, x, y, batch_size)


def train_fold(
    config: TrainConfig,
    manifest: DatasetManifest,
    assignment: FoldAssignment,
    fold: int,
    model_spec: BackboneSpec,
    preprocess: PreprocessConfig,
    images: dict[str, np.ndarray] | None = None,
    checkpoint_path=None,
    log_path=None,
    config_fingerprint: str | None = None,
    val_loss_hook: Callable[[int, float], float] | None = None,
) -> CheckpointMeta:
    """Train one fold and keep the parameters of the lowest-validation-loss epoch.

    ``val_loss_hook(epoch, loss) -> loss`` replaces the measured validation loss
    before checkpoint selection (used to test selection in isolation).
    """
    train_ids, val_ids = fold_split(assignment, fold)
    if not train_ids or not val_ids:
        raise DataError(f"fold {fold}: empty train or validation split")
    if images is None:
        images = load_images(manifest)
    labels = {r.sample_id: r.label for r in manifest.records}
    crop, policy, stats = preprocess.crop, preprocess.augment, preprocess.normalization
    if config_fingerprint is None:
        config_fingerprint = fingerprint(
            {"train": config.to_dict(), "preprocess": preprocess.to_dict(), "backbone": model_spec.to_dict(),
             "k": assignment.k, "split_seed": assignment.seed}
        )

    device = torch.device(config.device)
    model = build_model(model_spec, seed=derive_seed(config.seed, "init", fold)).to(device)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.lr_max, betas=(0.9, 0.999), eps=1e-8,
                           weight_decay=config.weight_decay)
    amp_dtype = torch.float16 if device.type == "cuda" else torch.bfloat16
    scaler = torch.amp.GradScaler(device.type, enabled=config.mixed_precision)
    aug_rng = np.random.default_rng(derive_seed(config.seed, "augment", fold))
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle", fold))

    x_val = _stack([preprocess_eval(images[s], crop, stats) for s in val_ids]).to(device)
    y_val = torch.tensor([labels[s] for s in val_ids], dtype=torch.float32, device=device)
    x_tr_eval = _stack([preprocess_eval(images[s], crop, stats) for s in train_ids]).to(device)
    y_tr = torch.tensor([labels[s] for s in train_ids], dtype=torch.float32, device=device)
    initial_train_loss, _ = _evaluate_tensor(model, x_tr_eval, y_tr, config.batch_size)

    history, val_losses = [], []
    best_state, best_loss = None, math.inf
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")
    try:
        for epoch in range(config.epochs):
            lr = cosine_lr(epoch, config.epochs, config.lr_max, config.lr_min)
            for g in opt.param_groups:
                g["lr"] = lr
            model.train()
            order = shuffle_rng.permutation(len(train_ids))
            loss_sum, seen = 0.0, 0
            for step, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start : start + config.batch_size]
                x = _stack([preprocess_train(images[train_ids[i]], crop, policy, stats, aug_rng) for i in idx]).to(device)
                y = y_tr[torch.from_numpy(idx)]
                with torch.autocast(device.type, dtype=amp_dtype, enabled=config.mixed_precision):
                    logits = model(x)
                loss = bce_with_logits(logits.float(), y)
                where = f"fold {fold} epoch {epoch + 1} step {step}"
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite training loss at {where}")
                opt.zero_grad(set_to_none=True)
                scaler.scale(loss).backward()
                scaler.unscale_(opt)
                grads = [p.grad for p in params if p.grad is not None]
                if config.mixed_precision and not all(torch.isfinite(g).all() for g in grads):
                    pass  # overflow: the scaler skips this step and lowers its scale
                else:
                    clip_gradients(grads, config.clip_norm, context=where)
                scaler.step(opt)
                scaler.update()
                loss_sum += loss.item() * len(idx)
                seen += len(idx)

            val_loss, val_probs = _evaluate_tensor(model, x_val, y_val, config.batch_size)
            if val_loss_hook is not None:
                val_loss = float(val_loss_hook(epoch, val_loss))
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at fold {fold} epoch {epoch + 1}")
            preds = (val_probs >= 0.5).astype(int)
            ba = balanced_accuracy(confusion(y_val.cpu().numpy().astype(int), preds))
            entry = {"epoch": epoch + 1, "lr": lr, "train_loss": loss_sum / seen, "val_loss": val_loss,
                     "val_balanced_accuracy": ba}
            history.append(entry)
            val_losses.append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                best_state = copy.deepcopy(model.state_dict())
            if log_file is not None:
                log_file.write(json.dumps({**entry, "timestamp": time.time()}) + "\n")
                log_file.flush()
            log.info("fold %d epoch %d lr %.3g train %.4f val %.4f", fold, epoch + 1, lr, entry["train_loss"], val_loss)
    finally:
        if log_file is not None:
            log_file.close()

    final_train_loss, _ = _evaluate_tensor(model, x_tr_eval, y_tr, config.batch_size)
    best = select_best_epoch(val_losses)
    meta = CheckpointMeta(
        fold=fold,
        best_epoch=best + 1,
        best_val_loss=val_losses[best],
        val_metrics_per_epoch=history,
        config_fingerprint=config_fingerprint,
        seed=config.seed,
        initial_train_loss=initial_train_loss,
        final_train_loss=final_train_loss,
    )
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            best_state,
            {
                "backbone": model_spec.to_dict(),
                "crop": crop.to_dict(),
                "normalization": stats.to_dict(),
                "fold": fold,
                "k": assignment.k,
                "seed": config.seed,
                "best_epoch": best + 1,
                "best_val_loss": val_losses[best],
                "config_fingerprint": config_fingerprint,
            },
        )
        meta.checkpoint_path = str(checkpoint_path)
    return meta
