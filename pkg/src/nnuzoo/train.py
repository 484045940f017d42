"""Losses and the training loop shared by every architecture."""
from __future__ import annotations

import copy
import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import IGNORE_INDEX, AugmentConfig, SegmentationDataset, augment, collate
from .eval.metrics import mean_foreground_dice


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    optimizer: str = "adam"  # "adam" or "sgd"
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    momentum: float = 0.99
    nesterov: bool = True
    weight_decay: float = 0.0
    lr_exponent: float = 0.9
    w_dice: float = 1.0
    w_ce: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0  # 0 keeps only the best-validation checkpoint
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.w_dice < 0 or self.w_ce < 0 or self.w_dice + self.w_ce == 0:
            raise ValueError("loss weights must be non-negative and not both zero")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        self.betas = tuple(self.betas)

    @classmethod
    def sgd_profile(cls, **kw) -> "TrainConfig":
        """SGD(0.01, momentum 0.99, nesterov) as used by nnUNet-style pipelines."""
        return cls(**{"optimizer": "sgd", "lr": 1e-2, "momentum": 0.99, "nesterov": True,
                      "weight_decay": 3e-5, **kw})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["augment"] = self.augment.to_dict() if self.augment else None
        return d


# ----------------------------------------------------------------------------- losses

def soft_dice_loss(probs: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX,
                   eps: float = 1e-5) -> torch.Tensor:
    """1 - mean over foreground classes of (2 sum pg + eps) / (sum p + sum g + eps), batch-aggregated."""
    if probs.ndim != 4 or labels.shape != (probs.shape[0], *probs.shape[2:]):
        raise ValueError(f"soft_dice_loss: probs {tuple(probs.shape)} vs labels {tuple(labels.shape)}")
    k = probs.shape[1]
    valid = (labels != ignore_index).unsqueeze(1).to(probs.dtype)
    safe = torch.where(labels == ignore_index, torch.zeros_like(labels), labels).long()
    onehot = F.one_hot(safe, k).permute(0, 3, 1, 2).to(probs.dtype) * valid
    p = probs * valid
    dims = (0, 2, 3)
    inter = (p * onehot).sum(dims)
    denom = p.sum(dims) + onehot.sum(dims)
    dice = (2 * inter + eps) / (denom + eps)
    return 1 - dice[1:].mean()


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX) -> torch.Tensor:
    """Mean of -log softmax(logits)[label] over non-ignored pixels."""
    if logits.ndim != 4 or labels.shape != (logits.shape[0], *logits.shape[2:]):
        raise ValueError(f"cross_entropy: logits {tuple(logits.shape)} vs labels {tuple(labels.shape)}")
    k = logits.shape[1]
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bool(bad.any()):
        raise ValueError(f"cross_entropy: label {int(labels[bad][0])} outside [0, {k})")
    safe = torch.where(valid, labels, torch.zeros_like(labels)).long()
    shifted = logits - logits.amax(1, keepdim=True).detach()
    logz = shifted.exp().sum(1).log()
    picked = shifted.gather(1, safe.unsqueeze(1)).squeeze(1)
    nll = (logz - picked) * valid.to(logits.dtype)
    return nll.sum() / valid.sum().clamp_min(1)


def combined_loss(logits, labels, w_dice: float = 1.0, w_ce: float = 1.0, ignore_index: int = IGNORE_INDEX):
    loss = logits.new_zeros(())
    if w_dice:
        loss = loss + w_dice * soft_dice_loss(torch.softmax(logits, 1), labels, ignore_index)
    if w_ce:
        loss = loss + w_ce * cross_entropy(logits, labels, ignore_index)
    return loss


def poly_lr(base_lr: float, epoch: int, total: int, exponent: float = 0.9) -> float:
    return base_lr * (1 - epoch / total) ** exponent


# ----------------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_val_dice: float
    best_state: dict = field(repr=False, default_factory=dict)
    checkpoints: list[str] = field(default_factory=list)

    def history_csv(self) -> str:
        return history_to_csv(self.history)


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_dice")


def history_to_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})
    return buf.getvalue()


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, nesterov=cfg.nesterov,
                           weight_decay=cfg.weight_decay)


def _batches(ds: SegmentationDataset, order, size: int):
    for i in range(0, len(order), size):
        yield [ds[int(j)] for j in order[i:i + size]]


@torch.no_grad()
def evaluate(model, ds: SegmentationDataset, batch_size: int = 8, w_dice: float = 1.0, w_ce: float = 1.0):
    """(mean loss, mean per-case foreground dice, per-case dice list) with hard argmax predictions."""
    was_training = model.training
    model.eval()
    total, n, dices = 0.0, 0, []
    for batch in _batches(ds, np.arange(len(ds)), batch_size):
        x, y = collate(batch)
        x, y = torch.from_numpy(x), torch.from_numpy(y)
        logits = model(x)
        total += float(combined_loss(logits, y, w_dice, w_ce)) * len(batch)
        n += len(batch)
        pred = logits.argmax(1).numpy()
        dices += [mean_foreground_dice(p, g, ds.num_classes) for p, g in zip(pred, y.numpy())]
    model.train(was_training)
    return total / max(n, 1), float(np.mean(dices)) if dices else float("nan"), dices


def train_loop(model, train_set: SegmentationDataset, val_set: SegmentationDataset, cfg: TrainConfig,
               out_dir=None, log=None) -> TrainResult:
    """Train ``model`` in place; the returned state is the best validation epoch.

    With ``out_dir`` set, ``history.csv`` and ``best.ckpt`` (plus periodic
    ``epoch_XXX.ckpt`` if requested) are written there.
    """
    from .models.checkpoint import save_checkpoint

    if train_set.num_classes != val_set.num_classes:
        raise ValueError("train and validation sets disagree on num_classes")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng(cfg.seed + 1)
    opt = make_optimizer(model.parameters(), cfg)
    history: list[dict] = []
    best = (-1, -math.inf)
    best_state: dict = {}
    ckpts: list[str] = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        lr = poly_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_exponent)
        for g in opt.param_groups:
            g["lr"] = lr
        order = order_rng.permutation(len(train_set))
        run, seen = 0.0, 0
        for batch in _batches(train_set, order, cfg.batch_size):
            if cfg.augment is not None:
                batch = [augment(s, aug_rng, cfg.augment) for s in batch]
            x, y = collate(batch)
            logits = model(torch.from_numpy(x))
            loss = combined_loss(logits, torch.from_numpy(y), cfg.w_dice, cfg.w_ce)
            value = loss.detach().item()
            if not math.isfinite(value):
                raise NonFiniteLossError(step, value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            run += value * len(batch)
            seen += len(batch)
            step += 1
        val_loss, val_dice, _ = evaluate(model, val_set, cfg.batch_size, cfg.w_dice, cfg.w_ce)
        rec = {"epoch": epoch, "lr": lr, "train_loss": run / seen, "val_loss": val_loss, "val_dice": val_dice}
        history.append(rec)
        if log is not None:
            log(rec)
        if val_dice > best[1]:
            best = (epoch, val_dice)
            best_state = copy.deepcopy(model.state_dict())
            if out is not None and hasattr(model, "config"):
                ckpts.append(str(save_checkpoint(model, out / "best.ckpt")))
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 \
                and hasattr(model, "config"):
            ckpts.append(str(save_checkpoint(model, out / f"epoch_{epoch + 1:03d}.ckpt")))
        if out is not None:
            (out / "history.csv").write_text(history_to_csv(history))
    return TrainResult(history, best[0], best[1], best_state, sorted(set(ckpts)))


__all__ = ["HISTORY_FIELDS", "NonFiniteLossError", "TrainConfig", "TrainResult", "combined_loss", "cross_entropy",
           "evaluate", "history_to_csv", "make_optimizer", "poly_lr", "soft_dice_loss", "train_loop"]
