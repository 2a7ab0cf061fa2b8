"""Desk-scale training recipe: momentum SGD, linear warmup into a constant
learning rate, label smoothing 0.1. Small batches, few epochs; the point is
usable accuracy signals and moved batch-norm scales, not benchmark numbers.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def train_model(
    model: nn.Module,
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    epochs: int,
    seed: int,
    batch_size: int = 128,
    base_lr: float = 0.05,
) -> bool:
    """Train in place; returns True when training diverged (NaN loss)."""
    generator = torch.Generator().manual_seed(seed)
    criterion = nn.CrossEntropyLoss(label_smoothing=0.1)
    optimizer = torch.optim.SGD(model.parameters(), lr=base_lr, momentum=0.9, nesterov=True)
    n = train_x.shape[0]
    steps_per_epoch = max(1, math.ceil(n / batch_size))
    total_steps = epochs * steps_per_epoch
    warmup = max(1, total_steps // 10)

    model.train()
    step = 0
    for _ in range(epochs):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            step += 1
            lr = base_lr * min(1.0, step / warmup)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = criterion(model(train_x[batch]), train_y[batch])
            if not torch.isfinite(loss):
                return True
            loss.backward()
            optimizer.step()
    return False


@torch.no_grad()
def evaluate_accuracy(model: nn.Module, val_x: torch.Tensor, val_y: torch.Tensor, batch_size: int = 256) -> float:
    model.eval()
    correct = 0
    for start in range(0, val_x.shape[0], batch_size):
        logits = model(val_x[start : start + batch_size])
        correct += int((logits.argmax(dim=1) == val_y[start : start + batch_size]).sum())
    return correct / val_x.shape[0]
