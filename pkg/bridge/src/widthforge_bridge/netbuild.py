"""Turn an architecture JSON document into a trainable torch network.

Every conv becomes conv-BN-ReLU (BN scales are what the optimizer side
ranks); residual blocks add their input, average-pooling it first when a
stride inside the block shrank the spatial dims. Channel equality across a
residual add is guaranteed upstream by width-unit coupling and re-checked
here. The MAC counter mirrors the optimizer side's convention: one
multiply-accumulate per FLOP, same padding, ceil spatial division,
non-parametric ops free.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

INPUT_CHANNELS = 3

CONV_KINDS = ("standard-conv", "depthwise-conv", "pointwise-conv")


class BridgeError(ValueError):
    pass


def iter_layer_docs(arch: dict):
    """(path, layer dict) over the whole network, topological order."""
    for i, layer in enumerate(arch["stem"]):
        yield f"stem.{i}", layer
    for si, stage in enumerate(arch["stages"]):
        for bi, block in enumerate(stage["blocks"]):
            for li, layer in enumerate(block["layers"]):
                yield f"s{si}.b{bi}.l{li}", layer
    for i, layer in enumerate(arch["head"]):
        yield f"head.{i}", layer


def derive_units(arch: dict) -> list[dict]:
    """First-occurrence unit registry: id, base channel count, member paths."""
    order: list[str] = []
    info: dict[str, dict] = {}
    for path, layer in iter_layer_docs(arch):
        unit = layer["width_unit"]
        if unit == "fixed":
            continue
        if unit not in info:
            order.append(unit)
            info[unit] = {"id": unit, "base": layer["base_out_channels"], "members": []}
        elif info[unit]["base"] != layer["base_out_channels"]:
            raise BridgeError(f"unit {unit!r} members disagree on channel count")
        info[unit]["members"].append(path)
    return [info[u] for u in order]


def count_macs(arch: dict, resolution: int) -> int:
    if resolution < 1:
        raise BridgeError("resolution must be >= 1")
    h = w = resolution
    current = INPUT_CHANNELS
    total = 0
    for path, layer in iter_layer_docs(arch):
        out = layer["base_out_channels"]
        if layer["kind"] == "fully-connected":
            total += current * out
            h = w = 1
        elif layer["kind"] in CONV_KINDS:
            groups = layer["groups"]
            if current % groups:
                raise BridgeError(f"{path}: groups {groups} do not divide {current}")
            h = -(-h // layer["stride"])
            w = -(-w // layer["stride"])
            total += (current // groups) * out * layer["kernel"] ** 2 * h * w
        else:
            raise BridgeError(f"{path}: unknown layer kind {layer['kind']!r}")
        current = out
    return total


class _ConvUnit(nn.Module):
    def __init__(self, in_channels: int, layer: dict, relu: bool = True):
        super().__init__()
        k = layer["kernel"]
        self.conv = nn.Conv2d(
            in_channels,
            layer["base_out_channels"],
            kernel_size=k,
            stride=layer["stride"],
            padding=k // 2,
            groups=layer["groups"],
            bias=False,
        )
        self.bn = nn.BatchNorm2d(layer["base_out_channels"])
        self.relu = relu

    def forward(self, x):
        x = self.bn(self.conv(x))
        return F.relu(x) if self.relu else x


class _Block(nn.Module):
    def __init__(self, in_channels: int, block: dict):
        super().__init__()
        self.residual = bool(block["residual"])
        convs = []
        current = in_channels
        for layer in block["layers"]:
            if layer["kind"] == "fully-connected":
                raise BridgeError("fully-connected layers are only supported in the head")
            convs.append(_ConvUnit(current, layer))
            current = layer["base_out_channels"]
        if self.residual and current != in_channels:
            raise BridgeError(
                f"residual block changes channels {in_channels} -> {current}"
            )
        self.convs = nn.ModuleList(convs)
        self.out_channels = current

    def forward(self, x):
        out = x
        for conv in self.convs:
            out = conv(out)
        if self.residual:
            shortcut = x
            if shortcut.shape[-2:] != out.shape[-2:]:
                shortcut = F.adaptive_avg_pool2d(shortcut, out.shape[-2:])
            out = out + shortcut
        return out


class BridgeNet(nn.Module):
    """Network assembled from an architecture document.

    ``bn_by_path`` maps every conv layer path to its batch-norm module so
    per-unit scale magnitudes can be read back out after training.
    """

    def __init__(self, arch: dict):
        super().__init__()
        self.bn_by_path: dict[str, nn.BatchNorm2d] = {}
        current = INPUT_CHANNELS

        stem = []
        for i, layer in enumerate(arch["stem"]):
            unit = _ConvUnit(current, layer)
            self.bn_by_path[f"stem.{i}"] = unit.bn
            stem.append(unit)
            current = layer["base_out_channels"]
        self.stem = nn.ModuleList(stem)

        blocks = []
        for si, stage in enumerate(arch["stages"]):
            for bi, block_doc in enumerate(stage["blocks"]):
                block = _Block(current, block_doc)
                for li, conv in enumerate(block.convs):
                    self.bn_by_path[f"s{si}.b{bi}.l{li}"] = conv.bn
                blocks.append(block)
                current = block.out_channels
        self.blocks = nn.ModuleList(blocks)

        head_convs = []
        self.classifier: nn.Linear | None = None
        head_layers = list(arch["head"])
        for i, layer in enumerate(head_layers):
            if layer["kind"] == "fully-connected":
                if i != len(head_layers) - 1:
                    raise BridgeError("fully-connected must be the last head layer")
                self.classifier = nn.Linear(current, layer["base_out_channels"])
                current = layer["base_out_channels"]
            else:
                unit = _ConvUnit(current, layer)
                self.bn_by_path[f"head.{i}"] = unit.bn
                head_convs.append(unit)
                current = layer["base_out_channels"]
        self.head_convs = nn.ModuleList(head_convs)
        if self.classifier is None:
            raise BridgeError("architecture has no classifier head")

    def forward(self, x):
        for unit in self.stem:
            x = unit(x)
        for block in self.blocks:
            x = block(x)
        for unit in self.head_convs:
            x = unit(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.classifier(x)


def unit_scores(model: BridgeNet, arch: dict) -> dict[str, list[float]]:
    """Per-unit channel importance: mean |gamma| across member batch norms."""
    scores: dict[str, list[float]] = {}
    for unit in derive_units(arch):
        gammas = []
        for path in unit["members"]:
            bn = model.bn_by_path.get(path)
            if bn is None:
                raise BridgeError(f"unit {unit['id']}: no batch norm at {path}")
            gammas.append(bn.weight.detach().abs())
        stacked = torch.stack(gammas, dim=0).mean(dim=0)
        if stacked.numel() != unit["base"]:
            raise BridgeError(
                f"unit {unit['id']}: scored {stacked.numel()} channels, "
                f"expected {unit['base']}"
            )
        scores[unit["id"]] = [float(v) for v in stacked]
    return scores
