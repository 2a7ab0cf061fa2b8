"""Down-scaling operators and optimization-cost accounting.

Architectures project along width (uniform channel rescale) and depth
(per-stage block count rescale, first block always kept); dataset
descriptors project along resolution and class-balanced sample fraction.
Overhead reports count the MACs a width-optimization run consumes, and the
savings helpers compare runs either measured or in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping

from .archspec import (
    ArchSpec,
    BlockSpec,
    DEPTHWISE_CONV,
    FIXED,
    LayerSpec,
    flops,
    round_channels,
    width_units,
)
from .jsonio import canonical_dumps, format_fraction, parse_fraction


class ProjectionError(ValueError):
    """Invalid projection configuration or incomparable overhead reports."""


@dataclass(frozen=True)
class DatasetSpec:
    """Descriptor only: class counts and resolution, no pixels."""

    name: str
    num_classes: int
    samples_per_class: tuple[int, ...]
    resolution: int

    def __post_init__(self):
        object.__setattr__(self, "samples_per_class", tuple(int(c) for c in self.samples_per_class))
        if self.num_classes < 1:
            raise ProjectionError("num_classes must be >= 1")
        if len(self.samples_per_class) != self.num_classes:
            raise ProjectionError(
                f"samples_per_class has {len(self.samples_per_class)} entries "
                f"for {self.num_classes} classes"
            )
        if any(c < 0 for c in self.samples_per_class):
            raise ProjectionError("per-class sample counts must be non-negative")
        if self.resolution < 1:
            raise ProjectionError("resolution must be >= 1")

    @property
    def total_samples(self) -> int:
        return sum(self.samples_per_class)

    def to_dict(self) -> dict:
        return {
            "schema": "widthforge.dataset@1",
            "name": self.name,
            "num_classes": self.num_classes,
            "resolution": self.resolution,
            "samples_per_class": list(self.samples_per_class),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        allowed = {"schema", "name", "num_classes", "resolution", "samples_per_class"}
        if not isinstance(doc, dict) or set(doc) - allowed:
            raise ProjectionError("unknown fields in dataset document")
        return cls(
            name=doc["name"],
            num_classes=int(doc["num_classes"]),
            samples_per_class=tuple(int(c) for c in doc["samples_per_class"]),
            resolution=int(doc["resolution"]),
        )


@dataclass(frozen=True)
class ProjectionConfig:
    """A proxy configuration tuple: (width, depth, resolution, data fraction)."""

    width_mult: Fraction
    depth_mult: Fraction
    resolution: int
    sample_fraction: Fraction

    def __post_init__(self):
        object.__setattr__(self, "width_mult", Fraction(self.width_mult))
        object.__setattr__(self, "depth_mult", Fraction(self.depth_mult))
        object.__setattr__(self, "sample_fraction", Fraction(self.sample_fraction))
        if self.width_mult <= 0 or self.depth_mult <= 0:
            raise ProjectionError("multipliers must be positive")
        if self.resolution < 1:
            raise ProjectionError("resolution must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ProjectionError("sample_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "width_mult": format_fraction(self.width_mult),
            "depth_mult": format_fraction(self.depth_mult),
            "resolution": self.resolution,
            "sample_fraction": format_fraction(self.sample_fraction),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProjectionConfig":
        allowed = {"width_mult", "depth_mult", "resolution", "sample_fraction"}
        if not isinstance(doc, dict) or set(doc) - allowed:
            raise ProjectionError("unknown fields in projection config")
        try:
            return cls(
                width_mult=parse_fraction(doc["width_mult"]),
                depth_mult=parse_fraction(doc["depth_mult"]),
                resolution=int(doc["resolution"]),
                sample_fraction=parse_fraction(doc["sample_fraction"]),
            )
        except KeyError as exc:
            raise ProjectionError(f"missing projection config field {exc}") from None

    def as_tuple(self) -> tuple[Fraction, Fraction, int, Fraction]:
        return (self.width_mult, self.depth_mult, self.resolution, self.sample_fraction)


@dataclass(frozen=True)
class OverheadReport:
    """Total MACs of one optimization run plus its multiplicative breakdown."""

    opt_flops: int
    components: Mapping[str, Fraction]

    def to_dict(self) -> dict:
        return {
            "opt_flops": self.opt_flops,
            "components": {k: format_fraction(v) for k, v in self.components.items()},
        }

    def to_json(self) -> str:
        return canonical_dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "OverheadReport":
        if not isinstance(doc, dict) or set(doc) - {"opt_flops", "components"}:
            raise ProjectionError("unknown fields in overhead document")
        return cls(
            opt_flops=int(doc["opt_flops"]),
            components={k: parse_fraction(v) for k, v in doc["components"].items()},
        )

    def csv_row(self, config: ProjectionConfig | None = None) -> str:
        cells = []
        if config is not None:
            cells.extend(format_fraction(x) if isinstance(x, Fraction) else str(x) for x in config.as_tuple())
        cells.append(str(self.opt_flops))
        cells.extend(f"{k}={format_fraction(v)}" for k, v in self.components.items())
        return ",".join(cells)


_REPLICA_TAG = "r"


def _replicate_block(
    stage_index: int,
    block_index: int,
    template: BlockSpec,
    trunk: str | None,
    input_unit: str | None,
) -> BlockSpec:
    """Copy a block for depth growth with freshly scoped width units.

    Trunk-coupled layers keep the trunk id, depthwise layers re-couple to
    their input, everything else gets a block-scoped identifier.
    """
    new_layers: list[LayerSpec] = []
    prev_unit: str | None = input_unit
    for li, layer in enumerate(template.layers):
        if layer.is_fixed:
            unit = FIXED
        elif trunk is not None and layer.width_unit == trunk:
            unit = trunk
        elif layer.kind == DEPTHWISE_CONV:
            unit = prev_unit if prev_unit is not None else layer.width_unit
        else:
            unit = f"s{stage_index}.b{block_index}.{_REPLICA_TAG}{li}"
        new_layers.append(replace(layer, width_unit=unit))
        prev_unit = None if new_layers[-1].is_fixed else new_layers[-1].width_unit
    return replace(template, layers=tuple(new_layers))


def _project_depth(arch: ArchSpec, depth_mult: Fraction) -> ArchSpec:
    new_stages = []
    for si, stage in enumerate(arch.stages):
        if not stage.depth_projectable:
            new_stages.append(stage)
            continue
        count = len(stage.blocks)
        target = max(1, math.floor(Fraction(depth_mult) * count + Fraction(1, 2)))
        if target <= count:
            blocks = stage.blocks[:target]
        else:
            blocks = list(stage.blocks)
            last_out = stage.blocks[-1].layers[-1]
            prev_out = None if last_out.is_fixed else last_out.width_unit
            for bi in range(count, target):
                rep = _replicate_block(si, bi, stage.blocks[-1], stage.trunk_unit, prev_out)
                blocks.append(rep)
                rep_out = rep.layers[-1]
                prev_out = None if rep_out.is_fixed else rep_out.width_unit
            blocks = tuple(blocks)
        new_stages.append(replace(stage, blocks=tuple(blocks)))
    return replace(arch, stages=tuple(new_stages))


def project_arch(arch: ArchSpec, width_mult, depth_mult, divisor: int = 1) -> ArchSpec:
    """Uniformly rescale unit widths and per-stage block counts.

    Width scaling rewrites each non-fixed unit's base channels through
    :func:`round_channels`. Depth scaling keeps each stage's first (strided)
    block, drops from the end when shrinking, and replicates the last block
    with fresh unit scopes when growing. Non-projectable stages keep their
    block count. The identity projection returns the input unchanged.
    """
    wm = Fraction(width_mult)
    dm = Fraction(depth_mult)
    if wm <= 0 or dm <= 0:
        raise ProjectionError("projection multipliers must be positive")
    if wm == 1 and dm == 1:
        return arch

    projected = _project_depth(arch, dm)

    scaled: dict[str, int] = {}
    for unit in width_units(projected):
        scaled[unit.id] = round_channels(unit.base * wm, divisor)

    def rescale(layer: LayerSpec, in_channels: int) -> LayerSpec:
        if layer.is_fixed:
            return layer
        out = scaled[layer.width_unit]
        groups = in_channels if layer.kind == DEPTHWISE_CONV else layer.groups
        return replace(layer, base_out_channels=out, groups=groups)

    current = 3
    new_stem = []
    for layer in projected.stem:
        built = rescale(layer, current)
        new_stem.append(built)
        current = built.base_out_channels
    new_stages = []
    for stage in projected.stages:
        new_blocks = []
        for block in stage.blocks:
            new_layers = []
            for layer in block.layers:
                built = rescale(layer, current)
                new_layers.append(built)
                current = built.base_out_channels
            new_blocks.append(replace(block, layers=tuple(new_layers)))
        new_stages.append(replace(stage, blocks=tuple(new_blocks)))
    new_head = []
    for layer in projected.head:
        built = rescale(layer, current)
        new_head.append(built)
        current = built.base_out_channels

    name = f"{arch.family}@w{format_fraction(wm)},d{format_fraction(dm)}"
    return replace(
        projected,
        name=name,
        stem=tuple(new_stem),
        stages=tuple(new_stages),
        head=tuple(new_head),
    )


def project_dataset(
    ds: DatasetSpec,
    resolution: int,
    fraction,
    warnings: list[str] | None = None,
) -> DatasetSpec:
    """Class-balanced subsampling plus a resolution swap.

    Per-class counts become floor(fraction * count); the global remainder is
    handed out one sample per class in index order so the projected total is
    exactly round(fraction * total).
    """
    frac = Fraction(fraction)
    if not 0 < frac <= 1:
        raise ProjectionError(f"fraction must be in (0, 1], got {frac}")
    if resolution < 1:
        raise ProjectionError("resolution must be >= 1")
    target_total = math.floor(frac * ds.total_samples + Fraction(1, 2))
    counts = [math.floor(frac * c) for c in ds.samples_per_class]
    remainder = target_total - sum(counts)
    for i, original in enumerate(ds.samples_per_class):
        if remainder == 0:
            break
        if counts[i] < original:
            counts[i] += 1
            remainder -= 1
    if remainder != 0:
        raise ProjectionError("could not place subsampling remainder")
    if warnings is not None and any(c == 0 for c in counts) and any(c > 0 for c in counts):
        empty = sum(1 for c in counts if c == 0)
        warnings.append(
            f"fraction {format_fraction(frac)} empties {empty} of "
            f"{ds.num_classes} classes"
        )
    return replace(ds, samples_per_class=tuple(counts), resolution=resolution)


def optimization_overhead(
    arch: ArchSpec,
    ds: DatasetSpec,
    epochs: int,
    algo_factor,
    backward_factor,
) -> OverheadReport:
    """MACs consumed by one width-optimization run.

    forward MACs per image x images seen x backward_factor x algo_factor,
    where images seen = dataset size x epochs.
    """
    algo = Fraction(algo_factor)
    backward = Fraction(backward_factor)
    if epochs < 1:
        raise ProjectionError("epochs must be >= 1")
    if algo <= 0 or backward <= 0:
        raise ProjectionError("cost factors must be positive")
    forward = flops(arch, ds.resolution).total
    exact = Fraction(forward) * ds.total_samples * epochs * backward * algo
    return OverheadReport(
        opt_flops=math.floor(exact + Fraction(1, 2)),
        components={
            "forward_macs": Fraction(forward),
            "samples": Fraction(ds.total_samples),
            "epochs": Fraction(epochs),
            "backward_factor": backward,
            "algo_factor": algo,
        },
    )


def savings(source: OverheadReport, target: OverheadReport) -> tuple[Fraction, Fraction]:
    """(saved fraction, reduction factor) of source relative to target.

    A source costing more than the target means the proxy is not cheaper;
    that is reported as an error, never silently swapped.
    """
    if target.opt_flops <= 0:
        raise ProjectionError("target overhead must be positive")
    if source.opt_flops <= 0:
        raise ProjectionError("source overhead must be positive to form a ratio")
    if source.opt_flops > target.opt_flops:
        raise ProjectionError(
            f"source overhead {source.opt_flops} exceeds target "
            f"{target.opt_flops}: the proxy is not cheaper"
        )
    ratio = Fraction(source.opt_flops, target.opt_flops)
    return (1 - ratio, 1 / ratio)


def idealized_components(
    source: ProjectionConfig, target: ProjectionConfig
) -> dict[str, Fraction]:
    """Per-axis closed-form reduction factors (no rounding, no architecture)."""
    for axis, s, t in (
        ("width", source.width_mult, target.width_mult),
        ("depth", source.depth_mult, target.depth_mult),
        ("resolution", Fraction(source.resolution), Fraction(target.resolution)),
        ("data", source.sample_fraction, target.sample_fraction),
    ):
        if s > t:
            raise ProjectionError(
                f"source {axis} {format_fraction(s)} exceeds target {format_fraction(t)}"
            )
    return {
        "width^2": (target.width_mult / source.width_mult) ** 2,
        "depth": target.depth_mult / source.depth_mult,
        "resolution^2": Fraction(target.resolution, source.resolution) ** 2,
        "data": target.sample_fraction / source.sample_fraction,
    }


def idealized_savings(source: ProjectionConfig, target: ProjectionConfig) -> Fraction:
    """Closed-form overhead reduction factor between two configurations.

    Overhead is quadratic in width and resolution, linear in depth and
    dataset fraction.
    """
    reduction = Fraction(1)
    for value in idealized_components(source, target).values():
        reduction *= value
    return reduction
