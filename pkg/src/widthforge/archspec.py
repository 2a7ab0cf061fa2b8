"""CNN architecture descriptions with coupled width units and MAC accounting.

An architecture is a stem, a list of stages holding blocks of layers, and a
head. Every non-fixed layer names a *width unit*: a coupling group whose
member layers always carry the same output channel count. Residual-trunk
outputs of a stage share one unit, which keeps elementwise additions
dimensionally valid for any rescaling. This module provides the structural
machinery: unit enumeration, width application with deterministic rounding,
validation, multiply-accumulate counting with same-padding spatial
propagation, and canonical JSON round-trips.

All values are immutable after construction; every operation is a pure
function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterator

from .jsonio import canonical_dumps, format_fraction, parse_fraction, sha256_hex

FIXED = "fixed"

STANDARD_CONV = "standard-conv"
DEPTHWISE_CONV = "depthwise-conv"
POINTWISE_CONV = "pointwise-conv"
FULLY_CONNECTED = "fully-connected"

LAYER_KINDS = (STANDARD_CONV, DEPTHWISE_CONV, POINTWISE_CONV, FULLY_CONNECTED)

INPUT_CHANNELS = 3


class ArchError(ValueError):
    """Structural problem with an architecture or a width vector."""


def round_channels(value, divisor: int = 1) -> int:
    """Round to the nearest positive multiple of ``divisor``, halves up.

    The result never drops below one multiple, so a layer cannot lose all
    of its channels.
    """
    if divisor < 1:
        raise ValueError(f"divisor must be >= 1, got {divisor}")
    frac = Fraction(value)
    if frac <= 0:
        raise ValueError(f"channel value must be positive, got {frac}")
    steps = math.floor(frac / divisor + Fraction(1, 2))
    return max(1, steps) * divisor


@dataclass(frozen=True)
class LayerSpec:
    """One parametric layer. Non-parametric ops (pooling, BN, activations)

    are not represented; their strides are folded into neighboring convs and
    they contribute zero MACs.
    """

    kind: str
    base_out_channels: int
    kernel: int = 1
    stride: int = 1
    groups: int = 1
    width_unit: str = FIXED

    @property
    def is_fixed(self) -> bool:
        return self.width_unit == FIXED


@dataclass(frozen=True)
class BlockSpec:
    layers: tuple[LayerSpec, ...]
    residual: bool = False


@dataclass(frozen=True)
class StageSpec:
    blocks: tuple[BlockSpec, ...]
    depth_projectable: bool = True
    trunk_unit: str | None = None


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stem: tuple[LayerSpec, ...]
    stages: tuple[StageSpec, ...]
    head: tuple[LayerSpec, ...]
    default_resolution: int
    num_classes: int

    @property
    def family(self) -> str:
        """Base name, stripped of projection decorations."""
        return self.name.split("@", 1)[0]


@dataclass(frozen=True)
class WidthUnit:
    id: str
    members: tuple[str, ...]
    base: int


@dataclass(frozen=True)
class FlopsReport:
    """Forward-pass multiply-accumulate counts, total and per layer path."""

    total: int
    per_layer: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class WidthVector:
    """One positive rational multiplier per non-fixed width unit."""

    entries: tuple[Fraction, ...]

    def __post_init__(self):
        coerced = tuple(Fraction(e) for e in self.entries)
        if any(e <= 0 for e in coerced):
            raise ArchError("width vector entries must be positive")
        object.__setattr__(self, "entries", coerced)

    @classmethod
    def ones(cls, length: int) -> "WidthVector":
        return cls(tuple(Fraction(1) for _ in range(length)))

    @classmethod
    def uniform(cls, length: int, value) -> "WidthVector":
        return cls(tuple(Fraction(value) for _ in range(length)))

    def scaled(self, factor) -> "WidthVector":
        c = Fraction(factor)
        return WidthVector(tuple(c * e for e in self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def iter_layers(arch: ArchSpec) -> Iterator[tuple[str, LayerSpec]]:
    """Yield (path, layer) over the whole network in topological order."""
    for i, layer in enumerate(arch.stem):
        yield f"stem.{i}", layer
    for si, stage in enumerate(arch.stages):
        for bi, block in enumerate(stage.blocks):
            for li, layer in enumerate(block.layers):
                yield f"s{si}.b{bi}.l{li}", layer
    for i, layer in enumerate(arch.head):
        yield f"head.{i}", layer


def width_units(arch: ArchSpec) -> tuple[WidthUnit, ...]:
    """Enumerate coupling groups in first-occurrence order.

    Every non-fixed layer belongs to exactly one unit; member layers must
    agree on their base channel count or the grouping is meaningless.
    """
    order: list[str] = []
    members: dict[str, list[str]] = {}
    bases: dict[str, int] = {}
    for path, layer in iter_layers(arch):
        if layer.is_fixed:
            continue
        uid = layer.width_unit
        if uid not in members:
            order.append(uid)
            members[uid] = []
            bases[uid] = layer.base_out_channels
        elif bases[uid] != layer.base_out_channels:
            raise ArchError(
                f"unit {uid!r} has conflicting base widths "
                f"{bases[uid]} and {layer.base_out_channels} at {path}"
            )
        members[uid].append(path)
    return tuple(
        WidthUnit(id=uid, members=tuple(members[uid]), base=bases[uid])
        for uid in order
    )


def _walk_channels(arch: ArchSpec, out_channels: dict[str, int]) -> Iterator[tuple[str, LayerSpec, int, int]]:
    """Yield (path, layer, in_channels, out_channels) along the layer chain."""
    current = INPUT_CHANNELS
    for path, layer in iter_layers(arch):
        out = out_channels[path]
        yield path, layer, current, out
        current = out


def _resolved_out_channels(arch: ArchSpec) -> dict[str, int]:
    return {path: layer.base_out_channels for path, layer in iter_layers(arch)}


def apply_width(
    arch: ArchSpec,
    w: WidthVector,
    divisor: int = 1,
    warnings: list[str] | None = None,
) -> ArchSpec:
    """Rescale every non-fixed unit's channels by its multiplier.

    Coupled layers receive identical counts by construction; depthwise
    groups are recomputed from the applied input width. Counts that would
    round below one multiple are clamped, and the clamp is noted in the
    ``warnings`` sink if one is given.
    """
    units = width_units(arch)
    if len(w) != len(units):
        raise ArchError(
            f"width vector has {len(w)} entries but {arch.name} has "
            f"{len(units)} width units"
        )
    applied: dict[str, int] = {}
    for unit, mult in zip(units, w):
        raw = unit.base * mult
        count = round_channels(raw, divisor)
        if raw < divisor and warnings is not None:
            warnings.append(
                f"unit {unit.id}: {format_fraction(mult)} x {unit.base} "
                f"clamped to {count}"
            )
        applied[unit.id] = count

    def rebuild(layer: LayerSpec, in_channels: int) -> LayerSpec:
        if layer.is_fixed:
            out = layer.base_out_channels
        else:
            out = applied[layer.width_unit]
        groups = layer.groups
        if layer.kind == DEPTHWISE_CONV:
            if out != in_channels:
                raise ArchError(
                    "depthwise layer decoupled from its input unit "
                    f"({in_channels} in vs {out} out)"
                )
            groups = in_channels
        return replace(layer, base_out_channels=out, groups=groups)

    current = INPUT_CHANNELS
    new_stem = []
    for layer in arch.stem:
        built = rebuild(layer, current)
        new_stem.append(built)
        current = built.base_out_channels
    new_stages = []
    for stage in arch.stages:
        new_blocks = []
        for block in stage.blocks:
            new_layers = []
            for layer in block.layers:
                built = rebuild(layer, current)
                new_layers.append(built)
                current = built.base_out_channels
            new_blocks.append(replace(block, layers=tuple(new_layers)))
        new_stages.append(replace(stage, blocks=tuple(new_blocks)))
    new_head = []
    for layer in arch.head:
        built = rebuild(layer, current)
        new_head.append(built)
        current = built.base_out_channels
    return replace(
        arch,
        stem=tuple(new_stem),
        stages=tuple(new_stages),
        head=tuple(new_head),
    )


def flops(arch: ArchSpec, resolution: int) -> FlopsReport:
    """Count forward-pass MACs at the given square input resolution.

    Convolutions cost (C_in / groups) * C_out * kernel^2 * H_out * W_out with
    same-padding semantics; spatial dims propagate as ceil(prev / stride);
    fully-connected layers cost C_in * C_out.
    """
    if resolution < 1:
        raise ArchError(f"resolution must be >= 1, got {resolution}")
    h = w = resolution
    per_layer: list[tuple[str, int]] = []
    total = 0
    for path, layer, c_in, c_out in _walk_channels(arch, _resolved_out_channels(arch)):
        if layer.kind == FULLY_CONNECTED:
            macs = c_in * c_out
            h = w = 1
        else:
            if c_in % layer.groups != 0:
                raise ArchError(
                    f"{path}: groups {layer.groups} does not divide input "
                    f"channels {c_in}"
                )
            h = -(-h // layer.stride)
            w = -(-w // layer.stride)
            if h < 1 or w < 1:
                raise ArchError(f"{path}: spatial size collapsed to zero")
            macs = (c_in // layer.groups) * c_out * layer.kernel * layer.kernel * h * w
        per_layer.append((path, macs))
        total += macs
    return FlopsReport(total=total, per_layer=tuple(per_layer))


def validate(arch: ArchSpec) -> list[str]:
    """Check all structural invariants; returns one message per violation."""
    problems: list[str] = []
    if arch.default_resolution < 1:
        problems.append("default_resolution must be >= 1")
    if arch.num_classes < 1:
        problems.append("num_classes must be >= 1")

    for path, layer in iter_layers(arch):
        if layer.kind not in LAYER_KINDS:
            problems.append(f"{path}: unknown layer kind {layer.kind!r}")
        if layer.base_out_channels < 1:
            problems.append(f"{path}: base_out_channels must be >= 1")
        if layer.kernel < 1:
            problems.append(f"{path}: kernel must be >= 1")
        if layer.stride < 1:
            problems.append(f"{path}: stride must be >= 1")
        if layer.groups < 1:
            problems.append(f"{path}: groups must be >= 1")
        if layer.kind == POINTWISE_CONV and layer.kernel != 1:
            problems.append(f"{path}: pointwise conv must have kernel 1")
        if layer.kind == FULLY_CONNECTED and (
            layer.kernel != 1 or layer.stride != 1 or layer.groups != 1
        ):
            problems.append(f"{path}: fully-connected must be kernel/stride/groups 1")
        if layer.kind in (STANDARD_CONV, POINTWISE_CONV) and layer.groups != 1:
            problems.append(f"{path}: grouped non-depthwise convs are not modeled")
        if not layer.width_unit:
            problems.append(f"{path}: empty width_unit identifier")

    try:
        units = width_units(arch)
    except ArchError as exc:
        problems.append(str(exc))
        units = ()
    unit_of = {path: layer.width_unit for path, layer in iter_layers(arch) if not layer.is_fixed}

    # Depthwise coupling and base wiring along the chain.
    prev_unit: str | None = None
    current = INPUT_CHANNELS
    for path, layer in iter_layers(arch):
        if layer.kind == DEPTHWISE_CONV:
            if layer.base_out_channels != current:
                problems.append(
                    f"{path}: depthwise out channels {layer.base_out_channels} "
                    f"differ from input channels {current}"
                )
            if layer.groups != current:
                problems.append(
                    f"{path}: depthwise groups {layer.groups} differ from "
                    f"input channels {current}"
                )
            if not layer.is_fixed and prev_unit is not None and layer.width_unit != prev_unit:
                problems.append(
                    f"{path}: depthwise layer must share its input's width unit"
                )
        current = layer.base_out_channels
        prev_unit = None if layer.is_fixed else layer.width_unit

    # Block and stage structure.
    in_unit: str | None = None
    for layer in arch.stem:
        in_unit = None if layer.is_fixed else layer.width_unit
    for si, stage in enumerate(arch.stages):
        if not stage.blocks:
            problems.append(f"s{si}: stage must contain at least one block")
            continue
        for bi, block in enumerate(stage.blocks):
            if not block.layers:
                problems.append(f"s{si}.b{bi}: block must contain at least one layer")
                continue
            out_layer = block.layers[-1]
            out_unit = None if out_layer.is_fixed else out_layer.width_unit
            if block.residual and out_unit != in_unit:
                problems.append(
                    f"s{si}.b{bi}: residual block output unit {out_unit!r} "
                    f"differs from input unit {in_unit!r}"
                )
            if block.residual and stage.trunk_unit is not None and out_unit != stage.trunk_unit:
                problems.append(
                    f"s{si}.b{bi}: residual output unit {out_unit!r} is not the "
                    f"stage trunk {stage.trunk_unit!r}"
                )
            if bi > 0 and any(layer.stride > 1 for layer in block.layers):
                problems.append(
                    f"s{si}.b{bi}: stride > 1 is only permitted in a stage's first block"
                )
            in_unit = out_unit

    del unit_of, units
    return problems


# ---------------------------------------------------------------------------
# Canonical JSON


def _layer_to_dict(layer: LayerSpec) -> dict:
    return {
        "kind": layer.kind,
        "base_out_channels": layer.base_out_channels,
        "kernel": layer.kernel,
        "stride": layer.stride,
        "groups": layer.groups,
        "width_unit": layer.width_unit,
    }


_LAYER_KEYS = frozenset(
    ("kind", "base_out_channels", "kernel", "stride", "groups", "width_unit")
)


def _layer_from_dict(doc: dict, where: str) -> LayerSpec:
    unknown = set(doc) - _LAYER_KEYS
    if unknown:
        raise ArchError(f"{where}: unknown layer fields {sorted(unknown)}")
    try:
        return LayerSpec(
            kind=doc["kind"],
            base_out_channels=int(doc["base_out_channels"]),
            kernel=int(doc["kernel"]),
            stride=int(doc["stride"]),
            groups=int(doc["groups"]),
            width_unit=doc["width_unit"],
        )
    except KeyError as exc:
        raise ArchError(f"{where}: missing layer field {exc}") from None


ARCH_SCHEMA = "widthforge.archspec@1"


def arch_to_dict(arch: ArchSpec) -> dict:
    return {
        "schema": ARCH_SCHEMA,
        "name": arch.name,
        "default_resolution": arch.default_resolution,
        "num_classes": arch.num_classes,
        "stem": [_layer_to_dict(l) for l in arch.stem],
        "stages": [
            {
                "depth_projectable": stage.depth_projectable,
                "trunk_unit": stage.trunk_unit,
                "blocks": [
                    {
                        "residual": block.residual,
                        "layers": [_layer_to_dict(l) for l in block.layers],
                    }
                    for block in stage.blocks
                ],
            }
            for stage in arch.stages
        ],
        "head": [_layer_to_dict(l) for l in arch.head],
        "units": [
            {"id": u.id, "base": u.base, "members": list(u.members)}
            for u in width_units(arch)
        ],
    }


def arch_to_json(arch: ArchSpec) -> str:
    return canonical_dumps(arch_to_dict(arch))


_ARCH_KEYS = frozenset(
    ("schema", "name", "default_resolution", "num_classes", "stem", "stages", "head", "units")
)


def arch_from_dict(doc: dict) -> ArchSpec:
    if not isinstance(doc, dict):
        raise ArchError("architecture document must be a JSON object")
    unknown = set(doc) - _ARCH_KEYS
    if unknown:
        raise ArchError(f"unknown architecture fields {sorted(unknown)}")
    if doc.get("schema", ARCH_SCHEMA) != ARCH_SCHEMA:
        raise ArchError(f"unsupported schema {doc.get('schema')!r}")
    try:
        stem = tuple(
            _layer_from_dict(l, f"stem.{i}") for i, l in enumerate(doc["stem"])
        )
        stages = []
        for si, stage_doc in enumerate(doc["stages"]):
            s_unknown = set(stage_doc) - {"depth_projectable", "trunk_unit", "blocks"}
            if s_unknown:
                raise ArchError(f"s{si}: unknown stage fields {sorted(s_unknown)}")
            blocks = []
            for bi, block_doc in enumerate(stage_doc["blocks"]):
                b_unknown = set(block_doc) - {"residual", "layers"}
                if b_unknown:
                    raise ArchError(f"s{si}.b{bi}: unknown block fields {sorted(b_unknown)}")
                layers = tuple(
                    _layer_from_dict(l, f"s{si}.b{bi}.l{li}")
                    for li, l in enumerate(block_doc["layers"])
                )
                blocks.append(BlockSpec(layers=layers, residual=bool(block_doc["residual"])))
            stages.append(
                StageSpec(
                    blocks=tuple(blocks),
                    depth_projectable=bool(stage_doc["depth_projectable"]),
                    trunk_unit=stage_doc["trunk_unit"],
                )
            )
        head = tuple(
            _layer_from_dict(l, f"head.{i}") for i, l in enumerate(doc["head"])
        )
        arch = ArchSpec(
            name=doc["name"],
            stem=stem,
            stages=tuple(stages),
            head=head,
            default_resolution=int(doc["default_resolution"]),
            num_classes=int(doc["num_classes"]),
        )
    except KeyError as exc:
        raise ArchError(f"missing architecture field {exc}") from None
    if "units" in doc:
        derived = [
            {"id": u.id, "base": u.base, "members": list(u.members)}
            for u in width_units(arch)
        ]
        if doc["units"] != derived:
            raise ArchError("unit registry does not match the layer structure")
    return arch


def arch_from_json(text: str) -> ArchSpec:
    import json as _json

    try:
        doc = _json.loads(text)
    except ValueError as exc:
        raise ArchError(f"invalid JSON: {exc}") from None
    return arch_from_dict(doc)


def arch_digest(arch: ArchSpec) -> str:
    return sha256_hex(arch_to_json(arch))


WIDTH_SCHEMA = "widthforge.width@1"


def width_to_dict(w: WidthVector) -> dict:
    return {
        "schema": WIDTH_SCHEMA,
        "entries": [format_fraction(e) for e in w.entries],
    }


def width_to_json(w: WidthVector) -> str:
    return canonical_dumps(width_to_dict(w))


def width_from_dict(doc: dict) -> WidthVector:
    if not isinstance(doc, dict) or set(doc) - {"schema", "entries"}:
        raise ArchError("width document must contain only schema and entries")
    if doc.get("schema", WIDTH_SCHEMA) != WIDTH_SCHEMA:
        raise ArchError(f"unsupported schema {doc.get('schema')!r}")
    return WidthVector(tuple(parse_fraction(e) for e in doc["entries"]))


def width_from_json(text: str) -> WidthVector:
    import json as _json

    try:
        doc = _json.loads(text)
    except ValueError as exc:
        raise ArchError(f"invalid JSON: {exc}") from None
    return width_from_dict(doc)
