"""Built-in architecture presets.

The residual presets fold their stem max-pool stride into the first block's
strided conv so every parametric layer computes at its true output
resolution; projection shortcut convs are not modeled (blocks are purely
sequential chains). Unit naming is positional: ``s{i}.trunk`` for a stage's
residual coupling group, ``s{i}.b{j}.c{k}`` for block-internal convs.
"""

from __future__ import annotations

from .archspec import (
    ArchError,
    ArchSpec,
    BlockSpec,
    DEPTHWISE_CONV,
    FIXED,
    FULLY_CONNECTED,
    LayerSpec,
    POINTWISE_CONV,
    STANDARD_CONV,
    StageSpec,
    validate,
)

PRESETS = ("resnet18", "resnet50", "mobilenetv2", "toy-k-units")


class PresetError(ArchError):
    """Unknown preset or override key."""


def _check_overrides(preset_id: str, overrides: dict, allowed: set[str]) -> None:
    unknown = set(overrides) - allowed
    if unknown:
        raise PresetError(
            f"{preset_id}: unknown override knobs {sorted(unknown)}; "
            f"declared knobs are {sorted(allowed)}"
        )


def _conv(kind: str, out: int, kernel: int, stride: int, unit: str, groups: int = 1) -> LayerSpec:
    return LayerSpec(
        kind=kind,
        base_out_channels=out,
        kernel=kernel,
        stride=stride,
        groups=groups,
        width_unit=unit,
    )


def _resnet18(overrides: dict) -> ArchSpec:
    _check_overrides("resnet18", overrides, {"blocks", "widths", "resolution"})
    blocks = list(overrides.get("blocks", (2, 2, 2, 2)))
    widths = list(overrides.get("widths", (64, 128, 256, 512)))
    resolution = int(overrides.get("resolution", 224))
    if len(blocks) != 4 or len(widths) != 4:
        raise PresetError("resnet18: blocks and widths take four entries")

    # The stem output feeds stage 0's identity residuals, so it shares the
    # stage 0 trunk unit.
    stem = (_conv(STANDARD_CONV, widths[0], 7, 2, "s0.trunk"),)
    stages = []
    for si, (n, w) in enumerate(zip(blocks, widths)):
        trunk = f"s{si}.trunk"
        stage_blocks = []
        for bi in range(n):
            stride = 2 if bi == 0 else 1
            layers = (
                _conv(STANDARD_CONV, w, 3, stride, f"s{si}.b{bi}.c0"),
                _conv(STANDARD_CONV, w, 3, 1, trunk),
            )
            # The first block of stages 1..3 changes the trunk width, so it
            # cannot add its input; stage 0's first block keeps the stem width.
            residual = bi > 0 or si == 0
            stage_blocks.append(BlockSpec(layers=layers, residual=residual))
        stages.append(StageSpec(blocks=tuple(stage_blocks), depth_projectable=True, trunk_unit=trunk))
    head = (
        LayerSpec(kind=FULLY_CONNECTED, base_out_channels=1000, width_unit=FIXED),
    )
    return ArchSpec(
        name="resnet18",
        stem=stem,
        stages=tuple(stages),
        head=head,
        default_resolution=resolution,
        num_classes=1000,
    )


def _resnet50(overrides: dict) -> ArchSpec:
    _check_overrides("resnet50", overrides, {"blocks", "widths", "resolution"})
    blocks = list(overrides.get("blocks", (3, 4, 6, 3)))
    widths = list(overrides.get("widths", (256, 512, 1024, 2048)))
    resolution = int(overrides.get("resolution", 224))
    if len(blocks) != 4 or len(widths) != 4:
        raise PresetError("resnet50: blocks and widths take four entries")

    stem = (_conv(STANDARD_CONV, 64, 7, 2, "stem.0"),)
    stages = []
    for si, (n, trunk_w) in enumerate(zip(blocks, widths)):
        trunk = f"s{si}.trunk"
        inner = max(1, trunk_w // 4)
        stage_blocks = []
        for bi in range(n):
            stride = 2 if bi == 0 else 1
            layers = (
                _conv(POINTWISE_CONV, inner, 1, 1, f"s{si}.b{bi}.c0"),
                _conv(STANDARD_CONV, inner, 3, stride, f"s{si}.b{bi}.c1"),
                _conv(POINTWISE_CONV, trunk_w, 1, 1, trunk),
            )
            stage_blocks.append(BlockSpec(layers=layers, residual=bi > 0))
        stages.append(StageSpec(blocks=tuple(stage_blocks), depth_projectable=True, trunk_unit=trunk))
    head = (
        LayerSpec(kind=FULLY_CONNECTED, base_out_channels=1000, width_unit=FIXED),
    )
    return ArchSpec(
        name="resnet50",
        stem=stem,
        stages=tuple(stages),
        head=head,
        default_resolution=resolution,
        num_classes=1000,
    )


# (expansion, out channels, blocks, first-block stride) per stage
_MBV2_STAGES = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def _mobilenetv2(overrides: dict) -> ArchSpec:
    _check_overrides("mobilenetv2", overrides, {"blocks", "widths", "resolution"})
    blocks = list(overrides.get("blocks", [s[2] for s in _MBV2_STAGES]))
    widths = list(overrides.get("widths", [s[1] for s in _MBV2_STAGES]))
    resolution = int(overrides.get("resolution", 224))
    if len(blocks) != 7 or len(widths) != 7:
        raise PresetError("mobilenetv2: blocks and widths take seven entries")

    stem_w = 32
    stem = (_conv(STANDARD_CONV, stem_w, 3, 2, "stem.0"),)
    stages = []
    in_w = stem_w
    in_unit = "stem.0"
    for si, ((t, _, _, s), n, out_w) in enumerate(zip(_MBV2_STAGES, blocks, widths)):
        trunk = f"s{si}.trunk"
        stage_blocks = []
        for bi in range(n):
            stride = s if bi == 0 else 1
            block_in_w = in_w if bi == 0 else out_w
            block_in_unit = in_unit if bi == 0 else trunk
            layers = []
            if t > 1:
                exp_w = t * block_in_w
                exp_unit = f"s{si}.b{bi}.exp"
                layers.append(_conv(POINTWISE_CONV, exp_w, 1, 1, exp_unit))
                layers.append(
                    _conv(DEPTHWISE_CONV, exp_w, 3, stride, exp_unit, groups=exp_w)
                )
            else:
                # No expansion: the depthwise conv rides on the block's input
                # unit, so its width is coupled upstream.
                layers.append(
                    _conv(DEPTHWISE_CONV, block_in_w, 3, stride, block_in_unit, groups=block_in_w)
                )
            layers.append(_conv(POINTWISE_CONV, out_w, 1, 1, trunk))
            stage_blocks.append(BlockSpec(layers=tuple(layers), residual=bi > 0))
        # Single-block boundary stages never change depth.
        projectable = si not in (0, len(_MBV2_STAGES) - 1)
        stages.append(
            StageSpec(blocks=tuple(stage_blocks), depth_projectable=projectable, trunk_unit=trunk)
        )
        in_w = out_w
        in_unit = trunk
    head = (
        _conv(POINTWISE_CONV, 1280, 1, 1, "head.0"),
        LayerSpec(kind=FULLY_CONNECTED, base_out_channels=1000, width_unit=FIXED),
    )
    return ArchSpec(
        name="mobilenetv2",
        stem=stem,
        stages=tuple(stages),
        head=head,
        default_resolution=resolution,
        num_classes=1000,
    )


def _toy(overrides: dict) -> ArchSpec:
    _check_overrides(
        "toy-k-units", overrides, {"units", "base_width", "resolution", "kernel"}
    )
    units = int(overrides.get("units", 3))
    base_width = int(overrides.get("base_width", 16))
    resolution = int(overrides.get("resolution", 32))
    kernel = int(overrides.get("kernel", 3))
    if units < 1:
        raise PresetError("toy-k-units: units must be >= 1")

    stem = (_conv(STANDARD_CONV, base_width, kernel, 1, "u0"),)
    stages = ()
    if units > 1:
        blocks = tuple(
            BlockSpec(
                layers=(_conv(STANDARD_CONV, base_width, kernel, 1, f"u{j + 1}"),),
                residual=False,
            )
            for j in range(units - 1)
        )
        stages = (StageSpec(blocks=blocks, depth_projectable=True, trunk_unit=None),)
    head = (LayerSpec(kind=FULLY_CONNECTED, base_out_channels=10, width_unit=FIXED),)
    return ArchSpec(
        name=f"toy-{units}-units",
        stem=stem,
        stages=stages,
        head=head,
        default_resolution=resolution,
        num_classes=10,
    )


_BUILDERS = {
    "resnet18": _resnet18,
    "resnet50": _resnet50,
    "mobilenetv2": _mobilenetv2,
    "toy-k-units": _toy,
}


def build_preset(preset_id: str, overrides: dict | None = None) -> ArchSpec:
    """Construct a validated preset architecture.

    ``overrides`` may touch only the preset's declared knobs (stage block
    counts, base widths, resolution; the toy preset exposes its unit count).
    """
    if preset_id not in _BUILDERS:
        raise PresetError(
            f"unknown preset {preset_id!r}; available: {', '.join(PRESETS)}"
        )
    arch = _BUILDERS[preset_id](dict(overrides or {}))
    problems = validate(arch)
    if problems:
        raise PresetError(f"{preset_id}: invalid preset: {problems}")
    return arch
