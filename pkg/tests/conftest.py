import random
from fractions import Fraction

from widthforge import (
    ArchSpec,
    BlockSpec,
    LayerSpec,
    StageSpec,
    WidthVector,
    validate,
    width_units,
)


def random_arch(
    seed: int,
    max_stages: int = 3,
    max_blocks: int = 3,
    min_width: int = 16,
    max_width: int = 96,
    resolution: int = 32,
) -> ArchSpec:
    """Residual-style architecture with randomized stage/block/width shape.

    Structure mirrors the presets: a stem conv, stages of two-conv blocks
    whose outputs couple to the stage trunk, residual everywhere but the
    first (possibly strided) block, and a fixed classifier head.
    """
    rng = random.Random(seed)

    def w() -> int:
        return rng.randrange(min_width, max_width + 1, 8)

    stem = (
        LayerSpec("standard-conv", w(), kernel=3, stride=rng.choice((1, 2)), width_unit="stem"),
    )
    stages = []
    for si in range(rng.randint(1, max_stages)):
        trunk = f"s{si}.trunk"
        trunk_w = w()
        inner_kernel = rng.choice((1, 3))
        inner_kind = "pointwise-conv" if inner_kernel == 1 else "standard-conv"
        blocks = []
        for bi in range(rng.randint(1, max_blocks)):
            inner_w = w()
            stride = rng.choice((1, 2)) if bi == 0 else 1
            layers = (
                LayerSpec(inner_kind, inner_w, kernel=inner_kernel, stride=stride, width_unit=f"s{si}.b{bi}.c0"),
                LayerSpec("standard-conv", trunk_w, kernel=3, stride=1, width_unit=trunk),
            )
            blocks.append(BlockSpec(layers=layers, residual=bi > 0))
        stages.append(StageSpec(blocks=tuple(blocks), depth_projectable=True, trunk_unit=trunk))
    head = (LayerSpec("fully-connected", 10, width_unit="fixed"),)
    arch = ArchSpec(
        name=f"rand-{seed}",
        stem=stem,
        stages=tuple(stages),
        head=head,
        default_resolution=resolution,
        num_classes=10,
    )
    assert validate(arch) == []
    return arch


def random_width(arch: ArchSpec, rng: random.Random, lo: int = 25, hi: int = 400) -> WidthVector:
    """Per-unit multipliers as exact hundredths in [lo/100, hi/100]."""
    return WidthVector(
        tuple(Fraction(rng.randint(lo, hi), 100) for _ in width_units(arch))
    )
