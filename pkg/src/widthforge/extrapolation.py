"""Width extrapolation: depth matching by layer stacking, then FLOPs matching.

A width vector optimized on a projected architecture is carried to the
original one in two moves. Stacking fills the multipliers of blocks the
source never had, either by repeating the source stage's last block or by
averaging its non-first blocks. A global multiplier found by bisection then
rescales the whole vector until the applied architecture's MAC count matches
the destination's base count.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .archspec import (
    ArchError,
    ArchSpec,
    WidthVector,
    apply_width,
    flops,
    width_units,
)
from .jsonio import format_fraction

STACK_LAST_BLOCK = "stack-last-block"
STACK_AVERAGE_BLOCK = "stack-average-block"
STACKINGS = (STACK_LAST_BLOCK, STACK_AVERAGE_BLOCK)

MAX_BISECTION_STEPS = 64


class ExtrapolationError(ArchError):
    """Incompatible stage structure or an unreachable FLOPs target."""


class BracketError(ExtrapolationError):
    """The FLOPs target lies outside the bisection bounds."""


@dataclass(frozen=True)
class TransferPlan:
    stacking: str = STACK_AVERAGE_BLOCK
    flops_tolerance: Fraction = Fraction(1, 200)
    bisection_bounds: tuple[Fraction, Fraction] = (Fraction(1, 100), Fraction(100))

    def __post_init__(self):
        object.__setattr__(self, "flops_tolerance", Fraction(self.flops_tolerance))
        lo, hi = self.bisection_bounds
        object.__setattr__(self, "bisection_bounds", (Fraction(lo), Fraction(hi)))
        if self.stacking not in STACKINGS:
            raise ExtrapolationError(f"unknown stacking {self.stacking!r}")
        lo, hi = self.bisection_bounds
        if not 0 < lo < hi:
            raise ExtrapolationError("bisection bounds must satisfy 0 < lo < hi")
        if not 0 < self.flops_tolerance <= Fraction(1, 10):
            raise ExtrapolationError("flops_tolerance must be in (0, 0.1]")

    def to_dict(self) -> dict:
        lo, hi = self.bisection_bounds
        return {
            "stacking": self.stacking,
            "flops_tolerance": format_fraction(self.flops_tolerance),
            "bisection_bounds": [format_fraction(lo), format_fraction(hi)],
        }


@dataclass(frozen=True)
class MatchResult:
    c: Fraction
    width: WidthVector
    achieved_flops: int
    target_flops: int
    rel_error: Fraction
    granularity_failure: bool
    bracket_trace: tuple[tuple[Fraction, Fraction, int, int], ...] = ()


@dataclass(frozen=True)
class TransferResult:
    width: WidthVector
    c: Fraction
    stacking: str
    achieved_flops: int
    target_flops: int
    rel_error: Fraction
    granularity_failure: bool

    def audit_dict(self, src_name: str, dst_name: str) -> dict:
        return {
            "source_arch": src_name,
            "dest_arch": dst_name,
            "stacking": self.stacking,
            "flops_multiplier": format_fraction(self.c),
            "achieved_flops": self.achieved_flops,
            "target_flops": self.target_flops,
            "relative_flops_error": format_fraction(self.rel_error),
            "granularity_failure": self.granularity_failure,
        }


def _layer_signature(block) -> tuple:
    return tuple((l.kind, l.kernel, l.is_fixed) for l in block.layers)


def _check_compatible(src: ArchSpec, dst: ArchSpec) -> None:
    if len(src.stages) != len(dst.stages):
        raise ExtrapolationError(
            f"stage count mismatch: {len(src.stages)} vs {len(dst.stages)}"
        )
    if len(src.stem) != len(dst.stem) or len(src.head) != len(dst.head):
        raise ExtrapolationError("stem/head layer counts differ")
    for si, (ss, ds_) in enumerate(zip(src.stages, dst.stages)):
        if len(ds_.blocks) < len(ss.blocks):
            raise ExtrapolationError(
                f"s{si}: destination has fewer blocks ({len(ds_.blocks)}) "
                f"than source ({len(ss.blocks)})"
            )
        for bi, dblock in enumerate(ds_.blocks):
            template = ss.blocks[min(bi, len(ss.blocks) - 1)]
            if _layer_signature(dblock) != _layer_signature(template):
                raise ExtrapolationError(
                    f"s{si}.b{bi}: block layer structure differs between "
                    "source and destination"
                )


def _stack(w: WidthVector, src: ArchSpec, dst: ArchSpec, average: bool) -> WidthVector:
    _check_compatible(src, dst)
    src_units = width_units(src)
    if len(w) != len(src_units):
        raise ExtrapolationError(
            f"width vector has {len(w)} entries but source has {len(src_units)} units"
        )
    mult = {u.id: e for u, e in zip(src_units, w)}

    assigned: dict[str, Fraction] = {}

    def assign(unit: str, value: Fraction, where: str) -> None:
        if unit in assigned and assigned[unit] != value:
            raise ExtrapolationError(
                f"{where}: conflicting multipliers for unit {unit!r}"
            )
        assigned[unit] = value

    for dl, sl in zip(dst.stem, src.stem):
        if not dl.is_fixed:
            assign(dl.width_unit, mult[sl.width_unit], "stem")
    for si, (sstage, dstage) in enumerate(zip(src.stages, dst.stages)):
        n_src = len(sstage.blocks)
        # Per-layer-position synthesis rule for blocks beyond the source depth.
        if average:
            pool = sstage.blocks[1:] if n_src > 1 else sstage.blocks
            synth = [
                sum((mult[b.layers[li].width_unit] for b in pool), Fraction(0))
                / len(pool)
                if not pool[0].layers[li].is_fixed
                else None
                for li in range(len(pool[0].layers))
            ]
        else:
            last = sstage.blocks[-1]
            synth = [
                None if l.is_fixed else mult[l.width_unit] for l in last.layers
            ]
        for bi, dblock in enumerate(dstage.blocks):
            if bi < n_src:
                sblock = sstage.blocks[bi]
                for li, (dl, sl) in enumerate(zip(dblock.layers, sblock.layers)):
                    if not dl.is_fixed:
                        assign(dl.width_unit, mult[sl.width_unit], f"s{si}.b{bi}.l{li}")
            else:
                for li, dl in enumerate(dblock.layers):
                    if not dl.is_fixed:
                        assign(dl.width_unit, synth[li], f"s{si}.b{bi}.l{li}")
    for dl, sl in zip(dst.head, src.head):
        if not dl.is_fixed:
            assign(dl.width_unit, mult[sl.width_unit], "head")

    dst_units = width_units(dst)
    missing = [u.id for u in dst_units if u.id not in assigned]
    if missing:
        raise ExtrapolationError(f"destination units left unassigned: {missing}")
    return WidthVector(tuple(assigned[u.id] for u in dst_units))


def stack_last_block(w: WidthVector, src: ArchSpec, dst: ArchSpec) -> WidthVector:
    """Extend per-stage multipliers by repeating the source's last block."""
    return _stack(w, src, dst, average=False)


def stack_average_block(w: WidthVector, src: ArchSpec, dst: ArchSpec) -> WidthVector:
    """Extend per-stage multipliers with the mean over non-first source blocks.

    A single-block stage falls back to that block's own multipliers, since
    excluding the first block would leave nothing to average.
    """
    return _stack(w, src, dst, average=True)


def _class_infimum(
    arch: ArchSpec,
    w: WidthVector,
    counts: tuple[int, ...],
    divisor: int,
    fallback: Fraction,
) -> Fraction:
    """Smallest multiplier still rounding to the given channel assignment.

    Per unit, count(c) = max(1, floor(base * w_u * c / divisor + 1/2)) *
    divisor, so a count of m*divisor with m >= 2 binds c from below at
    divisor * (m - 1/2) / (base * w_u); clamped units do not bind.
    """
    bounds = []
    for unit, mult, count in zip(width_units(arch), w, counts):
        steps = count // divisor
        if steps >= 2:
            bounds.append(Fraction(divisor) * (Fraction(steps) - Fraction(1, 2)) / (unit.base * mult))
    return max(bounds) if bounds else fallback


def match_flops(
    arch: ArchSpec,
    w: WidthVector,
    target_flops: int,
    resolution: int,
    plan: TransferPlan | None = None,
    divisor: int = 1,
) -> MatchResult:
    """Find the scalar c with flops(arch x (c*w)) matching target_flops.

    Bisection on a monotone map, terminating on relative tolerance or when
    the integer channel assignment stops changing. Among probed multipliers
    that yield the accepted channel assignment, the smallest is returned.
    When rounding granularity makes the tolerance unreachable, the closest
    probe is returned with ``granularity_failure`` set.
    """
    plan = plan or TransferPlan()
    if target_flops <= 0:
        raise ExtrapolationError("target_flops must be positive")
    lo, hi = plan.bisection_bounds
    tol = plan.flops_tolerance

    probes: list[tuple[Fraction, tuple[int, ...], int, Fraction]] = []

    def probe(c: Fraction) -> tuple[int, Fraction, tuple[int, ...]]:
        applied = apply_width(arch, w.scaled(c), divisor=divisor)
        total = flops(applied, resolution).total
        err = Fraction(abs(total - target_flops), target_flops)
        key = tuple(u.base for u in width_units(applied))
        probes.append((c, key, total, err))
        return total, err, key

    f_lo, err_lo, key_lo = probe(lo)
    f_hi, err_hi, key_hi = probe(hi)
    if not f_lo <= target_flops <= f_hi:
        raise BracketError(
            f"target {target_flops} outside achievable bracket "
            f"[{f_lo}, {f_hi}] for bounds ({format_fraction(lo)}, {format_fraction(hi)})"
        )

    accepted: tuple[Fraction, tuple[int, ...], int, Fraction] | None = None
    fixed_point = False
    trace: list[tuple[Fraction, Fraction, int, int]] = []

    # The unscaled vector is the natural first guess; accepting it keeps
    # identity round trips exact.
    if lo <= 1 <= hi:
        total, err, key = probe(Fraction(1))
        if err <= tol:
            accepted = (Fraction(1), key, total, err)
            fixed_point = True

    if accepted is None:
        for _ in range(MAX_BISECTION_STEPS):
            trace.append((lo, hi, f_lo, f_hi))
            if key_lo == key_hi:
                break
            mid = (lo + hi) / 2
            total, err, key = probe(mid)
            if err <= tol:
                accepted = (mid, key, total, err)
                break
            if total < target_flops:
                lo, f_lo, key_lo = mid, total, key
            else:
                hi, f_hi, key_hi = mid, total, key

    converged = accepted is not None
    if accepted is None:
        accepted = min(probes, key=lambda p: (p[3], p[0]))
    c_star, key_star, total_star, err_star = accepted
    if fixed_point:
        c_final = c_star
    else:
        c_final = max(_class_infimum(arch, w, key_star, divisor, c_star), lo)
    return MatchResult(
        c=c_final,
        width=w.scaled(c_final),
        achieved_flops=total_star,
        target_flops=target_flops,
        rel_error=err_star,
        granularity_failure=not converged and err_star > tol,
        bracket_trace=tuple(trace),
    )


def transfer(
    w: WidthVector,
    src_arch: ArchSpec,
    dst_arch: ArchSpec,
    resolution: int,
    plan: TransferPlan | None = None,
    divisor: int = 1,
) -> TransferResult:
    """Stack to the destination depth, then rescale to its base FLOPs."""
    plan = plan or TransferPlan()
    if plan.stacking == STACK_LAST_BLOCK:
        stacked = stack_last_block(w, src_arch, dst_arch)
    else:
        stacked = stack_average_block(w, src_arch, dst_arch)
    target = flops(dst_arch, resolution).total
    match = match_flops(dst_arch, stacked, target, resolution, plan, divisor)
    return TransferResult(
        width=match.width,
        c=match.c,
        stacking=plan.stacking,
        achieved_flops=match.achieved_flops,
        target_flops=match.target_flops,
        rel_error=match.rel_error,
        granularity_failure=match.granularity_failure,
    )
