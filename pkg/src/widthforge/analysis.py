"""Post-hoc analysis: width similarity, width profiles, and run reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .archspec import ArchSpec, WidthVector, iter_layers, width_units
from .jsonio import canonical_dumps, format_fraction
from .projection import OverheadReport, ProjectionConfig, idealized_savings


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    source_config: ProjectionConfig
    target_config: ProjectionConfig
    algorithm: str
    width: WidthVector
    accuracy_proxy: float
    overhead: OverheadReport
    seed: int


def cosine_similarity(w1, w2) -> float:
    """Inner product over norms. Positive vectors land in (0, 1].

    Accepts width vectors or any numeric sequences of equal length, since
    orthogonality checks need zero entries that a WidthVector cannot hold.
    """
    if len(w1) != len(w2):
        raise AnalysisError(f"length mismatch: {len(w1)} vs {len(w2)}")
    a = [float(e) for e in w1]
    b = [float(e) for e in w2]
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(y * y for y in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise AnalysisError("cosine similarity is undefined for a zero vector")
    return dot / (norm_a * norm_b)


def per_layer_multipliers(arch: ArchSpec, w: WidthVector) -> WidthVector:
    """Replicate each unit's multiplier onto its member layers, in layer order.

    Comparisons against layer-indexed width conventions need equal-length
    vectors even when coupling groups differ in member count.
    """
    units = width_units(arch)
    if len(w) != len(units):
        raise AnalysisError("width vector does not match the architecture")
    by_unit = {u.id: e for u, e in zip(units, w)}
    expanded = [
        by_unit[layer.width_unit]
        for _, layer in iter_layers(arch)
        if not layer.is_fixed
    ]
    return WidthVector(tuple(expanded))


def similarity_matrix(
    ws: list[WidthVector], labels: list[str]
) -> tuple[list[list[float]], list[str]]:
    """Symmetric pairwise cosine matrix with a computed unit diagonal."""
    if len(ws) != len(labels):
        raise AnalysisError("one label per vector required")
    if not ws:
        raise AnalysisError("need at least one vector")
    n = len(ws[0])
    if any(len(w) != n for w in ws):
        raise AnalysisError("vectors have mixed lengths")
    size = len(ws)
    matrix = [[0.0] * size for _ in range(size)]
    for i in range(size):
        for j in range(i, size):
            value = cosine_similarity(ws[i], ws[j])
            matrix[i][j] = value
            matrix[j][i] = value
    return matrix, list(labels)


def matrix_text(matrix: list[list[float]], labels: list[str]) -> str:
    """Plain-text grid, diff-friendly."""
    width = max(len(l) for l in labels)
    lines = [" " * (width + 2) + "  ".join(f"{l:>8s}" for l in labels)]
    for label, row in zip(labels, matrix):
        cells = "  ".join(f"{v:8.5f}" for v in row)
        lines.append(f"{label:>{width}s}  {cells}")
    return "\n".join(lines) + "\n"


def average_width_profile(
    applied_archs: list[ArchSpec],
) -> list[tuple[str, float, float]]:
    """Per-layer mean and population standard deviation of channel counts."""
    if not applied_archs:
        raise AnalysisError("need at least one architecture")
    reference = [(path, layer.kind) for path, layer in iter_layers(applied_archs[0])]
    rows: list[list[int]] = [[] for _ in reference]
    for arch in applied_archs:
        shape = [(path, layer.kind) for path, layer in iter_layers(arch)]
        if shape != reference:
            raise AnalysisError(f"{arch.name} is structurally different")
        for i, (_, layer) in enumerate(iter_layers(arch)):
            rows[i].append(layer.base_out_channels)
    profile = []
    for (path, _), counts in zip(reference, rows):
        mean = sum(counts) / len(counts)
        variance = sum((c - mean) ** 2 for c in counts) / len(counts)
        profile.append((path, mean, math.sqrt(variance)))
    return profile


REPORT_COLUMNS = (
    "algorithm",
    "src_width",
    "src_depth",
    "src_resolution",
    "src_fraction",
    "dst_width",
    "dst_depth",
    "dst_resolution",
    "dst_fraction",
    "saved_fraction",
    "reduction_factor",
    "accuracy_mean",
    "accuracy_std",
    "seeds",
)


def _group_key(record: RunRecord):
    return (
        record.algorithm,
        record.source_config.as_tuple(),
        record.target_config.as_tuple(),
    )


def emit_report(records: list[RunRecord], format: str = "csv") -> str:
    """Aggregate seed repeats into one row per (algorithm, source, target).

    Savings come from the closed-form reduction between the two configs;
    accuracy aggregates as mean and population standard deviation. Rows sort
    by algorithm, then ascending source tuple, so the output is insensitive
    to input order.
    """
    if not records:
        raise AnalysisError("no records to report")
    if format not in ("csv", "json"):
        raise AnalysisError(f"unknown report format {format!r}")
    groups: dict[tuple, list[RunRecord]] = {}
    for record in records:
        groups.setdefault(_group_key(record), []).append(record)

    rows = []
    for key in sorted(groups):
        bunch = groups[key]
        first = bunch[0]
        reduction = idealized_savings(first.source_config, first.target_config)
        saved = 1 - 1 / reduction
        accs = [r.accuracy_proxy for r in bunch]
        mean = sum(accs) / len(accs)
        std = math.sqrt(sum((a - mean) ** 2 for a in accs) / len(accs))
        src = first.source_config
        dst = first.target_config
        rows.append(
            {
                "algorithm": first.algorithm,
                "src_width": format_fraction(src.width_mult),
                "src_depth": format_fraction(src.depth_mult),
                "src_resolution": src.resolution,
                "src_fraction": format_fraction(src.sample_fraction),
                "dst_width": format_fraction(dst.width_mult),
                "dst_depth": format_fraction(dst.depth_mult),
                "dst_resolution": dst.resolution,
                "dst_fraction": format_fraction(dst.sample_fraction),
                "saved_fraction": f"{float(saved):.10g}",
                "reduction_factor": f"{float(reduction):.10g}",
                "accuracy_mean": f"{mean:.6f}",
                "accuracy_std": f"{std:.6f}",
                "seeds": len(bunch),
            }
        )

    if format == "json":
        return canonical_dumps(rows)
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in REPORT_COLUMNS))
    return "\n".join(lines) + "\n"
