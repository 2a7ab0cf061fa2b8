"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings. Every tolerance is pinned here; nothing is deferred.
"""

import math
import random
import time
from fractions import Fraction

import pytest

from widthforge import (
    DatasetSpec,
    EvaluatorBudget,
    OptimizerConfig,
    ProjectionConfig,
    SyntheticEvaluator,
    WidthVector,
    apply_width,
    brute_force_oracle,
    build_preset,
    cosine_similarity,
    flops,
    idealized_savings,
    optimization_overhead,
    optimize_greedy,
    project_arch,
    project_dataset,
    savings,
    similarity_matrix,
    stack_average_block,
    stack_last_block,
    transfer,
    width_units,
)
from widthforge.cli import main as cli_main

from conftest import random_arch, random_width


def report(number: int, description: str, passed: bool, elapsed: float, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {number:>2} {status} [{elapsed:6.2f}s] {description}{suffix}")
    assert passed, f"criterion {number} failed: {description}{suffix}"


def test_criterion_1_compound_overhead():
    start = time.perf_counter()
    source_cfg = ProjectionConfig(Fraction("0.707"), 1, 160, Fraction("0.1"))
    target_cfg = ProjectionConfig(Fraction("1.414"), 2, 320, 1)
    ideal = idealized_savings(source_cfg, target_cfg)

    toy = build_preset("toy-k-units", {"units": 3, "base_width": 1000})
    ds = DatasetSpec("balanced", 10, (1000,) * 10, 224)
    source = optimization_overhead(
        project_arch(toy, source_cfg.width_mult, source_cfg.depth_mult),
        project_dataset(ds, source_cfg.resolution, source_cfg.sample_fraction),
        epochs=40, algo_factor=2, backward_factor=3,
    )
    target = optimization_overhead(
        project_arch(toy, target_cfg.width_mult, target_cfg.depth_mult),
        project_dataset(ds, target_cfg.resolution, target_cfg.sample_fraction),
        epochs=40, algo_factor=2, backward_factor=3,
    )
    _, measured = savings(source, target)
    elapsed = time.perf_counter() - start
    exact = ideal == 320
    close = abs(measured / 320 - 1) <= Fraction(1, 100)
    report(
        1,
        "compound overhead reduction: idealized 320 exact, measured within 1%",
        exact and close and elapsed < 1.0,
        elapsed,
        f"idealized={float(ideal):g}, measured={float(measured):.2f}",
    )


def test_criterion_2_single_axis_overheads():
    start = time.perf_counter()
    arch = build_preset("resnet18")
    ds = DatasetSpec("balanced", 100, (100,) * 100, 224)
    narrow = optimization_overhead(project_arch(arch, Fraction("0.312"), 1), ds, 1, 1, 1)
    wide = optimization_overhead(project_arch(arch, Fraction("1.732"), 1), ds, 1, 1, 1)
    width_saved, _ = savings(narrow, wide)
    width_ok = Fraction("0.955") <= width_saved <= Fraction("0.975")

    base = ProjectionConfig(1, 1, 224, 1)
    depth_saved = 1 - 1 / idealized_savings(base, ProjectionConfig(1, 4, 224, 1))
    resolution_saved = 1 - 1 / idealized_savings(
        ProjectionConfig(1, 1, 64, 1), ProjectionConfig(1, 1, 320, 1)
    )
    data_saved = 1 - 1 / idealized_savings(
        ProjectionConfig(1, 1, 224, Fraction(1, 20)), base
    )
    elapsed = time.perf_counter() - start
    report(
        2,
        "single-axis overhead savings (width measured, depth/resolution/data exact)",
        width_ok
        and depth_saved == Fraction(3, 4)
        and resolution_saved == Fraction(24, 25)
        and data_saved == Fraction(19, 20)
        and elapsed < 5.0,
        elapsed,
        f"width={float(width_saved):.4f}, depth={float(depth_saved)}, "
        f"resolution={float(resolution_saved)}, data={float(data_saved)}",
    )


def test_criterion_3_stacking_equivalence():
    start = time.perf_counter()
    mismatches = 0
    for i in range(1000):
        rng = random.Random(20_000 + i)
        dst = random_arch(20_000 + i)
        dm = Fraction(rng.randint(25, 100), 100)
        src = project_arch(dst, 1, dm)
        value = Fraction(rng.randint(1, 400), 100)
        w = WidthVector.uniform(len(width_units(src)), value)
        if stack_last_block(w, src, dst).entries != stack_average_block(w, src, dst).entries:
            mismatches += 1
    elapsed = time.perf_counter() - start
    report(
        3,
        "stack-last-block == stack-average-block on 1000 uniform width vectors",
        mismatches == 0 and elapsed < 10.0,
        elapsed,
        f"mismatches={mismatches}",
    )


def test_criterion_4_flops_constraint():
    start = time.perf_counter()
    tolerance = Fraction(1, 200)
    flags = 0
    violations = 0
    total = 200
    for i in range(total):
        rng = random.Random(1000 + i)
        dst = random_arch(1000 + i, min_width=32, max_width=128)
        wm = Fraction(rng.randint(30, 100), 100)
        dm = Fraction(rng.randint(30, 100), 100)
        src = project_arch(dst, wm, dm)
        w = random_width(src, rng, 25, 400)
        result = transfer(w, src, dst, 32)
        if result.granularity_failure:
            flags += 1
            continue
        achieved = flops(apply_width(dst, result.width), 32).total
        target = flops(dst, 32).total
        if abs(achieved - target) > tolerance * target:
            violations += 1
    elapsed = time.perf_counter() - start
    report(
        4,
        "transfer hits destination FLOPs within 0.5% over 200 random triples",
        violations == 0 and flags / total < 0.05 and elapsed < 60.0,
        elapsed,
        f"violations={violations}, flag_rate={flags / total:.1%}",
    )


def test_criterion_5_oracle_regret():
    start = time.perf_counter()
    budget = EvaluatorBudget(epochs=4, max_evaluations=10_000)
    ds = DatasetSpec("toy", 10, (100,) * 10, 32)
    choices = [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)]
    worst = 1.0
    regressions = 0
    infeasible = 0
    for seed in range(50):
        rng = random.Random(seed)
        units = rng.randint(2, 4)
        base_width = rng.choice((32, 48, 64))
        arch = build_preset("toy-k-units", {"units": units, "base_width": base_width})
        evaluator = SyntheticEvaluator(seed=seed)
        cfg = OptimizerConfig(algorithm="greedy", grow_factor=Fraction(3, 2), prune_group=4, seed=seed)
        greedy_w = optimize_greedy(arch, ds, evaluator, cfg, budget)
        if flops(apply_width(arch, greedy_w), 32).total > flops(arch, 32).total:
            infeasible += 1
        greedy_proxy = evaluator.evaluate(apply_width(arch, greedy_w), ds, budget).accuracy_proxy
        _, oracle_proxy = brute_force_oracle(arch, ds, evaluator, [choices] * units, budget)
        ratio = greedy_proxy / oracle_proxy
        worst = min(worst, ratio)
        if ratio < 0.95:
            regressions += 1
    elapsed = time.perf_counter() - start
    report(
        5,
        "greedy proxy >= 0.95 x brute-force optimum on 50 toy instances, always feasible",
        regressions == 0 and infeasible == 0 and elapsed < 60.0,
        elapsed,
        f"worst_ratio={worst:.4f}",
    )


def test_criterion_6_determinism(tmp_path):
    start = time.perf_counter()
    from widthforge import arch_to_json
    from widthforge.jsonio import canonical_dumps

    arch_path = tmp_path / "toy.json"
    arch_path.write_text(
        arch_to_json(build_preset("toy-k-units", {"units": 4, "base_width": 48})),
        encoding="utf-8",
    )
    ds_path = tmp_path / "ds.json"
    ds_path.write_text(
        canonical_dumps(DatasetSpec("toy", 10, (50,) * 10, 32).to_dict()),
        encoding="utf-8",
    )

    def run(out: str, workers: int) -> bytes:
        code = cli_main(
            ["optimize", str(arch_path), str(ds_path), "--algo", "greedy",
             "--evaluator", "synthetic", "--seed", "7", "--prune-group", "4",
             "--workers", str(workers), "--out", str(tmp_path / out)]
        )
        assert code == 0
        return (tmp_path / out / "width.json").read_bytes()

    first = run("r1", 1)
    second = run("r2", 1)
    parallel = run("r3", 4)
    elapsed = time.perf_counter() - start
    report(
        6,
        "cmd_optimize width files byte-identical across reruns and worker counts",
        first == second == parallel,
        elapsed,
    )


def test_criterion_7_round_trip():
    start = time.perf_counter()
    ok = True
    details = []
    for preset in ("resnet18", "mobilenetv2", "toy-k-units"):
        arch = build_preset(preset)
        projected = project_arch(arch, 1, 1)
        ds = DatasetSpec("d", arch.num_classes, (10,) * arch.num_classes, arch.default_resolution)
        projected_ds = project_dataset(ds, arch.default_resolution, 1)
        identity_ok = projected is arch and projected_ds.samples_per_class == ds.samples_per_class

        w = WidthVector.ones(len(width_units(arch)))
        result = transfer(w, projected, arch, arch.default_resolution)
        applied = apply_width(arch, result.width)
        step_ok = all(
            abs(after.base - before.base) <= 1
            for after, before in zip(width_units(applied), width_units(arch))
        )
        flops_ok = (
            flops(applied, arch.default_resolution).total
            == flops(arch, arch.default_resolution).total
        )
        ok = ok and identity_ok and step_ok and flops_ok
        details.append(f"{preset}:c={result.c}")
    elapsed = time.perf_counter() - start
    report(
        7,
        "identity projection + self-transfer returns identity widths, FLOPs unchanged",
        ok,
        elapsed,
        ", ".join(details),
    )


def test_criterion_8_class_balance():
    start = time.perf_counter()
    balanced_ok = True
    total_ok = True
    for i in range(500):
        rng = random.Random(30_000 + i)
        classes = rng.randint(2, 100)
        fraction = Fraction(rng.randint(1, 1000), 1000)
        if i % 2 == 0:
            counts = (rng.randint(1, 500),) * classes
        else:
            counts = tuple(rng.randint(0, 500) for _ in range(classes))
        ds = DatasetSpec("r", classes, counts, 32)
        out = project_dataset(ds, 32, fraction)
        expected = math.floor(fraction * ds.total_samples + Fraction(1, 2))
        if out.total_samples != expected:
            total_ok = False
        if len(set(counts)) == 1 and max(out.samples_per_class) - min(out.samples_per_class) > 1:
            balanced_ok = False
    elapsed = time.perf_counter() - start
    report(
        8,
        "class-balanced subsampling: max-min <= 1 on balanced inputs, exact totals, 500 cases",
        balanced_ok and total_ok,
        elapsed,
    )


def test_criterion_9_similarity_suite():
    start = time.perf_counter()
    tol = 1e-12
    ok = True
    for i in range(200):
        rng = random.Random(40_000 + i)
        n = rng.randint(2, 30)
        w = WidthVector(tuple(Fraction(rng.randint(1, 500), 100) for _ in range(n)))
        c = Fraction(rng.randint(1, 900), 100)
        if abs(cosine_similarity(w, w.scaled(c)) - 1.0) > tol:
            ok = False
        vectors = [
            WidthVector(tuple(Fraction(rng.randint(1, 500), 100) for _ in range(n)))
            for _ in range(4)
        ]
        matrix, _ = similarity_matrix(vectors, ["a", "b", "c", "d"])
        for r in range(4):
            if abs(matrix[r][r] - 1.0) > tol:
                ok = False
            for s in range(4):
                if matrix[r][s] != matrix[s][r]:
                    ok = False
    elapsed = time.perf_counter() - start
    report(
        9,
        "similarity matrix symmetry, unit diagonal, scale invariance at 1e-12",
        ok,
        elapsed,
    )
