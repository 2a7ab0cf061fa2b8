"""Command-line pipeline: project, optimize, transfer, overhead, report.

Each stage is a separate command writing canonical JSON artifacts plus a run
manifest, so experiments compose in shell scripts and replay byte-identically
(synthetic evaluator path). Exit codes are a stable contract: 0 success,
2 validation, 3 evaluator, 4 extrapolation. Errors go to stderr as one-line
JSON objects {code, message, path}.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .analysis import (
    AnalysisError,
    RunRecord,
    emit_report,
    matrix_text,
    similarity_matrix,
)
from .archspec import (
    ArchError,
    ArchSpec,
    WidthVector,
    apply_width,
    arch_from_json,
    arch_to_json,
    validate,
    width_from_json,
    width_to_json,
)
from .evaluators import (
    BridgeEvaluator,
    EvaluatorBudget,
    EvaluatorError,
    SyntheticEvaluator,
)
from .extrapolation import (
    ExtrapolationError,
    STACKINGS,
    TransferPlan,
    transfer,
)
from .jsonio import canonical_dumps, format_fraction, parse_fraction, sha256_hex
from .presets import PRESETS, build_preset
from .optimizers import (
    ALGORITHMS,
    AuditLog,
    OptimizerConfig,
    OptimizerError,
    PLUGIN_ALGORITHMS,
    run_optimizer,
)
from .projection import (
    DatasetSpec,
    OverheadReport,
    ProjectionConfig,
    ProjectionError,
    idealized_components,
    idealized_savings,
    optimization_overhead,
    project_arch,
    project_dataset,
    savings,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_EVALUATOR = 3
EXIT_EXTRAPOLATION = 4


class CliError(Exception):
    def __init__(self, code: int, message: str, path: str | None = None):
        super().__init__(message)
        self.code = code
        self.path = path


def _fail(code: int, message: str, path: str | None = None) -> CliError:
    return CliError(code, message, path)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _fail(EXIT_VALIDATION, f"cannot read file: {exc}", path) from exc


def _load_arch(path: str) -> ArchSpec:
    try:
        arch = arch_from_json(_read_text(path))
    except ArchError as exc:
        raise _fail(EXIT_VALIDATION, str(exc), path) from exc
    problems = validate(arch)
    if problems:
        raise _fail(EXIT_VALIDATION, f"invalid architecture: {problems}", path)
    return arch


def _load_json(path: str) -> dict:
    try:
        return json.loads(_read_text(path))
    except ValueError as exc:
        raise _fail(EXIT_VALIDATION, f"invalid JSON: {exc}", path) from exc


def _load_dataset(path: str) -> DatasetSpec:
    try:
        return DatasetSpec.from_dict(_load_json(path))
    except ProjectionError as exc:
        raise _fail(EXIT_VALIDATION, str(exc), path) from exc


def _load_width(path: str) -> WidthVector:
    try:
        return width_from_json(_read_text(path))
    except ArchError as exc:
        raise _fail(EXIT_VALIDATION, str(exc), path) from exc


def _load_config(path: str) -> ProjectionConfig:
    try:
        return ProjectionConfig.from_dict(_load_json(path))
    except ProjectionError as exc:
        raise _fail(EXIT_VALIDATION, str(exc), path) from exc


def _fraction_arg(text: str) -> Fraction:
    try:
        value = parse_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    return value


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _manifest(
    command: str,
    params: dict,
    inputs: dict[str, str],
    seed: int | None,
) -> str:
    input_entries = {
        name: {"path": path, "sha256": sha256_hex(_read_text(path))}
        for name, path in inputs.items()
    }
    digest_doc = {
        "command": command,
        "params": params,
        "inputs": {name: entry["sha256"] for name, entry in input_entries.items()},
    }
    manifest = {
        "schema": "widthforge.manifest@1",
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "params": params,
        "inputs": input_entries,
        "config_digest": sha256_hex(canonical_dumps(digest_doc)),
    }
    return canonical_dumps(manifest)


# ---------------------------------------------------------------------------
# Commands


def cmd_preset(args) -> int:
    try:
        overrides = json.loads(args.overrides) if args.overrides else {}
        arch = build_preset(args.preset_id, overrides)
    except (ValueError, ArchError) as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    text = arch_to_json(arch)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_apply(args) -> int:
    arch = _load_arch(args.arch)
    width = _load_width(args.width)
    try:
        applied = apply_width(arch, width, divisor=args.divisor)
    except ArchError as exc:
        raise _fail(EXIT_VALIDATION, str(exc), args.width) from exc
    text = arch_to_json(applied)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_project(args) -> int:
    arch = _load_arch(args.arch)
    try:
        projected = project_arch(arch, args.width, args.depth)
    except (ArchError, ProjectionError) as exc:
        raise _fail(EXIT_VALIDATION, str(exc), args.arch) from exc
    out = Path(args.out)
    _write(out, "arch.json", arch_to_json(projected))
    inputs = {"arch": args.arch}
    warnings: list[str] = []
    if args.dataset:
        ds = _load_dataset(args.dataset)
        resolution = args.resolution or ds.resolution
        try:
            projected_ds = project_dataset(ds, resolution, args.fraction, warnings)
        except ProjectionError as exc:
            raise _fail(EXIT_VALIDATION, str(exc), args.dataset) from exc
        _write(out, "dataset.json", canonical_dumps(projected_ds.to_dict()))
        inputs["dataset"] = args.dataset
    params = {
        "width": format_fraction(args.width),
        "depth": format_fraction(args.depth),
        "resolution": args.resolution,
        "fraction": format_fraction(args.fraction),
        "warnings": warnings,
    }
    _write(out, "manifest.json", _manifest("project", params, inputs, None))
    return EXIT_OK


def cmd_optimize(args) -> int:
    arch = _load_arch(args.arch)
    ds = _load_dataset(args.dataset)
    try:
        cfg = OptimizerConfig(
            algorithm=args.algo,
            grow_factor=args.grow,
            prune_group=args.prune_group,
            seed=args.seed,
        )
        budget = EvaluatorBudget(epochs=args.epochs, max_evaluations=args.max_evaluations)
    except (OptimizerError, ValueError) as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc

    evaluator = None
    if args.algo != "uniform":
        if args.evaluator == "synthetic":
            evaluator = SyntheticEvaluator(seed=args.seed)
        else:
            try:
                evaluator = BridgeEvaluator(split_seed=args.seed)
            except EvaluatorError as exc:
                raise _fail(EXIT_EVALUATOR, str(exc)) from exc

    out = Path(args.out)
    audit = AuditLog()
    try:
        width = run_optimizer(
            arch, ds, evaluator, cfg, budget, audit, max_workers=args.workers
        )
    except EvaluatorError as exc:
        # Keep whatever the audit saw before the backend died.
        _write(out, "audit.json", audit.to_json())
        raise _fail(EXIT_EVALUATOR, str(exc)) from exc
    except OptimizerError as exc:
        _write(out, "audit.json", audit.to_json())
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    finally:
        if isinstance(evaluator, BridgeEvaluator):
            evaluator.close()

    measured = OverheadReport(
        opt_flops=audit.total_cost_flops,
        components={"evaluations": Fraction(audit.total_evaluations)},
    )
    _write(out, "width.json", width_to_json(width))
    _write(out, "audit.json", audit.to_json())
    _write(out, "overhead.json", measured.to_json())
    params = {
        "algo": args.algo,
        "evaluator": args.evaluator,
        "grow": format_fraction(args.grow),
        "prune_group": args.prune_group,
        "epochs": args.epochs,
        "max_evaluations": args.max_evaluations,
        "workers": args.workers,
    }
    _write(
        out,
        "manifest.json",
        _manifest("optimize", params, {"arch": args.arch, "dataset": args.dataset}, args.seed),
    )
    return EXIT_OK


def cmd_transfer(args) -> int:
    width = _load_width(args.width)
    src = _load_arch(args.src_arch)
    dst = _load_arch(args.dst_arch)
    resolution = args.resolution or dst.default_resolution
    try:
        plan = TransferPlan(stacking=args.stacking, flops_tolerance=args.tolerance)
        result = transfer(width, src, dst, resolution, plan, divisor=args.divisor)
    except ExtrapolationError as exc:
        raise _fail(EXIT_EXTRAPOLATION, str(exc)) from exc
    out = Path(args.out)
    _write(out, "width.json", width_to_json(result.width))
    audit = dict(result.audit_dict(src.name, dst.name))
    audit["resolution"] = resolution
    _write(out, "transfer_audit.json", canonical_dumps(audit))
    params = {
        "stacking": args.stacking,
        "resolution": resolution,
        "tolerance": format_fraction(args.tolerance),
        "divisor": args.divisor,
    }
    inputs = {"width": args.width, "src_arch": args.src_arch, "dst_arch": args.dst_arch}
    _write(out, "manifest.json", _manifest("transfer", params, inputs, None))
    if result.granularity_failure:
        print(
            f"warning: rounding granularity left a relative FLOPs error of "
            f"{float(result.rel_error):.4%}",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_overhead(args) -> int:
    source_cfg = _load_config(args.source_config)
    target_cfg = _load_config(args.target_config)
    try:
        reduction = idealized_savings(source_cfg, target_cfg)
        components = idealized_components(source_cfg, target_cfg)
    except ProjectionError as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    doc: dict = {
        "schema": "widthforge.savings@1",
        "source": source_cfg.to_dict(),
        "target": target_cfg.to_dict(),
        "idealized": {
            "saved_fraction": format_fraction(1 - 1 / reduction),
            "reduction_factor": format_fraction(reduction),
            "components": {k: format_fraction(v) for k, v in components.items()},
        },
    }
    if args.mode in ("measured", "both") and not args.arch:
        raise _fail(EXIT_VALIDATION, "measured mode requires --arch")
    if args.arch:
        arch = _load_arch(args.arch)
        if args.dataset:
            base_ds = _load_dataset(args.dataset)
        else:
            # Any balanced descriptor works: sample counts cancel in ratios.
            base_ds = DatasetSpec(
                name="balanced-default",
                num_classes=arch.num_classes,
                samples_per_class=(100,) * arch.num_classes,
                resolution=target_cfg.resolution,
            )
        try:
            reports = []
            for cfg in (source_cfg, target_cfg):
                proj = project_arch(arch, cfg.width_mult, cfg.depth_mult)
                ds = project_dataset(base_ds, cfg.resolution, cfg.sample_fraction)
                reports.append(
                    optimization_overhead(
                        proj, ds, args.epochs, args.algo_factor, args.backward_factor
                    )
                )
            saved_frac, reduction_meas = savings(reports[0], reports[1])
        except (ArchError, ProjectionError) as exc:
            raise _fail(EXIT_VALIDATION, str(exc)) from exc
        doc["measured"] = {
            "saved_fraction": format_fraction(saved_frac),
            "reduction_factor": format_fraction(reduction_meas),
            "source_opt_flops": reports[0].opt_flops,
            "target_opt_flops": reports[1].opt_flops,
        }
    if args.format == "csv":
        lines = ["mode,saved_fraction,reduction_factor"]
        lines.append(
            f"idealized,{doc['idealized']['saved_fraction']},{doc['idealized']['reduction_factor']}"
        )
        if "measured" in doc:
            lines.append(
                f"measured,{doc['measured']['saved_fraction']},{doc['measured']['reduction_factor']}"
            )
        text = "\n".join(lines) + "\n"
    else:
        text = canonical_dumps(doc)
    if args.out:
        out = Path(args.out)
        name = "savings.csv" if args.format == "csv" else "savings.json"
        _write(out, name, text)
        inputs = {"source_config": args.source_config, "target_config": args.target_config}
        if args.arch:
            inputs["arch"] = args.arch
        if args.dataset:
            inputs["dataset"] = args.dataset
        params = {
            "mode": args.mode,
            "format": args.format,
            "epochs": args.epochs,
            "algo_factor": format_fraction(args.algo_factor),
            "backward_factor": format_fraction(args.backward_factor),
        }
        _write(out, "manifest.json", _manifest("overhead", params, inputs, None))
    else:
        sys.stdout.write(text)
    return EXIT_OK


RECORD_SCHEMA = "widthforge.run_record@1"


def _load_records(run_dir: str) -> list[RunRecord]:
    root = Path(run_dir)
    if not root.is_dir():
        raise _fail(EXIT_VALIDATION, "run directory does not exist", run_dir)
    records = []
    for path in sorted(root.rglob("*.json")):
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise _fail(EXIT_VALIDATION, f"malformed record: {exc}", str(path)) from exc
        if not isinstance(doc, dict) or doc.get("schema") != RECORD_SCHEMA:
            continue
        try:
            records.append(
                RunRecord(
                    source_config=ProjectionConfig.from_dict(doc["source_config"]),
                    target_config=ProjectionConfig.from_dict(doc["target_config"]),
                    algorithm=doc["algorithm"],
                    width=WidthVector(
                        tuple(parse_fraction(e) for e in doc["width"]["entries"])
                    ),
                    accuracy_proxy=float(doc["accuracy_proxy"]),
                    overhead=OverheadReport.from_dict(doc["overhead"]),
                    seed=int(doc["seed"]),
                )
            )
        except (KeyError, ValueError, ProjectionError, ArchError) as exc:
            raise _fail(EXIT_VALIDATION, f"malformed record: {exc}", str(path)) from exc
    if not records:
        raise _fail(EXIT_VALIDATION, "no records found in run directory", run_dir)
    return records


def cmd_report(args) -> int:
    records = _load_records(args.run_dir)
    try:
        text = emit_report(records, args.format)
    except (AnalysisError, ProjectionError) as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_similarity(args) -> int:
    widths = [_load_width(p) for p in args.widths]
    labels = args.labels.split(",") if args.labels else [
        Path(p).stem for p in args.widths
    ]
    try:
        matrix, labels = similarity_matrix(widths, labels)
    except AnalysisError as exc:
        raise _fail(EXIT_VALIDATION, str(exc)) from exc
    if args.format == "json":
        text = canonical_dumps({"labels": labels, "matrix": matrix})
    else:
        text = matrix_text(matrix, labels)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="widthforge",
        description="FLOPs-constrained channel-width optimization pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preset", help="write a built-in architecture as JSON")
    p.add_argument("preset_id", choices=PRESETS)
    p.add_argument("--overrides", default=None, help="JSON object of preset knobs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("apply", help="apply a width vector to an architecture")
    p.add_argument("width")
    p.add_argument("arch")
    p.add_argument("--divisor", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("project", help="down-scale an architecture and dataset")
    p.add_argument("arch")
    p.add_argument("--dataset", default=None)
    p.add_argument("--width", type=_fraction_arg, default=Fraction(1))
    p.add_argument("--depth", type=_fraction_arg, default=Fraction(1))
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--fraction", type=_fraction_arg, default=Fraction(1))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("optimize", help="search per-unit widths")
    p.add_argument("arch")
    p.add_argument("dataset")
    p.add_argument("--algo", choices=ALGORITHMS + PLUGIN_ALGORITHMS, default="greedy")
    p.add_argument("--evaluator", choices=("synthetic", "bridge"), default="synthetic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grow", type=_fraction_arg, default=Fraction(3, 2))
    p.add_argument("--prune-group", type=int, default=8)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--max-evaluations", type=int, default=10_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("transfer", help="extrapolate widths to another architecture")
    p.add_argument("width")
    p.add_argument("src_arch")
    p.add_argument("dst_arch")
    p.add_argument("--stacking", choices=STACKINGS, default="stack-average-block")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--tolerance", type=_fraction_arg, default=Fraction(1, 200))
    p.add_argument("--divisor", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("overhead", help="savings between two proxy configurations")
    p.add_argument("source_config")
    p.add_argument("target_config")
    p.add_argument("--arch", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--mode", choices=("idealized", "measured", "both"), default="idealized")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--algo-factor", type=_fraction_arg, default=Fraction(2))
    p.add_argument("--backward-factor", type=_fraction_arg, default=Fraction(3))
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("report", help="aggregate run records")
    p.add_argument("run_dir")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("similarity", help="pairwise cosine similarity of width files")
    p.add_argument("widths", nargs="+")
    p.add_argument("--labels", default=None)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_similarity)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(
            json.dumps({"code": exc.code, "message": str(exc), "path": exc.path}),
            file=sys.stderr,
        )
        return exc.code


def run() -> None:
    sys.exit(main())
