"""Evaluation backends scoring candidate architectures on dataset descriptors.

Two implementations of the same contract. The synthetic evaluator is a
closed-form stand-in for train-then-validate: monotone in every unit's
channel count with diminishing returns, bit-for-bit deterministic given
(architecture family, seed), and it emits per-channel importance scores
aligned with its own accuracy model so pruning-style optimizers have a
consistent signal. The bridge evaluator shells out to an external trainer
process over line-delimited JSON and is serial-only.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import subprocess
from dataclasses import dataclass
from typing import Mapping, Protocol

from .archspec import ArchSpec, arch_to_dict, flops, width_units
from .projection import DatasetSpec

EVALUATOR_CMD_ENV = "WIDTHFORGE_EVALUATOR_CMD"


class EvaluatorError(RuntimeError):
    """Evaluation backend unavailable or returned malformed results."""


@dataclass(frozen=True)
class EvaluatorBudget:
    epochs: int = 40
    max_evaluations: int = 10_000

    def __post_init__(self):
        if self.epochs < 1 or self.max_evaluations < 1:
            raise ValueError("budget fields must be >= 1")


@dataclass(frozen=True)
class EvaluationResult:
    accuracy_proxy: float
    channel_scores: Mapping[str, tuple[float, ...]]
    cost_flops: int

    def __post_init__(self):
        if not 0 <= self.accuracy_proxy <= 1:
            raise ValueError(f"accuracy_proxy {self.accuracy_proxy} outside [0, 1]")


class Evaluator(Protocol):
    # concurrency_safe=False declares serial-only: callers must not issue
    # overlapping evaluate() calls on one instance.
    concurrency_safe: bool

    def evaluate(self, arch: ArchSpec, ds: DatasetSpec, budget: EvaluatorBudget) -> EvaluationResult: ...


def _hash_unit(family: str, unit_id: str, seed: int, tag: str) -> float:
    digest = hashlib.sha256(f"{family}|{unit_id}|{seed}|{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / float(1 << 64)


class SyntheticEvaluator:
    """Analytic accuracy model: sum_u a_u * (1 - exp(-c_u / k_u)), normalized.

    a_u and k_u are seeded per (architecture family, unit id), so every width
    variant of the same family is scored on one fixed landscape. Channel
    scores decay as a_u * exp(-j / k_u), matching the accuracy model's
    marginal value of the j-th channel.
    """

    concurrency_safe = True

    def __init__(self, seed: int = 0, backward_factor: int = 3):
        self.seed = seed
        self.backward_factor = backward_factor

    def _params(self, family: str, unit_id: str) -> tuple[float, float]:
        alpha = 0.5 + _hash_unit(family, unit_id, self.seed, "alpha")
        kappa = 4.0 + 92.0 * _hash_unit(family, unit_id, self.seed, "kappa")
        return alpha, kappa

    def evaluate(self, arch: ArchSpec, ds: DatasetSpec, budget: EvaluatorBudget) -> EvaluationResult:
        units = width_units(arch)
        if not units:
            raise EvaluatorError(f"{arch.name} has no width units to score")
        total_alpha = 0.0
        gain = 0.0
        scores: dict[str, tuple[float, ...]] = {}
        for unit in units:
            alpha, kappa = self._params(arch.family, unit.id)
            total_alpha += alpha
            gain += alpha * (1.0 - math.exp(-unit.base / kappa))
            scores[unit.id] = tuple(
                alpha * math.exp(-j / kappa) for j in range(unit.base)
            )
        forward = flops(arch, ds.resolution).total
        cost = forward * ds.total_samples * budget.epochs * self.backward_factor
        return EvaluationResult(
            accuracy_proxy=gain / total_alpha,
            channel_scores=scores,
            cost_flops=cost,
        )


class BridgeEvaluator:
    """Client for an external trainer speaking line-delimited JSON on stdio.

    One request in flight at a time; the subprocess is spawned lazily from
    ``command`` or the WIDTHFORGE_EVALUATOR_CMD environment variable. Every
    response must echo its request id and carry per-unit score lists whose
    lengths match the applied channel counts; violations raise immediately.
    """

    concurrency_safe = False

    def __init__(
        self,
        command: str | None = None,
        dataset_id: str = "synthetic-blobs",
        split_seed: int = 0,
    ):
        self.command = command or os.environ.get(EVALUATOR_CMD_ENV)
        if not self.command:
            raise EvaluatorError(
                f"no bridge command given and {EVALUATOR_CMD_ENV} is unset"
            )
        self.dataset_id = dataset_id
        self.split_seed = split_seed
        self._proc: subprocess.Popen | None = None
        self._counter = 0

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    shell=True,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                )
            except OSError as exc:
                raise EvaluatorError(f"cannot start bridge: {exc}") from exc
        return self._proc

    def evaluate(self, arch: ArchSpec, ds: DatasetSpec, budget: EvaluatorBudget) -> EvaluationResult:
        proc = self._ensure_proc()
        self._counter += 1
        request_id = f"req-{self._counter:06d}"
        request = {
            "request_id": request_id,
            "arch": arch_to_dict(arch),
            "dataset": {
                "spec": ds.to_dict(),
                "id": self.dataset_id,
                "split_seed": self.split_seed,
            },
            "budget": {
                "epochs": budget.epochs,
                "max_evaluations": budget.max_evaluations,
            },
        }
        assert proc.stdin is not None and proc.stdout is not None
        try:
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluatorError(f"bridge I/O failed: {exc}") from exc
        if not line:
            raise EvaluatorError("bridge closed its output stream")
        try:
            response = json.loads(line)
        except ValueError as exc:
            raise EvaluatorError(f"bridge sent invalid JSON: {exc}") from exc
        if response.get("request_id") != request_id:
            raise EvaluatorError(
                f"bridge echoed {response.get('request_id')!r}, expected {request_id!r}"
            )
        if response.get("error"):
            raise EvaluatorError(f"bridge error: {response['error']}")
        scores = {
            unit: tuple(float(s) for s in values)
            for unit, values in response["channel_scores"].items()
        }
        for unit in width_units(arch):
            got = len(scores.get(unit.id, ()))
            if got != unit.base:
                raise EvaluatorError(
                    f"bridge returned {got} scores for unit {unit.id} "
                    f"(expected {unit.base})"
                )
        return EvaluationResult(
            accuracy_proxy=float(response["accuracy_proxy"]),
            channel_scores=scores,
            cost_flops=int(response["cost_flops"]),
        )

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self) -> "BridgeEvaluator":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
