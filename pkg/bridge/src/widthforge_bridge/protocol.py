"""Line-delimited JSON server: one request per line in, one response out.

Serial by contract: a single request is handled at a time and responses
leave in request order. Malformed requests produce an error response that
still echoes whatever request id could be recovered; the process exits
nonzero only on unrecoverable stream failures.
"""

from __future__ import annotations

import json
import sys

import torch

from . import RECIPE_VERSION
from .data import DataError, materialize, select_counts, validation_set
from .netbuild import BridgeError, BridgeNet, count_macs, unit_scores
from .train import evaluate_accuracy, train_model

BACKWARD_FACTOR = 3
MAX_EPOCHS = 200


def handle_request(doc: dict) -> dict:
    request_id = doc.get("request_id") if isinstance(doc, dict) else None
    try:
        if not isinstance(doc, dict):
            raise BridgeError("request must be a JSON object")
        arch = doc["arch"]
        dataset = doc["dataset"]
        spec = dataset["spec"]
        dataset_id = dataset["id"]
        split_seed = int(dataset.get("split_seed", 0))
        epochs = int(doc["budget"]["epochs"])
        if not 1 <= epochs <= MAX_EPOCHS:
            raise BridgeError(f"epochs must be in [1, {MAX_EPOCHS}]")

        num_classes = int(spec["num_classes"])
        counts = [int(c) for c in spec["samples_per_class"]]
        resolution = int(spec["resolution"])
        if len(counts) != num_classes:
            raise BridgeError("samples_per_class length differs from num_classes")
        head_out = arch["head"][-1]["base_out_channels"] if arch["head"] else None
        if head_out != num_classes:
            raise BridgeError(
                f"classifier width {head_out} does not match num_classes {num_classes}"
            )

        torch.manual_seed(split_seed)
        model = BridgeNet(arch)
        selected = select_counts(dataset_id, counts, split_seed)
        train_x, train_y = materialize(dataset_id, selected, resolution)
        val_x, val_y = validation_set(dataset_id, num_classes, resolution)

        diverged = train_model(model, train_x, train_y, epochs, seed=split_seed)
        accuracy = 0.0 if diverged else evaluate_accuracy(model, val_x, val_y)
        scores = unit_scores(model, arch)
        cost = count_macs(arch, resolution) * train_x.shape[0] * epochs * BACKWARD_FACTOR
        return {
            "request_id": request_id,
            "accuracy_proxy": accuracy,
            "channel_scores": scores,
            "cost_flops": cost,
            "recipe_version": RECIPE_VERSION,
            "diverged": diverged,
        }
    except (BridgeError, DataError, KeyError, TypeError, ValueError) as exc:
        return {"request_id": request_id, "error": f"{type(exc).__name__}: {exc}"}


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except ValueError as exc:
            response = {"request_id": None, "error": f"invalid JSON: {exc}"}
        else:
            response = handle_request(doc)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


def run() -> None:
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        serve()
    except (BrokenPipeError, OSError) as exc:
        print(f"bridge: stream failure: {exc}", file=sys.stderr)
        raise SystemExit(1)
