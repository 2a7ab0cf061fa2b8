"""Protocol conformance, including the bridge acceptance check: echo,
ordering, and score shapes over randomized architectures, plus split-manifest
determinism."""

import json
import subprocess
import sys
import time
from fractions import Fraction

from widthforge_bridge.data import split_manifest
from widthforge_bridge.protocol import handle_request

from archdocs import derive_registry, make_arch


def make_request(request_id, doc, counts=(6, 6, 6, 6), epochs=1, seed=0):
    return {
        "request_id": request_id,
        "arch": doc,
        "dataset": {
            "spec": {
                "schema": "widthforge.dataset@1",
                "name": "synthetic",
                "num_classes": doc["num_classes"],
                "resolution": doc["default_resolution"],
                "samples_per_class": list(counts[: doc["num_classes"]]),
            },
            "id": "synthetic-blobs",
            "split_seed": seed,
        },
        "budget": {"epochs": epochs, "max_evaluations": 100},
    }


def spawn_bridge():
    return subprocess.Popen(
        [sys.executable, "-m", "widthforge_bridge"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
        encoding="utf-8",
    )


class TestInProcess:
    def test_echo_and_shape(self):
        doc = make_arch(seed=1)
        response = handle_request(make_request("r-1", doc))
        assert response["request_id"] == "r-1"
        assert "error" not in response
        registry = {u["id"]: u["base"] for u in derive_registry(doc)}
        for unit_id, values in response["channel_scores"].items():
            assert len(values) == registry[unit_id]
        assert 0.0 <= response["accuracy_proxy"] <= 1.0
        assert response["cost_flops"] > 0
        assert response["diverged"] is False

    def test_single_class_is_perfect(self):
        doc = make_arch(seed=2, num_classes=1)
        response = handle_request(make_request("one", doc, counts=(8,)))
        assert response["accuracy_proxy"] == 1.0

    def test_malformed_request_keeps_id(self):
        response = handle_request({"request_id": "broken", "arch": {}})
        assert response["request_id"] == "broken"
        assert "error" in response

    def test_class_count_mismatch_reported(self):
        doc = make_arch(seed=3, num_classes=4)
        request = make_request("mismatch", doc)
        request["dataset"]["spec"]["num_classes"] = 3
        request["dataset"]["spec"]["samples_per_class"] = [6, 6, 6]
        response = handle_request(request)
        assert "error" in response

    def test_cost_accounts_images_epochs_backward(self):
        doc = make_arch(seed=4)
        one = handle_request(make_request("a", doc, epochs=1))
        two = handle_request(make_request("b", doc, epochs=2))
        assert two["cost_flops"] == 2 * one["cost_flops"]


def test_acceptance_10_bridge_conformance():
    start = time.perf_counter()
    docs = [make_arch(seed) for seed in range(20)]
    requests = [make_request(f"req-{i:03d}", doc, seed=i) for i, doc in enumerate(docs)]

    proc = spawn_bridge()
    try:
        payload = "".join(json.dumps(r) + "\n" for r in requests)
        stdout, _ = proc.communicate(payload, timeout=600)
    finally:
        if proc.poll() is None:
            proc.kill()
    lines = [l for l in stdout.splitlines() if l.strip()]

    ordered = len(lines) == len(requests)
    shapes_ok = True
    for request, line in zip(requests, lines):
        response = json.loads(line)
        if response.get("request_id") != request["request_id"]:
            ordered = False
        if "error" in response:
            shapes_ok = False
            continue
        registry = {u["id"]: u["base"] for u in derive_registry(request["arch"])}
        for unit_id, values in response["channel_scores"].items():
            if len(values) != registry.get(unit_id):
                shapes_ok = False
        if set(response["channel_scores"]) != set(registry):
            shapes_ok = False

    manifests_ok = True
    for i in range(20):
        seed, fraction = i, Fraction((i % 10) + 1, 10)
        if split_manifest("synthetic-blobs", fraction, 16, seed) != split_manifest(
            "synthetic-blobs", fraction, 16, seed
        ):
            manifests_ok = False

    elapsed = time.perf_counter() - start
    passed = ordered and shapes_ok and manifests_ok
    status = "PASS" if passed else "FAIL"
    print(
        f"ACCEPTANCE 10 {status} [{elapsed:6.2f}s] bridge protocol echo, in-order "
        f"responses, score shapes on 20 archs; manifest determinism on 20 pairs"
    )
    assert passed
