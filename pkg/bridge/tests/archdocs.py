"""Schema-level architecture document builders for bridge tests.

These construct the optimizer side's JSON shape directly; the bridge is
meant to work from documents alone, so its tests do too.
"""

import random


def layer(kind, out, kernel=1, stride=1, groups=1, unit="fixed"):
    return {
        "kind": kind,
        "base_out_channels": out,
        "kernel": kernel,
        "stride": stride,
        "groups": groups,
        "width_unit": unit,
    }


def derive_registry(doc):
    order, info = [], {}
    paths = []
    for i, l in enumerate(doc["stem"]):
        paths.append((f"stem.{i}", l))
    for si, stage in enumerate(doc["stages"]):
        for bi, block in enumerate(stage["blocks"]):
            for li, l in enumerate(block["layers"]):
                paths.append((f"s{si}.b{bi}.l{li}", l))
    for i, l in enumerate(doc["head"]):
        paths.append((f"head.{i}", l))
    for path, l in paths:
        unit = l["width_unit"]
        if unit == "fixed":
            continue
        if unit not in info:
            order.append(unit)
            info[unit] = {"id": unit, "base": l["base_out_channels"], "members": []}
        info[unit]["members"].append(path)
    return [info[u] for u in order]


def make_arch(seed, num_classes=4, resolution=8):
    """Small residual network document: stem, 1-2 stages, fixed classifier."""
    rng = random.Random(seed)

    def width():
        return rng.choice((4, 6, 8, 12))

    doc = {
        "schema": "widthforge.archspec@1",
        "name": f"bridge-test-{seed}",
        "default_resolution": resolution,
        "num_classes": num_classes,
        "stem": [layer("standard-conv", width(), kernel=3, unit="stem")],
        "stages": [],
        "head": [layer("fully-connected", num_classes)],
    }
    for si in range(rng.randint(1, 2)):
        trunk = f"s{si}.trunk"
        trunk_w = width()
        blocks = []
        for bi in range(rng.randint(1, 2)):
            stride = rng.choice((1, 2)) if bi == 0 else 1
            blocks.append(
                {
                    "residual": bi > 0,
                    "layers": [
                        layer("standard-conv", width(), kernel=3, stride=stride, unit=f"s{si}.b{bi}.c0"),
                        layer("standard-conv", trunk_w, kernel=3, unit=trunk),
                    ],
                }
            )
        doc["stages"].append(
            {"depth_projectable": True, "trunk_unit": trunk, "blocks": blocks}
        )
    doc["units"] = derive_registry(doc)
    return doc
