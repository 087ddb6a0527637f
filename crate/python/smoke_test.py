#!/usr/bin/env python3
"""Smoke test for the residual_sketch_py extension module.

Builds the cdylib with cargo, loads it, and drives the main surfaces:
hierarchy operations, sketch insertion/extraction against the exact
oracle, the evaluation metrics and the trace generators.
"""

import os
import shutil
import subprocess
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_and_import():
    if os.environ.get("RSKETCH_SKIP_BUILD") != "1":
        subprocess.run(
            ["cargo", "build", "--release", "-p", "residual-sketch-py"],
            cwd=REPO_ROOT,
            check=True,
        )
    candidates = [
        os.path.join(REPO_ROOT, "target", "release", "libresidual_sketch_py.so"),
        os.path.join(REPO_ROOT, "target", "debug", "libresidual_sketch_py.so"),
    ]
    lib = next((c for c in candidates if os.path.exists(c)), None)
    assert lib, f"extension library not found in {candidates}"
    stage = tempfile.mkdtemp(prefix="residual-sketch-py-")
    shutil.copy(lib, os.path.join(stage, "residual_sketch_py.so"))
    sys.path.insert(0, stage)
    import residual_sketch_py

    return residual_sketch_py


def main():
    rs = build_and_import()

    # Hierarchy basics.
    gran = rs.Granularity("byte", 32)
    key = gran.full_key(0xC0A80001)
    up = gran.generalize(key, 1)
    assert gran.render(up) == "192.168.0.0/24"
    assert gran.is_ancestor(up, key) and not gran.is_ancestor(key, up)
    assert gran.parse("192.168.0.0/24") == up

    bit = rs.Granularity("bit", 32)
    assert bit.depth == 32
    assert bit.prefix_len(bit.key(0xC0A80000, 20)) == 12

    # A small skewed window, sketch vs exact oracle.
    records = rs.gen_zipf(skew=1.2, keys=300, length=30_000, seed=7)
    assert len(records) == 30_000
    assert records == rs.gen_zipf(skew=1.2, keys=300, length=30_000, seed=7)

    theta = 0.01
    sketch = rs.ResidualSketch(
        memory_kb=64.0,
        levels=[32, 12],
        theta=theta,
        expected_window=len(records),
        seed=1,
    )
    oracle = rs.ExactOracle("bit", 32)
    for ip, value in records:
        sketch.insert(ip, value)
        oracle.observe(ip, value)
    assert sketch.n == len(records)

    reported = sketch.extract_hhh(theta)
    truth = oracle.exact_hhh(theta)
    assert truth, "a skewed trace has heavy hitters"
    scores = rs.evaluate(
        [(bits, layer, count) for (_, bits, layer, count) in reported],
        [(bits, layer, count) for (_, bits, layer, count) in truth],
    )
    assert scores["f1"] > 0.9, f"degenerate accuracy: {scores}"
    assert scores["are"] < 0.2, f"degenerate ARE: {scores}"
    assert len(scores["per_layer_f1"]) == 33

    # The apex always aggregates the whole window.
    root = oracle.exact_layer_hh(theta, 32)
    assert len(root) == 1 and root[0].layer == 32

    # Locked flows stop propagating: update counters are monotone per level.
    counts = sketch.level_update_counts()
    assert counts[0] == len(records) and counts[1] <= counts[0]

    # Window reset restores a fresh sketch.
    sketch.reset_window()
    assert sketch.n == 0

    # Skew modification conserves record count and total value.
    modified = rs.skew_modify(records, top_k=20, mass_fraction=0.4, seed=3)
    assert len(modified) == len(records)
    assert sum(v for _, v in modified) == sum(v for _, v in records)

    print("smoke_test: OK")


if __name__ == "__main__":
    main()
