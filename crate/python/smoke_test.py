#!/usr/bin/env python3
"""End-to-end smoke test for the vrl_py bindings.

Builds the extension with cargo, imports it, and runs a miniature
pipeline: graph construction, scene synthesis, training, evaluation and
the random-walk baseline.

Usage: python3 python/smoke_test.py
"""

import importlib.util
import json
import pathlib
import shutil
import subprocess
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent

COUNTS = """\
A\tgirl\tyoung\t40
A\thorse\tbrown\t35
A\tman\ttall\t30
A\tman\told\t29
P\tman\triding\thorse\t50
P\tgirl\triding\thorse\t44
P\tman\tnear\tgirl\t41
P\tgirl\tnear\tman\t41
P\thorse\tnear\tman\t33
P\tman\tnear\thorse\t33
P\tgirl\tnear\thorse\t32
P\thorse\tnear\tgirl\t31
"""


def build_extension() -> pathlib.Path:
    subprocess.run(
        ["cargo", "build", "-p", "vrl-py"],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "debug" / "libvrl_py.so"
    if not built.exists():  # e.g. macOS
        built = REPO / "target" / "debug" / "libvrl_py.dylib"
    return built


def import_extension(built: pathlib.Path, scratch: pathlib.Path):
    module_path = scratch / "vrl_py.so"
    shutil.copyfile(built, module_path)
    spec = importlib.util.spec_from_file_location("vrl_py", module_path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main() -> int:
    built = build_extension()
    with tempfile.TemporaryDirectory() as tmp:
        scratch = pathlib.Path(tmp)
        vrl = import_extension(built, scratch)

        counts_path = scratch / "counts.tsv"
        counts_path.write_text(COUNTS)

        graph = vrl.Graph.build(str(counts_path), 30)
        stats = graph.stats()
        assert graph.n_categories == 3, stats
        assert graph.n_predicates == 2, stats
        # The count-29 attribute phrase must be thresholded out.
        assert stats["n_attr_edges"] == 3, stats
        print("graph:", graph)

        graph_path = scratch / "g.json"
        graph.save(str(graph_path))
        reloaded = vrl.Graph.load(str(graph_path))
        assert reloaded.stats() == stats

        train_path = scratch / "train.jsonl"
        test_path = scratch / "test.jsonl"
        params = json.dumps({"n_objects": 4})
        n = vrl.gen_scenes(graph, str(train_path), seed=11, count=30, params_json=params)
        assert n == 30
        vrl.gen_scenes(graph, str(test_path), seed=22, count=10, params_json=params)

        ckpt = scratch / "model.ckpt"
        cfg = json.dumps({"epochs": 3, "batch": 16, "hidden": [32], "tau": 200})
        metrics = vrl.train_policy(
            graph,
            str(train_path),
            str(ckpt),
            variant="vrl",
            seed=7,
            config_json=cfg,
            d_image=16,
            d_instance=16,
            d_phrase=8,
        )
        assert len(metrics) == 3, metrics
        assert metrics[0]["epsilon"] == 1.0
        print("training metrics:", [round(m["mean_reward"], 3) for m in metrics])

        report = vrl.evaluate_policy(
            graph,
            str(test_path),
            str(ckpt),
            variant="vrl",
            seed=7,
            train_scenes_path=str(train_path),
            d_image=16,
            d_instance=16,
            d_phrase=8,
        )
        assert report["n_scenes"] == 10, report
        assert 0.0 <= report["recall50_relationship"] <= 1.0
        assert report["zero_shot_recall50"] is not None
        print("eval report:", json.dumps(report, indent=2))

        baseline = vrl.random_walk_eval(graph, str(test_path), seed=7)
        assert baseline["n_scenes"] == 10
        print("random-walk rel R@50:", baseline["recall50_relationship"])

        # Determinism: identical evaluation twice.
        report2 = vrl.evaluate_policy(
            graph,
            str(test_path),
            str(ckpt),
            variant="vrl",
            seed=7,
            train_scenes_path=str(train_path),
            d_image=16,
            d_instance=16,
            d_phrase=8,
        )
        assert report == report2

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
