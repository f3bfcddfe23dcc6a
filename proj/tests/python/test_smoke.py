"""Smoke checks for the python bindings: coding arithmetic, the model ->
package -> run path, and the exception mapping."""

import os
import random
import tempfile

import tinyforge as tf

REPO_ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "..")


def check_compression_ratio():
    # 1 / ((1 - 0.75) * (1 + 1/4)) == 3.2
    assert abs(tf.compression_ratio(0.75, 4) - 3.2) < 1e-12
    assert abs(tf.compression_ratio(0.0, 2) - 2.0 / 3.0) < 1e-12


def check_prune_roundtrip():
    rng = random.Random(7)
    data = bytes(rng.randrange(1, 256) for _ in range(1000))
    pruned = tf.prune_blockwise(data, 0.75, 4)
    assert len(pruned) == len(data)
    assert tf.blockwise_roundtrip(pruned, 4) == pruned
    assert tf.encoded_size(pruned, 4) < len(data)


def check_model_package():
    with tempfile.TemporaryDirectory() as d:
        model_path = os.path.join(d, "model.json")
        info = tf.sample_demo_model(model_path, seed=3)
        assert info["layers"] > 0
        assert info["input_shape"] == [3, 32, 32]

        package_path = os.path.join(d, "model.tfpkg")
        report = tf.encode_model(model_path, package_path, sparsity=0.5, block=4)
        assert report["fits"]
        assert report["storage_bytes"] <= 1048576
        assert report["peak_memory_bytes"] <= 327680

        pkg = tf.Package(package_path)
        n = 1
        for dim in pkg.input_shape:
            n *= dim
        rng = random.Random(11)
        x = bytes(rng.randrange(0, 256) for _ in range(n))
        first = pkg.run(x)
        second = pkg.run(x)
        assert first["data"] == second["data"]
        assert first["shape"] == second["shape"]
        assert first["total_macs"] == second["total_macs"]
        assert first["arena_bytes"] == pkg.arena_size


def check_space_screening():
    config = os.path.join(REPO_ROOT, "configs", "demo_search.json")
    result = tf.analyze_space(config, iterations=200, seed=5)
    assert result["samples"] == 200
    assert result["accepted"]


def check_error_mapping():
    try:
        tf.resource_report("/nonexistent/model.json")
    except ValueError:
        pass
    else:
        raise AssertionError("missing model file should raise ValueError")

    with tempfile.TemporaryDirectory() as d:
        model_path = os.path.join(d, "m.json")
        tf.sample_demo_model(model_path, seed=1)
        package_path = os.path.join(d, "p.tfpkg")
        try:
            tf.encode_model(model_path, package_path, storage_budget=64)
        except RuntimeError:
            assert not os.path.exists(package_path)
        else:
            raise AssertionError("a 64-byte storage budget should raise")


def main():
    check_compression_ratio()
    check_prune_roundtrip()
    check_model_package()
    check_space_screening()
    check_error_mapping()
    print("python smoke: all checks passed")


if __name__ == "__main__":
    main()
