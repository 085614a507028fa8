"""End-to-end checks for the bnet Python bindings.

Runs against a synthetic MNIST-shaped dataset so no real data download is
needed; the heavy lifting (training semantics, numerics) is covered by the
C++ suites, this file only proves the bindings wire through correctly.
"""

import json
import struct

import pytest

bnet = pytest.importorskip("bnet")

GATES = range(1, 17)
CORNERS = [(0, 0), (0, 1), (1, 0), (1, 1)]


def truth_bit(gate, a, b):
    # Gate id g encodes its truth table as the 4-bit value g-1, MSB first
    # in row order (0,0), (0,1), (1,0), (1,1).
    return ((gate - 1) >> (3 - (2 * a + b))) & 1


def test_gate_truth_tables():
    for g in GATES:
        for a, b in CORNERS:
            assert bnet.eval_boolean(g, bool(a), bool(b)) == bool(truth_bit(g, a, b))


def test_relaxation_agrees_at_corners():
    for g in GATES:
        for a, b in CORNERS:
            assert bnet.eval_relaxed(g, float(a), float(b)) == float(truth_bit(g, a, b))


def test_relaxed_partials_match_finite_differences():
    # The relaxation is affine in each argument, so central differences
    # are exact up to rounding.
    h = 1e-4
    for g in GATES:
        for x, y in [(0.25, 0.5), (0.37, 0.81), (0.5, 0.5)]:
            dx, dy = bnet.relaxed_partials(g, x, y)
            fd_x = (bnet.eval_relaxed(g, x + h, y) - bnet.eval_relaxed(g, x - h, y)) / (2 * h)
            fd_y = (bnet.eval_relaxed(g, x, y + h) - bnet.eval_relaxed(g, x, y - h)) / (2 * h)
            assert dx == pytest.approx(fd_x, abs=1e-9)
            assert dy == pytest.approx(fd_y, abs=1e-9)


def test_gate_classes():
    assert bnet.gate_class(1) == "const0"
    assert bnet.gate_class(16) == "const1"
    assert bnet.gate_class(4) == "pass_a"
    assert bnet.gate_class(6) == "pass_b"
    assert bnet.gate_class(13) == "not_a"
    assert bnet.gate_class(11) == "not_b"
    assert bnet.gate_class(2) == "nontrivial"
    assert bnet.gate_class(7) == "nontrivial"


def test_presets_parse_and_bad_names_fail():
    names = bnet.preset_names()
    assert "mnist-dense-desk" in names and len(names) == 13
    for name in names:
        cfg = json.loads(bnet.preset_config(name))
        assert cfg["dataset"] in ("mnist", "cifar10")
    with pytest.raises(ValueError):
        bnet.preset_config("no-such-preset")


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(ValueError, match="unknown key"):
        bnet.train('{"learn_rate": 0.1}', str(tmp_path), str(tmp_path / "out"))


def test_missing_checkpoint_raises():
    with pytest.raises(RuntimeError):
        bnet.evaluate_checkpoint("/nonexistent/best.ckpt",
                                 bnet.preset_config("mnist-dense-desk"), "/tmp")


def _write_be32(f, v):
    f.write(struct.pack(">I", v))


def _write_idx_pair(directory, stem, n):
    with open(directory / f"{stem}-images-idx3-ubyte", "wb") as img:
        _write_be32(img, 0x803)
        _write_be32(img, n)
        _write_be32(img, 28)
        _write_be32(img, 28)
        img.write(bytes((i * 131 + p * 7) % 256 for i in range(n) for p in range(784)))
    with open(directory / f"{stem}-labels-idx1-ubyte", "wb") as lab:
        _write_be32(lab, 0x801)
        _write_be32(lab, n)
        lab.write(bytes(i % 10 for i in range(n)))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("bnet_py")
    mnist = root / "mnist"
    mnist.mkdir()
    _write_idx_pair(mnist, "train", 96)
    _write_idx_pair(mnist, "t10k", 48)
    config = json.dumps({
        "dataset": "mnist",
        "init": "gaussian",
        "dense_widths": [400, 200],
        "classes": 10,
        "learning_rate": 0.02,
        "batch_size": 16,
        "total_steps": 30,
        "eval_interval": 10,
        "tau": 1.0,
        "K": 4,
        "patience": 10,
        "resample_until": 20,
        "seed": 11,
        "augment": False,
        "validation_size": 16,
    })
    return root, config


def test_train_eval_compile_prune(workspace):
    root, config = workspace
    out = root / "run"
    result = bnet.train(config, data_dir=str(root), out_dir=str(out))
    assert result["steps"] == 30
    assert 0.0 <= result["best_val_acc"] <= 1.0
    assert 0.0 <= result["test_disc_acc"] <= 1.0
    for name in ("config.json", "metrics.jsonl", "last.ckpt", "best.ckpt"):
        assert (out / name).exists()
    assert len((out / "metrics.jsonl").read_text().splitlines()) >= 3

    best = str(out / "best.ckpt")
    disc = bnet.evaluate_checkpoint(best, config, str(root))
    relaxed = bnet.evaluate_checkpoint(best, config, str(root), mode="relaxed")
    train_disc = bnet.evaluate_checkpoint(best, config, str(root), split="train")
    assert result["test_disc_acc"] == disc
    assert 0.0 <= relaxed <= 1.0 and 0.0 <= train_disc <= 1.0

    netlist = bnet.compile_checkpoint(best)
    assert netlist.startswith("bnet v1 784 600 10 20")
    pruned = bnet.prune_netlist(netlist, verify_samples=256, seed=3)
    assert pruned["equivalent"] is True
    assert pruned["neurons"] == 600
    assert 0 < pruned["bops"] <= 600
    assert pruned["vectors_checked"] >= 256

    # The compiled circuit must reproduce the discretized network exactly,
    # and pruning must not change a single prediction.
    assert bnet.netlist_accuracy(netlist, config, str(root)) == disc
    assert bnet.netlist_accuracy(pruned["netlist"], config, str(root)) == disc

    # Re-running with the same output directory resumes from last.ckpt and
    # has nothing left to do.
    again = bnet.train(config, data_dir=str(root), out_dir=str(out))
    assert again["steps"] == 30
    assert again["best_step"] == result["best_step"]
    assert again["test_disc_acc"] == disc
