import math

import numpy as np
import pytest

import tcprune


def test_graph_and_forward_shapes():
    g = tcprune.build_graph("small-vgg", [3, 16, 16], 4)
    p = tcprune.init_params(g, seed=7)
    x = np.random.default_rng(0).normal(size=(5, 3, 16, 16)).astype(np.float32)
    logits = tcprune.forward(g, p, x)
    assert logits.shape == (5, 4)
    assert np.isfinite(logits).all()


def test_masked_forward_empty_mask_is_identity():
    g = tcprune.build_graph("toy", [1, 12, 12], 3)
    p = tcprune.init_params(g, seed=1)
    x = np.random.default_rng(1).normal(size=(2, 1, 12, 12)).astype(np.float32)
    assert np.array_equal(tcprune.forward(g, p, x), tcprune.masked_forward(g, p, x, {}))


def test_mmd_matches_closed_form_two_points():
    # One point per set at squared distance 2*sigma^2: MMD = 2 - 2/e.
    x = np.zeros((1, 2), dtype=np.float32)
    y = np.array([[2.0, 0.0]], dtype=np.float32)
    sigma = math.sqrt(2.0)
    got = tcprune.mmd(x, y, bandwidth=f"fixed:{sigma}")
    assert got == pytest.approx(2.0 - 2.0 * math.exp(-1.0), abs=1e-12)
    assert tcprune.mmd(x, x) <= 1e-12


def test_cross_entropy_uniform_logits():
    logits = np.zeros((3, 4), dtype=np.float32)
    assert tcprune.cross_entropy(logits, [0, 1, 2]) == pytest.approx(math.log(4.0), abs=1e-12)


def test_beta_schedule_endpoints():
    assert tcprune.beta_schedule(0, 10) == 0.0
    assert tcprune.beta_schedule(10, 10) == pytest.approx(0.9242343145200196, abs=1e-12)


def test_counts_on_documented_conv():
    # 3->16 channels, 3x3 kernel: 3*3*3*16 + 16 = 448 parameters.
    g = tcprune.build_graph("toy", [3, 12, 12], 2)
    names = set(tcprune.init_params(g, seed=0).names())
    assert "conv1.weight" in names and "conv1.bias" in names
    assert tcprune.count_flops(g) > 0


def test_generator_determinism_and_balance():
    a = tcprune.generate_domains(seed=3, classes=4, n_source=64, n_target=32)
    b = tcprune.generate_domains(seed=3, classes=4, n_source=64, n_target=32)
    assert np.array_equal(a["source_x"], b["source_x"])
    assert np.array_equal(a["target_x"], b["target_x"])
    counts = np.bincount(np.asarray(a["source_y"]), minlength=4)
    assert counts.max() - counts.min() <= 1


def test_tcpt_round_trip(tmp_path):
    arr = np.random.default_rng(5).normal(size=(3, 2, 4, 4)).astype(np.float32)
    path = str(tmp_path / "t.tcpt")
    tcprune.save_tcpt(arr, path)
    assert np.array_equal(tcprune.load_tcpt(path), arr)


def test_checkpoint_round_trip(tmp_path):
    g = tcprune.build_graph("toy", [1, 12, 12], 3)
    p = tcprune.init_params(g, seed=11)
    path = str(tmp_path / "m.ckpt")
    tcprune.save_checkpoint(g, p, path)
    g2, p2 = tcprune.load_checkpoint(path)
    assert g2.layer_ids == g.layer_ids
    for name in p.names():
        assert np.array_equal(p.get(name), p2.get(name))


def test_micro_prune_run():
    d = tcprune.generate_domains(seed=2, classes=3, n_source=96, n_target=96,
                                 height=12, width=12, channels=1,
                                 shift_brightness=0.1, shift_noise=0.05)
    g = tcprune.build_graph("toy", [1, 12, 12], 3)
    p = tcprune.init_params(g, seed=2)
    tcprune.train_base(g, p, d["source_x"], d["source_y"], d["target_x"],
                       d["target_y_eval_only"], epochs=2, batch=32, seed=2,
                       bandwidth="fixed:1")
    g2, p2, report = tcprune.run_prune(g, p, d["source_x"], d["source_y"], d["target_x"],
                                       d["target_y_eval_only"], method="tcp", k=1, iters=2,
                                       flops_target=0.9, short_ft=1, long_ft=1, batch=32,
                                       seed=2, bandwidth="fixed:1")
    assert report["rows"], "expected at least one pruning iteration"
    assert tcprune.count_flops(g2) < tcprune.count_flops(g)
    assert tcprune.count_params(p2) < tcprune.count_params(p)


def test_transfer_scores_cover_prunable_channels():
    d = tcprune.generate_domains(seed=4, classes=3, n_source=32, n_target=32,
                                 height=12, width=12, channels=1)
    g = tcprune.build_graph("toy", [1, 12, 12], 3)
    p = tcprune.init_params(g, seed=4)
    scores = tcprune.transfer_scores(g, p, d["source_x"], d["source_y"], d["target_x"],
                                     beta=0.5, bandwidth="fixed:1")
    expected = sum(g.out_channels(l) for l in g.prunable_layers())
    assert len(scores) == expected
    assert all(v >= 0.0 for v in scores.values())
