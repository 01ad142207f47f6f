"""Acceptance suite: one test per criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
Tolerances are pinned here and nowhere else.
"""

import math
import time

import numpy as np
import pytest

import fixtures
import oracles
from eventmixer import autodiff as ad
from eventmixer.autodiff import Tape, Var, init_mlp, mlp_forward, neighborhood_mlp_forward
from eventmixer.graph import (
    EventGraph,
    IndexMap,
    farthest_point_sample,
    invert_index_map,
    knn,
    knn_pyramid,
)
from eventmixer.model import (
    ModelConfig,
    _init_ccm,
    build_structure,
    ccm_level_aggregate,
    forward,
    init_model,
    mixer_block,
    named_parameters,
)
from eventmixer.training import (
    K_SET_SERIES,
    TrainConfig,
    ablate_ccm,
    bench_timing,
    count_ratio_accuracy,
    cross_entropy_loss,
    evaluate,
    event_accuracy,
    mean_iou,
    train,
)


def _report(num: int, desc: str, t0: float) -> None:
    print(f"\nACCEPTANCE {num:>2} PASS: {desc} ({time.perf_counter() - t0:.1f}s)")


def _graph(rng, n, n_classes=3):
    return EventGraph(rng.random((n, 3)), rng.integers(0, n_classes, size=n))


# 1 -------------------------------------------------------------------------


def test_criterion_1_knn_grid_equals_brute():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    ks = [1, 16, 32, 48, 64]
    for trial in range(500):
        n = int(np.exp(rng.uniform(0, np.log(2000))))
        k = ks[trial % len(ks)]
        pos = rng.random((n, 3))
        g = EventGraph(pos)
        grid = knn(g, k, method="grid").rows
        brute = knn(g, k, method="brute").rows
        assert np.array_equal(grid, brute), f"trial {trial}: n={n} k={k}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    _report(1, "grid kNN exactly equals brute force on 500 random graphs", t0)


# 2 -------------------------------------------------------------------------


def test_criterion_2_pyramid_nesting_and_inversion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    k_set = (16, 32, 48, 64)
    for _ in range(100):
        n = int(rng.integers(1, 400))
        g = EventGraph(rng.random((n, 3)))
        pyr = knn_pyramid(g, k_set)
        for small, big in zip(pyr.levels, pyr.levels[1:]):
            assert np.array_equal(small.rows, big.rows[:, : small.rows.shape[1]])
        for level in pyr.levels:
            inv = invert_index_map(level, n)
            assert int(inv.counts().sum()) == level.rows.size
            member = {(i, int(j)) for i in range(n) for j in level.rows[i]}
            inv_member = {(int(i), j) for j in range(n) for i in inv.list_for(j)}
            assert member == inv_member
    _report(2, "pyramid prefix nesting and exact inversion on 100 graphs", t0)


# 3 -------------------------------------------------------------------------


def test_criterion_3_fps_matches_exhaustive_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    for n in range(1, 13):
        for trial in range(20):
            pos = rng.random((n, 3))
            for m in range(1, min(4, n) + 1):
                got = farthest_point_sample(EventGraph(pos), m).tolist()
                assert got == oracles.fps_indices(pos, m), f"n={n} m={m}"
    # tie-heavy lattices
    for side in (2, 3):
        xs, ys = np.meshgrid(np.linspace(0, 1, side), np.linspace(0, 1, side))
        pos = np.stack([xs.ravel(), ys.ravel(), np.zeros(side * side)], axis=1)
        for m in range(1, min(4, side * side) + 1):
            assert farthest_point_sample(EventGraph(pos), m).tolist() == oracles.fps_indices(pos, m)
    _report(3, "greedy FPS equals the exhaustive oracle for N<=12, m<=4", t0)


# 4 -------------------------------------------------------------------------


def _fd_check(loss_fn, leaves, tol):
    out, tape = loss_fn()
    tape.backward(out)
    grads = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]
    for leaf, g in zip(leaves, grads):
        fd = oracles.finite_difference(lambda: float(loss_fn()[0].value), leaf.value)
        err = oracles.relative_error(g, fd)
        assert err < tol, f"rel err {err:.2e}"
    for leaf in leaves:
        leaf.zero_grad()


def _weighted(out, tape, rng):
    w = rng.standard_normal(out.value.shape)
    loss = Var((out.value * w).sum())

    def bwd():
        if loss.grad is not None:
            ad._accum(out, w * loss.grad)

    tape.record(bwd)
    return loss


def test_criterion_4_gradient_checks():
    t0 = time.perf_counter()
    op_names = [
        "matmul", "add_bias", "add", "relu", "tanh", "softmax", "reshape",
        "concat", "gather", "scatter_mean", "weighted_sum", "neighbor_mean",
        "permute", "mlp", "neighborhood_mlp", "cross_entropy",
    ]
    rng = np.random.default_rng(104)
    for name in op_names:
        for trial in range(100):
            n, k, c = 4, 2, 3
            rows = np.stack([rng.choice(n, size=k, replace=False) for _ in range(n)])
            imap = IndexMap(k=k, domain_size=n, rows=rows)
            inv = invert_index_map(imap, n)
            x = Var(rng.standard_normal((n, c)))
            y = Var(rng.standard_normal((n, c)))
            w = Var(rng.standard_normal((c, 2)))
            b = Var(rng.standard_normal(2))
            s = Var(rng.standard_normal((n, k)))
            mlp = _trial_mlp(trial, c)
            fb = rng.integers(0, n, size=n)

            if name == "relu":
                x.value[np.abs(x.value) < 1e-3] += 2e-3

            def loss_fn():
                tape = Tape()
                if name == "matmul":
                    out, leaves = ad.matmul(x, w, tape), [x, w]
                elif name == "add_bias":
                    out, leaves = ad.add_bias(ad.matmul(x, w, tape), b, tape), [x, w, b]
                elif name == "add":
                    out, leaves = ad.add(x, y, tape), [x, y]
                elif name == "relu":
                    out, leaves = ad.relu(x, tape), [x]
                elif name == "tanh":
                    out, leaves = ad.tanh(x, tape), [x]
                elif name == "softmax":
                    out, leaves = ad.softmax_rows(s, tape), [s]
                elif name == "reshape":
                    out, leaves = ad.reshape(x, (c, n), tape), [x]
                elif name == "concat":
                    out, leaves = ad.concat_cols(x, y, tape), [x, y]
                elif name == "gather":
                    out, leaves = ad.gather_rows(x, rows, tape), [x]
                elif name == "scatter_mean":
                    out, leaves = ad.scatter_mean(x, inv, tape, fallback=fb), [x]
                elif name == "weighted_sum":
                    out = ad.weighted_neighbor_sum(s, ad.gather_rows(x, rows, tape), tape)
                    leaves = [s, x]
                elif name == "neighbor_mean":
                    out, leaves = ad.neighbor_mean(x, imap, tape), [x]
                elif name == "permute":
                    out, leaves = ad.permute_rows(x, np.roll(np.arange(n), 1), tape), [x]
                elif name == "mlp":
                    out, leaves = mlp_forward(mlp, x, tape), [x, *mlp.weights, *mlp.biases]
                elif name == "neighborhood_mlp":
                    out = neighborhood_mlp_forward(mlp, x, imap, tape)
                    leaves = [x, *mlp.weights, *mlp.biases]
                else:  # cross_entropy
                    labels = np.random.default_rng(trial).integers(0, c, size=n)
                    out, leaves = cross_entropy_loss(x, labels, tape), [x]
                    return out, tape, leaves
                return _weighted(out, tape, np.random.default_rng(trial)), tape, leaves

            fn = lambda: loss_fn()[:2]
            leaves = loss_fn()[2]
            _fd_check(fn, leaves, tol=1e-5)

    # end-to-end: one random coordinate from every parameter tensor
    rng = np.random.default_rng(105)
    cfg = ModelConfig(n_classes=3, widths=(3, 4, 4, 5), k_set=(2, 3),
                      activation="tanh", seed=5)
    model = init_model(cfg)
    g = _graph(rng, 32)

    def loss_value():
        return float(cross_entropy_loss(forward(model, g).var, g.labels, None).value)

    tape = Tape()
    loss = cross_entropy_loss(forward(model, g, tape).var, g.labels, tape)
    tape.backward(loss)
    h = 1e-5
    analytic, numeric = [], []
    for _, var in named_parameters(model).items():
        flat = var.value.reshape(-1)
        gflat = (var.grad if var.grad is not None else np.zeros_like(var.value)).reshape(-1)
        idx = int(rng.integers(0, flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        fp = loss_value()
        flat[idx] = orig - h
        fm = loss_value()
        flat[idx] = orig
        analytic.append(gflat[idx])
        numeric.append((fp - fm) / (2 * h))
    err = oracles.relative_error(np.array(analytic), np.array(numeric))
    assert err < 1e-4, f"end-to-end rel err {err:.2e}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    _report(4, f"all ops (<1e-5) and N=32 end-to-end (<1e-4, got {err:.1e}) pass FD checks", t0)


def _trial_mlp(trial, c):
    r = np.random.default_rng(trial + 7)
    mlp = init_mlp([c, 4, 3], r, activation="tanh")
    for bias in mlp.biases:
        bias.value[:] = r.standard_normal(bias.value.shape) * 0.3
    return mlp


# 5 -------------------------------------------------------------------------


def test_criterion_5_ccm_matches_loop_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(106)
    for trial in range(50):
        n = int(rng.integers(2, 201))
        width = int(rng.integers(2, 6))
        k_hi = int(min(rng.integers(2, 7), n))
        k_lo = max(1, k_hi - int(rng.integers(1, 3)))
        k_set = (k_lo, k_hi) if k_lo < k_hi else (k_hi,)
        cfg = ModelConfig(n_classes=3, widths=(width,) * 4, k_set=k_set,
                          seed=int(rng.integers(1e6)))
        ccm = _init_ccm(cfg, rng, width, width, with_inter=True)
        pos = rng.random((n, 3))
        levels = build_structure(pos, cfg)
        feats = Var(rng.standard_normal((n, width)))
        got = mixer_block(ccm, levels[0], feats, None).value
        expected = oracles.ccm_block_loops(ccm, pos, feats.value, levels[0].pyramid)
        diff = float(np.max(np.abs(got - expected)))
        assert diff < 1e-12, f"trial {trial}: {diff:.2e}"
    _report(5, "vectorized mixing equals the loop-form oracle to <1e-12 on 50 graphs", t0)


# 6 -------------------------------------------------------------------------


def test_criterion_6_node_count_chain():
    t0 = time.perf_counter()
    rng = np.random.default_rng(107)
    cfg = ModelConfig(n_classes=3, widths=(4, 4, 4, 4), k_set=(16, 32, 48, 64), seed=0)
    expected = {
        1: [1, 1, 1, 1, 1],
        3: [3, 1, 1, 1, 1],
        255: [255, 64, 16, 4, 1],
        256: [256, 64, 16, 4, 1],
        10_000: [10_000, 2_500, 625, 157, 40],
    }
    for n, chain in expected.items():
        levels = build_structure(rng.random((n, 3)), cfg)
        got = [lvl.n_nodes for lvl in levels]
        assert got == chain, f"N={n}: {got}"
    _report(6, "four transitions yield iterated-ceil node counts incl. 10000->40", t0)


# 7 -------------------------------------------------------------------------


def test_criterion_7_level_weight_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(108)
    w = np.array([0.10, 0.20, 0.30, 0.40])
    for _ in range(20):
        u = rng.standard_normal((100, 16)) * 10.0 ** int(rng.integers(-3, 4))
        outs = [Var(u.copy()) for _ in range(4)]
        agg = ccm_level_aggregate(outs, w, None).value
        assert np.all(np.abs(agg - u) <= np.spacing(np.abs(u)))
    _report(7, "level aggregation of equal inputs is identity within one ulp", t0)


# 8 -------------------------------------------------------------------------


def test_criterion_8_permutation_equivariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(109)
    model = init_model(ModelConfig(n_classes=3, widths=(4, 5, 6, 7), k_set=(4, 8), seed=1))
    for _ in range(20):
        n = int(rng.integers(2, 80))
        g = _graph(rng, n)
        base = forward(model, g).logits
        perm = rng.permutation(n)
        permuted = forward(model, EventGraph(g.positions[perm], g.labels[perm])).logits
        assert np.array_equal(permuted, base[perm])
    _report(8, "forward commutes exactly with node permutation on 20 graphs", t0)


# 9 -------------------------------------------------------------------------


def test_criterion_9_overfit_fixture():
    t0 = time.perf_counter()
    graphs = fixtures.overfit_graphs()
    assert len(graphs) == 8
    assert all(150 <= len(g.positions) <= 260 for g in graphs)
    model = init_model(fixtures.overfit_model_config())
    cfg = TrainConfig(lr=0.001, momentum=0.9, weight_decay=0.0001,
                      batch_size=4, subsets=1, iterations=300, seed=0)
    result = train(model, graphs, cfg)
    report = evaluate(model, graphs)
    elapsed = time.perf_counter() - t0
    assert report.accuracy >= 0.99, f"train accuracy {report.accuracy:.4f}"
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    # loss invariant: the 50-iteration moving average never increases
    losses = np.array([l for _, l in result.losses])
    moving = np.convolve(losses, np.ones(50) / 50, mode="valid")
    assert np.all(np.diff(moving) <= 1e-9), "moving-average loss increased"
    _report(9, f"overfit fixture reaches {report.accuracy:.1%} within 300 iterations", t0)


# 10 ------------------------------------------------------------------------


def test_criterion_10_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(110)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        C = int(rng.integers(2, 7))
        pred = rng.integers(0, C, size=n)
        true = rng.integers(0, C, size=n)
        m = oracles.confusion_matrix(pred, true, C)
        assert event_accuracy(pred, true) == oracles.accuracy_from_matrix(m)
        miou, per = mean_iou(pred, true, C)
        o_miou, o_per = oracles.iou_from_matrix(m)
        assert miou == pytest.approx(o_miou, abs=1e-15)
        for a, b in zip(per, o_per):
            assert (np.isnan(a) and b is None) or a == pytest.approx(b, abs=1e-15)
        assert 0.0 <= count_ratio_accuracy(pred, true, C, "symmetric") <= 1.0
    for C in (2, 7, 10):
        loss = cross_entropy_loss(Var(np.zeros((5, C))), np.zeros(5, dtype=int), None)
        assert abs(float(loss.value) - math.log(C)) < 1e-12
    _report(10, "metrics equal the confusion oracle on 1000 vectors; ln C loss exact", t0)


# 11 ------------------------------------------------------------------------


def test_criterion_11_ablation_harness_shape():
    t0 = time.perf_counter()
    rng = np.random.default_rng(111)
    graphs = [
        EventGraph(rng.random((60, 3)), rng.integers(0, 2, size=60)) for _ in range(4)
    ]
    base = ModelConfig(n_classes=2, widths=(4, 6, 8, 10), k_set=(2, 3), seed=0)
    rows = ablate_ccm(
        base, graphs,
        layer_counts=list(range(1, 8)),
        k_sets=K_SET_SERIES,
        train_cfg=TrainConfig(iterations=5, seed=0),
    )
    assert len(rows) == 12
    names = [r["name"] for r in rows]
    assert names[:7] == [f"layers-{i}" for i in range(1, 8)]
    assert names[7:] == [f"set-{i}" for i in range(1, 6)]
    assert rows[0]["k_set"] == [16]
    assert rows[3]["k_set"] == [16, 32, 48, 64]
    assert rows[7]["k_set"] == [3, 3, 9, 12]
    assert all(np.isfinite(r["accuracy_percent"]) for r in rows)
    order = sorted(rows, key=lambda r: -r["accuracy_percent"])
    print("\n  ablation accuracy ordering:", [r["name"] for r in order])
    _report(11, "ablation emits one row per configuration (7 layer counts + 5 k sets)", t0)


# 12 ------------------------------------------------------------------------


def test_criterion_12_timing_harness():
    t0 = time.perf_counter()
    from eventmixer.events import synth_scene, window_events
    from eventmixer.graph import build_graph

    geom = fixtures.GEOM
    scene = fixtures.OVERFIT_SCENE
    events = synth_scene(scene, seed=12)
    windows = window_events(events, 10_000, 10_000)
    graphs = [build_graph(w, geom) for w in windows if len(w)][:40]
    assert len(graphs) == 40
    model = init_model(ModelConfig(n_classes=3, widths=(8, 12, 16, 20), k_set=(4, 8), seed=0))
    report = bench_timing(model, graphs, repeats=10, warmup=1)
    print(
        f"\n  sequential per-graph: {report.sequential_mean * 1e3:.2f} "
        f"+- {report.sequential_std * 1e3:.2f} ms | "
        f"batch per-graph: {report.batch_mean * 1e3:.2f} "
        f"+- {report.batch_std * 1e3:.2f} ms"
    )
    # soft gate with 10% slack: grouping must not be slower per graph
    assert report.batch_mean <= report.sequential_mean * 1.10
    _report(12, "batch per-graph time <= sequential per-graph time (10% slack)", t0)
