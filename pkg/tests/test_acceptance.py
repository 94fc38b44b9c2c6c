"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -rA` to see the per-criterion
lines in the summary.
"""

import json
import os
import time

import numpy as np
import pytest
import torch

from lorax import (
    AccuracyMatrix,
    BackboneConfig,
    MultiRealMap,
    Scenario,
    Strategy,
    UndefinedMetricError,
    adapted_forward,
    average_accuracy,
    average_accuracy_final,
    backward_transfer,
    build_backbone,
    count_all,
    count_trainable,
    generate_stream,
    herd_order,
    init_adapter_set,
    merge,
    multi_real_correct,
    run_scenario,
)
from lorax import losses as L
from lorax.cli import main as cli_main
from lorax.data import FingerprintSpec
from lorax.engine import LoraxClassifier
from lorax.expansion import LoraxNetwork
from lorax.metrics import task_accuracy

from oracles import finite_difference_grad, greedy_herding_oracle, metric_oracle


def _report(num, desc, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {desc}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------- criterion 1
def test_criterion_1_merge_exactness():
    start = time.perf_counter()
    worst = 0.0
    count = 0
    for bseed in range(10):
        cfg = BackboneConfig(image_size=16, patch_size=8, channels=1, depth=2,
                             embed_dim=16, heads=2, seed=bseed)
        bb = build_backbone(cfg)
        for aseed in range(10):
            g = torch.Generator().manual_seed(500 + aseed)
            scale = [0.5, 1.0, 2.0][aseed % 3]
            adapters = init_adapter_set(bb, "all", rank=2, scale=scale, seed=aseed)
            with torch.no_grad():
                for ad in adapters.adapters.values():
                    ad.B.copy_(torch.randn(ad.B.shape, generator=g) * 0.05)
                    ad.A.copy_(torch.randn(ad.A.shape, generator=g) * 0.05)
            adapters.freeze()
            merged = merge(bb, adapters)
            x = torch.randn(4, 1, 16, 16, generator=g)
            ya = adapted_forward(bb, adapters, x)
            ym = merged(x)
            worst = max(worst, ((ym - ya).norm() / ya.norm()).item())
            count += 1
    elapsed = time.perf_counter() - start
    _report(1, "merged and adapted forwards agree to 1e-5 relative on 100 instances",
            count == 100 and worst <= 1e-5 and elapsed < 5.0,
            f"worst {worst:.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------- criterion 2
def test_criterion_2_zero_init_identity():
    cfg = BackboneConfig(image_size=16, patch_size=4, channels=1, depth=3,
                         embed_dim=24, heads=2, seed=11)
    bb = build_backbone(cfg)
    g = torch.Generator().manual_seed(0)
    ok = True
    for combo in ("v", "qk", "qkv", "all"):
        adapters = init_adapter_set(bb, combo, rank=3, seed=1)
        x = torch.rand(25, 1, 16, 16, generator=g)
        ok = ok and torch.equal(bb(x), adapted_forward(bb, adapters, x))
    _report(2, "freshly initialized adapters leave outputs bit-identical on 100 inputs", ok)


# ---------------------------------------------------------------- criterion 3
def test_criterion_3_gradient_checks():
    start = time.perf_counter()
    cfg = BackboneConfig(image_size=8, patch_size=4, channels=1, depth=1,
                         embed_dim=8, heads=2, seed=5)
    bb = build_backbone(cfg).double()
    net = LoraxNetwork(bb)
    g = torch.Generator().manual_seed(9)

    def randomize(adapter_set, scale=0.1):
        with torch.no_grad():
            for ad in adapter_set.adapters.values():
                ad.B.copy_(torch.randn(ad.B.shape, generator=g, dtype=torch.float64) * scale)
                ad.A.copy_(torch.randn(ad.A.shape, generator=g, dtype=torch.float64) * scale)

    net.add_task([0, 1], rank=2, combo="all", seed=1)
    randomize(net.extractors[0].adapter_set)
    net.end_episode()
    net.add_task([2, 3], rank=2, combo="all", seed=2)
    randomize(net.extractors[1].adapter_set)

    x = torch.randn(6, 1, 8, 8, generator=g, dtype=torch.float64)
    labels = np.array([0, 1, 2, 3, 2, 3])
    dmap = L.build_div_target_map([2, 3], [0, 1])
    tidx = L.label_indices(labels, net.class_ids)

    def loss_fn():
        e_old = net.extractors[0].embed(x)
        e_new = net.extractors[1].embed(x)
        clf = L.classification_loss_from_logits(net.logits_from_parts(e_old, e_new), tidx)
        div = L.diversity_loss(net.div_logits_from_embedding(e_new), labels, dmap)
        return L.total_loss(clf, div, 0.1)

    checked = {}
    for sid, ad in net.extractors[1].adapter_set.adapters.items():
        checked[f"{sid}.A"] = ad.A
        checked[f"{sid}.B"] = ad.B
    checked["clf.weight"] = net.classifier.weight
    checked["clf.bias"] = net.classifier.bias
    checked["div.weight"] = net.div_head.weight
    checked["div.bias"] = net.div_head.bias

    loss_fn().backward()
    worst = 0.0
    for name, p in checked.items():
        fd = finite_difference_grad(loss_fn, p, h=1e-5)
        rel = ((p.grad - fd).norm() / max(fd.norm().item(), 1e-12)).item()
        worst = max(worst, rel)

    frozen_zero = all(p.grad is None for p in bb.parameters()) and all(
        p.grad is None for p in net.extractors[0].adapter_set.parameters()
    )
    elapsed = time.perf_counter() - start
    _report(3, "analytic gradients match central differences; frozen gradients exactly zero",
            worst < 1e-4 and frozen_zero and elapsed < 60.0,
            f"worst rel {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4
def test_criterion_4_metric_oracle():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        vals = np.full((n, n), np.nan)
        for i in range(n):
            for j in range(i, n):
                vals[i, j] = rng.random()
        m = AccuracyMatrix.from_values(vals)
        aa, aaf, bwt = metric_oracle(np.nan_to_num(vals))
        worst = max(worst, abs(average_accuracy(m) - aa), abs(average_accuracy_final(m) - aaf))
        if n >= 2:
            worst = max(worst, abs(backward_transfer(m) - bwt))

    with pytest.raises(UndefinedMetricError):
        backward_transfer(AccuracyMatrix.from_values([[0.5]]))

    hand = AccuracyMatrix.from_values(np.array([[0.8, 0.6], [np.nan, 0.9]]))
    hand_ok = (
        abs(average_accuracy(hand) - 0.775) < 1e-12
        and abs(average_accuracy_final(hand) - 0.75) < 1e-12
        and abs(backward_transfer(hand) - (-0.2)) < 1e-12
    )
    _report(4, "AA/AAF/BWT match brute-force summation on 1000 matrices; hand case exact",
            worst < 1e-12 and hand_ok, f"worst {worst:.2e}")


# ---------------------------------------------------------------- criterion 5
def test_criterion_5_herding_oracle_and_quotas():
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(200):
        n = int(rng.integers(1, 11))
        d = int(rng.integers(1, 6))
        feats = rng.normal(size=(n, d))
        ok = ok and herd_order(feats) == greedy_herding_oracle(feats)
    quota_ok = (500 // 14 == 35) and (500 // 10 == 50)

    from lorax import ExemplarBuffer

    def flat(images):
        return np.asarray(images).reshape(len(images), -1)

    for n_classes, per_class_quota in ((14, 35), (10, 50)):
        buf = ExemplarBuffer(500, feature_fn=flat)
        images = rng.normal(size=(n_classes * 60, 2)).astype(np.float32)
        labels = np.repeat(np.arange(n_classes), 60)
        buf.update(images, labels, classes=list(range(n_classes)))
        quota_ok = quota_ok and all(buf.count(c) == per_class_quota for c in range(n_classes))
        quota_ok = quota_ok and buf.total() <= 500
    _report(5, "herding matches the brute-force greedy oracle; budget quotas match 500/14=35 and 500/10=50",
            ok and quota_ok)


# ------------------------------------------------- shared desk experiment (8)
DESK_BACKBONE = dict(image_size=32, patch_size=8, channels=1, depth=2, embed_dim=32, heads=4)
DESK_SEEDS = (0, 1, 2)


def _desk_scenario(seed, budget, amplitude=0.09, epochs=30, spc=150):
    bb = BackboneConfig(seed=1000 + seed, **DESK_BACKBONE)
    tasks = generate_stream(num_tasks=4, samples_per_class=spc, image_size=32,
                            seed=2000 + seed, amplitude=amplitude)
    return Scenario(name=f"desk{seed}", tasks=tasks, budget=budget, epochs=epochs,
                    learning_rate=0.05, batch_size=32, seed=seed, backbone=bb)


@pytest.fixture(scope="module")
def forgetting_runs():
    """Mean-of-3-seeds comparison runs: finetune with and without exemplars,
    the adapter strategy, and full-rank expansion, all on the same streams."""
    start = time.perf_counter()
    runs = {}
    for seed in DESK_SEEDS:
        for label, kind, budget, lr in (
            ("ft0", "finetune", 0, 0.01),
            ("ft", "finetune", 40, 0.01),
            ("lorax", "lorax", 40, 0.05),
            ("der", "der", 40, 0.01),
        ):
            sc = _desk_scenario(seed, budget)
            runs[(label, seed)] = run_scenario(sc, Strategy(kind=kind, learning_rate=lr))
    runs["elapsed"] = time.perf_counter() - start
    return runs


def _mean(runs, label, key):
    return float(np.mean([runs[(label, s)].metrics[key] for s in DESK_SEEDS]))


# ---------------------------------------------------------------- criterion 6
def test_criterion_6_frozen_extractor_stability():
    sc = _desk_scenario(0, budget=20, epochs=6, spc=60)
    est = LoraxClassifier(backbone=sc.backbone, rank=4, combo="all", epochs=sc.epochs,
                          learning_rate=0.05, batch_size=32, budget=sc.budget, seed=0)
    g = torch.Generator().manual_seed(123)
    probe = torch.rand(16, 1, 32, 32, generator=g)
    snapshots = []
    for task in sc.tasks:
        est.partial_fit(task.train.images, task.train.labels)
        with torch.no_grad():
            snapshots.append(est._network.extractors[-1].embed(probe).clone())
    ok = True
    with torch.no_grad():
        for t_index, snap in enumerate(snapshots):
            ok = ok and torch.equal(est._network.extractors[t_index].embed(probe), snap)
    _report(6, "each extractor's probe embeddings are bit-identical at end of episode and end of run", ok)


# ---------------------------------------------------------------- criterion 7
def test_criterion_7_parameter_efficiency():
    cfg = BackboneConfig()  # the default desk backbone: depth 4, embed_dim 64
    assert cfg.depth == 4 and cfg.embed_dim == 64
    bb = build_backbone(cfg)
    rank = 4
    adapters = init_adapter_set(bb, "all", rank=rank)
    adapter_count = count_trainable(adapters)
    backbone_count = count_all(bb)

    # hand enumeration of r * (d + k) from the config arithmetic alone
    d, heads = cfg.embed_dim, cfg.heads
    tokens = (cfg.image_size // cfg.patch_size) ** 2 + 1
    per_block = rank * (2 * d + d) + rank * (d + d) + rank * (heads * tokens + tokens)
    hand_count = cfg.depth * per_block
    formula_ok = adapter_count == hand_count

    # per-episode trainable sets share the head and diversity terms
    n_classes, n_tasks = 4, 2
    head = n_classes * (n_tasks * d) + n_classes
    div = 3 * d + 3
    lorax_per_task = adapter_count + head + div
    full_rank_per_task = backbone_count + head + div
    ratio = lorax_per_task / full_rank_per_task
    _report(7, "adapter episodes train at most 10% of a full-rank episode; site formula matches hand count",
            formula_ok and ratio <= 0.10, f"ratio {100 * ratio:.2f}%")


# ---------------------------------------------------------------- criterion 8
def test_criterion_8_forgetting_order(forgetting_runs):
    runs = forgetting_runs
    elapsed = runs["elapsed"]
    ft0_bwt = _mean(runs, "ft0", "BWT")
    ft_bwt = _mean(runs, "ft", "BWT")
    lorax_bwt = _mean(runs, "lorax", "BWT")
    ft_aa = _mean(runs, "ft", "AA")
    lorax_aa = _mean(runs, "lorax", "AA")
    der_aa = _mean(runs, "der", "AA")

    cond_a = ft0_bwt <= -0.25
    cond_b = lorax_bwt >= ft_bwt + 0.05
    cond_c = lorax_aa >= ft_aa
    cond_d = abs(lorax_aa - der_aa) <= 0.05
    # exemplars also help fine-tuning itself: budget 0 forgets strictly more
    cond_e = ft0_bwt < ft_bwt
    cond_time = elapsed < 15 * 60
    detail = (f"ft0 BWT {ft0_bwt:.3f}, ft BWT {ft_bwt:.3f}, lorax BWT {lorax_bwt:.3f}, "
              f"ft AA {ft_aa:.3f}, lorax AA {lorax_aa:.3f}, der AA {der_aa:.3f}, {elapsed:.0f}s")
    _report(8, "forgetting ordering holds over 3 seeds within the CPU budget",
            cond_a and cond_b and cond_c and cond_d and cond_e and cond_time, detail)


# ---------------------------------------------------------------- criterion 9
def test_criterion_9_multi_real_dominance(forgetting_runs):
    runs = forgetting_runs
    rec = runs[("lorax", 0)]
    est = rec.estimator
    sc_tasks = generate_stream(num_tasks=4, samples_per_class=150, image_size=32,
                               seed=2000, amplitude=0.09)
    mmap = MultiRealMap.from_tasks(sc_tasks)
    dominance = True
    for task in sc_tasks:
        X, y = task.test.images, task.test.labels
        strict = float(np.mean(est.predict(X) == y))
        multi = task_accuracy(est.predict, X, y, mmap)
        dominance = dominance and multi >= strict

    # swapping two authentic labels inside the predictions changes nothing
    authentic = sorted(mmap.authentic_ids)
    a, b = authentic[0], authentic[1]
    X = np.concatenate([t.test.images for t in sc_tasks])
    y = np.concatenate([t.test.labels for t in sc_tasks])
    preds = est.predict(X)
    swapped = preds.copy()
    swapped[preds == a], swapped[preds == b] = b, a
    acc_orig = np.mean([multi_real_correct(p, t, mmap) for p, t in zip(preds, y)])
    acc_swap = np.mean([multi_real_correct(p, t, mmap) for p, t in zip(swapped, y)])
    _report(9, "multi-real accuracy dominates strict accuracy and ignores authentic label swaps",
            dominance and acc_orig == acc_swap,
            f"swap check {acc_orig:.4f} == {acc_swap:.4f}")


# --------------------------------------------------------------- criterion 10
def test_criterion_10_resize_destructiveness():
    start = time.perf_counter()

    def run(seed, allow_resize):
        bb = BackboneConfig(seed=1500 + seed, **DESK_BACKBONE)
        fps = [FingerprintSpec(seed=31 + seed, pattern="checker", frequency=0.5),
               FingerprintSpec(seed=77 + seed, pattern="checker", frequency=1 / 16)]
        tasks = generate_stream(num_tasks=2, samples_per_class=120, image_size=64,
                                seed=3000 + seed, fingerprints=fps)
        sc = Scenario(name="resize", tasks=tasks, budget=40, epochs=20, learning_rate=0.05,
                      batch_size=32, seed=seed, backbone=bb, allow_resize=allow_resize)
        rec = run_scenario(sc, Strategy(kind="lorax", learning_rate=0.05))
        return rec.matrix.value(0, 1)

    crop = float(np.mean([run(s, False) for s in DESK_SEEDS]))
    resized = float(np.mean([run(s, True) for s in DESK_SEEDS]))
    elapsed = time.perf_counter() - start
    _report(10, "resizing drops the period-2 fingerprint task's final accuracy by 10+ points",
            crop - resized >= 0.10, f"crop {crop:.3f} vs resize {resized:.3f}, {elapsed:.0f}s")


# --------------------------------------------------------------- criterion 11
def test_criterion_11_reproducibility(tmp_path):
    doc = {
        "name": "repro",
        "source": {"type": "synthetic", "num_tasks": 2, "samples_per_class": 30,
                   "image_size": 16, "seed": 21},
        "budget": 10, "epochs": 2, "learning_rate": 0.05, "batch_size": 16, "seed": 3,
        "backbone": {"image_size": 16, "patch_size": 8, "channels": 1, "depth": 2,
                     "embed_dim": 16, "heads": 2, "seed": 9},
        "strategy": {"kind": "lorax", "rank": 2},
    }
    spath = tmp_path / "scenario.json"
    spath.write_text(json.dumps(doc))
    out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    code1 = cli_main(["run", "--scenario", str(spath), "--out", out1])
    snapshot = os.path.join(out1, "config.json")
    code2 = cli_main(["run", "--scenario", snapshot, "--out", out2])
    with open(os.path.join(out1, "matrix.csv"), "rb") as fh:
        m1 = fh.read()
    with open(os.path.join(out2, "matrix.csv"), "rb") as fh:
        m2 = fh.read()
    _report(11, "re-running a stored config snapshot reproduces matrix.csv byte-identically",
            code1 == 0 and code2 == 0 and m1 == m2)
