"""Acceptance gate: one printed PASS/FAIL line per criterion.

Run with `pytest tests/test_acceptance.py -s` to see the lines as the
criteria execute. Each test computes its verdict, prints it, then
asserts, so a failing criterion is both visible and fatal.
"""
import json
import random
import time
from collections import namedtuple
from pathlib import Path

import numpy as np
import pytest

from advbench import (ArchSpec, AttackConfig, BenchConfig, DatasetSpec,
                      EnvelopeStore, LossKind, ModelBuildSpec, asr,
                      build_zoo, curve_from_distances, default_config,
                      gradient_check, incremental_update, local_optimality,
                      run_attack, run_benchmark, wrap)
from advbench.nn import near_activation_kink
from advbench.reporting import emit_all, emit_leaderboards
from advbench.tracking import TrackedModel
from tests.test_attacks import analytic_distance, linear_model
from tests.test_nn import random_mlp


def verdict(num, name, ok):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {name}")
    assert ok, f"criterion {num} ({name}) failed"


@pytest.fixture(scope="module")
def default_zoo():
    return build_zoo(default_config())


@pytest.fixture(scope="module")
def default_run(default_zoo, tmp_path_factory):
    """One full default-config benchmark run, shared across criteria."""
    out = tmp_path_factory.mktemp("accept") / "run_a"
    cfg = default_config(output_dir=str(out))
    t0 = time.perf_counter()
    result = run_benchmark(cfg, zoo=default_zoo)
    emit_all(result.out_dir, result)
    return result, time.perf_counter() - t0


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    while checked < 100:
        model = random_mlp(rng, [4, 12, 6])
        x = rng.uniform(0.05, 0.95, 4)
        if near_activation_kink(model, x):
            continue
        kind = list(LossKind)[int(rng.integers(len(LossKind)))]
        y = int(rng.integers(6))
        worst = max(worst, gradient_check(model, x, y, kind, h=1e-5))
        checked += 1
    elapsed = time.perf_counter() - t0
    verdict(1, "analytic gradients match finite differences",
            worst < 1e-4 and elapsed < 5.0)


def test_criterion_2_analytic_minimal_distance_oracle():
    rng = np.random.default_rng(202)
    w, b = np.array([3.0, -4.0, 2.0]), 0.8
    model = linear_model(w, b)
    samples = []
    while len(samples) < 256:
        x = rng.uniform(0.1, 0.9, 3)
        margin = float(np.dot(w, x)) + b
        # keep margins small enough that the unconstrained optimum stays
        # inside the box, so the closed form is actually attainable
        if 0.05 < margin < 0.7:
            samples.append((f"s{len(samples):03d}", x, 0))
    attacks = [
        ("2", AttackConfig(identifier="ddn", name="ddn", norm="2",
                           steps=450)),
        ("2", AttackConfig(identifier="fmn2", name="fmn", norm="2",
                           steps=450)),
        ("inf", AttackConfig(identifier="fmni", name="fmn", norm="inf",
                             steps=450)),
    ]
    t0 = time.perf_counter()
    ok = True
    for norm, cfg in attacks:
        tm = wrap(model, samples, norm, 1000)
        hits = 0
        for sid, x, _ in samples:
            run_attack(tm, sid, cfg)
            target = analytic_distance(w, b, x, norm)
            if tm.record(sid).best_distance <= 1.05 * target:
                hits += 1
        rate = hits / len(samples)
        print(f"  {cfg.identifier} l{norm}: {rate:.3f} within 5%")
        ok = ok and rate >= 0.95
    elapsed = time.perf_counter() - t0
    verdict(2, "minimum-norm attacks reach the analytic distance",
            ok and elapsed < 60.0)


def test_criterion_3_envelope_dominance_and_self_optimality(default_run):
    result, _ = default_run
    ok = True
    for (model, norm), eps_max in result.eps_max_map.items():
        env = result.store.envelope_curve(model, norm, eps_max)
        ok = ok and local_optimality(env, env) == 1.0
        pts = set(env.step_points()) | {0.0, eps_max}
        for attack_id in result.store.attacks(model, norm):
            ac = result.store.attack_curve(model, norm, attack_id, eps_max)
            pts |= set(ac.step_points())
            for eps in pts:
                if env.robust_accuracy(eps) > ac.robust_accuracy(eps):
                    ok = False
    verdict(3, "envelope dominates every attack curve, scores 1.0", ok)


def test_criterion_4_worked_optimality_example():
    env = curve_from_distances([0.2, 0.4], 1.0, "2", 1.0)
    att = curve_from_distances([0.4, 0.6], 1.0, "2", 1.0)
    got = local_optimality(att, env)
    verdict(4, "worked example yields 5/7 exactly",
            abs(got - 5.0 / 7.0) <= 1e-12)


def test_criterion_5_incremental_equals_batch(tmp_path):
    ds = DatasetSpec(kind="gaussian_blobs", dimension=2, class_count=2,
                     sample_count=120, noise_scale=0.08, seed=5)
    cfg = BenchConfig(
        seed=0, budget=400, samples_per_model=16,
        norms={"2": None, "inf": 0.5},
        zoo=[ModelBuildSpec(dataset=ds, arch=ArchSpec(hidden=(8,)),
                            training="standard", epochs=80, lr=0.5, seed=5,
                            identifier="tiny-std")],
        attacks=[
            AttackConfig(identifier="ddn-l2", name="ddn", norm="2",
                         steps=60),
            AttackConfig(identifier="fmn-l2", name="fmn", norm="2",
                         steps=60),
            AttackConfig(identifier="fmn-inf", name="fmn", norm="inf",
                         steps=60),
            AttackConfig(identifier="pgd-inf", name="pgd", norm="inf",
                         eps=0.3, steps=30),
            AttackConfig(identifier="fgsm-inf", name="fgsm", norm="inf",
                         eps=0.3, steps=1),
        ],
        output_dir=str(tmp_path / "mono"))
    mono = run_benchmark(cfg)
    mono_dir = tmp_path / "mono_boards"
    mono_dir.mkdir()
    emit_leaderboards(mono_dir, mono.leaderboards, mono.zoo_models,
                      ("json", "csv"))
    mono_bytes = {p.name: p.read_bytes() for p in mono_dir.iterdir()}

    # regroup the monolithic results per (model, norm, attack)
    groups = {}
    for (model, norm) in mono.eps_max_map:
        if norm not in mono.store.norms():
            continue
        for attack_id in mono.store.attacks(model, norm):
            groups[(model, norm, attack_id)] = \
                mono.store.attack_distances(model, norm, attack_id)

    ok = True
    rng = random.Random(55)
    for trial in range(3):
        order = sorted(groups)
        rng.shuffle(order)
        store = EnvelopeStore()
        for (model, norm) in sorted(mono.eps_max_map):
            if norm in mono.store.norms():
                store.register_samples(model, norm,
                                       mono.store.clean_correct(model,
                                                                norm))
        boards = None
        for key in order:
            model, norm, attack_id = key
            boards = incremental_update(store,
                                        [(model, norm, attack_id,
                                          groups[key])],
                                        mono.eps_max_map, mono.zoo_models)
        inc_dir = tmp_path / f"inc_{trial}"
        inc_dir.mkdir()
        emit_leaderboards(inc_dir, boards, mono.zoo_models, ("json", "csv"))
        inc_bytes = {p.name: p.read_bytes() for p in inc_dir.iterdir()}
        ok = ok and inc_bytes == mono_bytes
    verdict(5, "incremental updates reproduce batch leaderboards bitwise",
            ok)


class OscillatingAttack:
    """Finds a success, then deliberately ends on a worse iterate."""

    @staticmethod
    def run(tm: TrackedModel, sid: str):
        x, _ = tm.reference(sid)
        tm.tracked_forward(sid, np.clip(x - 0.3, 0, 1))   # success at 0.3
        tm.tracked_forward(sid, np.clip(x - 0.45, 0, 1))  # worse final


def test_criterion_6_budget_fairness_and_best_not_last(default_run):
    result, _ = default_run
    # (a) no record ever exceeds the budget
    ok_a = all(r["total_queries"] <= result.meta["budget"]
               for r in result.records) and bool(result.records)

    # (b) a deterministic attack never worsens with more budget
    model = linear_model(np.array([3.0, 4.0]), -3.36)
    cfg = AttackConfig(identifier="ddn", name="ddn", norm="2", steps=200)
    rng = np.random.default_rng(66)
    samples = [(f"s{i}", rng.uniform(0.3, 0.7, 2), 0) for i in range(16)]
    best = {}
    for budget in (100, 200):
        tm = wrap(model, samples, "2", budget)
        for sid, _, _ in samples:
            run_attack(tm, sid, cfg)
        best[budget] = {r.sample_id: r.best_distance
                        for r in tm.best_records()}
    ok_b = all(best[200][s] <= best[100][s] for s in best[100])

    # (c) best-so-far survives a worse final iterate
    tm = wrap(model, [("a", np.array([0.5, 0.5]), 0)], "inf", 10)
    OscillatingAttack.run(tm, "a")
    ok_c = tm.record("a").best_distance == pytest.approx(0.3)

    verdict(6, "budget fairness and best-not-last recording",
            ok_a and ok_b and ok_c)


def test_criterion_7_crippled_pgd_detectably_worse(default_zoo, tmp_path):
    cfg = default_config(output_dir=str(tmp_path / "pgd_gap"))
    cfg.samples_per_model = 64
    cfg.attacks = [
        AttackConfig(identifier="pgd-1", name="pgd", norm="inf",
                     eps=0.3, steps=1),
        AttackConfig(identifier="pgd-50", name="pgd", norm="inf",
                     eps=0.3, steps=50),
    ]
    result = run_benchmark(cfg, zoo=default_zoo)
    scores = {e.attack_id: e.global_optimality
              for e in result.leaderboards["inf"]["entries"]}
    gap = scores["pgd-50"] - scores["pgd-1"]
    print(f"  pgd-50={scores['pgd-50']:.4f} pgd-1={scores['pgd-1']:.4f} "
          f"gap={gap:.4f}")
    verdict(7, "single-step PGD scores at least 0.1 lower", gap >= 0.1)


def test_criterion_8_asr_epsilon_sensitivity():
    Rec = namedtuple("Rec", "norm succeeded best_distance")
    rows = [Rec("2", True, 0.1), Rec("2", True, 0.3),
            Rec("2", False, float("inf")), Rec("2", True, 0.2)]
    verdict(8, "asr steps exactly at the recorded distances",
            asr(rows, 0.15) == 0.25 and asr(rows, 0.25) == 0.5)


def test_criterion_9_end_to_end_determinism(default_run, default_zoo,
                                            tmp_path):
    result_a, elapsed_a = default_run
    out_b = tmp_path / "run_b"
    cfg = default_config(output_dir=str(out_b))
    t0 = time.perf_counter()
    result_b = run_benchmark(cfg, zoo=default_zoo)
    emit_all(result_b.out_dir, result_b)
    elapsed_b = time.perf_counter() - t0

    # compare every artifact; run_meta.json carries wall-clock timestamps
    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in Path(root).rglob("*")
                if p.is_file() and p.name != "run_meta.json"}

    a, b = tree(result_a.out_dir), tree(result_b.out_dir)
    identical = a == b
    print(f"  run times: {elapsed_a:.1f}s / {elapsed_b:.1f}s, "
          f"{len(a)} artifacts compared")
    verdict(9, "default benchmark is fast and byte-reproducible",
            identical and len(a) > 0
            and elapsed_a < 300.0 and elapsed_b < 300.0)
