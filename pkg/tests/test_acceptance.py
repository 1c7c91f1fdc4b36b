"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

A PASS/FAIL summary line per criterion is printed at the end of the pytest run
(see conftest.py).
"""

import time
from itertools import product

import numpy as np
import pytest

from cplx_stgcn.bounds import run_bound_experiment
from cplx_stgcn.filters import apply_polynomial_filter, filter_matrix, transfer_function
from cplx_stgcn.grid import (build_measurement_operator, bundled_grid_path, grid_from_dict,
                             load_grid, observe, simulate_series, synth_load_series,
                             synthetic_grid_spec)
from cplx_stgcn.nn import StgcnConfig, StgcnModel, TrainingSet, batch_loss, crelu, normalized_gso
from cplx_stgcn.pipelines import RunConfig, default_trip_line, run_fdi, run_pssf, topology_transfer
from cplx_stgcn.sensing import (exhaustive_placement, greedy_sensor_placement, make_labels,
                                rls_recover, sample_attack_set, stealthy_attack)
from cplx_stgcn.spectral import gft, igft, spectral_decompose

from gsp_util import crandn, finite_difference_grads, random_admittance, relative_errors

SWEEP = list(product([5, 8, 10], [1, 2, 4], [0.01, 0.05, 0.1], [0, 1]))
E2E_SEEDS = range(5)


def sweep(kind):
    t0 = time.time()
    reports = [run_bound_experiment(kind, n, K, eps, seed, trials=100) for n, K, eps, seed in SWEEP]
    return reports, time.time() - t0


def test_criterion_01_transfer_bound(record_property):
    reports, secs = sweep("transfer")
    bad = [r.experiment for r in reports if not r.satisfied]
    worst = max(r.empirical / r.theoretical for r in reports)
    record_property("detail", f"{len(reports)} configs, {len(bad)} violations, "
                              f"max emp/bound {worst:.3f}, {secs:.1f}s")
    assert len(reports) >= 54
    assert not bad, bad
    assert secs <= 120


def test_criterion_02_permutation_bound(record_property):
    reports, secs = sweep("permutation")
    bad = [r.experiment for r in reports if not r.satisfied]
    worst = max(r.empirical / r.theoretical for r in reports)
    record_property("detail", f"{len(reports)} configs, {len(bad)} violations, "
                              f"max emp/bound {worst:.3f}, {secs:.1f}s")
    assert len(reports) >= 54
    assert not bad, bad
    assert secs <= 120


def test_criterion_03_layer_chain(record_property):
    t0 = time.time()
    configs = list(product([5, 8], [1, 2], [0.01, 0.05, 0.1, 0.2, 0.5]))
    reports = [run_bound_experiment("layer", n, K, eps, seed=3, trials=50, n_inputs=500)
               for n, K, eps in configs]
    secs = time.time() - t0
    bad = [r.experiment for r in reports if not r.satisfied]
    record_property("detail", f"{len(reports)} configs x 500 inputs, {len(bad)} violations, {secs:.1f}s")
    assert len(reports) == 20
    assert not bad, bad
    assert secs <= 60


def test_criterion_04_crelu_non_expansive(record_property):
    rng = np.random.default_rng(0)
    scale = 10.0 ** rng.uniform(-6, 6, (2, 10 ** 5))
    a = crandn(rng, 10 ** 5) * scale[0]
    b = crandn(rng, 10 ** 5) * scale[1]
    lhs = np.abs(crelu(a) - crelu(b))
    rhs = np.abs(a - b)
    violations = int(np.sum(lhs > rhs + 1e-12 * np.maximum(1.0, rhs)))
    record_property("detail", f"1e5 pairs, {violations} violations")
    assert violations == 0


def test_criterion_05_gradient_check(record_property):
    t0 = time.time()
    rng = np.random.default_rng(11)
    Y = random_admittance(5, rng) / 10
    S = normalized_gso(Y)
    worst = {}
    for head, mu2 in (("regression", 1e-4), ("regression", 0.5), ("classification", 0.0)):
        n_out = 5 if head == "regression" else 3
        cfg = StgcnConfig(5, window=3, temporal_channels=8, graph_taps=2, graph_channels=8,
                          hidden=(8,), head=head, n_outputs=n_out)
        model = StgcnModel.init(cfg, seed=2)
        X = 1 + 0.3 * crandn(rng, 4, 5, 3)
        if head == "regression":
            data = TrainingSet(X, 1 + 0.1 * crandn(rng, 4, 5), crandn(rng, 4, 3), crandn(rng, 4, 3), [0, 2, 4])
        else:
            data = TrainingSet(X, (rng.random((4, 3)) < 0.5).astype(float))
        _, grads = batch_loss(model, S, data, Y, mu2, return_grad=True)
        numeric = finite_difference_grads(lambda: batch_loss(model, S, data, Y, mu2), model.params, 1e-5)
        errs = relative_errors(grads, numeric)
        assert set(errs) == set(model.params)
        worst[f"{head}/mu2={mu2:g}"] = max(errs.values())
    secs = time.time() - t0
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {secs:.1f}s")
    assert max(worst.values()) <= 1e-4
    assert secs <= 30


def test_criterion_06_gsp_identities(record_property):
    worst = {"roundtrip": 0.0, "shift": 0.0, "duality": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(4, 13))
        S = random_admittance(n, rng) / 20
        b = spectral_decompose(S)
        x = crandn(rng, n)
        h = crandn(rng, int(rng.integers(1, 6)))
        worst["roundtrip"] = max(worst["roundtrip"], np.linalg.norm(igft(b, gft(b, x)) - x) / np.linalg.norm(x))
        H = filter_matrix(S, h)
        worst["shift"] = max(worst["shift"], np.linalg.norm(S @ H - H @ S) / np.linalg.norm(S @ H))
        lhs = gft(b, apply_polynomial_filter(S, h, x))
        rhs = transfer_function(b, h) * gft(b, x)
        worst["duality"] = max(worst["duality"], np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))
    record_property("detail", ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert worst["roundtrip"] <= 1e-9
    assert worst["shift"] <= 1e-9
    assert worst["duality"] <= 1e-8


def test_criterion_07_rls_recovery(record_property):
    m = load_grid(bundled_grid_path(30))
    V, _ = simulate_series(m, synth_load_series(30, 10, seed=0))
    full = build_measurement_operator(m, range(30))
    exact = max(np.linalg.norm(rls_recover(observe(full, v), full.H_bus, m.Y, 0.0) - v) / np.linalg.norm(v)
                for v in V.values.T)
    A = greedy_sensor_placement(spectral_decompose(m.Y), 8, 15).buses
    op = build_measurement_operator(m, A, noise_sd=0.01)
    wins = 0
    for k in range(10):
        v = V.values[:, k]
        x = rls_recover(observe(op, v, seed=k), op.H_bus, m.Y, 1e-6)
        zero_fill = np.zeros(30, dtype=complex)
        zero_fill[A] = v[A]
        wins += np.mean(np.abs(x - v) ** 2) < np.mean(np.abs(zero_fill - v) ** 2)
    record_property("detail", f"full-observation rel error {exact:.1e}, partial beats zero-fill {wins}/10")
    assert exact <= 1e-9
    assert wins == 10


def test_criterion_08_attack_stealth(record_property):
    m = load_grid(bundled_grid_path(30))
    A = greedy_sensor_placement(spectral_decompose(m.Y), 8, 15).buses
    op = build_measurement_operator(m, A)
    V, _ = simulate_series(m, synth_load_series(30, 50, seed=1))
    rng = np.random.default_rng(8)
    worst, label_ok = 0.0, 0
    for k in range(50):
        C = sample_attack_set(m, A, (3, 5, 8)[k % 3], rng)
        alpha = float(rng.uniform(0.01, 0.2))
        att = stealthy_attack(m, A, C, alpha, seed=k)
        v = V.values[:, k]
        dz = observe(op, v + att.delta) - observe(op, v)
        honest = [i for i, a in enumerate(A) if a not in C]
        worst = max(worst, float(np.max(np.abs(dz[honest]))) / alpha)
        support = {i for i, a in enumerate(A) if att.delta[a] != 0}
        label_ok += set(np.flatnonzero(make_labels(att.delta, A))) == support and len(support) == len(C)
    record_property("detail", f"max honest residual / alpha {worst:.1e}, labels exact {label_ok}/50")
    assert worst <= 1e-8
    assert label_ok == 50


def test_criterion_09_placement_gap(record_property):
    ratios = []
    for seed in range(3):
        b = spectral_decompose(grid_from_dict(synthetic_grid_spec(8, seed)).Y)
        greedy = greedy_sensor_placement(b, 3, 4).sigma_min
        _, best = exhaustive_placement(b, 3, 4)
        ratios.append(greedy / best)
    record_property("detail", "greedy/optimum " + ", ".join(f"{r:.4f}" for r in ratios))
    assert min(ratios) >= 0.9


def test_criterion_10_psse_ordering(record_property):
    t0 = time.time()
    rows = []
    for seed in E2E_SEEDS:
        r = run_pssf(RunConfig(seed=seed, mode="pssf"))
        rows.append((r["mse"], r["rls_mse"]))
    secs = time.time() - t0
    wins = sum(a < b for a, b in rows)
    record_property("detail", f"model < RLS in {wins}/5 seeds, mean MSE {np.mean([a for a, _ in rows]):.2e} "
                              f"vs RLS {np.mean([b for _, b in rows]):.2e}, {secs:.0f}s")
    assert wins >= 4
    assert secs <= 600


def test_criterion_11_fdi_localization(record_property):
    t0 = time.time()
    margins = []
    for seed in E2E_SEEDS:
        r = run_fdi(RunConfig(seed=seed, mode="fdi", attack_size=5, n_sensors=15))
        acc = r["report"].accuracy
        margins.append(acc - max(r["zeros_accuracy"], r["ones_accuracy"]))
    secs = time.time() - t0
    wins = sum(m >= 0.10 for m in margins)
    record_property("detail", f">= 10 pp over constant baselines in {wins}/5 seeds, "
                              f"min margin {100 * min(margins):.1f} pp, {secs:.0f}s")
    assert wins >= 4
    assert secs <= 600


def test_criterion_12_topology_transfer(record_property):
    cfg = RunConfig(seed=0, mode="pssf")
    res = run_pssf(cfg)
    line = default_trip_line(res["bench"].spec)
    rows = topology_transfer(cfg, res["model"], line, res["bench"])
    orig, tripped, restored = rows
    record_property("detail", f"line {line} tripped, MSE inflation x{tripped['inflation']:.2f}, "
                              f"restore bitwise {restored['mse'] == orig['mse']}")
    assert tripped["finite"] and np.isfinite(tripped["mse"])
    assert tripped["inflation"] > 0
    assert orig["mse"] == res["mse"]
    assert restored["mse"] == orig["mse"]
