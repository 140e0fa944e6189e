"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines; every
criterion asserts its own runtime budget.
"""

import time
import warnings
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from bncover.bayesnet import (AbstractionConfig, BNAbstraction, BNStructure,
                              NodeRef, UnsupportedEvidenceError, fit_abstraction,
                              fit_tables, intervals_for_input, joint_probability,
                              map_query, marginals, evidential_update,
                              monitor_outlier, monitor_shift)
from bncover.concolic import ConcolicConfig, oracle, run
from bncover.coverage import bfcov, bfdcov, bfxcov
from bncover.discretise import (DegeneratePartitionWarning, Partition,
                                discretise_density, discretise_kbins_quantile,
                                discretise_kbins_uniform, interval_of)
from bncover.encode import seed_problem
from bncover.features import (FeatureFitError, IcaConvergenceError,
                              fit_feature_map, project_dataset, reconstruct)
from bncover.fixtures import concolic_fixture, random_dense_model, uniform_dataset
from bncover.lp import LPProblem, solve
from bncover.model import Dataset, classify

from oracles import enum_marginals, enum_posterior, lp_vertex_optimum


def report(n, name, t0, budget):
    elapsed = time.perf_counter() - t0
    assert elapsed < budget, f"criterion {n} exceeded its {budget}s budget ({elapsed:.1f}s)"
    print(f"ACCEPTANCE {n} ({name}): PASS  [{elapsed:.2f}s < {budget}s]")


def bin_part():
    return Partition(boundaries=(0.0,), strategy="uniform")


def test_criterion_1_example_two_reproduction():
    """Synthesized BN with two single-zero-entry nodes: BFdCov = 15/16."""
    t0 = time.perf_counter()
    structure = BNStructure(
        analysed_layers=(0, 1, 2),
        partitions=tuple((bin_part(), bin_part()) for _ in range(3)),
    )
    combos = list(product((1, 2), (1, 2)))
    tuples = []
    for c0 in combos:
        for c1 in combos:
            if c0 == (1, 1) and c1[0] == 2:
                continue
            for c2 in combos:
                if c1 == (1, 1) and c2[0] == 2:
                    continue
                tuples.append((c0, c1, c2))
    bn = BNAbstraction(structure=structure, tables=fit_tables(structure, tuples),
                       feature_maps=())
    eps = 1e-3
    assert bfcov(bn, eps) == Fraction(1)
    assert bfdcov(bn, eps) == Fraction(15, 16)
    assert bfxcov(bn, eps) == Fraction(15, 16)
    report(1, "BFdCov = 15/16 exactly", t0, 1.0)


def test_criterion_2_lemma_1_property_suite():
    """200 randomized (model, dataset, strategy) configurations: every
    fitting input keeps probability > 0."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240)
    violations = 0
    checked = 0
    for trial in range(200):
        n_inputs = 10 if trial % 2 == 0 else 100
        depth = int(rng.integers(2, 4))
        sizes = [int(rng.integers(4, 8))]
        for _ in range(depth):
            sizes.append(int(rng.integers(3, 7)))
        model = random_dense_model(sizes, seed=int(rng.integers(1 << 31)))
        data = uniform_dataset(model, n_inputs, seed=int(rng.integers(1 << 31)),
                               self_labelled=False)
        layer_count = len(model.layers)
        layers = tuple(sorted(rng.choice(layer_count, size=2, replace=False)))
        technique = str(rng.choice(
            ["pca", "pca_scaled", "ica"] if n_inputs == 100 else ["pca", "pca_scaled"]))
        cfg = AbstractionConfig(
            analysed_layers=layers,
            technique=technique,
            components=int(rng.integers(1, 3)),
            strategy=str(rng.choice(["uniform", "quantile", "kde"])),
            bins=int(rng.integers(1, 5)),
            extended=bool(rng.integers(0, 2)),
            seed=int(rng.integers(1 << 31)),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                bn = fit_abstraction(model, data, cfg)
            except (IcaConvergenceError, FeatureFitError):
                continue  # legitimate reported fit errors, not soundness issues
        for x in data.inputs:
            combo = intervals_for_input(bn, model, x)
            checked += 1
            if joint_probability(bn, combo, exact=True) <= 0:
                violations += 1
    assert checked > 5000
    assert violations == 0
    report(2, f"Lemma-1 soundness, {checked} inputs, 0 violations", t0, 120.0)


def random_small_bn(rng):
    """Random structure with at most 12 interval combinations per layer."""
    layers = int(rng.integers(2, 4))
    partitions = []
    for _ in range(layers):
        while True:
            width = int(rng.integers(1, 3))
            sizes = [int(rng.integers(2, 4)) for _ in range(width)]
            if np.prod(sizes) <= 12:
                break
        partitions.append(tuple(
            Partition(boundaries=tuple(np.sort(rng.standard_normal(m - 1))),
                      strategy="uniform")
            for m in sizes))
    structure = BNStructure(analysed_layers=tuple(range(layers)),
                            partitions=tuple(partitions))
    n = int(rng.integers(5, 60))
    tuples = []
    for _ in range(n):
        tuples.append(tuple(
            tuple(int(rng.integers(1, p.size + 1)) for p in ps)
            for ps in structure.partitions))
    bn = BNAbstraction(structure=structure, tables=fit_tables(structure, tuples),
                       feature_maps=())
    return bn, tuples


def test_criterion_3_inference_oracle():
    """Marginals, MAP, and evidential posteriors match exhaustive
    enumeration within 1e-12 on 100 random small networks."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(777)
    for _ in range(100):
        bn, tuples = random_small_bn(rng)
        mine = marginals(bn)
        oracle_m, _ = enum_marginals(bn)
        for node, vec in mine.items():
            for k, p in enumerate(vec, start=1):
                assert abs(p - float(oracle_m[node].get(k, Fraction(0)))) <= 1e-12

        # evidence guaranteed observable: taken from a fitted input
        witness = tuples[int(rng.integers(len(tuples)))]
        ev_layer = int(rng.integers(bn.structure.layer_count))
        ev_node = NodeRef(bn.structure.analysed_layers[ev_layer],
                          int(rng.integers(len(bn.structure.partitions[ev_layer]))))
        evidence = {ev_node: witness[ev_layer][ev_node.component]}
        q_layer = int(rng.integers(bn.structure.layer_count))
        if q_layer == ev_layer and len(bn.structure.partitions[q_layer]) == 1:
            q_layer = (q_layer + 1) % bn.structure.layer_count
        q_comp = int(rng.integers(len(bn.structure.partitions[q_layer])))
        query = NodeRef(bn.structure.analysed_layers[q_layer], q_comp)
        if query == ev_node:
            continue
        k, p = map_query(bn, evidence, query)
        post = enum_posterior(bn, evidence, query)
        best_p = max(post.values())
        best_k = min(kk for kk, v in post.items() if v == best_p)
        assert k == best_k
        assert abs(p - float(best_p)) <= 1e-12

        if ev_layer > 0:
            posteriors = evidential_update(bn, evidence)
            first = bn.structure.analysed_layers[0]
            for j, vec in enumerate(posteriors[NodeRef(first, j)]
                                    for j in range(len(bn.structure.partitions[0]))):
                po = enum_posterior(bn, evidence, NodeRef(first, j))
                for k2, p2 in enumerate(vec, start=1):
                    assert abs(p2 - float(po.get(k2, Fraction(0)))) <= 1e-12
    report(3, "inference matches enumeration within 1e-12", t0, 60.0)


def test_criterion_4_lp_solver_oracle():
    """200 random LPs (<= 6 variables, <= 10 constraints): objective equals
    basic-feasible-solution enumeration within 1e-7, solutions feasible."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(4242)
    optimal = infeasible = 0
    for _ in range(200):
        n = int(rng.integers(2, 5))
        p = LPProblem(nvars=n)
        for v in range(n):  # box rows keep the region bounded and pointed
            p.add({v: 1.0}, "ge", float(rng.uniform(-3, 0)), "input_box")
            p.add({v: 1.0}, "le", float(rng.uniform(0.5, 4)), "input_box")
        for _ in range(int(rng.integers(1, 11 - 2 * n))):
            coeffs = {v: float(rng.normal()) for v in range(n) if rng.random() < 0.8}
            if not coeffs:
                coeffs = {0: 1.0}
            p.add(coeffs, str(rng.choice(["le", "ge"])), float(rng.normal()))
        p.objective = {v: float(rng.normal()) for v in range(n)}
        sol = solve(p)
        best, feasible = lp_vertex_optimum(p)
        if sol.status == "optimal":
            optimal += 1
            assert feasible
            assert abs(sol.objective_value - best) <= 1e-7
            assert sol.max_violation <= 1e-7
        else:
            infeasible += 1
            assert sol.status == "infeasible" and not feasible
    assert optimal > 0 and infeasible > 0
    report(4, f"LP oracle, {optimal} optimal / {infeasible} infeasible", t0, 60.0)


def test_criterion_5_seed_feasibility():
    """Phase-fixed encodings admit their seed with objective 0."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    for trial in range(50):
        model = random_dense_model(
            [int(rng.integers(4, 9)), int(rng.integers(4, 8)),
             int(rng.integers(3, 7)), int(rng.integers(2, 5))],
            seed=int(rng.integers(1 << 31)))
        x = rng.random(model.input_size)
        sol = solve(seed_problem(model, x, upto=2))
        assert sol.status == "optimal"
        assert abs(sol.objective_value) <= 1e-7
        assert sol.max_violation <= 1e-7
    report(5, "seed feasibility at objective 0", t0, 60.0)


def test_criterion_6_discretisation_properties():
    """Totality/disjointness on 1e5 values per partition, quantile balance,
    extended end-interval emptiness, and the KDE bimodal valley boundary."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)

    def check_partition(p, probe):
        ks = np.array([interval_of(p, v) for v in probe])
        for k in range(1, p.size + 1):
            lb, ub = p.bounds(k)
            inside = (probe >= lb) & (probe < ub)
            np.testing.assert_array_equal(inside, ks == k)  # exactly one owner

    probe = rng.uniform(-10, 10, 100_000)
    samples = rng.normal(0, 2, 600)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePartitionWarning)
        parts = [
            discretise_kbins_uniform(samples, 4, extended=False),
            discretise_kbins_uniform(samples, 3, extended=True),
            discretise_kbins_quantile(samples, 5, extended=True),
            discretise_density(samples, d_min=1e-3),
        ]
    for p in parts:
        check_partition(p, probe)

    # quantile balance within +/-1 when quantiles are distinct
    vals = rng.random(997)
    for k in (2, 4, 5):
        p = discretise_kbins_quantile(vals, k, extended=False)
        if p.size == k:
            counts = np.bincount([interval_of(p, v) for v in vals],
                                 minlength=k + 1)[1:]
            assert counts.max() - counts.min() <= 1 + 1  # ceil/floor adjacency

    # extended strategies: open ends are empty except the exact maximum
    for extended_p in (discretise_kbins_uniform(samples, 3, extended=True),
                       discretise_kbins_quantile(samples, 3, extended=True)):
        ks = np.array([interval_of(extended_p, v) for v in samples])
        assert (ks > 1).all()
        right = ks == extended_p.size
        assert right.sum() == np.sum(samples == samples.max())

    # KDE bimodal fixture: a boundary falls inside the valley
    bimodal = np.concatenate([rng.normal(-5, 0.5, 500), rng.normal(5, 0.5, 500)])
    p = discretise_density(bimodal, d_min=1e-4)
    assert any(-2.0 < b < 2.0 for b in p.boundaries)
    report(6, "partition totality, balance, extension emptiness, KDE valley",
           t0, 60.0)


def test_criterion_7_concolic_fixture_run():
    """Generation run on the shipped random-weight fixture: non-decreasing
    coverage with a strict increase; retained inputs and adversarials
    re-verify through independent forward passes."""
    t0 = time.perf_counter()
    model, seeds = concolic_fixture(seed=0)
    assert len(seeds) == 100
    cfg = AbstractionConfig(analysed_layers=(1, 2), technique="pca", components=2,
                            strategy="quantile", bins=3, extended=True, seed=0,
                            epsilon=1e-8)
    bn = fit_abstraction(model, seeds, cfg)
    state = run(model, bn, seeds,
                ConcolicConfig(criterion="feature", epsilon=1e-8,
                               max_iterations=100, improvement_filter=True,
                               seed=0))
    cov = state.coverage_series
    assert all(a <= b + 1e-15 for a, b in zip(cov, cov[1:]))
    assert any(b > a for a, b in zip(cov, cov[1:]))

    retained = [r for r in state.records if r.retained]
    n_seeds = len(seeds)
    for offset, rec in enumerate(retained):
        x_new = state.inputs[n_seeds + offset]
        src = state.inputs[rec.candidate_id]
        assert oracle(src, x_new, state.config.oracle_bound, model.input_domain)
    for adv in state.adversarials:
        assert classify(model, adv.input) == adv.new_label
        assert classify(model, state.inputs[adv.source_id]) == adv.source_label
        assert adv.new_label != adv.source_label
    report(7, f"concolic fixture run, {len(state.records)} iterations, "
              f"coverage {cov[0]:.3f}->{cov[-1]:.3f}", t0, 600.0)


def test_criterion_8_monitor_checks():
    """Shift identity is zero, class removal shifts tables, and an
    out-of-range input under an extended strategy is an outlier."""
    t0 = time.perf_counter()
    model, seeds = concolic_fixture(seed=0)
    cfg = AbstractionConfig(analysed_layers=(1, 2), technique="pca", components=2,
                            strategy="quantile", bins=3, extended=True, seed=0)
    bn = fit_abstraction(model, seeds, cfg)

    assert monitor_shift(bn, model, seeds).global_distance == 0.0

    keep = seeds.labels != seeds.labels[0]
    filtered = Dataset(inputs=seeds.inputs[keep], labels=seeds.labels[keep])
    assert monitor_shift(bn, model, filtered).global_distance > 0.0

    # seeds live in [0.2, 0.8]; an extreme pattern inside the input domain
    # drives the projected features beyond every fitted boundary
    x = np.zeros(model.input_shape)
    x[::2] = 1.0
    verdict = monitor_outlier(bn, model, x)
    assert verdict.is_outlier and verdict.joint_probability == 0.0
    report(8, "shift identity, class-removal shift, scaled outlier", t0, 60.0)


def test_criterion_9_pca_ica_properties():
    """PCA orthogonality within 1e-6, full-rank round-trip within 1e-8,
    ICA source recovery with |correlation| >= 0.95."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    X = rng.standard_normal((120, 9)) * rng.uniform(0.5, 3.0, 9)
    fm = fit_feature_map("pca", X, 6, rng_seed=0)
    np.testing.assert_allclose(fm.W.T @ fm.W, np.eye(6), atol=1e-6)

    full = fit_feature_map("pca", X, 9, rng_seed=0)
    rec = reconstruct(full, project_dataset(full, X))
    np.testing.assert_allclose(rec, X, atol=1e-8)

    sources = rng.random((3000, 2)) * 2 - 1
    mixing = np.array([[1.0, 0.35], [0.65, 1.0]])
    fmi = fit_feature_map("ica", sources @ mixing.T, 2, rng_seed=5)
    recovered = project_dataset(fmi, sources @ mixing.T)
    corr = np.abs(np.corrcoef(sources.T, recovered.T)[:2, 2:])
    assert max(min(corr[0, 0], corr[1, 1]), min(corr[0, 1], corr[1, 0])) >= 0.95
    report(9, "PCA orthogonality/round-trip, ICA recovery", t0, 60.0)
