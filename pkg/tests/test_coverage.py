from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from bncover.bayesnet import BNAbstraction, BNStructure, NodeRef, fit_tables
from bncover.coverage import (DependenceTarget, EpsilonError, bfcov, bfdcov,
                              bfxcov, coverage_report, criterion_satisfied,
                              uncovered_targets)
from bncover.discretise import Partition


def bin_part():
    return Partition(boundaries=(0.0,), strategy="uniform")


def paper_example_bn():
    """Three layers of two binary components; exactly one never-exercised
    (child interval, parent combination) pair at each of two nodes."""
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
    return BNAbstraction(structure=structure,
                         tables=fit_tables(structure, tuples), feature_maps=())


def fully_covered_bn():
    structure = BNStructure(analysed_layers=(0, 1),
                            partitions=((bin_part(),), (bin_part(),)))
    tuples = [((a,), (b,)) for a in (1, 2) for b in (1, 2)]
    return BNAbstraction(structure=structure,
                         tables=fit_tables(structure, tuples), feature_maps=())


EPS = 1e-3


class TestFeatureCoverage:
    def test_fully_covered(self):
        assert bfcov(fully_covered_bn(), EPS) == 1

    def test_partial_count(self):
        """One node with marginals (0.9, 0.1, 0.0): 2 of 3 intervals covered."""
        structure = BNStructure(
            analysed_layers=(0, 1),
            partitions=((Partition(boundaries=(0.0, 1.0), strategy="uniform"),),
                        (bin_part(),)))
        tuples = [((1,), (1,))] * 9 + [((2,), (1,))] * 1
        bn = BNAbstraction(structure=structure,
                           tables=fit_tables(structure, tuples), feature_maps=())
        from bncover.bayesnet import marginals
        mp = marginals(bn, exact=True)[NodeRef(0, 0)]
        assert list(mp) == [Fraction(9, 10), Fraction(1, 10), Fraction(0)]
        # node 0 covers 2/3, node 1 covers 1/2
        assert bfcov(bn, 0.05) == Fraction(1, 2) * (Fraction(2, 3) + Fraction(1, 2))

    def test_recount_from_serialised_tables(self, tmp_path, small_pipeline):
        """Metric equals an independent recount over the saved container."""
        from bncover import formats
        from bncover.bayesnet import marginals
        _, _, bn = small_pipeline
        path = tmp_path / "a.bna"
        formats.save_abstraction(bn, path)
        loaded = formats.load_abstraction(path)
        mps = marginals(loaded, exact=True)
        total = Fraction(0)
        for node in loaded.nodes():
            vec = mps[node]
            total += Fraction(sum(1 for p in vec if p >= Fraction(1e-8)), len(vec))
        expected = total / len(loaded.nodes())
        assert bfcov(bn, 1e-8) == expected

    def test_epsilon_validated(self):
        bn = fully_covered_bn()
        with pytest.raises(EpsilonError):
            bfcov(bn, 1.0)
        with pytest.raises(EpsilonError):
            bfcov(bn, 0.0)

    def test_range(self):
        bn = paper_example_bn()
        v = bfcov(bn, EPS)
        assert 0 < v <= 1


class TestDependenceCoverage:
    def test_paper_example_value(self):
        """Two of four hidden/output nodes carry one zero entry out of
        eight: (1/4) * (2*8/8 + 2*7/8) = 15/16."""
        bn = paper_example_bn()
        assert bfcov(bn, EPS) == 1
        assert bfdcov(bn, EPS) == Fraction(15, 16)
        assert bfxcov(bn, EPS) == Fraction(15, 16)

    def test_all_entries_covered(self):
        assert bfdcov(fully_covered_bn(), EPS) == 1

    def test_low_marginal_interval_dominates(self):
        """Pairs whose child interval has marginal < epsilon count as
        covered regardless of the conditional entry."""
        structure = BNStructure(analysed_layers=(0, 1),
                                partitions=((bin_part(),), (bin_part(),)))
        # child interval 2 never occurs: marginal 0 < eps, so its zero
        # conditional entries do not hurt the metric
        tuples = [((a,), (1,)) for a in (1, 2)]
        bn = BNAbstraction(structure=structure,
                           tables=fit_tables(structure, tuples), feature_maps=())
        assert bfdcov(bn, EPS) == 1

    def test_product_identity(self):
        bn = paper_example_bn()
        assert bfxcov(bn, EPS) == bfcov(bn, EPS) * bfdcov(bn, EPS)


class TestCriteria:
    def test_fully_covered_toy(self):
        bn = fully_covered_bn()
        assert criterion_satisfied(bn, EPS, "feature")
        assert criterion_satisfied(bn, EPS, "feature_dependence")

    def test_paper_example_split_verdict(self):
        bn = paper_example_bn()
        assert criterion_satisfied(bn, EPS, "feature")
        assert not criterion_satisfied(bn, EPS, "feature_dependence")

    def test_empty_interval_node_fails_feature(self):
        structure = BNStructure(
            analysed_layers=(0, 1),
            partitions=((Partition(boundaries=(0.0, 1.0), strategy="uniform"),),
                        (bin_part(),)))
        tuples = [((1,), (1,)), ((2,), (2,))]
        bn = BNAbstraction(structure=structure,
                           tables=fit_tables(structure, tuples), feature_maps=())
        assert not criterion_satisfied(bn, EPS, "feature")

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            criterion_satisfied(fully_covered_bn(), EPS, "nope")


class TestUncoveredTargets:
    def test_fully_covered_is_empty(self):
        feature, dependence = uncovered_targets(fully_covered_bn(), EPS)
        assert feature == [] and dependence == []

    def test_paper_example_exactly_two_zero_entries(self):
        feature, dependence = uncovered_targets(paper_example_bn(), EPS)
        assert feature == []
        assert len(dependence) == 2
        assert {(t.node, t.interval, t.parent_combo) for t in dependence} == {
            (NodeRef(1, 0), 2, (1, 1)),
            (NodeRef(2, 0), 2, (1, 1)),
        }
        assert all(t.probability == 0 for t in dependence)

    def test_deterministic_ordering(self, small_pipeline):
        _, _, bn = small_pipeline
        f1, d1 = uncovered_targets(bn, 1e-2)
        f2, d2 = uncovered_targets(bn, 1e-2)
        assert f1 == f2 and d1 == d2
        probs = [t.probability for t in f1]
        assert probs == sorted(probs)

    def test_recount_against_report(self, small_pipeline):
        _, _, bn = small_pipeline
        report = coverage_report(bn, 1e-2)
        f, d = uncovered_targets(bn, 1e-2)
        assert tuple(f) == report.feature_targets
        assert tuple(d) == report.dependence_targets


class TestReport:
    def test_report_consistency(self, small_pipeline):
        _, _, bn = small_pipeline
        report = coverage_report(bn, 1e-2)
        assert report.bfxcov == report.bfcov * report.bfdcov
        assert 0 < report.bfcov <= 1
        assert 0 <= report.bfdcov <= 1
        # node detail recount matches the metric
        total = sum(Fraction(c, t) for c, t, *_ in report.node_detail.values())
        assert total / len(report.node_detail) == report.bfcov

    def test_new_elicitation_strictly_increases_node_count(self):
        """Adding an input that elicits a previously-zero-marginal interval
        grows that node's covered-interval set once its frequency clears
        epsilon."""
        structure = BNStructure(analysed_layers=(0, 1),
                                partitions=((bin_part(),), (bin_part(),)))
        tuples = [((1,), (1,))] * 3
        bn = BNAbstraction(structure=structure,
                           tables=fit_tables(structure, tuples), feature_maps=())
        before = coverage_report(bn, 0.2).node_detail[NodeRef(0, 0)][0]
        from bncover.bayesnet import with_added_input
        grown = with_added_input(bn, ((2,), (1,)))
        after = coverage_report(grown, 0.2).node_detail[NodeRef(0, 0)][0]
        assert after == before + 1
