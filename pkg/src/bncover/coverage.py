"""Feature and feature-dependence coverage over a fitted abstraction.

All counting-based ratios use exact rational arithmetic so that the
criteria (metric == 1) are meaningful equalities rather than float
comparisons.  Probabilities compare against epsilon converted to an
exact fraction of its binary float value.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bayesnet import (BNAbstraction, NodeRef, conditional_table, marginals)


class EpsilonError(ValueError):
    """Epsilon outside the open interval (0, 1)."""


@dataclass(frozen=True)
class FeatureTarget:
    """An interval exercised too rarely: marginal probability below epsilon."""

    node: NodeRef
    interval: int
    probability: Fraction

    @property
    def kind(self) -> str:
        return "feature"

    def key(self):
        return ("feature", self.node, self.interval)


@dataclass(frozen=True)
class DependenceTarget:
    """A (child interval, parent combination) pair below epsilon."""

    node: NodeRef
    interval: int
    parent_combo: tuple[int, ...]  # 1-based interval per parent component
    probability: Fraction

    @property
    def kind(self) -> str:
        return "feature_dependence"

    def key(self):
        return ("feature_dependence", self.node, self.interval, self.parent_combo)


@dataclass(frozen=True)
class CoverageReport:
    bfcov: Fraction
    bfdcov: Fraction
    epsilon: float
    node_detail: dict  # NodeRef -> (covered count, total count)
    feature_targets: tuple
    dependence_targets: tuple

    @property
    def bfxcov(self) -> Fraction:
        return self.bfcov * self.bfdcov


def _check_epsilon(epsilon: float) -> Fraction:
    eps = Fraction(epsilon)
    if not 0 < eps < 1:
        raise EpsilonError(f"epsilon must lie in (0, 1), got {epsilon}")
    return eps


def _exact_marginals(bn: BNAbstraction):
    return marginals(bn, exact=True)


def _bfcov(bn, eps, mps) -> Fraction:
    total = Fraction(0)
    for node in bn.nodes():
        vec = mps[node]
        total += Fraction(sum(1 for p in vec if p >= eps), len(vec))
    return total / len(bn.nodes())


def _node_dependence(bn, node, eps, mps):
    """(covered pairs, total pairs) of one hidden/output node."""
    pos = bn.structure.position(node.layer)
    cp = conditional_table(bn, pos, node.component, exact=True)
    mp = mps[node]
    rows, m = cp.shape
    covered = 0
    for k in range(m):
        if mp[k] < eps:
            covered += rows
            continue
        covered += sum(1 for c in range(rows) if cp[c, k] >= eps)
    return covered, rows * m


def _bfdcov(bn, eps, mps) -> Fraction:
    v_plus = [n for n in bn.nodes() if n.layer != bn.structure.analysed_layers[0]]
    if not v_plus:
        raise EpsilonError("feature-dependence coverage needs >= 2 analysed layers")
    total = Fraction(0)
    for node in v_plus:
        covered, pairs = _node_dependence(bn, node, eps, mps)
        total += Fraction(covered, pairs)
    return total / len(v_plus)


def bfcov(bn: BNAbstraction, epsilon: float) -> Fraction:
    """Proportion of feature intervals with marginal probability >= epsilon,
    averaged over all nodes."""
    eps = _check_epsilon(epsilon)
    return _bfcov(bn, eps, _exact_marginals(bn))


def bfdcov(bn: BNAbstraction, epsilon: float) -> Fraction:
    """Proportion of (child interval, parent combination) dependencies that
    are exercised (enough), averaged over hidden/output-layer nodes.

    A pair counts as covered when its conditional entry is >= epsilon or
    when the child interval's marginal is < epsilon (which removes plain
    feature coverage from this metric).
    """
    eps = _check_epsilon(epsilon)
    return _bfdcov(bn, eps, _exact_marginals(bn))


def bfxcov(bn: BNAbstraction, epsilon: float) -> Fraction:
    """Combined metric: product of feature and feature-dependence coverage."""
    return bfcov(bn, epsilon) * bfdcov(bn, epsilon)


def criterion_satisfied(bn: BNAbstraction, epsilon: float, which: str) -> bool:
    """Exact test of the coverage criteria: the metric equals one."""
    if which == "feature":
        return bfcov(bn, epsilon) == 1
    if which == "feature_dependence":
        return bfdcov(bn, epsilon) == 1
    raise ValueError(f"unknown criterion {which!r}")


def uncovered_targets(bn: BNAbstraction, epsilon: float, mps=None):
    """All below-epsilon targets, ordered by ascending probability then
    node then interval (then parent combination), deterministically.

    Feature targets are intervals with marginal < epsilon; dependence
    targets are (interval, parent combination) pairs with conditional
    entry < epsilon whose interval marginal is >= epsilon.
    """
    eps = _check_epsilon(epsilon)
    if mps is None:
        mps = _exact_marginals(bn)
    structure = bn.structure
    node_order = {node: i for i, node in enumerate(bn.nodes())}

    feature = []
    for node in bn.nodes():
        for k, p in enumerate(mps[node], start=1):
            if p < eps:
                feature.append(FeatureTarget(node=node, interval=k, probability=p))
    feature.sort(key=lambda t: (t.probability, node_order[t.node], t.interval))

    dependence = []
    for node in bn.nodes():
        pos = structure.position(node.layer)
        if pos == 0:
            continue
        cp = conditional_table(bn, pos, node.component, exact=True)
        mp = mps[node]
        parent_sizes = structure.sizes(pos - 1)
        for k in range(cp.shape[1]):
            if mp[k] < eps:
                continue
            for c in range(cp.shape[0]):
                if cp[c, k] < eps:
                    combo = tuple(
                        int(d) + 1 for d in np.unravel_index(c, parent_sizes))
                    dependence.append(DependenceTarget(
                        node=node, interval=k + 1, parent_combo=combo,
                        probability=cp[c, k]))
    dependence.sort(key=lambda t: (t.probability, node_order[t.node],
                                   t.interval, t.parent_combo))
    return feature, dependence


def coverage_report(bn: BNAbstraction, epsilon: float) -> CoverageReport:
    """Full report: both metrics, per-node counts, and uncovered targets.

    Exact marginals are computed once and shared across the metrics.
    """
    eps = _check_epsilon(epsilon)
    mps = _exact_marginals(bn)
    structure = bn.structure
    detail = {}
    for node in bn.nodes():
        vec = mps[node]
        detail[node] = (sum(1 for p in vec if p >= eps), len(vec))
        if structure.position(node.layer) > 0:
            detail[node] = detail[node] + _node_dependence(bn, node, eps, mps)
    feature, dependence = uncovered_targets(bn, epsilon, mps)
    return CoverageReport(bfcov=_bfcov(bn, eps, mps), bfdcov=_bfdcov(bn, eps, mps),
                          epsilon=epsilon, node_detail=detail,
                          feature_targets=tuple(feature),
                          dependence_targets=tuple(dependence))
