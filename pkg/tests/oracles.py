"""Independent brute-force oracles the tests check the library against.

These deliberately re-derive results from first principles (exhaustive
enumeration, hand counting) and share no code with the implementation
paths they verify.
"""

from fractions import Fraction
from itertools import combinations, product

import numpy as np

from bncover.bayesnet import NodeRef, joint_probability


def all_assignments(structure):
    """Every full interval assignment (one tuple per layer)."""
    per_layer = [
        list(product(*[range(1, p.size + 1) for p in ps]))
        for ps in structure.partitions
    ]
    return product(*per_layer)


def enum_marginals(bn):
    """Node marginals by enumerating every assignment of the product measure."""
    per_node = {}
    total = Fraction(0)
    for assign in all_assignments(bn.structure):
        p = joint_probability(bn, assign, exact=True)
        total += p
        for pos, layer in enumerate(bn.structure.analysed_layers):
            for j in range(len(bn.structure.partitions[pos])):
                node = NodeRef(layer, j)
                k = assign[pos][j]
                per_node.setdefault(node, {})
                per_node[node][k] = per_node[node].get(k, Fraction(0)) + p
    return {n: {k: v / total for k, v in d.items()} for n, d in per_node.items()}, total


def enum_posterior(bn, evidence, query):
    """Posterior distribution of one node given evidence, by enumeration."""
    post = {}
    total = Fraction(0)
    for assign in all_assignments(bn.structure):
        consistent = all(
            assign[bn.structure.position(n.layer)][n.component] == k
            for n, k in evidence.items()
        )
        if not consistent:
            continue
        p = joint_probability(bn, assign, exact=True)
        total += p
        qpos = bn.structure.position(query.layer)
        k = assign[qpos][query.component]
        post[k] = post.get(k, Fraction(0)) + p
    if total == 0:
        return None
    return {k: v / total for k, v in post.items()}


def count_tables(structure, dataset_intervals):
    """Hand-counting oracle for fitted tables (dict-based, no numpy)."""
    n = len(dataset_intervals)
    marginal = {}
    conditional = {}
    for per_layer in dataset_intervals:
        for j, k in enumerate(per_layer[0]):
            marginal.setdefault(j, {})
            marginal[j][k] = marginal[j].get(k, 0) + 1
        for pos in range(1, len(per_layer)):
            parent = per_layer[pos - 1]
            for j, k in enumerate(per_layer[pos]):
                key = (pos, j)
                conditional.setdefault(key, {})
                conditional[key][(parent, k)] = conditional[key].get((parent, k), 0) + 1
    return n, marginal, conditional


def lp_vertex_optimum(problem):
    """(best objective, any feasible vertex exists) by enumerating basic
    feasible solutions; complete for pointed feasible regions."""
    n = problem.nvars
    rows = []
    for c in problem.constraints:
        a = np.zeros(n)
        for v, coef in c.coeffs.items():
            a[v] = coef
        rows.append((a, c.relation, c.rhs))
    cvec = np.zeros(n)
    for v, coef in problem.objective.items():
        cvec[v] = coef
    best = None
    feasible = False
    for comb in combinations(range(len(rows)), n):
        A = np.array([rows[i][0] for i in comb])
        b = np.array([rows[i][2] for i in comb])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        x = np.linalg.solve(A, b)
        ok = True
        for a, rel, rhs in rows:
            lhs = a @ x
            if rel == "le" and lhs > rhs + 1e-9:
                ok = False
            elif rel == "ge" and lhs < rhs - 1e-9:
                ok = False
            elif rel == "eq" and abs(lhs - rhs) > 1e-9:
                ok = False
            if not ok:
                break
        if not ok:
            continue
        feasible = True
        val = float(cvec @ x)
        if best is None or val < best:
            best = val
    return best, feasible
