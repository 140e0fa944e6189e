"""Linear programmes with an L-infinity objective, and an embedded solver.

The solver is a dense-tableau two-phase primal simplex with Bland's
pivoting rule throughout, which makes it deterministic and free of
cycling.  Free variables are split into positive/negative parts.  An
optional backend delegates to scipy's HiGHS solver for problems too
large for a dense tableau.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7        # feasibility tolerance on returned solutions
PIVOT_TOL = 1e-9       # reduced-cost / ratio test threshold
STRICT_SLACK = 1e-6    # realisation of strict inequalities
MAX_ITER = 100_000

CONSTRAINT_TAGS = ("network", "relu_phase", "maxpool_phase", "input_box",
                   "target", "replication", "objective_link")


@dataclass(frozen=True)
class LinearConstraint:
    """Sparse row: sum(coeffs[v] * x[v]) <relation> rhs."""

    coeffs: dict
    relation: str  # "le" | "ge" | "eq"
    rhs: float
    tag: str = "network"

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("constraint without coefficients")
        if self.relation not in ("le", "ge", "eq"):
            raise ValueError(f"unknown relation {self.relation!r}")
        if not np.isfinite(self.rhs) or not all(
                np.isfinite(c) for c in self.coeffs.values()):
            raise ValueError("constraint with non-finite values")


@dataclass
class LPProblem:
    """Minimise a linear objective over sparse constraints on free reals."""

    nvars: int
    constraints: list[LinearConstraint] = field(default_factory=list)
    objective: dict = field(default_factory=dict)  # var -> coefficient
    names: list[str] | None = None

    def add(self, coeffs: dict, relation: str, rhs: float, tag: str = "network"):
        self.constraints.append(
            LinearConstraint(coeffs=dict(coeffs), relation=relation,
                             rhs=float(rhs), tag=tag))

    def name_of(self, v: int) -> str:
        if self.names is not None and v < len(self.names):
            return self.names[v]
        return f"v{v}"


@dataclass(frozen=True)
class LPSolution:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    assignment: np.ndarray | None
    objective_value: float | None
    iterations: int = 0
    max_violation: float = 0.0


def _violation(p: LPProblem, x: np.ndarray) -> float:
    worst = 0.0
    for c in p.constraints:
        lhs = sum(a * x[v] for v, a in c.coeffs.items())
        if c.relation == "le":
            worst = max(worst, lhs - c.rhs)
        elif c.relation == "ge":
            worst = max(worst, c.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - c.rhs))
    return worst


def _objective_value(p: LPProblem, x: np.ndarray) -> float:
    return float(sum(a * x[v] for v, a in p.objective.items()))


def solve(p: LPProblem, backend: str = "simplex") -> LPSolution:
    """Solve a problem; statuses are reported, never raised."""
    if backend == "simplex":
        return _solve_simplex(p)
    if backend == "highs":
        return _solve_highs(p)
    raise ValueError(f"unknown backend {backend!r}")


def _solve_simplex(p: LPProblem) -> LPSolution:
    n = p.nvars
    m = len(p.constraints)
    if m == 0:
        # unconstrained: optimal iff the objective is empty/zero
        if any(c != 0 for c in p.objective.values()):
            return LPSolution("unbounded", None, None)
        return LPSolution("optimal", np.zeros(n), 0.0)

    # columns: 2n split vars, then one slack/surplus per inequality row,
    # then one artificial per ge/eq row (after sign normalisation)
    A = np.zeros((m, 2 * n))
    b = np.zeros(m)
    rel = []
    for i, c in enumerate(p.constraints):
        for v, a in c.coeffs.items():
            A[i, 2 * v] = a
            A[i, 2 * v + 1] = -a
        b[i] = c.rhs
        rel.append(c.relation)
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1.0
            b[i] *= -1.0
            rel[i] = {"le": "ge", "ge": "le", "eq": "eq"}[rel[i]]

    slack_rows = [i for i in range(m) if rel[i] != "eq"]
    art_rows = [i for i in range(m) if rel[i] != "le"]
    ns, na = len(slack_rows), len(art_rows)
    total = 2 * n + ns + na
    T = np.zeros((m + 1, total + 1))
    T[:m, : 2 * n] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=np.int64)
    for si, i in enumerate(slack_rows):
        T[i, 2 * n + si] = 1.0 if rel[i] == "le" else -1.0
        if rel[i] == "le":
            basis[i] = 2 * n + si
    for ai, i in enumerate(art_rows):
        T[i, 2 * n + ns + ai] = 1.0
        basis[i] = 2 * n + ns + ai

    iters = 0

    def pivot(row: int, col: int):
        T[row] /= T[row, col]
        factor = T[:, col].copy()
        factor[row] = 0.0
        T[:, :] -= np.outer(factor, T[row])
        basis[row] = col

    def run_phase(allowed: int) -> str:
        # Bland: entering = lowest-index column with negative reduced cost;
        # leaving = min ratio, ties to the lowest basic-variable index.
        nonlocal iters
        while True:
            if iters >= MAX_ITER:
                return "iteration_limit"
            negatives = np.nonzero(T[-1, :allowed] < -PIVOT_TOL)[0]
            if negatives.size == 0:
                return "optimal"
            col = int(negatives[0])
            column = T[:m, col]
            rows = np.nonzero(column > PIVOT_TOL)[0]
            if rows.size == 0:
                return "unbounded"
            ratios = T[rows, -1] / column[rows]
            best = ratios.min()
            candidates = rows[ratios <= best + 1e-12]
            row = int(candidates[np.argmin(basis[candidates])])
            pivot(row, col)
            iters += 1

    # phase 1: minimise the sum of artificials
    if na:
        T[-1, :] = 0.0
        for i in art_rows:
            T[-1, :] -= T[i, :]
        T[-1, 2 * n + ns : 2 * n + ns + na] = 0.0
        status = run_phase(total)
        if status != "optimal":
            return LPSolution(status, None, None, iters)
        if -T[-1, -1] > FEAS_TOL:
            return LPSolution("infeasible", None, None, iters)
        # drive remaining artificial basics out (or drop redundant rows)
        for i in range(m):
            if basis[i] >= 2 * n + ns:
                row_coefs = np.abs(T[i, : 2 * n + ns])
                nz = np.nonzero(row_coefs > PIVOT_TOL)[0]
                if nz.size:
                    pivot(i, int(nz[0]))
                    iters += 1
        T[:, 2 * n + ns :- 1] = 0.0  # neutralise artificial columns

    # phase 2: restore the real objective
    T[-1, :] = 0.0
    for v, a in p.objective.items():
        T[-1, 2 * v] = a
        T[-1, 2 * v + 1] = -a
    for i in range(m):
        cb = T[-1, basis[i]]
        if cb != 0.0:
            T[-1, :] -= cb * T[i, :]
    status = run_phase(2 * n + ns)
    if status != "optimal":
        return LPSolution(status, None, None, iters)

    xs = np.zeros(total)
    xs[basis] = T[:m, -1]
    x = xs[0 : 2 * n : 2] - xs[1 : 2 * n : 2]
    return LPSolution("optimal", x, _objective_value(p, x), iters,
                      max_violation=_violation(p, x))


def _solve_highs(p: LPProblem) -> LPSolution:
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    c = np.zeros(p.nvars)
    for v, a in p.objective.items():
        c[v] = a

    def rows(kind):
        data, ri, ci, rhs = [], [], [], []
        k = 0
        for con in p.constraints:
            if kind == "ub" and con.relation == "eq":
                continue
            if kind == "eq" and con.relation != "eq":
                continue
            sign = -1.0 if con.relation == "ge" else 1.0
            for v, a in con.coeffs.items():
                data.append(sign * a)
                ri.append(k)
                ci.append(v)
            rhs.append(sign * con.rhs)
            k += 1
        if not rhs:
            return None, None
        return coo_matrix((data, (ri, ci)), shape=(k, p.nvars)), np.array(rhs)

    A_ub, b_ub = rows("ub")
    A_eq, b_eq = rows("eq")
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * p.nvars, method="highs")
    status = {0: "optimal", 1: "iteration_limit", 2: "infeasible",
              3: "unbounded"}.get(res.status, "infeasible")
    if status != "optimal":
        return LPSolution(status, None, None, int(res.nit or 0))
    x = np.asarray(res.x)
    return LPSolution("optimal", x, _objective_value(p, x), int(res.nit or 0),
                      max_violation=_violation(p, x))


def dump_lp(p: LPProblem, path) -> None:
    """Write the problem in the common text LP interchange layout."""
    lines = ["Minimize", " obj: " + _expr(p, p.objective), "Subject To"]
    for i, c in enumerate(p.constraints):
        op = {"le": "<=", "ge": ">=", "eq": "="}[c.relation]
        lines.append(f" {c.tag}_{i}: {_expr(p, c.coeffs)} {op} {c.rhs:.17g}")
    lines.append("Bounds")
    for v in range(p.nvars):
        lines.append(f" {p.name_of(v)} free")
    lines.append("End")
    from .formats import write_atomic
    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _expr(p: LPProblem, coeffs: dict) -> str:
    if not coeffs:
        return "0"
    parts = []
    for v in sorted(coeffs):
        a = coeffs[v]
        sign = "-" if a < 0 else ("+" if parts else "")
        parts.append(f"{sign} {abs(a):.17g} {p.name_of(v)}".strip())
    return " ".join(parts)
