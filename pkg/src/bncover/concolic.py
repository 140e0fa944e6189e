"""Coverage-guided concolic test generation.

Each iteration picks an under-exercised target from the current
abstraction, picks the candidate input whose feature value sits closest
to the target interval, solves an LP that fixes the network's non-linear
behaviours to the candidate's and asks for the nearest input (in
L-infinity) meeting the target, then runs the generated input through
the real network, filters it through the plausibility oracle, and
updates the test set and the abstraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bayesnet import (BNAbstraction, NodeRef, dataset_intervals, fit_tables,
                       with_added_input, _dataset_features)
from .coverage import CoverageReport, coverage_report
from .discretise import interval_of
from .encode import (add_objective, as_problem, encode_network,
                     encode_replication, encode_target)
from .features import project
from .lp import FEAS_TOL, solve
from .model import Dataset, Model, classify, forward

AUTO_TABLEAU_CELLS = 4_000_000  # above this, "auto" delegates to HiGHS


class SeedClassificationError(ValueError):
    """Initial test inputs must be correctly classified."""


@dataclass(frozen=True)
class ConcolicConfig:
    criterion: str = "feature"  # "feature" | "feature_dependence"
    epsilon: float = 1e-3
    max_iterations: int = 100
    oracle_bound: float = 0.3
    improvement_filter: bool = True
    replication: bool = True
    relu_mode: str = "fixed"
    backend: str = "auto"  # simplex | highs | auto
    candidate_heuristic: str = "closest"  # closest | random
    clip: bool = False
    seed: int = 0
    filter_misclassified: bool = False
    dump_lp_dir: str | None = None


@dataclass(frozen=True)
class AdversarialRecord:
    source_id: int
    generated_id: int
    input: np.ndarray
    source_label: int
    new_label: int
    linf: float


@dataclass(frozen=True)
class IterationRecord:
    index: int
    target_key: tuple
    target_probability: float
    candidate_id: int
    lp_status: str
    oracle_passed: bool | None
    dist_before: float | None
    dist_after: float | None
    delta: float | None  # dist_before - dist_after; > 0 means closer
    retained: bool
    adversarial: bool
    target_hit: bool | None
    parent_match: bool | None
    coverage: float  # active-criterion metric after the update


@dataclass
class GenerationState:
    model: Model
    config: ConcolicConfig
    bn: BNAbstraction
    inputs: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    ok_ids: list = field(default_factory=list)
    tuples: list = field(default_factory=list)
    features: list = field(default_factory=list)  # per input, per layer pos
    attempted: set = field(default_factory=set)
    adversarials: list = field(default_factory=list)
    records: list = field(default_factory=list)
    coverage_series: list = field(default_factory=list)
    _report: CoverageReport | None = None
    _rng: np.random.Generator | None = None

    @property
    def report(self) -> CoverageReport:
        if self._report is None:
            self._report = coverage_report(self.bn, self.config.epsilon)
        return self._report

    def metric(self) -> float:
        r = self.report
        return float(r.bfcov if self.config.criterion == "feature" else r.bfdcov)

    def criterion_satisfied(self) -> bool:
        r = self.report
        return (r.bfcov if self.config.criterion == "feature" else r.bfdcov) == 1


def oracle(x, x_prime, bound: float, domain=None) -> bool:
    """Plausibility filter: close enough in L-infinity and inside the domain."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if float(np.abs(x_prime - x).max(initial=0.0)) > bound:
        return False
    if domain is not None:
        lo, hi = domain
        if x_prime.min(initial=lo) < lo or x_prime.max(initial=hi) > hi:
            return False
    return True


def _snap_to_domain(x, domain):
    """Clamp solver noise (within the feasibility tolerance) onto the box."""
    lo, hi = domain
    x = np.where((x < lo) & (x >= lo - FEAS_TOL), lo, x)
    x = np.where((x > hi) & (x <= hi + FEAS_TOL), hi, x)
    return x


def _target_geometry(state: GenerationState, target):
    """(layer pos, feature map, partition, interval bounds) of a target."""
    pos = state.bn.structure.position(target.node.layer)
    fm = state.bn.feature_maps[pos]
    partition = state.bn.structure.partitions[pos][target.node.component]
    return pos, fm, partition, partition.bounds(target.interval)


def target_distance(bounds, value: float) -> float:
    """Distance from a feature value to the target interval's nearest
    finite boundary (0 when the interval spans the whole line)."""
    lb, ub = bounds
    ds = [abs(value - b) for b in (lb, ub) if np.isfinite(b)]
    return min(ds) if ds else 0.0


def select_target(state: GenerationState, epsilon=None, kind=None):
    """Lowest-probability unmet target with at least one unattempted
    candidate; None when every (target, candidate) pair was tried."""
    kind = kind or state.config.criterion
    r = state.report
    targets = r.feature_targets if kind == "feature" else r.dependence_targets
    for t in targets:
        key = t.key()
        if any((key, cid) not in state.attempted for cid in state.ok_ids):
            return t
    return None


def select_candidate(state: GenerationState, target):
    """Candidate whose feature value is closest to a target boundary.

    Dependence-target ties prefer candidates already eliciting the parent
    combination; remaining ties go to the lowest candidate id.  Returns
    None when every candidate was already attempted for this target.
    """
    key = target.key()
    pool = [cid for cid in state.ok_ids if (key, cid) not in state.attempted]
    if not pool:
        return None
    if state.config.candidate_heuristic == "random":
        return int(state._rng.choice(pool))
    pos, _, _, bounds = _target_geometry(state, target)
    j = target.node.component

    def sort_key(cid):
        dist = target_distance(bounds, state.features[cid][pos][j])
        parent_miss = 0
        if target.kind == "feature_dependence":
            parent_miss = 0 if state.tuples[cid][pos - 1] == target.parent_combo else 1
        return (dist, parent_miss, cid)

    return min(pool, key=sort_key)


def _register_input(state: GenerationState, x) -> int:
    feats = []
    act = forward(state.model, x)
    for fm in state.bn.feature_maps:
        feats.append(project(fm, act.pre_flat(fm.layer)))
    tup = tuple(
        tuple(interval_of(p, v) for p, v in zip(state.bn.structure.partitions[pos], feats[pos]))
        for pos in range(state.bn.structure.layer_count)
    )
    state.inputs.append(np.asarray(x, dtype=np.float64))
    state.labels.append(classify(state.model, x))
    state.tuples.append(tup)
    state.features.append(feats)
    return len(state.inputs) - 1


def _pick_backend(cfg: ConcolicConfig, problem) -> str:
    if cfg.backend != "auto":
        return cfg.backend
    rows = len(problem.constraints)
    cells = (rows + 1) * (2 * problem.nvars + 2 * rows + 1)
    return "simplex" if cells <= AUTO_TABLEAU_CELLS else "highs"


def attempt(state: GenerationState, target, candidate_id: int) -> IterationRecord:
    """One symbolic-analysis step against (target, candidate)."""
    cfg = state.config
    x = state.inputs[candidate_id]
    pos, fm, partition, bounds = _target_geometry(state, target)

    enc = encode_network(state.model, x, upto=target.node.layer, relu_mode=cfg.relu_mode)
    encode_target(enc, fm, partition, target.interval, component=target.node.component)
    if target.kind == "feature_dependence":
        parent_fm = state.bn.feature_maps[pos - 1]
        parent_parts = state.bn.structure.partitions[pos - 1]
        for j, k in enumerate(target.parent_combo):
            encode_target(enc, parent_fm, parent_parts[j], k, component=j)
    elif cfg.replication and fm.components > 1:
        # replication pins the non-targeted components of the child layer;
        # with dependence targets it would fight the parent-layer
        # constraints, so it applies to plain feature targets only
        encode_replication(enc, fm, target.node.component)
    d = add_objective(enc, x)
    problem = as_problem(enc, d)
    if cfg.dump_lp_dir is not None:
        from .lp import dump_lp
        import os
        os.makedirs(cfg.dump_lp_dir, exist_ok=True)
        dump_lp(problem, os.path.join(cfg.dump_lp_dir,
                                      f"iter_{len(state.records):04d}.lp"))
    sol = solve(problem, backend=_pick_backend(cfg, problem))

    state.attempted.add((target.key(), candidate_id))
    base = dict(index=len(state.records), target_key=target.key(),
                target_probability=float(target.probability),
                candidate_id=candidate_id, lp_status=sol.status)
    if sol.status != "optimal":
        rec = IterationRecord(oracle_passed=None, dist_before=None, dist_after=None,
                              delta=None, retained=False, adversarial=False,
                              target_hit=None, parent_match=None,
                              coverage=state.metric(), **base)
        state.records.append(rec)
        state.coverage_series.append(rec.coverage)
        return rec

    x_prime = sol.assignment[enc.input_vars].reshape(state.model.input_shape)
    x_prime = _snap_to_domain(x_prime, state.model.input_domain)
    if cfg.clip:
        x_prime = np.clip(x_prime, *state.model.input_domain)
    oracle_ok = oracle(x, x_prime, cfg.oracle_bound, state.model.input_domain)

    act_prime = forward(state.model, x_prime)
    feats_prime = project(fm, act_prime.pre_flat(fm.layer))
    val_before = state.features[candidate_id][pos][target.node.component]
    val_after = feats_prime[target.node.component]
    dist_before = target_distance(bounds, val_before)
    dist_after = target_distance(bounds, val_after)
    delta = dist_before - dist_after
    target_hit = interval_of(partition, val_after) == target.interval
    parent_match = None
    if target.kind == "feature_dependence":
        parent_fm = state.bn.feature_maps[pos - 1]
        parent_feats = project(parent_fm, act_prime.pre_flat(parent_fm.layer))
        parent_match = tuple(
            interval_of(p, v) for p, v in zip(state.bn.structure.partitions[pos - 1],
                                              parent_feats)
        ) == target.parent_combo

    retained = bool(oracle_ok and (delta > 0 or not cfg.improvement_filter)
                    and not np.array_equal(x_prime, x))
    adversarial = False
    if retained:
        new_id = _register_input(state, x_prime)
        state.bn = with_added_input(state.bn, state.tuples[new_id])
        state._report = None
        if state.labels[new_id] == state.labels[candidate_id]:
            state.ok_ids.append(new_id)
        else:
            adversarial = True
            state.adversarials.append(AdversarialRecord(
                source_id=candidate_id, generated_id=new_id,
                input=state.inputs[new_id],
                source_label=state.labels[candidate_id],
                new_label=state.labels[new_id],
                linf=float(np.abs(x_prime - x).max())))

    rec = IterationRecord(oracle_passed=bool(oracle_ok), dist_before=dist_before,
                          dist_after=dist_after, delta=delta, retained=retained,
                          adversarial=adversarial, target_hit=bool(target_hit),
                          parent_match=parent_match, coverage=state.metric(),
                          **base)
    state.records.append(rec)
    state.coverage_series.append(rec.coverage)
    return rec


def run(model: Model, bn: BNAbstraction, seeds: Dataset,
        config: ConcolicConfig) -> GenerationState:
    """Full generation loop: iterate until the criterion holds, targets are
    exhausted, or the iteration budget runs out.

    The abstraction's tables are re-fitted on the seed set first, so the
    loop starts from the abstraction of the seeds.  Seeds carrying labels
    must be classified correctly by the model; unlabelled seeds adopt the
    model's own classifications.
    """
    if len(seeds) == 0:
        raise SeedClassificationError("empty seed set")
    if config.criterion not in ("feature", "feature_dependence"):
        raise ValueError(f"unknown criterion {config.criterion!r}")
    inputs = list(np.asarray(seeds.inputs, dtype=np.float64))
    if seeds.labels is not None:
        wrong = [i for i, (x, label) in enumerate(zip(inputs, seeds.labels))
                 if classify(model, x) != label]
        if wrong and not config.filter_misclassified:
            raise SeedClassificationError(
                f"{len(wrong)} seed inputs are misclassified (e.g. index {wrong[0]})")
        if wrong:
            keep = [i for i in range(len(inputs)) if i not in set(wrong)]
            if not keep:
                raise SeedClassificationError("all seed inputs are misclassified")
            inputs = [inputs[i] for i in keep]

    tuples = dataset_intervals(bn.structure, bn.feature_maps, model, inputs)
    state = GenerationState(
        model=model, config=config,
        bn=bn.with_tables(fit_tables(bn.structure, tuples)),
        _rng=np.random.default_rng(config.seed))
    feats_layers = _dataset_features(bn.feature_maps, model, inputs)
    for i, x in enumerate(inputs):
        state.inputs.append(x)
        state.labels.append(classify(model, x))
        state.tuples.append(tuples[i])
        state.features.append([feats_layers[pos][i]
                               for pos in range(bn.structure.layer_count)])
    state.ok_ids = list(range(len(inputs)))
    state.coverage_series.append(state.metric())

    while len(state.records) < config.max_iterations:
        if state.criterion_satisfied():
            break
        target = select_target(state)
        if target is None:
            break  # no new (target, candidate) pair exists
        candidate = select_candidate(state, target)
        if candidate is None:
            continue  # unreachable: select_target guarantees a candidate
        attempt(state, target, candidate)
    return state
