"""Discrete Bayesian-network abstraction of a model over a dataset.

Nodes are (analysed layer, feature component) pairs carrying interval
partitions; edges fully connect consecutive analysed layers.  Tables are
raw empirical frequencies with no smoothing: zero entries are
load-bearing for the outlier monitor and the coverage targets.

Because each layer's components are conditioned on the *joint* interval
combination of the previous layer, exact inference works on a chain of
layer-joint mega-variables.  All query operations (marginals, MAP,
evidential update) are taken under the table-product measure normalised
over its support; for fully-observed tables this coincides with plain
forward propagation of the chain.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .discretise import Partition, interval_of
from .features import FeatureMap, fit_feature_map, project_dataset, project
from .model import Dataset, Model, forward, model_digest
from . import discretise as _discretise


class AbstractionError(ValueError):
    """Structurally impossible abstraction request."""


class UnsupportedEvidenceError(ValueError):
    """Evidence with zero probability under the fitted network."""


@dataclass(frozen=True, order=True)
class NodeRef:
    """One BN node: a feature component of an analysed layer."""

    layer: int  # model layer index
    component: int

    def __repr__(self):
        return f"L{self.layer}.f{self.component}"


@dataclass(frozen=True)
class BNStructure:
    """Node set and (implied complete-bipartite) edge set of the BN."""

    analysed_layers: tuple[int, ...]
    partitions: tuple[tuple[Partition, ...], ...]  # per layer, per component

    def __post_init__(self):
        if len(self.analysed_layers) < 2:
            raise AbstractionError(
                "need at least 2 analysed layers to form any edge"
            )
        if any(a >= b for a, b in zip(self.analysed_layers, self.analysed_layers[1:])):
            raise AbstractionError("analysed layers must be strictly ascending")
        if len(self.partitions) != len(self.analysed_layers):
            raise AbstractionError("one partition tuple per analysed layer required")
        if any(len(ps) == 0 for ps in self.partitions):
            raise AbstractionError("every analysed layer needs >= 1 partition")

    @property
    def layer_count(self) -> int:
        return len(self.analysed_layers)

    def position(self, layer: int) -> int:
        return self.analysed_layers.index(layer)

    def sizes(self, pos: int) -> tuple[int, ...]:
        """Interval counts m of every component at layer position pos."""
        return tuple(p.size for p in self.partitions[pos])

    def combo_count(self, pos: int) -> int:
        return int(np.prod(self.sizes(pos)))

    def nodes(self) -> list[NodeRef]:
        return [
            NodeRef(layer, j)
            for pos, layer in enumerate(self.analysed_layers)
            for j in range(len(self.partitions[pos]))
        ]

    def node_count(self) -> int:
        return sum(len(ps) for ps in self.partitions)

    def edge_count(self) -> int:
        widths = [len(ps) for ps in self.partitions]
        return sum(a * b for a, b in zip(widths, widths[1:]))

    def edges(self) -> list[tuple[NodeRef, NodeRef]]:
        out = []
        for pos in range(1, self.layer_count):
            for a in range(len(self.partitions[pos - 1])):
                for b in range(len(self.partitions[pos])):
                    out.append((NodeRef(self.analysed_layers[pos - 1], a),
                                NodeRef(self.analysed_layers[pos], b)))
        return out

    def partition_of(self, node: NodeRef) -> Partition:
        return self.partitions[self.position(node.layer)][node.component]


def build_structure(model: Model, feature_maps, partitions) -> BNStructure:
    """Assemble the BN structure for the analysed layers of a model.

    ``feature_maps`` and ``partitions`` are sequences aligned with the
    analysed layers (taken from the feature maps' ``layer`` fields).
    """
    layers = tuple(fm.layer for fm in feature_maps)
    if len(layers) == 0:
        raise AbstractionError("empty analysed-layer list")
    for fm, parts in zip(feature_maps, partitions, strict=True):
        if fm.layer < 0 or fm.layer >= len(model.layers):
            raise AbstractionError(f"analysed layer {fm.layer} outside the model")
        if fm.input_size != model.layers[fm.layer].size:
            raise AbstractionError(
                f"feature map for layer {fm.layer} expects {fm.input_size} neurons, "
                f"layer has {model.layers[fm.layer].size}"
            )
        if len(parts) != fm.components:
            raise AbstractionError(
                f"layer {fm.layer}: {fm.components} components but {len(parts)} partitions"
            )
    return BNStructure(analysed_layers=layers, partitions=tuple(tuple(p) for p in partitions))


@dataclass(frozen=True)
class ProbabilityTables:
    """Empirical counts behind all probability tables.

    ``layer_combo_counts[pos][c]`` counts inputs eliciting joint interval
    combination c at the analysed layer at ``pos`` (combinations are
    C-order raveled over component intervals).  ``pair_counts[pos-1][j]``
    counts (previous-layer combination, own interval) co-occurrences for
    component j of layer position pos >= 1.  Probabilities derive from
    these counts on demand; rows with zero condition count stay all-zero
    and are flagged unobserved.
    """

    layer_combo_counts: tuple[np.ndarray, ...]
    pair_counts: tuple[tuple[np.ndarray, ...], ...]
    sample_count: int

    def marginal_counts(self, structure: BNStructure, j: int) -> np.ndarray:
        """First-analysed-layer node j: counts per own interval."""
        sizes = structure.sizes(0)
        joint = self.layer_combo_counts[0].reshape(sizes)
        axes = tuple(a for a in range(len(sizes)) if a != j)
        return joint.sum(axis=axes) if axes else joint

    def condition_counts(self, pos: int) -> np.ndarray:
        """Observed count per parent combination for layer position pos >= 1."""
        return self.layer_combo_counts[pos - 1]


def fit_tables(structure: BNStructure, dataset_intervals) -> ProbabilityTables:
    """Count empirical frequencies from per-input per-layer interval tuples.

    ``dataset_intervals`` is a sequence (one entry per input) of
    per-analysed-layer tuples of 1-based interval indices.
    """
    n = len(dataset_intervals)
    if n == 0:
        raise AbstractionError("cannot fit tables on an empty dataset")
    L = structure.layer_count
    combo_ids = np.empty((n, L), dtype=np.int64)
    for i, per_layer in enumerate(dataset_intervals):
        if len(per_layer) != L:
            raise AbstractionError(f"input {i}: expected {L} layer tuples")
        for pos in range(L):
            sizes = structure.sizes(pos)
            ks = tuple(k - 1 for k in per_layer[pos])
            if len(ks) != len(sizes) or any(not 0 <= k < m for k, m in zip(ks, sizes)):
                raise AbstractionError(f"input {i}: interval tuple {per_layer[pos]} "
                                       f"invalid for layer sizes {sizes}")
            combo_ids[i, pos] = np.ravel_multi_index(ks, sizes)

    layer_counts = tuple(
        np.bincount(combo_ids[:, pos], minlength=structure.combo_count(pos))
        for pos in range(L)
    )
    pair_counts = []
    for pos in range(1, L):
        sizes = structure.sizes(pos)
        digits = np.array(np.unravel_index(combo_ids[:, pos], sizes))
        per_comp = []
        for j, m in enumerate(sizes):
            tbl = np.zeros((structure.combo_count(pos - 1), m), dtype=np.int64)
            np.add.at(tbl, (combo_ids[:, pos - 1], digits[j]), 1)
            per_comp.append(tbl)
        pair_counts.append(tuple(per_comp))
    return ProbabilityTables(layer_combo_counts=layer_counts,
                             pair_counts=tuple(pair_counts), sample_count=n)


@dataclass(frozen=True)
class BNAbstraction:
    """Fitted abstraction: structure + tables + the projection pipeline."""

    structure: BNStructure
    tables: ProbabilityTables
    feature_maps: tuple[FeatureMap, ...]
    provenance: dict = field(default_factory=dict)
    epsilon: float = 1e-3

    def nodes(self) -> list[NodeRef]:
        return self.structure.nodes()

    def with_tables(self, tables: ProbabilityTables) -> "BNAbstraction":
        return replace(self, tables=tables)


# --- table views ------------------------------------------------------------

def marginal_table(bn: BNAbstraction, j: int, exact: bool = False):
    """Stored marginal table of first-analysed-layer component j."""
    counts = bn.tables.marginal_counts(bn.structure, j)
    n = bn.tables.sample_count
    if exact:
        return np.array([Fraction(int(c), n) for c in counts], dtype=object)
    return counts / n


def conditional_table(bn: BNAbstraction, pos: int, j: int, exact: bool = False):
    """Conditional table (parent combos x own intervals) at layer position pos."""
    pair = bn.tables.pair_counts[pos - 1][j]
    cond = bn.tables.condition_counts(pos)
    if exact:
        out = np.empty(pair.shape, dtype=object)
        for c in range(pair.shape[0]):
            d = int(cond[c])
            for k in range(pair.shape[1]):
                out[c, k] = Fraction(int(pair[c, k]), d) if d else Fraction(0)
        return out
    with np.errstate(invalid="ignore", divide="ignore"):
        out = pair / cond[:, None]
    out[cond == 0] = 0.0
    return out


def _one(exact):
    return Fraction(1) if exact else 1.0


def _layer_prior(bn: BNAbstraction, exact: bool):
    """BN prior over first-layer combos: product of component marginals."""
    sizes = bn.structure.sizes(0)
    q = np.full(1, _one(exact), dtype=object if exact else np.float64)
    for j in range(len(sizes)):
        mp = marginal_table(bn, j, exact)
        q = (q[:, None] * mp[None, :]).reshape(-1)
    return q


def _transition(bn: BNAbstraction, pos: int, exact: bool):
    """(previous combos x own combos) transition of layer position pos."""
    c_prev = bn.structure.combo_count(pos - 1)
    T = np.full((c_prev, 1), _one(exact), dtype=object if exact else np.float64)
    for j in range(len(bn.structure.sizes(pos))):
        cp = conditional_table(bn, pos, j, exact)
        T = (T[:, :, None] * cp[:, None, :]).reshape(c_prev, -1)
    return T


def _evidence_masks(bn: BNAbstraction, evidence, exact: bool):
    """Per-layer indicator vectors over combos for (node -> interval) fixings."""
    L = bn.structure.layer_count
    masks = [None] * L
    if not evidence:
        return masks
    for node, k in evidence.items():
        pos = bn.structure.position(node.layer)
        sizes = bn.structure.sizes(pos)
        m = sizes[node.component]
        if not 1 <= k <= m:
            raise UnsupportedEvidenceError(
                f"evidence {node}={k} outside 1..{m}")
        digits = np.unravel_index(np.arange(int(np.prod(sizes))), sizes)
        vec = (digits[node.component] == k - 1)
        if masks[pos] is None:
            masks[pos] = vec
        else:
            masks[pos] = masks[pos] & vec
    out = []
    for pos, mask in enumerate(masks):
        if mask is None:
            out.append(None)
        elif exact:
            out.append(np.array([Fraction(int(b)) for b in mask], dtype=object))
        else:
            out.append(mask.astype(np.float64))
    return out


def _chain_messages(bn: BNAbstraction, evidence=None, exact: bool = False):
    """Forward/backward messages over layer-joint combos, with evidence folded.

    Returns (per-layer forward q, per-layer backward r, total mass Z).
    """
    L = bn.structure.layer_count
    masks = _evidence_masks(bn, evidence or {}, exact)
    trans = [_transition(bn, pos, exact) for pos in range(1, L)]

    q = [None] * L
    cur = _layer_prior(bn, exact)
    if masks[0] is not None:
        cur = cur * masks[0]
    q[0] = cur
    for pos in range(1, L):
        cur = np.dot(cur, trans[pos - 1])  # np.dot: works for object dtype too
        if masks[pos] is not None:
            cur = cur * masks[pos]
        q[pos] = cur

    r = [None] * L
    cur = np.full(bn.structure.combo_count(L - 1), _one(exact),
                  dtype=object if exact else np.float64)
    r[L - 1] = cur
    for pos in range(L - 2, -1, -1):
        nxt = r[pos + 1]
        if masks[pos + 1] is not None:
            nxt = nxt * masks[pos + 1]
        r[pos] = np.dot(trans[pos], nxt)

    Z = (q[L - 1] * r[L - 1]).sum()
    return q, r, Z


def _node_vector(structure: BNStructure, w, pos: int, j: int):
    """Marginalise a layer-combo weight vector onto component j."""
    sizes = structure.sizes(pos)
    cube = w.reshape(sizes)
    axes = tuple(a for a in range(len(sizes)) if a != j)
    return cube.sum(axis=axes) if axes else cube


def joint_probability(bn: BNAbstraction, x_intervals, exact: bool = False):
    """Probability of one full interval assignment: the product over all
    nodes of the matching marginal/conditional entries.  Zero whenever an
    entry is zero or a conditioning row was never observed.
    """
    L = bn.structure.layer_count
    if len(x_intervals) != L:
        raise ValueError(f"expected {L} layer tuples")
    total = _one(exact)
    prev_combo = None
    for pos in range(L):
        sizes = bn.structure.sizes(pos)
        ks = tuple(int(k) - 1 for k in x_intervals[pos])
        if len(ks) != len(sizes) or any(not 0 <= k < m for k, m in zip(ks, sizes)):
            raise IndexError(f"interval tuple {x_intervals[pos]} invalid for sizes {sizes}")
        combo = int(np.ravel_multi_index(ks, sizes))
        for j, k in enumerate(ks):
            if pos == 0:
                total = total * marginal_table(bn, j, exact)[k]
            else:
                total = total * conditional_table(bn, pos, j, exact)[prev_combo, k]
        prev_combo = combo
    return total


def marginals(bn: BNAbstraction, exact: bool = False):
    """Per-node interval probabilities under the normalised chain measure.

    Matches brute-force enumeration over all interval combinations; for
    fully-observed tables the first layer reproduces its stored tables
    and deeper layers equal plain forward propagation.
    """
    q, r, Z = _chain_messages(bn, None, exact)
    if (Z == 0) if exact else (Z <= 0.0):
        raise AbstractionError("network carries no probability mass")
    out = {}
    for pos, layer in enumerate(bn.structure.analysed_layers):
        w = q[pos] * r[pos]
        for j in range(len(bn.structure.partitions[pos])):
            vec = _node_vector(bn.structure, w, pos, j)
            out[NodeRef(layer, j)] = vec / Z
    return out


def map_query(bn: BNAbstraction, evidence, query: NodeRef,
              exact: bool = True):
    """Most probable interval of ``query`` given evidence fixings.

    Evidence maps nodes to 1-based interval indices (at most one fixing
    per node).  Ties resolve to the lowest interval index, which is why
    the argmax runs in exact rational arithmetic by default (floats can
    break exact ties either way).
    """
    evidence = dict(evidence or {})
    if query in evidence:
        raise ValueError("query node cannot also carry evidence")
    q, r, Z = _chain_messages(bn, evidence, exact)
    if (Z == 0) if exact else (Z <= 0.0):
        raise UnsupportedEvidenceError("evidence has zero probability")
    pos = bn.structure.position(query.layer)
    vec = _node_vector(bn.structure, q[pos] * r[pos], pos, query.component) / Z
    best = 0
    for k in range(1, len(vec)):
        if vec[k] > vec[best]:
            best = k
    return best + 1, float(vec[best])


def evidential_update(bn: BNAbstraction, evidence, exact: bool = False):
    """Posterior tables of every first-analysed-layer node given evidence
    on downstream nodes (how an observed effect re-weights input features).
    """
    evidence = dict(evidence)
    first = bn.structure.analysed_layers[0]
    if any(node.layer == first for node in evidence):
        raise ValueError("evidence must be on downstream nodes")
    q, r, Z = _chain_messages(bn, evidence, exact)
    if (Z == 0) if exact else (Z <= 0.0):
        raise UnsupportedEvidenceError("evidence has zero probability")
    w = q[0] * r[0]
    return {
        NodeRef(first, j): _node_vector(bn.structure, w, 0, j) / Z
        for j in range(len(bn.structure.partitions[0]))
    }


# --- projection pipeline ----------------------------------------------------

def intervals_for_input(bn: BNAbstraction, model: Model, x):
    """Per-analysed-layer interval tuples elicited by one input."""
    act = forward(model, x)
    out = []
    for pos, fm in enumerate(bn.feature_maps):
        feats = project(fm, act.pre_flat(fm.layer))
        parts = bn.structure.partitions[pos]
        out.append(tuple(interval_of(p, v) for p, v in zip(parts, feats)))
    return out


def dataset_intervals(structure: BNStructure, feature_maps, model: Model, inputs):
    """Interval tuples for every input of a dataset (vectorised per layer)."""
    feats_per_layer = _dataset_features(feature_maps, model, inputs)
    n = len(inputs)
    out = [[None] * structure.layer_count for _ in range(n)]
    for pos, feats in enumerate(feats_per_layer):
        parts = structure.partitions[pos]
        cols = []
        for j, p in enumerate(parts):
            cols.append(np.searchsorted(np.asarray(p.boundaries), feats[:, j],
                                        side="right") + 1)
        for i in range(n):
            out[i][pos] = tuple(int(c[i]) for c in cols)
    return [tuple(per_layer) for per_layer in out]


def _dataset_features(feature_maps, model: Model, inputs):
    """Feature values per analysed layer for every input."""
    preacts = {fm.layer: [] for fm in feature_maps}
    for x in inputs:
        act = forward(model, x)
        for fm in feature_maps:
            preacts[fm.layer].append(act.pre_flat(fm.layer))
    return [project_dataset(fm, np.asarray(preacts[fm.layer])) for fm in feature_maps]


@dataclass(frozen=True)
class AbstractionConfig:
    """Which layers to analyse and how to extract/discretise features."""

    analysed_layers: tuple[int, ...]
    technique: str = "pca"
    components: int = 2
    strategy: str = "quantile"  # uniform | quantile | kde
    bins: int = 3
    extended: bool = True
    d_min: float | None = None
    bandwidth: float | None = None
    seed: int = 0
    epsilon: float = 1e-3

    def as_dict(self) -> dict:
        return {
            "analysed_layers": [int(x) for x in self.analysed_layers],
            "technique": str(self.technique),
            "components": int(self.components),
            "strategy": str(self.strategy),
            "bins": int(self.bins),
            "extended": bool(self.extended),
            "d_min": None if self.d_min is None else float(self.d_min),
            "bandwidth": None if self.bandwidth is None else float(self.bandwidth),
            "seed": int(self.seed),
            "epsilon": float(self.epsilon),
        }


def dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.inputs).tobytes())
    if ds.labels is not None:
        h.update(np.ascontiguousarray(ds.labels).tobytes())
    return h.hexdigest()


def _discretise_component(values, cfg: AbstractionConfig) -> Partition:
    if cfg.strategy == "uniform":
        return _discretise.discretise_kbins_uniform(values, cfg.bins, cfg.extended)
    if cfg.strategy == "quantile":
        return _discretise.discretise_kbins_quantile(values, cfg.bins, cfg.extended)
    if cfg.strategy == "kde":
        return _discretise.discretise_density(values, cfg.d_min, cfg.bandwidth)
    raise AbstractionError(f"unknown discretisation strategy {cfg.strategy!r}")


def _fit_with_fallback(technique, X, t, seed, layer):
    """Lower the component count on rank deficiency, with a warning.

    Zero variance (rank 0) still propagates: no feature map exists.
    """
    from .features import FeatureFitError
    import warnings as _warnings
    while True:
        try:
            return fit_feature_map(technique, X, t, rng_seed=seed, layer=layer)
        except FeatureFitError as e:
            if "rank" not in str(e) or t <= 1:
                raise
            _warnings.warn(f"layer {layer}: {e}; lowering to {t - 1} components")
            t -= 1


def fit_abstraction(model: Model, dataset: Dataset, cfg: AbstractionConfig) -> BNAbstraction:
    """Full pipeline: fit feature maps, discretise, and count tables."""
    if len(dataset) == 0:
        raise AbstractionError("cannot abstract over an empty dataset")
    for layer in cfg.analysed_layers:
        if not 0 <= layer < len(model.layers):
            raise AbstractionError(f"analysed layer {layer} outside the model")

    preacts = {layer: [] for layer in cfg.analysed_layers}
    for x in dataset.inputs:
        act = forward(model, x)
        for layer in cfg.analysed_layers:
            preacts[layer].append(act.pre_flat(layer))

    feature_maps = []
    partitions = []
    for pos, layer in enumerate(cfg.analysed_layers):
        X = np.asarray(preacts[layer])
        t = min(cfg.components, min(X.shape))
        fm = _fit_with_fallback(cfg.technique, X, t, cfg.seed + pos, layer)
        feats = project_dataset(fm, X)
        parts = [
            _discretise_component(feats[:, j], cfg).at(layer, j)
            for j in range(fm.components)
        ]
        feature_maps.append(fm)
        partitions.append(tuple(parts))

    structure = build_structure(model, feature_maps, partitions)
    tuples = dataset_intervals(structure, feature_maps, model, dataset.inputs)
    tables = fit_tables(structure, tuples)
    provenance = {
        "model_sha256": model_digest(model),
        "dataset_sha256": dataset_digest(dataset),
        "config": cfg.as_dict(),
        "config_sha256": hashlib.sha256(
            json.dumps(cfg.as_dict(), sort_keys=True).encode()).hexdigest(),
    }
    return BNAbstraction(structure=structure, tables=tables,
                         feature_maps=tuple(feature_maps),
                         provenance=provenance, epsilon=cfg.epsilon)


def refit_tables(bn: BNAbstraction, model: Model, inputs) -> BNAbstraction:
    """Same structure and projections, tables re-counted on new inputs."""
    tuples = dataset_intervals(bn.structure, bn.feature_maps, model, inputs)
    return bn.with_tables(fit_tables(bn.structure, tuples))


def with_added_input(bn: BNAbstraction, intervals) -> BNAbstraction:
    """Tables incremented for one more input (functional update).

    Equivalent to a full refit on the grown dataset: fitting is pure
    counting, so incrementing the elicited cells is exact.
    """
    L = bn.structure.layer_count
    combo = []
    for pos in range(L):
        sizes = bn.structure.sizes(pos)
        ks = tuple(k - 1 for k in intervals[pos])
        combo.append(int(np.ravel_multi_index(ks, sizes)))
    layer_counts = []
    for pos, counts in enumerate(bn.tables.layer_combo_counts):
        c = counts.copy()
        c[combo[pos]] += 1
        layer_counts.append(c)
    pair_counts = []
    for pos in range(1, L):
        sizes = bn.structure.sizes(pos)
        digits = np.unravel_index(combo[pos], sizes)
        per_comp = []
        for j, tbl in enumerate(bn.tables.pair_counts[pos - 1]):
            t = tbl.copy()
            t[combo[pos - 1], digits[j]] += 1
            per_comp.append(t)
        pair_counts.append(tuple(per_comp))
    tables = ProbabilityTables(layer_combo_counts=tuple(layer_counts),
                               pair_counts=tuple(pair_counts),
                               sample_count=bn.tables.sample_count + 1)
    return bn.with_tables(tables)


# --- runtime monitors ---------------------------------------------------------

@dataclass(frozen=True)
class MonitorVerdict:
    kind: str  # "outlier" | "in_distribution"
    joint_probability: float
    combination: tuple[tuple[int, ...], ...]

    @property
    def is_outlier(self) -> bool:
        return self.kind == "outlier"


def monitor_outlier(bn: BNAbstraction, model: Model, x) -> MonitorVerdict:
    """Flag an input whose interval combination has zero fitted probability."""
    combo = intervals_for_input(bn, model, x)
    p = joint_probability(bn, combo, exact=True)
    return MonitorVerdict(kind="outlier" if p == 0 else "in_distribution",
                          joint_probability=float(p),
                          combination=tuple(combo))


@dataclass(frozen=True)
class ShiftReport:
    """Per-node table distance between a fitted BN and an operational refit.

    Distances are total variation per table row, maximised over rows
    observed in both fits; rows observed on only one side are tallied
    separately.
    """

    node_distance: dict
    global_distance: float
    flagged: tuple
    new_rows: int
    vanished_rows: int
    threshold: float
    operational_count: int


def _row_tv(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=np.float64)
                              - np.asarray(q, dtype=np.float64)).sum())


def monitor_shift(bn: BNAbstraction, model: Model, operational: Dataset,
                  threshold: float = 0.1) -> ShiftReport:
    """Refit tables on operational data and compare them row by row."""
    if len(operational) == 0:
        raise AbstractionError("operational dataset is empty")
    op = refit_tables(bn, model, operational.inputs)

    node_distance = {}
    flagged = []
    new_rows = vanished_rows = 0
    for pos, layer in enumerate(bn.structure.analysed_layers):
        for j in range(len(bn.structure.partitions[pos])):
            node = NodeRef(layer, j)
            if pos == 0:
                d = _row_tv(marginal_table(bn, j), marginal_table(op, j))
                node_distance[node] = d
                if d > threshold:
                    flagged.append((node, None, d))
                continue
            base_cp = conditional_table(bn, pos, j)
            op_cp = conditional_table(op, pos, j)
            base_obs = bn.tables.condition_counts(pos) > 0
            op_obs = op.tables.condition_counts(pos) > 0
            if j == 0:
                new_rows += int(np.sum(op_obs & ~base_obs))
                vanished_rows += int(np.sum(base_obs & ~op_obs))
            worst = 0.0
            for c in np.nonzero(base_obs & op_obs)[0]:
                d = _row_tv(base_cp[c], op_cp[c])
                worst = max(worst, d)
                if d > threshold:
                    flagged.append((node, int(c), d))
            node_distance[node] = worst
    global_distance = max(node_distance.values()) if node_distance else 0.0
    return ShiftReport(node_distance=node_distance, global_distance=global_distance,
                       flagged=tuple(flagged), new_rows=new_rows,
                       vanished_rows=vanished_rows, threshold=threshold,
                       operational_count=len(operational))
