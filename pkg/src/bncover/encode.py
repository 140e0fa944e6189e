"""Symbolic encoding of a network evaluation as linear constraints.

The encoding is concolic: non-linear layer behaviours (ReLU phases,
max-pooling selections) are fixed to those exhibited by a concrete
candidate input, which makes every constraint linear and exact for that
behaviour pattern.  Strict inequalities are realised with a small slack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretise import Partition
from .features import FeatureMap
from .lp import STRICT_SLACK, LinearConstraint, LPProblem
from .model import Activations, Model, _maxpool_windows, forward


class VariablePool:
    """Sequential integer ids for named LP variables."""

    def __init__(self):
        self.names: list[str] = []
        self._index: dict[str, int] = {}

    def new(self, name: str) -> int:
        if name in self._index:
            raise ValueError(f"variable {name} already exists")
        vid = len(self.names)
        self.names.append(name)
        self._index[name] = vid
        return vid

    def __len__(self):
        return len(self.names)


@dataclass
class EncodedNetwork:
    """Constraints plus the variable layout of an encoded evaluation."""

    pool: VariablePool
    constraints: list[LinearConstraint]
    input_vars: np.ndarray                  # flat input-neuron variable ids
    pre_vars: dict = field(default_factory=dict)   # layer -> flat ids of values before activation
    post_vars: dict = field(default_factory=dict)  # layer -> flat ids after activation
    acts: Activations | None = None

    def add(self, coeffs, relation, rhs, tag):
        self.constraints.append(LinearConstraint(
            coeffs=dict(coeffs), relation=relation, rhs=float(rhs), tag=tag))


def encode_network(model: Model, x, upto: int, relu_mode: str = "fixed") -> EncodedNetwork:
    """Constraints for layers 0..upto, with behaviours fixed from ``x``.

    relu_mode "fixed" pins each ReLU neuron to the phase it exhibits on
    x ({n = nh, nh >= 0} or {n = 0, nh <= 0}); "relaxed" uses the loose
    pair {n >= nh, n >= 0}, which admits assignments that no actual
    evaluation produces and exists for comparison only.
    """
    if not 0 <= upto < len(model.layers):
        raise ValueError(f"layer index {upto} outside the model")
    if relu_mode not in ("fixed", "relaxed"):
        raise ValueError(f"unknown relu mode {relu_mode!r}")
    acts = forward(model, x)
    pool = VariablePool()
    enc = EncodedNetwork(pool=pool, constraints=[], input_vars=None, acts=acts)

    lo, hi = model.input_domain
    xin = np.array([pool.new(f"x{k}") for k in range(model.input_size)])
    enc.input_vars = xin
    for v in xin:
        enc.add({int(v): 1.0}, "ge", lo, "input_box")
        enc.add({int(v): 1.0}, "le", hi, "input_box")

    prev_post = xin
    for li in range(upto + 1):
        layer = model.layers[li]
        size = layer.size
        if layer.kind == "flatten":
            pre = np.array([pool.new(f"nh{li}_{j}") for j in range(size)])
            for j in range(size):
                enc.add({int(pre[j]): 1.0, int(prev_post[j]): -1.0}, "eq", 0.0,
                        "network")
        elif layer.kind == "dense":
            pre = np.array([pool.new(f"nh{li}_{j}") for j in range(size)])
            W, b = layer.weights, layer.bias
            for j in range(size):
                coeffs = {int(pre[j]): 1.0}
                for k in np.nonzero(W[j])[0]:
                    coeffs[int(prev_post[k])] = -float(W[j, k])
                enc.add(coeffs, "eq", float(b[j]), "network")
        elif layer.kind == "conv2d":
            pre = np.array([pool.new(f"nh{li}_{j}") for j in range(size)])
            _encode_conv(enc, layer, pre, prev_post)
        elif layer.kind == "maxpool2d":
            pre = np.array([pool.new(f"nh{li}_{j}") for j in range(size)])
            encode_maxpool(enc, model, li, pre, prev_post)
        enc.pre_vars[li] = pre

        if layer.activation == "relu":
            post = np.array([pool.new(f"n{li}_{j}") for j in range(size)])
            flat_pre_vals = acts.pre_flat(li)
            for j in range(size):
                if relu_mode == "relaxed":
                    enc.add({int(post[j]): 1.0, int(pre[j]): -1.0}, "ge", 0.0,
                            "relu_phase")
                    enc.add({int(post[j]): 1.0}, "ge", 0.0, "relu_phase")
                elif flat_pre_vals[j] >= 0.0:
                    enc.add({int(post[j]): 1.0, int(pre[j]): -1.0}, "eq", 0.0,
                            "relu_phase")
                    enc.add({int(pre[j]): 1.0}, "ge", 0.0, "relu_phase")
                else:
                    enc.add({int(post[j]): 1.0}, "eq", 0.0, "relu_phase")
                    enc.add({int(pre[j]): 1.0}, "le", 0.0, "relu_phase")
        else:
            # softmax is never encoded (targets live on pre-activation
            # values); layers without activation alias post to pre
            post = pre
        enc.post_vars[li] = post
        prev_post = post
    return enc


def _encode_conv(enc: EncodedNetwork, layer, pre, prev_post):
    kh, kw, cin, cout = layer.weights.shape
    h, w, _ = layer.input_shape
    oh, ow, _ = layer.output_shape
    sh, sw = layer.stride
    in_flat = np.arange(h * w * cin).reshape(h, w, cin)
    for oy in range(oh):
        for ox in range(ow):
            patch = in_flat[oy * sh : oy * sh + kh, ox * sw : ox * sw + kw, :]
            for co in range(cout):
                j = (oy * ow + ox) * cout + co
                coeffs = {int(pre[j]): 1.0}
                kw_flat = layer.weights[:, :, :, co].ravel()
                for idx, wv in zip(patch.ravel(), kw_flat):
                    if wv != 0.0:
                        coeffs[int(prev_post[idx])] = coeffs.get(
                            int(prev_post[idx]), 0.0) - float(wv)
                enc.add(coeffs, "eq", float(layer.bias[co]), "network")


def encode_maxpool(enc: EncodedNetwork, model: Model, li: int, pre, prev_post):
    """Selection constraints reproducing the pooling behaviour of the seed.

    Selected window entries become equalities; every other entry must
    stay strictly below (realised with the strictness slack).
    """
    layer = model.layers[li]
    if layer.kind != "maxpool2d":
        raise ValueError(f"layer {li} is {layer.kind}, not maxpool2d")
    prev_vals = (enc.acts.post_flat(li - 1) if li > 0
                 else enc.acts.input.ravel())
    out_vals = enc.acts.pre_flat(li)
    for j, window in _maxpool_windows(layer.input_shape, layer.pool, layer.stride):
        selected = prev_vals[window] == out_vals[j]
        for k, sel in zip(window, selected):
            if sel:
                enc.add({int(pre[j]): 1.0, int(prev_post[k]): -1.0}, "eq", 0.0,
                        "maxpool_phase")
            else:
                enc.add({int(pre[j]): 1.0, int(prev_post[k]): -1.0}, "ge",
                        STRICT_SLACK, "maxpool_phase")


def _feature_row(fm: FeatureMap, component: int, pre_vars) -> dict:
    col = fm.W[:, component]
    scale = fm.scale
    coeffs = {}
    for u in np.nonzero(col)[0]:
        c = float(col[u]) if scale is None else float(col[u] / scale[u])
        coeffs[int(pre_vars[u])] = c
    return coeffs


def encode_target(enc: EncodedNetwork, fm: FeatureMap, partition: Partition,
                  k: int, component: int | None = None) -> None:
    """Bound a feature component of the encoded layer into interval k.

    The right-open upper bound becomes <= ub - slack; infinite bounds
    are omitted.
    """
    j = component if component is not None else partition.component
    if j is None:
        raise ValueError("target component not specified")
    lb, ub = partition.bounds(k)
    pre = enc.pre_vars[fm.layer]
    coeffs = _feature_row(fm, j, pre)
    if not coeffs:
        raise ValueError("feature component has an empty coefficient row")
    b = float(fm.B[j])
    if np.isfinite(lb):
        enc.add(coeffs, "ge", lb - b, "target")
    if np.isfinite(ub):
        enc.add(coeffs, "le", ub - b - STRICT_SLACK, "target")


def encode_replication(enc: EncodedNetwork, fm: FeatureMap,
                       excluded_component: int) -> None:
    """Pin every non-targeted feature component of the layer to the value
    the seed induces, to counter projection imprecision."""
    pre = enc.pre_vars[fm.layer]
    seed_feats = _project_preact(fm, enc.acts.pre_flat(fm.layer))
    for j in range(fm.components):
        if j == excluded_component:
            continue
        coeffs = _feature_row(fm, j, pre)
        enc.add(coeffs, "eq", float(seed_feats[j] - fm.B[j]), "replication")


def _project_preact(fm: FeatureMap, v: np.ndarray) -> np.ndarray:
    if fm.scale is not None:
        v = v / fm.scale
    return v @ fm.W + fm.B


def add_objective(enc: EncodedNetwork, x) -> int:
    """Distance variable d with |input_k - x_k| <= d links; returns d's id."""
    d = enc.pool.new("d")
    x0 = np.asarray(x, dtype=np.float64).ravel()
    for k, v in enumerate(enc.input_vars):
        enc.add({int(v): 1.0, d: -1.0}, "le", float(x0[k]), "objective_link")
        enc.add({int(v): 1.0, d: 1.0}, "ge", float(x0[k]), "objective_link")
    return d


def as_problem(enc: EncodedNetwork, objective_var: int) -> LPProblem:
    return LPProblem(nvars=len(enc.pool), constraints=list(enc.constraints),
                     objective={objective_var: 1.0}, names=list(enc.pool.names))


def seed_problem(model: Model, x, upto: int, relu_mode: str = "fixed") -> LPProblem:
    """Network encoding plus objective, no target: the seed itself is an
    optimal solution with objective zero."""
    enc = encode_network(model, x, upto, relu_mode)
    d = add_objective(enc, x)
    return as_problem(enc, d)
