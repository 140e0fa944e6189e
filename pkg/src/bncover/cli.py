"""Command-line pipeline: abstract, coverage, infer, monitor, concolic, inspect.

Option precedence is flags > config file (--config, JSON with keys named
after the long flags) > built-in defaults.  Exit codes: 0 success, 1
domain errors (infeasible queries, bad evidence), 2 usage errors
(missing files, malformed arguments).  All artifacts are written
atomically; reports embed the model/dataset/config hashes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import coverage as cov
from . import formats
from .bayesnet import (AbstractionConfig, NodeRef, UnsupportedEvidenceError,
                       evidential_update, fit_abstraction, map_query,
                       marginals, monitor_outlier, monitor_shift, refit_tables)
from .concolic import ConcolicConfig, SeedClassificationError, run
from .model import Dataset

DEFAULTS = {
    "technique": "pca",
    "components": 2,
    "discr": "quantile",
    "bins": 3,
    "extended": True,
    "dmin": None,
    "bandwidth": None,
    "seed": 0,
    "epsilon": 1e-3,
    "iters": 100,
    "oracle_linf": 0.3,
    "replication": "on",
    "improve_filter": "on",
    "criterion": "bfc",
    "backend": "auto",
    "threshold": 0.1,
    "mode": "map",
    "index": None,
}


class UsageError(Exception):
    """Bad invocation: wrong flags, missing files."""


class DomainError(Exception):
    """Valid invocation that cannot be satisfied."""


def _need_file(path, what: str) -> str:
    if path is None:
        raise UsageError(f"missing required {what}")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _merge(args, config: dict, key: str):
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def _load_config(path):
    if path is None:
        return {}
    _need_file(path, "config file")
    with open(path, "r", encoding="utf-8") as f:
        try:
            cfg = json.load(f)
        except ValueError as e:
            raise UsageError(f"malformed config file: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _provenance_lines(**hashes) -> list[str]:
    return [f"# {k}={v}" for k, v in sorted(hashes.items()) if v is not None]


def _write_csv(path, comment_lines, headers, rows):
    buf = io.StringIO()
    for line in comment_lines:
        buf.write(line + "\n")
    w = csv.writer(buf)
    w.writerow(headers)
    for row in rows:
        w.writerow(row)
    formats.write_atomic(path, buf.getvalue().encode("utf-8"))


def _emit(payload: dict, as_json: bool, text_lines: list[str]):
    if as_json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        for line in text_lines:
            print(line)


def _parse_node(s: str) -> NodeRef:
    try:
        layer, comp = s.split(":")
        return NodeRef(int(layer), int(comp))
    except ValueError as e:
        raise UsageError(f"node must look like LAYER:COMPONENT, got {s!r}") from e


def _parse_evidence(s: str | None) -> dict:
    if not s:
        return {}
    out = {}
    for item in s.split(","):
        try:
            node, k = item.split("=")
        except ValueError as e:
            raise UsageError(f"evidence items look like L:C=K, got {item!r}") from e
        out[_parse_node(node)] = int(k)
    return out


# --- subcommands -------------------------------------------------------------

def cmd_abstract(args, config):
    model = formats.load_model(_need_file(args.model, "model file"))
    dataset = formats.load_dataset(_need_file(args.dataset, "dataset file"))
    if args.layers is None and "layers" not in config:
        raise UsageError("missing --layers")
    layers = args.layers if args.layers is not None else config["layers"]
    acfg = AbstractionConfig(
        analysed_layers=tuple(int(x) for x in str(layers).split(",")),
        technique=_merge(args, config, "technique"),
        components=int(_merge(args, config, "components")),
        strategy=_merge(args, config, "discr"),
        bins=int(_merge(args, config, "bins")),
        extended=bool(_merge(args, config, "extended")),
        d_min=_merge(args, config, "dmin"),
        bandwidth=_merge(args, config, "bandwidth"),
        seed=int(_merge(args, config, "seed")),
        epsilon=float(_merge(args, config, "epsilon")),
    )
    bn = fit_abstraction(model, dataset, acfg)
    out = args.out or config.get("out")
    if out is None:
        raise UsageError("missing --out")
    formats.save_abstraction(bn, out)
    payload = {
        "out": out,
        "nodes": bn.structure.node_count(),
        "edges": bn.structure.edge_count(),
        "sample_count": bn.tables.sample_count,
        "intervals": {str(n): bn.structure.partition_of(n).size for n in bn.nodes()},
        "provenance": bn.provenance,
    }
    _emit(payload, args.json, [
        f"abstraction written to {out}",
        f"nodes: {payload['nodes']}  edges: {payload['edges']}  "
        f"fitted on {payload['sample_count']} inputs",
    ])
    return 0


def _load_bn_for_measure(args, config):
    bn = formats.load_abstraction(_need_file(args.bn, "abstraction file"))
    if getattr(args, "dataset", None):
        model = formats.load_model(_need_file(args.model, "model file (needed to refit)"))
        dataset = formats.load_dataset(_need_file(args.dataset, "dataset file"))
        bn = refit_tables(bn, model, dataset.inputs)
    return bn


def cmd_coverage(args, config):
    bn = _load_bn_for_measure(args, config)
    epsilon = float(_merge(args, config, "epsilon"))
    report = cov.coverage_report(bn, epsilon)
    rows = []
    for node, detail in report.node_detail.items():
        rows.append([str(node), "feature", detail[0], detail[1],
                     f"{detail[0] / detail[1]:.6f}"])
        if len(detail) == 4:
            rows.append([str(node), "dependence", detail[2], detail[3],
                         f"{detail[2] / detail[3]:.6f}"])
    if args.report:
        hashes = {k: v for k, v in bn.provenance.items() if k.endswith("sha256")}
        _write_csv(args.report, _provenance_lines(epsilon=epsilon, **hashes),
                   ["node", "kind", "covered", "total", "ratio"], rows)
    payload = {
        "bfcov": str(report.bfcov), "bfcov_float": float(report.bfcov),
        "bfdcov": str(report.bfdcov), "bfdcov_float": float(report.bfdcov),
        "bfxcov": str(report.bfxcov), "bfxcov_float": float(report.bfxcov),
        "feature_criterion": report.bfcov == 1,
        "dependence_criterion": report.bfdcov == 1,
        "uncovered_feature_targets": len(report.feature_targets),
        "uncovered_dependence_targets": len(report.dependence_targets),
        "epsilon": epsilon,
    }
    _emit(payload, args.json, [
        f"BFCov  = {report.bfcov} ({float(report.bfcov):.4f})",
        f"BFdCov = {report.bfdcov} ({float(report.bfdcov):.4f})",
        f"BFxCov = {report.bfxcov} ({float(report.bfxcov):.4f})",
        f"feature criterion: {'met' if report.bfcov == 1 else 'not met'}; "
        f"dependence criterion: {'met' if report.bfdcov == 1 else 'not met'}",
        f"uncovered: {len(report.feature_targets)} feature, "
        f"{len(report.dependence_targets)} dependence targets",
    ])
    return 0


def cmd_infer(args, config):
    bn = formats.load_abstraction(_need_file(args.bn, "abstraction file"))
    evidence = _parse_evidence(args.evidence)
    mode = _merge(args, config, "mode")
    try:
        if mode == "map":
            if args.query is None:
                raise UsageError("missing --query")
            node = _parse_node(args.query)
            k, p = map_query(bn, evidence, node)
            payload = {"query": str(node), "interval": k, "probability": float(p),
                       "evidence": {str(n): v for n, v in evidence.items()}}
            _emit(payload, args.json,
                  [f"MAP({node} | evidence) = interval {k}  (p = {float(p):.6f})"])
        elif mode == "evidential":
            if not evidence:
                raise UsageError("evidential mode needs --evidence")
            post = evidential_update(bn, evidence)
            payload = {"posteriors": {str(n): [float(x) for x in v]
                                      for n, v in post.items()}}
            _emit(payload, args.json,
                  [f"{n}: " + " ".join(f"{float(x):.6f}" for x in v)
                   for n, v in post.items()])
        elif mode == "marginals":
            ms = marginals(bn)
            payload = {"marginals": {str(n): [float(x) for x in v]
                                     for n, v in ms.items()}}
            _emit(payload, args.json,
                  [f"{n}: " + " ".join(f"{float(x):.6f}" for x in v)
                   for n, v in ms.items()])
        else:
            raise UsageError(f"unknown inference mode {mode!r}")
    except UnsupportedEvidenceError as e:
        raise DomainError(str(e)) from e
    except ValueError as e:
        raise DomainError(f"bad query or evidence: {e}") from e
    return 0


def cmd_monitor(args, config):
    bn = formats.load_abstraction(_need_file(args.bn, "abstraction file"))
    model = formats.load_model(_need_file(args.model, "model file"))
    dataset = formats.load_dataset(_need_file(args.dataset, "dataset file"))
    mode = args.mode
    if mode == "outlier":
        index = _merge(args, config, "index")
        idxs = range(len(dataset)) if index is None else [int(index)]
        verdicts = [monitor_outlier(bn, model, dataset.inputs[i]) for i in idxs]
        outliers = [i for i, v in zip(idxs, verdicts) if v.is_outlier]
        payload = {"checked": len(verdicts), "outliers": outliers,
                   "joint_probabilities": [v.joint_probability for v in verdicts]}
        _emit(payload, args.json, [
            f"checked {len(verdicts)} inputs: {len(outliers)} outliers",
            *(f"  input {i}: outlier (joint probability 0)" for i in outliers),
        ])
    elif mode == "shift":
        threshold = float(_merge(args, config, "threshold"))
        report = monitor_shift(bn, model, dataset, threshold=threshold)
        payload = {
            "global_distance": report.global_distance,
            "threshold": threshold,
            "node_distance": {str(n): d for n, d in report.node_distance.items()},
            "flagged": [[str(n), c, d] for n, c, d in report.flagged],
            "new_rows": report.new_rows,
            "vanished_rows": report.vanished_rows,
        }
        _emit(payload, args.json, [
            f"global table distance: {report.global_distance:.6f} "
            f"(threshold {threshold})",
            f"flagged rows: {len(report.flagged)}; new rows: {report.new_rows}; "
            f"vanished rows: {report.vanished_rows}",
            *(f"  {n}: {d:.6f}" for n, d in report.node_distance.items()),
        ])
    else:
        raise UsageError(f"unknown monitor mode {mode!r}")
    return 0


def cmd_concolic(args, config):
    model = formats.load_model(_need_file(args.model, "model file"))
    bn = formats.load_abstraction(_need_file(args.bn, "abstraction file"))
    seeds = formats.load_dataset(_need_file(args.seed_set, "seed dataset"))
    out_dir = args.out or config.get("out")
    if out_dir is None:
        raise UsageError("missing --out directory")
    os.makedirs(out_dir, exist_ok=True)
    criterion = {"bfc": "feature", "bfdc": "feature_dependence"}.get(
        _merge(args, config, "criterion"))
    if criterion is None:
        raise UsageError("criterion must be bfc or bfdc")
    ccfg = ConcolicConfig(
        criterion=criterion,
        epsilon=float(_merge(args, config, "epsilon")),
        max_iterations=int(_merge(args, config, "iters")),
        oracle_bound=float(_merge(args, config, "oracle_linf")),
        improvement_filter=_merge(args, config, "improve_filter") == "on",
        replication=_merge(args, config, "replication") == "on",
        backend=_merge(args, config, "backend"),
        seed=int(_merge(args, config, "seed")),
        filter_misclassified=bool(args.filter_misclassified),
        dump_lp_dir=args.dump_lp,
    )
    try:
        state = run(model, bn, seeds, ccfg)
    except SeedClassificationError as e:
        raise DomainError(str(e)) from e

    n_seeds = len(state.inputs) - sum(1 for r in state.records if r.retained)
    generated = state.inputs[n_seeds:]
    if generated:
        formats.save_dataset(
            Dataset(inputs=np.array(generated),
                    labels=np.array(state.labels[n_seeds:])),
            os.path.join(out_dir, "generated.bnd"))
    prov = _provenance_lines(**{k: v for k, v in bn.provenance.items()
                                if k.endswith("sha256")})
    _write_csv(os.path.join(out_dir, "adversarial.csv"), prov,
               ["source_id", "generated_id", "source_label", "new_label", "linf"],
               [[a.source_id, a.generated_id, a.source_label, a.new_label,
                 f"{a.linf:.17g}"] for a in state.adversarials])
    _write_csv(os.path.join(out_dir, "iterations.csv"), prov,
               ["iteration", "target", "probability", "candidate", "lp_status",
                "oracle", "dist_before", "dist_after", "delta", "retained",
                "adversarial", "target_hit", "coverage"],
               [[r.index, "|".join(str(t) for t in r.target_key),
                 f"{r.target_probability:.17g}", r.candidate_id, r.lp_status,
                 r.oracle_passed, r.dist_before, r.dist_after, r.delta,
                 r.retained, r.adversarial, r.target_hit,
                 f"{r.coverage:.17g}"] for r in state.records])
    report = state.report
    _write_csv(os.path.join(out_dir, "coverage.csv"), prov,
               ["metric", "value", "float"],
               [["bfcov", str(report.bfcov), float(report.bfcov)],
                ["bfdcov", str(report.bfdcov), float(report.bfdcov)],
                ["bfxcov", str(report.bfxcov), float(report.bfxcov)]])
    payload = {
        "iterations": len(state.records),
        "retained": sum(1 for r in state.records if r.retained),
        "adversarials": len(state.adversarials),
        "criterion": criterion,
        "criterion_satisfied": state.criterion_satisfied(),
        "coverage_initial": state.coverage_series[0],
        "coverage_final": state.coverage_series[-1],
        "out": out_dir,
    }
    _emit(payload, args.json, [
        f"{payload['iterations']} iterations, {payload['retained']} inputs "
        f"retained, {payload['adversarials']} adversarial",
        f"coverage: {payload['coverage_initial']:.4f} -> "
        f"{payload['coverage_final']:.4f} "
        f"({'criterion met' if payload['criterion_satisfied'] else 'criterion not met'})",
        f"reports in {out_dir}",
    ])
    return 0


def cmd_inspect(args, config):
    path = _need_file(args.path, "input file")
    with open(path, "rb") as f:
        magic = f.read(16).split()[0].decode("utf-8", "replace")
    if magic == formats.MODEL_MAGIC:
        model = formats.load_model(path)
        rows = [
            (i, layer.kind, layer.activation,
             "x".join(str(s) for s in layer.output_shape), layer.parameter_count)
            for i, layer in enumerate(model.layers)
        ]
        payload = {"kind": "model", "layers": [
            {"index": i, "kind": k, "activation": a, "output": o, "parameters": p}
            for i, k, a, o, p in rows]}
        _emit(payload, args.json, [
            f"model: {len(model.layers)} layers, input {model.input_shape}, "
            f"{model.label_count} labels",
            *(f"  [{i}] {k:<10} {a:<8} out {o:<12} params {p}"
              for i, k, a, o, p in rows),
        ])
    elif magic == formats.DATA_MAGIC:
        ds = formats.load_dataset(path)
        payload = {"kind": "dataset", "count": len(ds),
                   "shape": list(ds.inputs.shape[1:]),
                   "labelled": ds.labels is not None}
        _emit(payload, args.json, [
            f"dataset: {len(ds)} inputs of shape {ds.inputs.shape[1:]}, "
            f"labels: {'yes' if ds.labels is not None else 'no'}",
        ])
    elif magic == formats.ABSTRACTION_MAGIC:
        bn = formats.load_abstraction(path)
        shapes = {}
        for node in bn.nodes():
            pos = bn.structure.position(node.layer)
            m = bn.structure.partition_of(node).size
            if pos == 0:
                shapes[str(node)] = [m]
            else:
                shapes[str(node)] = [bn.structure.combo_count(pos - 1), m]
        payload = {"kind": "abstraction",
                   "nodes": bn.structure.node_count(),
                   "edges": bn.structure.edge_count(),
                   "sample_count": bn.tables.sample_count,
                   "table_shapes": shapes,
                   "epsilon": bn.epsilon,
                   "provenance": bn.provenance}
        _emit(payload, args.json, [
            f"abstraction: {payload['nodes']} nodes, {payload['edges']} edges, "
            f"fitted on {payload['sample_count']} inputs",
            *(f"  {n}: table {tuple(s)}" for n, s in shapes.items()),
        ])
    else:
        raise UsageError(f"unrecognised container magic {magic!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bncover",
        description="Bayesian-network abstraction, coverage, monitoring, and "
                    "concolic test generation for feed-forward networks")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("abstract", help="fit a BN abstraction from model + dataset")
    p.add_argument("--model"); p.add_argument("--dataset")
    p.add_argument("--layers", help="comma-separated analysed layer indices")
    p.add_argument("--technique", choices=["pca", "pca_scaled", "ica"])
    p.add_argument("--components", type=int)
    p.add_argument("--discr", choices=["uniform", "quantile", "kde"])
    p.add_argument("--bins", type=int)
    p.add_argument("--extended", action=argparse.BooleanOptionalAction)
    p.add_argument("--dmin", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out")
    common(p)

    p = sub.add_parser("coverage", help="coverage metrics of a fitted abstraction")
    p.add_argument("--bn"); p.add_argument("--model"); p.add_argument("--dataset")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--report", help="CSV report path")
    common(p)

    p = sub.add_parser("infer", help="MAP / evidential / marginal queries")
    p.add_argument("--bn")
    p.add_argument("--mode", choices=["map", "evidential", "marginals"])
    p.add_argument("--query", help="node as LAYER:COMPONENT")
    p.add_argument("--evidence", help="comma-separated L:C=K fixings")
    common(p)

    p = sub.add_parser("monitor", help="outlier / covariate-shift monitoring")
    p.add_argument("--bn"); p.add_argument("--model"); p.add_argument("--dataset")
    p.add_argument("--mode", choices=["outlier", "shift"], required=True)
    p.add_argument("--index", type=int, help="check one input only")
    p.add_argument("--threshold", type=float)
    common(p)

    p = sub.add_parser("concolic", help="coverage-guided test generation")
    p.add_argument("--model"); p.add_argument("--bn")
    p.add_argument("--seed-set", dest="seed_set")
    p.add_argument("--criterion", choices=["bfc", "bfdc"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--oracle-linf", dest="oracle_linf", type=float)
    p.add_argument("--replication", choices=["on", "off"])
    p.add_argument("--improve-filter", dest="improve_filter", choices=["on", "off"])
    p.add_argument("--backend", choices=["auto", "simplex", "highs"])
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-misclassified", action="store_true")
    p.add_argument("--dump-lp", dest="dump_lp", help="directory for LP text dumps")
    p.add_argument("--out")
    common(p)

    p = sub.add_parser("inspect", help="describe a .bnm/.bnd/.bna container")
    p.add_argument("path")
    common(p)
    return ap


COMMANDS = {
    "abstract": cmd_abstract,
    "coverage": cmd_coverage,
    "infer": cmd_infer,
    "monitor": cmd_monitor,
    "concolic": cmd_concolic,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        config = _load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        print(f"bncover: {e}", file=sys.stderr)
        return 2
    except formats.FormatError as e:
        print(f"bncover: {args.command}: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"bncover: {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
