"""Command-line interface.

Exit codes: 0 success, 2 validation failure (arguments, spec files, data
files), 3 property/acceptance check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .. import checks
from ..graph import knn_geometric, load_coords, normalize_gso, save_edge_list, sbm_generate
from .runners import SpecError, default_spec, resolve_spec, run_experiment, run_sweep

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CHECK_FAILED = 3

EXPERIMENTS = ("source_loc", "consensus", "regression", "recsys")


def _load_spec_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: malformed JSON at line {exc.lineno}, "
                        f"column {exc.colno}: {exc.msg}") from exc


def _parse_set(values) -> dict:
    out = {}
    for item in values or []:
        if "=" not in item:
            raise SpecError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _apply_dotted(spec: dict, dotted: dict) -> dict:
    for key, value in dotted.items():
        node = spec
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise SpecError(f"cannot set {key!r}: {part!r} is not an object")
        node[parts[-1]] = value
    return spec


def _build_spec(args) -> dict:
    raw = _load_spec_file(args.spec) if args.spec else {}
    if getattr(args, "experiment", None):
        raw.setdefault("experiment", args.experiment)
        if raw["experiment"] != args.experiment:
            raise SpecError(f"spec file is for {raw['experiment']!r}, "
                            f"command says {args.experiment!r}")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.paper_scale:
        raw["paper_scale"] = True
    _apply_dotted(raw, _parse_set(args.set))
    return resolve_spec(raw)


def _out_dir(args, spec: dict) -> Path:
    if args.out:
        return Path(args.out)
    if spec.get("out_dir"):
        return Path(spec["out_dir"])
    root = os.environ.get("GRAPHADAPT_OUT", "runs")
    return Path(root) / spec["experiment"]


def _cmd_gen_graph(args) -> int:
    if args.kind == "sbm":
        graph, labels = sbm_generate(args.n, args.communities, args.p, args.q,
                                     seed=args.seed)
    else:
        if not args.coords:
            raise SpecError("knn graphs need --coords FILE")
        graph = knn_geometric(load_coords(args.coords), args.k)
        labels = None
    if args.normalize:
        graph = normalize_gso(graph)
    save_edge_list(graph, args.out)
    print(f"wrote {graph.n} nodes / {graph.m} edges to {args.out}")
    if labels is not None and args.labels_out:
        Path(args.labels_out).write_text(
            "\n".join(f"{i} {c}" for i, c in enumerate(labels)) + "\n")
        print(f"wrote community labels to {args.labels_out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    spec = _build_spec(args)
    out = _out_dir(args, spec)
    run_experiment(spec, out)
    print(f"{spec['experiment']}: outputs in {out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec = _build_spec(args)
    try:
        values = json.loads(args.values)
    except json.JSONDecodeError as exc:
        raise SpecError(f"--values must be a JSON array: {exc}") from exc
    if not isinstance(values, list) or not values:
        raise SpecError("--values must be a nonempty JSON array")
    out = _out_dir(args, spec)
    dirs = run_sweep(spec, args.axis, values, out, threads=args.threads)
    for d in dirs:
        print(f"sweep point done: {d}")
    return EXIT_OK


def _check_line(name: str, ok: bool, detail: str) -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def _cmd_proptest(args) -> int:
    ok = True
    eq = checks.equivariance_report(seed=args.seed, graphs=4, trials=8)
    for kind, dev in eq.items():
        ok &= _check_line(f"equivariance {kind}", dev <= 1e-9, f"max dev {dev:.3e}")
    lip = checks.lipschitz_report(seed=args.seed, pairs=2000)
    ok &= _check_line("lipschitz ga_max", lip.violations == 0,
                      f"{lip.pairs} pairs, {lip.violations} violations, "
                      f"max excess {lip.max_excess:.3e}")
    ker = checks.kernel_unit_report(seed=args.seed)
    ok &= _check_line("kernel units", ker.unit_error <= 1e-15
                      and 0.0 < ker.min_value and ker.max_value <= 1.0,
                      f"unit err {ker.unit_error:.2e}, range "
                      f"[{ker.min_value:.3e}, {ker.max_value:.3e}]")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_gradcheck(args) -> int:
    ok = True
    reports = checks.gradcheck_report(seed=args.seed)
    for kind, err in reports.items():
        tol = 1e-5 if kind in ("relu", "ga_kernel") else 1e-4
        ok &= _check_line(f"gradcheck {kind}", err <= tol,
                          f"max rel err {err:.3e} (tol {tol:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_distcheck(args) -> int:
    rep = checks.distributed_report(seed=args.seed)
    ok = _check_line("distributed equivalence", rep.max_deviation <= 1e-9,
                     f"{rep.runs} runs, max |dev| {rep.max_deviation:.3e}")
    ok &= _check_line("message accounting", rep.count_mismatches == 0,
                      f"{rep.count_mismatches} formula mismatches")
    ok &= _check_line("multi-hop localized rejected",
                      rep.rejects_multihop_localized, "NotDistributableError raised")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphadapt",
        description="Graph-adaptive activation functions: experiments and checks")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-graph", help="generate a graph and write its edge list")
    g.add_argument("--kind", choices=("sbm", "knn"), default="sbm")
    g.add_argument("--n", type=int, default=40)
    g.add_argument("--communities", type=int, default=4)
    g.add_argument("--p", type=float, default=0.8)
    g.add_argument("--q", type=float, default=0.1)
    g.add_argument("--coords", help="coordinates file (`i x y` per line) for knn")
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--normalize", action="store_true")
    g.add_argument("--out", required=True)
    g.add_argument("--labels-out")
    g.set_defaults(func=_cmd_gen_graph)

    def add_spec_flags(p):
        p.add_argument("--spec", help="JSON spec file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paper-scale", action="store_true")
        p.add_argument("--out", help="output directory "
                                     "(default $GRAPHADAPT_OUT/<experiment>)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted spec override, value parsed as JSON")

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("experiment", choices=EXPERIMENTS)
    add_spec_flags(r)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run one experiment per axis value")
    s.add_argument("experiment", choices=EXPERIMENTS)
    add_spec_flags(s)
    s.add_argument("--axis", required=True, help="dotted spec path to vary")
    s.add_argument("--values", required=True, help="JSON array of axis values")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=_cmd_sweep)

    for name, fn in (("proptest", _cmd_proptest), ("gradcheck", _cmd_gradcheck),
                     ("distcheck", _cmd_distcheck)):
        c = sub.add_parser(name, help=f"run the {name} suite")
        c.add_argument("--seed", type=int, default=0)
        c.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
