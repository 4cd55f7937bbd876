"""``blanket-lab`` command line interface.

Exit codes: 0 ok, 2 configuration error, 3 runtime error, 4 timeout-dominated.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .config import Option, describe, parse_config
from .errors import BlanketLabError, ConfigError
from .outputs import (RECORD_SCHEMA, _plain, SUMMARY_SCHEMA, plot_ecdf, plot_loglog, read_manifest, sha256,
                      svg_structure, write_csv, write_jsonl, write_manifest)

SCHEMAS = {
    "graph-stats": {"input": Option(str, None, "graph file"),
                    "metric": Option(str, "resistance", "resistance or shortest-path")},
    "tree-sample": {"offspring": Option(str, "poisson1", "poisson1, geometric or a JSON table"),
                    "n": Option(int, 100, "number of edges")},
    "gen-er": {"n": Option(int, 1000, "vertices"), "lam": Option(float, 0.0, "critical window parameter")},
    "gen-config": {"n": Option(int, 1000, "vertices"), "lam": Option(float, 0.0, "window parameter"),
                   "law": Option(dict, {"1": 0.75, "3": 0.25}, "degree law as JSON")},
    "gen-connected": {"m": Option(int, 50, "vertices"), "p": Option(float, 0.02, "edge probability"),
                      "pool_size": Option(int, 1000, "importance-resampling pool")},
    "walk": {"input": Option(str, None, "graph file"), "start": Option(int, 0, "start vertex"),
             "horizon": Option(int, 1000, "number of steps")},
    "blanket": {"input": Option(str, None, "graph file"), "start": Option(int, 0, "start vertex"),
                "epsilon": Option(float, 0.3, "blanket fraction"),
                "replicates": Option(int, 100, "independent walks"),
                "t_max": Option(int, None, "step budget per walk")},
    "excursion-sample": {"zeta": Option(float, 1.0, "length"), "n": Option(int, 1024, "grid intervals")},
    "compare": {"a": Option(str, None, "first quadruple (JSON)"), "b": Option(str, None, "second quadruple"),
                "correspondence": Option(str, None, "JSON list of index pairs; identity when absent"),
                "combine": Option(str, "sum", "sum or max for the J1 terms")},
}


def _experiment_schema():
    from dataclasses import MISSING
    from .experiment_harness import ExperimentPlan
    types = {"sizes": list, "degree_law": dict, "epsilon": float, "lam": float, "t_max_factor": float,
             "max_timeout_fraction": float, "replicates": int, "master_seed": int}
    s = {}
    for name, f in ExperimentPlan.__dataclass_fields__.items():
        default = f.default if f.default is not MISSING else None
        if f.default_factory is not MISSING:
            default = {str(k): v for k, v in f.default_factory().items()}
        s[name] = Option(types.get(name, str), default)
    s["master_seed"] = Option(int, None, "plan seed; --seed wins")
    s["plots"] = Option(bool, True, "write SVG figures")
    return s


def _emit(cfg, records, fields, name="records"):
    """Records to stdout, or to --out with a manifest written last."""
    out = cfg["out"]
    if out is None:
        if cfg["format"] == "jsonl":
            for r in records:
                print(json.dumps(_plain(r), sort_keys=True))
        else:
            w = __import__("csv").DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
            print(f"# schema: {RECORD_SCHEMA}")
            w.writeheader()
            for r in records:
                w.writerow(r)
        return []
    os.makedirs(out, exist_ok=True)
    fname = f"{name}.{cfg['format']}"
    path = os.path.join(out, fname)
    if cfg["format"] == "jsonl":
        write_jsonl(records, path)
    else:
        write_csv(records, fields, path, RECORD_SCHEMA)
    return [fname]


def _finish(cfg, files):
    if cfg["out"] is not None:
        write_manifest(cfg["out"], cfg.to_json(), files)


# ------------------------------------------------------------------ commands

def cmd_graph_stats(cfg):
    from .graph_core import diameter, read_graph
    g = read_graph(cfg["input"])
    rec = {"n_vertices": g.n_vertices, "n_edges": g.n_edges, "total_mass": g.total_mass,
           "is_tree": bool(g.is_tree()), "diameter": diameter(g, cfg["metric"])}
    _finish(cfg, _emit(cfg, [rec], list(rec)))


def cmd_tree_sample(cfg):
    from .tree_gen import depth_first_walk_and_area, sample_conditioned_gw, write_tree
    off = cfg["offspring"]
    if off.strip().startswith("["):
        off = json.loads(off)
    t = sample_conditioned_gw(off, cfg["n"], cfg["seed"])
    rec = {"n_edges": t.n_edges, "height": int(t.depth.max()), "leaves": len(t.leaves()),
           "area": depth_first_walk_and_area(t).area, "seed": cfg["seed"]}
    files = _emit(cfg, [rec], list(rec), "stats")
    if cfg["out"]:
        write_tree(t, os.path.join(cfg["out"], "tree.txt"))
        files.append("tree.txt")
    _finish(cfg, files)


def _graph_out(cfg, g, rec):
    from .graph_core import write_graph
    files = _emit(cfg, [rec], list(rec), "stats")
    if cfg["out"]:
        write_graph(g, os.path.join(cfg["out"], "graph.txt"))
        files.append("graph.txt")
    _finish(cfg, files)


def cmd_gen_er(cfg):
    from .graph_gen import components_with_surplus, sample_er_critical
    g = sample_er_critical(cfg["n"], cfg["lam"], cfg["seed"])
    spec = components_with_surplus(g)
    _graph_out(cfg, g, {"n": cfg["n"], "edges": g.n_edges, "largest": int(spec.sizes[0]),
                        "largest_surplus": int(spec.surpluses[0]), "components": len(spec.sizes)})


def cmd_gen_config(cfg):
    from .graph_gen import components_with_surplus, sample_configuration_model, sample_degrees
    from .rng import derive_seed
    d = sample_degrees({int(k): float(v) for k, v in cfg["law"].items()}, cfg["n"], cfg["seed"],
                       lam=cfg["lam"])
    g = sample_configuration_model(d, derive_seed(cfg["seed"], "pairing"))
    spec = components_with_surplus(g)
    _graph_out(cfg, g, {"n": cfg["n"], "edges": g.n_edges, "largest": int(spec.sizes[0]),
                        "largest_surplus": int(spec.surpluses[0]), "components": len(spec.sizes)})


def cmd_gen_connected(cfg):
    from .graph_gen import sample_connected_gmp
    s = sample_connected_gmp(cfg["m"], cfg["p"], cfg["seed"], cfg["pool_size"])
    _graph_out(cfg, s.graph, {"m": cfg["m"], "edges": s.graph.n_edges, "surplus": s.surplus,
                              "ess": s.ess})


def cmd_walk(cfg):
    from .graph_core import read_graph
    from .walk_engine import run_walk
    g = read_graph(cfg["input"], require_connected=False)
    p = run_walk(g, cfg["start"], cfg["horizon"], cfg["seed"])
    recs = [{"t": i, "vertex": int(v)} for i, v in enumerate(p.steps)]
    _finish(cfg, _emit(cfg, recs, ["t", "vertex"], "walk"))


def cmd_blanket(cfg):
    from .graph_core import read_graph
    from .rng import derive_seed
    from .walk_engine import TooManyTimeouts, blanket_times_batch, default_t_max
    g = read_graph(cfg["input"])
    t_max = cfg["t_max"] or default_t_max(g)
    seeds = [derive_seed(cfg["seed"], cfg["start"], i) for i in range(cfg["replicates"])]
    taus, covers = blanket_times_batch(g, cfg["start"], cfg["epsilon"], seeds, t_max)
    recs = [{"replicate": i, "seed": int(s), "tau_blanket": int(t) if t >= 0 else None,
             "cover_time": int(c) if c >= 0 else None} for i, (s, t, c) in enumerate(zip(seeds, taus, covers))]
    files = _emit(cfg, recs, ["replicate", "seed", "tau_blanket", "cover_time"], "blanket")
    _finish(cfg, files)
    bad = int(np.sum(taus < 0))
    if bad * 2 > len(taus):
        raise TooManyTimeouts(f"{bad} of {len(taus)} walks timed out")


def cmd_excursion_sample(cfg):
    from .excursion_lab import sample_excursion, write_excursion
    e = sample_excursion(cfg["zeta"], cfg["n"], cfg["seed"])
    rec = {"zeta": e.zeta, "N": e.N, "max": float(e.values.max()), "integral": e.integral()}
    files = _emit(cfg, [rec], list(rec), "stats")
    if cfg["out"]:
        write_excursion(e, os.path.join(cfg["out"], "excursion.csv"))
        files.append("excursion.csv")
    _finish(cfg, files)


def cmd_compare(cfg):
    from .metric_compare import Correspondence, dk_upper_bound, identity_correspondence, read_quadruple
    qa, qb = read_quadruple(cfg["a"]), read_quadruple(cfg["b"])
    if cfg["correspondence"]:
        with open(cfg["correspondence"]) as fh:
            c = Correspondence.from_pairs(json.load(fh))
    else:
        c = identity_correspondence(qa.n_points)
    b = dk_upper_bound(qa, qb, c, combine=cfg["combine"])
    rec = b.as_dict()
    _finish(cfg, _emit(cfg, [rec], list(rec), "bound"))


def _plan_from(cfg):
    from .experiment_harness import ExperimentPlan
    kw = {k: cfg[k] for k in ExperimentPlan.__dataclass_fields__}
    if kw["model"] is None or kw["sizes"] is None:
        raise ConfigError("an experiment plan needs 'model' and 'sizes'")
    kw["master_seed"] = cfg.master_seed
    return ExperimentPlan.from_json(kw)


def run_experiment(cfg):
    """Run a plan, write records/summary/figures and the manifest; returns the file list."""
    from .errors import DegenerateFit
    from .experiment_harness import (TooManyTimeouts, censored_values, run_replicates, summary_rows,
                                     fit_scaling, time_scale)
    plan = _plan_from(cfg)
    out = cfg["out"] or "."
    os.makedirs(out, exist_ok=True)
    timings = []
    records = run_replicates(plan, cfg["threads"], timings)
    rows = [r.to_json() for r in records]
    fields = list(rows[0]) if rows else ["model", "size", "replicate", "seed", "start", "n_vertices",
                                         "n_edges", "epsilon", "tau_blanket", "cover_time", "timed_out"]
    files = []
    rec_name = f"records.{cfg['format']}"
    if cfg["format"] == "jsonl":
        write_jsonl(rows, os.path.join(out, rec_name))
    else:
        write_csv(rows, fields, os.path.join(out, rec_name), RECORD_SCHEMA)
    files.append(rec_name)
    summary = summary_rows(plan, records)
    fit = None
    if len(plan.sizes) >= 2:
        try:
            fit = fit_scaling(plan.sizes, [censored_values([r for r in records if r.size == s])
                                           for s in plan.sizes])
        except DegenerateFit:
            fit = None
    for row in summary:
        row["slope"] = fit.slope if fit else None
        row["slope_stderr"] = fit.stderr if fit else None
    write_csv(summary, ["size", "replicates", "timeouts", "median", "q25", "q75", "median_rescaled",
                        "slope", "slope_stderr"], os.path.join(out, "summary.csv"), SUMMARY_SCHEMA)
    files.append("summary.csv")
    write_jsonl(timings, os.path.join(out, "timings.jsonl"))
    files.append("timings.jsonl")
    if cfg.get("plots", True) and records:
        samples = {s: censored_values([r for r in records if r.size == s]) / time_scale(plan.model, s)
                   for s in plan.sizes}
        plot_ecdf(samples, os.path.join(out, "ecdf.svg"))
        files.append("ecdf.svg")
        if fit is not None:
            plot_loglog(fit.sizes, fit.medians, fit.slope, fit.intercept, os.path.join(out, "loglog.svg"))
            files.append("loglog.svg")
    write_manifest(out, cfg.to_json(), files, {"plan": plan.to_json()})
    for row in summary:
        if row["timeouts"] > plan.max_timeout_fraction * row["replicates"]:
            raise TooManyTimeouts(f"{row['timeouts']} of {row['replicates']} replicates timed out "
                                  f"at size {row['size']}")
    return files


def cmd_experiment_run(cfg):
    files = run_experiment(cfg)
    print(json.dumps({"out": cfg["out"] or ".", "files": files}))


def replay(manifest_path, out, threads=1):
    """Re-run the configuration stored in a manifest into ``out``; returns
    (identical, mismatching file names). CSV/JSONL outputs must match byte for
    byte; SVG figures must carry the same sequence of plot elements."""
    man = read_manifest(manifest_path)
    stored = man["config"]
    values = dict(stored["values"])
    values.update(out=out, threads=threads, seed=stored["master_seed"])
    cfg = parse_config("experiment-run", _experiment_schema(), flags=values)
    try:
        run_experiment(cfg)
    except BlanketLabError:
        pass
    bad = []
    for name, info in man["files"].items():
        path = os.path.join(out, name)
        if not os.path.exists(path):
            bad.append(name)
        elif info.get("byte_identical"):
            if sha256(path) != info["sha256"]:
                bad.append(name)
        elif "structure" in info and svg_structure(path) != info["structure"]:
            bad.append(name)
    return not bad, bad


def cmd_experiment_replay(cfg):
    ok, bad = replay(cfg["manifest"], cfg["out"] or "replay", cfg["threads"])
    print(json.dumps({"identical": ok, "mismatched": bad}))
    if not ok:
        raise BlanketLabError(f"replay differs in {bad}")


# -------------------------------------------------------------------- parser

def _add_common(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--config", help="JSON file with option values (flags win)")


def build_parser():
    ap = argparse.ArgumentParser(prog="blanket-lab", description="Random walks, blanket times and "
                                 "critical random graphs.")
    ap.add_argument("--version", action="version", version=f"blanket-lab {__version__}")
    sub = ap.add_subparsers(dest="group", required=True)

    def leaf(parent, name, key, func, positional=()):
        p = parent.add_parser(name, help=SCHEMAS.get(key, {}) and None,
                              epilog="options:\n" + describe(SCHEMAS.get(key, {})),
                              formatter_class=argparse.RawDescriptionHelpFormatter)
        for pos in positional:
            p.add_argument(pos)
        for k, opt in SCHEMAS.get(key, {}).items():
            if k in positional:
                continue
            typ = str if opt.type in (dict, list) else opt.type
            p.add_argument("--" + k.replace("_", "-"), dest=k, type=typ)
        _add_common(p)
        p.set_defaults(func=func, key=key, positional=positional)
        return p

    g = sub.add_parser("graph").add_subparsers(dest="cmd", required=True)
    leaf(g, "stats", "graph-stats", cmd_graph_stats, ("input",))
    t = sub.add_parser("tree").add_subparsers(dest="cmd", required=True)
    leaf(t, "sample", "tree-sample", cmd_tree_sample)
    gen = sub.add_parser("gen").add_subparsers(dest="cmd", required=True)
    leaf(gen, "er", "gen-er", cmd_gen_er)
    leaf(gen, "config", "gen-config", cmd_gen_config)
    leaf(gen, "connected", "gen-connected", cmd_gen_connected)
    leaf(sub, "walk", "walk", cmd_walk, ("input",))
    leaf(sub, "blanket", "blanket", cmd_blanket, ("input",))
    ex = sub.add_parser("excursion").add_subparsers(dest="cmd", required=True)
    leaf(ex, "sample", "excursion-sample", cmd_excursion_sample)
    leaf(sub, "compare", "compare", cmd_compare, ("a", "b"))
    exp = sub.add_parser("experiment").add_subparsers(dest="cmd", required=True)
    run = exp.add_parser("run")
    run.add_argument("plan")
    _add_common(run)
    run.set_defaults(func=cmd_experiment_run, key="experiment-run", positional=())
    rep = exp.add_parser("replay")
    rep.add_argument("manifest")
    _add_common(rep)
    rep.set_defaults(func=cmd_experiment_replay, key="experiment-replay", positional=())
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        flags = {k: v for k, v in vars(args).items()
                 if k not in ("func", "key", "positional", "group", "cmd", "config", "plan", "manifest")}
        if args.key == "experiment-run":
            cfg = parse_config(args.key, _experiment_schema(), flags, file=args.plan)
            if "seed" not in {k for k, v in flags.items() if v is not None}:
                if cfg["master_seed"] is not None:
                    cfg.master_seed = cfg.values["seed"] = int(cfg["master_seed"])
                    cfg.seed_source = "file"
        elif args.key == "experiment-replay":
            cfg = parse_config(args.key, {"manifest": Option(str, None)},
                               dict(flags, manifest=args.manifest), file=args.config)
        else:
            cfg = parse_config(args.key, SCHEMAS[args.key], flags, file=args.config)
        args.func(cfg)
    except BlanketLabError as exc:
        print(f"blanket-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"blanket-lab: IoError: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
