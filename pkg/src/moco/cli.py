"""Command line front end: gen-data, train, solve, bench, inspect.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Every file written starts with ``#`` lines holding the build id and the
resolved configuration, so a run can be repeated from its own output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from .baselines import (HELD_KARP_MAX_N, MIS_EXACT_MAX_N, adam_theta_search, farthest_insertion, gap_percent,
                        held_karp_exact, mis_exact)
from .errors import (ConfigError, CorruptCheckpointError, InvalidInstanceError, InvalidParameterError, ParseError,
                     TrainingError, WrongKindError)
from .es import EsConfig, InstanceDistribution, load_training_state, train, write_log
from .features import feature_manifest
from .gnn import MAGIC, MetaParams, load_params, read_header
from .graph import DIMACS, TSPLIB, Kind, load_instance, read_manifest, save_instance, sparsify_knn, write_manifest
from .kernel import objective, reported_value
from .search import SearchConfig, initialize_theta, parallel_restarts, restart_plan

log = logging.getLogger("moco")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("moco", "adam", "farthest_insertion")


# ---- provenance ---------------------------------------------------------


def build_id() -> str:
    """Version plus a short content hash of the package sources."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"moco-{__version__}+{h.hexdigest()[:12]}"


def header_lines(command: str, config: dict) -> list[str]:
    return [f"build: {build_id()}", f"command: {command}", "config: " + json.dumps(config, sort_keys=True)]


def _with_header(lines, body: str) -> str:
    return "".join(f"# {ln}\n" for ln in lines) + body


def read_csv(path) -> list[dict]:
    """Rows of a CSV written by this tool, skipping the ``#`` header."""
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))


# ---- configuration ------------------------------------------------------

STAGE_SCHEMA = {
    "type": "object",
    "properties": {"K": {"type": "integer", "minimum": 1}, "b": {"type": "integer", "minimum": 2},
                   "n_perturbations": {"type": "integer", "minimum": 2, "multipleOf": 2},
                   "meta_steps": {"type": "integer", "minimum": 0}},
    "required": ["K", "b", "n_perturbations", "meta_steps"],
    "additionalProperties": False,
}
TRAIN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "moco training config",
    "type": "object",
    "properties": {
        "distribution": {
            "type": "object",
            "properties": {"kind": {"enum": ["tsp", "mis"]}, "n_min": {"type": "integer", "minimum": 1},
                           "n_max": {"type": "integer", "minimum": 1},
                           "p": {"type": "number", "minimum": 0, "maximum": 1},
                           "k_nn": {"type": ["integer", "null"], "minimum": 1}},
            "additionalProperties": False,
        },
        "stages": {"type": "array", "items": STAGE_SCHEMA, "minItems": 1},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "meta_lr": {"type": "number", "minimum": 0},
        "lr_schedule": {"enum": ["cosine", "constant"]},
        "warmup_steps": {"type": "integer", "minimum": 0},
        "loss_transform": {"enum": ["identity", "log"]},
        "pair_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "meta_batch": {"type": "integer", "minimum": 1},
        "fixed_pool": {"type": "integer", "minimum": 0},
        "validation_size": {"type": "integer", "minimum": 0},
        "validate_every": {"type": "integer", "minimum": 0},
        "d_hidden": {"type": "integer", "minimum": 1},
        "max_nonfinite_streak": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}
# flags that override top-level training config fields
TRAIN_OVERRIDES = {"seed": int, "sigma": float, "meta_lr": float, "lr_schedule": str, "warmup_steps": int,
                   "loss_transform": str, "pair_clip": float, "meta_batch": int, "fixed_pool": int,
                   "validation_size": int, "validate_every": int, "d_hidden": int}


def load_config_file(path) -> dict:
    """YAML or JSON mapping (JSON is valid YAML)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def validate_train_config(data: dict) -> EsConfig:
    errors = sorted(jsonschema.Draft202012Validator(TRAIN_SCHEMA).iter_errors(data), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}")
    cfg = EsConfig.from_dict(data)
    if cfg.distribution.n_min > cfg.distribution.n_max:
        raise ConfigError("config field distribution/n_min: must not exceed n_max")
    return cfg.validate()


# ---- data ---------------------------------------------------------------


def _instance_paths(dataset) -> tuple[Kind | None, list[Path]]:
    dataset = Path(dataset)
    if not dataset.exists():
        raise FileNotFoundError(f"dataset {dataset} not found")
    if dataset.read_bytes()[:1] == b"#":
        return read_manifest(dataset)
    return None, [dataset]


def load_instances(dataset, k_nn=None):
    kind, paths = _instance_paths(dataset)
    fmt = None if kind is None else (TSPLIB if kind is Kind.TSP else DIMACS)
    out = []
    for p in paths:
        inst = load_instance(p, fmt)
        if inst.kind is Kind.TSP and k_nn:
            inst = sparsify_knn(inst, k_nn)
        out.append(inst)
    names = [p.stem for p in paths]
    return out, names


def load_reference(path) -> dict:
    """``instance,reference`` CSV (header row required)."""
    rows = read_csv(path)
    if not rows or "instance" not in rows[0] or "reference" not in rows[0]:
        raise ParseError(f"reference file {path} needs columns instance,reference", 1)
    return {r["instance"]: float(r["reference"]) for r in rows}


def oracle_value(instance) -> float | None:
    if instance.kind is Kind.TSP and instance.n_nodes <= HELD_KARP_MAX_N:
        return held_karp_exact(instance).objective
    if instance.kind is Kind.MIS and instance.n_nodes <= MIS_EXACT_MAX_N:
        return reported_value(Kind.MIS, mis_exact(instance).objective)
    return None


def _solution_text(kind: Kind, value: float, sol) -> str:
    sol = np.asarray(sol)
    ids = sol if kind is Kind.TSP else np.flatnonzero(sol)
    return f"cost {value!r}\n" + " ".join(str(int(i)) for i in ids) + "\n"


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


# ---- per-instance workers -----------------------------------------------

_WORKER = {}


def _init_worker(ckpt):
    _WORKER["meta"] = load_params(ckpt) if ckpt else None


def _run_method(task):
    method, inst, cfg, adam_lr = task
    meta = _WORKER["meta"]
    t0 = time.perf_counter()
    if method == "farthest_insertion":
        tour = farthest_insertion(inst)
        obj = objective(inst, tour)
        return dict(objective=obj, solution=tour, trajectory=None, n_constructions=1,
                    wall_s=time.perf_counter() - t0)
    if method == "moco":
        res = parallel_restarts(inst, meta, cfg)
    else:
        _, starts = restart_plan(inst, cfg)
        res = adam_theta_search(inst, initialize_theta(inst, meta.init, starts), cfg, lr=adam_lr)
    return dict(objective=res.best_objective, solution=res.best_solution, trajectory=res.trajectory,
                n_constructions=res.n_constructions, wall_s=time.perf_counter() - t0)


def _map(tasks, ckpt, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(ckpt)
        return [_run_method(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(ckpt,)) as ex:
        return list(ex.map(_run_method, tasks))


# ---- commands -----------------------------------------------------------


def cmd_gen_data(args) -> Path:
    if args.n_max is not None and args.kind == "tsp" and args.n_max != args.n:
        raise ConfigError("TSP datasets use a single size; --n-max is for MIS only")
    dist = InstanceDistribution(args.kind, args.n, args.n_max or args.n, p=args.p, k_nn=None)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc}") from None
    ext = ".tsp" if args.kind == "tsp" else ".mis"
    paths = []
    for i in range(args.count):
        inst = dist.sample([args.seed, i])
        p = out / f"{args.kind}_{i:05d}{ext}"
        save_instance(inst, p)
        paths.append(p)
    manifest = out / "dataset.manifest"
    write_manifest(manifest, Kind(args.kind), paths)
    digest = hashlib.sha256(b"".join(p.read_bytes() for p in paths)).hexdigest()
    print(f"wrote {len(paths)} instances to {out} (sha256 {digest[:16]})")
    return manifest


def cmd_train(args):
    data = load_config_file(args.config) if args.config else {}
    init = opt_state = None
    if args.resume:
        init, opt_state = load_training_state(args.resume)
        if not args.config:
            data = dict(init.metadata.get("config", {}))
    for name, typ in TRAIN_OVERRIDES.items():
        val = getattr(args, name, None)
        if val is not None:
            data[name] = typ(val)
    cfg = validate_train_config(data)
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), sort_keys=True, indent=2))
        print("config ok")
        return None
    if init is not None and init.kind is not Kind(cfg.distribution.kind):
        raise WrongKindError(f"resume checkpoint is {init.kind.value}, config trains {cfg.distribution.kind}")
    out = Path(args.out)
    res = train(cfg, out_dir=out, init=init, opt_state=opt_state,
                callback=lambda r: log.info("step %d K=%d loss %.5g", r["step"], r["K"], r["loss_mean"]))
    write_log(out / "train_log.csv", res.log_rows, header_lines("train", cfg.to_dict()))
    print(f"trained {cfg.total_steps} steps; checkpoints in {out}")
    return res


def _search_config(args, meta) -> SearchConfig:
    train_K = args.train_K or meta.metadata.get("train_K")
    cfg = SearchConfig(K=args.K, b=args.b, M=args.M, conditioning_mode=args.conditioning_mode,
                       train_K=train_K, seed=args.seed)
    return cfg.validate()


def _default_k_nn(args, meta):
    if args.k_nn is not None:
        return args.k_nn or None
    return meta.metadata.get("config", {}).get("distribution", {}).get("k_nn")


def _references(args, instances, names):
    refs = dict.fromkeys(names)
    if args.reference:
        given = load_reference(args.reference)
        refs.update({n: given.get(n) for n in names})
    elif not args.no_oracle:
        refs.update({n: oracle_value(i) for n, i in zip(names, instances)})
    missing = [n for n in names if refs[n] is None]
    if missing:
        log.warning("no reference for %d instance(s) (e.g. %s); gaps omitted", len(missing), missing[0])
    return refs


def _check_kinds(meta, instances):
    for inst in instances:
        if inst.kind is not meta.kind:
            raise WrongKindError(f"checkpoint is for {meta.kind.value}, dataset holds {inst.kind.value} instances")


def _resolved(args, **extra) -> dict:
    skip = {"func", "out", "workers", "verbose"}
    d = {k: v for k, v in vars(args).items() if k not in skip}
    d.update(extra)
    return d


def cmd_solve(args) -> Path:
    meta = load_params(args.checkpoint)
    if not isinstance(meta, MetaParams):
        raise CorruptCheckpointError("solve needs a meta-optimizer checkpoint (init and update networks)")
    cfg = _search_config(args, meta)
    k_nn = _default_k_nn(args, meta)
    instances, names = load_instances(args.dataset, k_nn)
    _check_kinds(meta, instances)
    refs = _references(args, instances, names)
    kind = meta.kind
    out = Path(args.out)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    head = header_lines("solve", _resolved(args, train_K=cfg.train_K, k_nn=k_nn))
    results = _map([("moco", i, cfg, None) for i in instances], args.checkpoint, args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance", "n_nodes", "value", "reference", "gap_percent", "n_constructions"])
    sols = []
    for name, inst, r in zip(names, instances, results):
        value = reported_value(kind, r["objective"])
        ref = refs[name]
        gap = None if ref is None else gap_percent(kind, value, ref)
        w.writerow([name, inst.n_nodes, _fmt(value), _fmt(ref), _fmt(gap), r["n_constructions"]])
        sols.append(f"# instance {name}\n" + _solution_text(kind, value, r["solution"]))
        (out / "trajectories" / f"{name}.csv").write_text(
            _with_header(head, r["trajectory"].to_csv(kind)), encoding="utf-8")
    (out / "results.csv").write_text(_with_header(head, buf.getvalue()), encoding="utf-8")
    (out / "solutions.txt").write_text(_with_header(head, "".join(sols)), encoding="utf-8")
    print(f"solved {len(instances)} instances; results in {out / 'results.csv'}")
    return out / "results.csv"


def _plot_curves(path, curves: dict, kind: Kind, head):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "moco"
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, (x, y) in curves.items():
        ax.plot(x, y, label=method, drawstyle="steps-post" if len(x) > 1 else "default",
                marker=None if len(x) > 1 else "o")
    ax.set_xlabel("constructions")
    ax.set_ylabel("mean best tour length" if kind is Kind.TSP else "mean best set size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": "\n".join(head)})
    plt.close(fig)


def cmd_bench(args) -> Path:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise ConfigError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    needs_ckpt = any(m in ("moco", "adam") for m in methods)
    if needs_ckpt and not args.checkpoint:
        raise ConfigError("moco and adam need --checkpoint")
    meta = load_params(args.checkpoint) if args.checkpoint else None
    if needs_ckpt and not isinstance(meta, MetaParams):
        raise CorruptCheckpointError("bench needs a meta-optimizer checkpoint")
    cfg = _search_config(args, meta) if meta is not None else SearchConfig(
        K=args.K, b=args.b, M=args.M, seed=args.seed).validate()
    k_nn = _default_k_nn(args, meta) if meta is not None else (args.k_nn or None)
    instances, names = load_instances(args.dataset, k_nn)
    if meta is not None:
        _check_kinds(meta, instances)
    kind = instances[0].kind
    if "farthest_insertion" in methods and kind is not Kind.TSP:
        raise ConfigError("farthest_insertion only applies to TSP")
    refs = _references(args, instances, names)
    out = Path(args.out)
    head = header_lines("bench", _resolved(args, train_K=cfg.train_K, k_nn=k_nn, methods=methods))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance", "n_nodes", "method", "value", "oracle", "gap_percent", "n_constructions"])
    results = {}
    for m in methods:
        results[m] = _map([(m, i, cfg, args.adam_lr) for i in instances], args.checkpoint, args.workers)
    curves = {}
    for m in methods:
        tdir = out / "trajectories" / m
        if m != "farthest_insertion":
            tdir.mkdir(parents=True, exist_ok=True)
        for name, r in zip(names, results[m]):
            if r["trajectory"] is not None:
                (tdir / f"{name}.csv").write_text(_with_header(head, r["trajectory"].to_csv(kind)), encoding="utf-8")
        vals = np.array([reported_value(kind, r["objective"]) for r in results[m]])
        if m == "farthest_insertion":
            curves[m] = (np.array([1]), np.array([vals.mean()]))
        else:
            per_k = np.array([[reported_value(kind, r["trajectory"].best_at(k)) for k in range(cfg.K)]
                              for r in results[m]])
            curves[m] = ((np.arange(cfg.K) + 1) * cfg.b * cfg.M, per_k.mean(0))
    for j, (name, inst) in enumerate(zip(names, instances)):
        ref = refs[name]
        for m in methods:
            r = results[m][j]
            value = reported_value(kind, r["objective"])
            gap = None if ref is None else gap_percent(kind, value, ref)
            w.writerow([name, inst.n_nodes, m, _fmt(value), _fmt(ref), _fmt(gap), r["n_constructions"]])
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(_with_header(head, buf.getvalue()), encoding="utf-8")
    cbuf = io.StringIO()
    cw = csv.writer(cbuf, lineterminator="\n")
    cw.writerow(["method", "constructions", "mean_best"])
    for m, (x, y) in curves.items():
        cw.writerows([m, int(a), repr(float(b))] for a, b in zip(x, y))
    (out / "curves.csv").write_text(_with_header(head, cbuf.getvalue()), encoding="utf-8")
    _plot_curves(out / "curves.svg", curves, kind, head)
    print(f"benchmarked {', '.join(methods)} on {len(instances)} instances; output in {out}")
    return out / "comparison.csv"


def _histogram(counts) -> list[str]:
    vals, freq = np.unique(counts, return_counts=True)
    top = freq.max()
    return [f"  n={v:<6d} {f:5d} {'#' * max(1, round(40 * f / top))}" for v, f in zip(vals, freq)]


def cmd_inspect(args) -> str:
    lines = []
    if args.features:
        kind = Kind(args.features)
        for phase in ("init", "update"):
            rows = feature_manifest(kind, phase)
            lines.append(f"{kind.value} {phase} inputs ({len(rows)} columns)")
            lines += [f"  {g:<16s} {c:<20s} {w}" for g, c, w in rows]
    if args.path:
        lines += _inspect_path(Path(args.path))
    if not lines:
        raise ConfigError("nothing to inspect: give a path or --features")
    text = "\n".join(lines)
    print(text)
    return text


def _inspect_path(path: Path) -> list[str]:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        head = read_header(path)
        params = load_params(path)  # verifies checksum and shapes
        nets = [params.init, params.update] if isinstance(params, MetaParams) else [params]
        out = [f"checkpoint {path.name}: kind={head['kind']} d_hidden={head['d_hidden']} "
               f"n_blocks={head['n_blocks']} format={head['format_version']}"]
        for net in nets:
            out.append(f"[{net.phase}] {net.size} parameters")
            out += [f"  {name:<20s} {'x'.join(map(str, shape))}" for name, shape in net.manifest]
        meta = head.get("metadata", {})
        for key in ("stage", "step", "train_K", "train_b", "seed"):
            if key in meta:
                out.append(f"  {key} = {meta[key]}")
        return out
    if raw[:1] == b"#":
        kind, paths = read_manifest(path)
        insts, _ = load_instances(path)
        sizes = [i.n_nodes for i in insts]
        out = [f"dataset {path.name}: kind={kind.value} count={len(paths)} "
               f"n in [{min(sizes)}, {max(sizes)}], mean {np.mean(sizes):.1f}", "node-count histogram:"]
        return out + _histogram(sizes)
    text = raw.decode("utf-8", errors="replace")
    if "NODE_COORD_SECTION" in text or any(ln.startswith("p ") for ln in text.splitlines()):
        inst = load_instance(path, TSPLIB if "NODE_COORD_SECTION" in text else DIMACS)
        extra = (f"coords in [{inst.coords.min():.4g}, {inst.coords.max():.4g}]" if inst.kind is Kind.TSP
                 else f"{inst.n_undirected_edges} edges")
        return [f"instance {path.name}: kind={inst.kind.value} n={inst.n_nodes} {extra}"]
    raise ParseError(f"unknown file type: {path}")


# ---- argument parsing ---------------------------------------------------


def _search_flags(p):
    p.add_argument("--checkpoint", help="meta-optimizer checkpoint")
    p.add_argument("--dataset", required=True, help="dataset manifest or single instance file")
    p.add_argument("--K", type=int, default=50, help="iterations per search")
    p.add_argument("--b", type=int, default=32, help="constructions per iteration")
    p.add_argument("--M", type=int, default=1, help="parallel restarts")
    p.add_argument("--conditioning-mode", dest="conditioning_mode", default="full",
                   choices=["full", "naive_continuation"])
    p.add_argument("--train-K", dest="train_K", type=int, help="override the training budget from the checkpoint")
    p.add_argument("--k-nn", dest="k_nn", type=int, help="TSP neighbor count (0 = complete graph)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", help="CSV with columns instance,reference")
    p.add_argument("--no-oracle", action="store_true", help="skip the built-in exact solvers")
    p.add_argument("--out", required=True)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moco", description=__doc__.splitlines()[0])
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker processes")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write random instances and a manifest")
    p.add_argument("--kind", choices=["tsp", "mis"], required=True)
    p.add_argument("--n", type=int, required=True, help="node count (minimum for MIS)")
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--p", type=float, default=0.15, help="ER edge probability")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="meta-train from a YAML/JSON config")
    p.add_argument("--config", help="config file")
    p.add_argument("--out", default="moco_run")
    p.add_argument("--dry-run", dest="dry_run", action="store_true", help="validate the config and stop")
    p.add_argument("--resume", help="stage checkpoint to continue from")
    p.add_argument("--print-schema", dest="print_schema", action="store_true")
    for name, typ in TRAIN_OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="run the learned optimizer on a dataset")
    _search_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="compare methods under one construction budget")
    _search_flags(p)
    p.add_argument("--methods", default="moco,adam,farthest_insertion")
    p.add_argument("--adam-lr", dest="adam_lr", type=float, default=0.05)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="describe a checkpoint, dataset or instance")
    p.add_argument("path", nargs="?")
    p.add_argument("--features", choices=["tsp", "mis"], help="print the feature manifest")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "print_schema", False):
        print(json.dumps(TRAIN_SCHEMA, indent=2))
        return EXIT_OK
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, InvalidInstanceError, CorruptCheckpointError, WrongKindError, FileNotFoundError,
            IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
