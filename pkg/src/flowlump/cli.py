"""Command-line orchestration: build, lump, cluster, cv, metrics, export, synth.

Every run writes its resolved configuration next to its outputs; all
randomness flows from the single ``--seed`` through numpy's PCG64.
Artifacts are deterministic: the same seed yields byte-identical files.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from . import corpus as corpus_mod
from . import crossval, lumping, mapeq, metrics, synth
from .corpus import build_state_network, parse_paths, visit_rates


@dataclass
class RunConfig:
    """Resolved options of one CLI run, serialized for reproducibility."""

    subcommand: str
    options: dict

    def write(self, path: Path) -> None:
        payload = {"subcommand": self.subcommand, **self.options}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _schema() -> dict:
    text = importlib.resources.files("flowlump").joinpath("map.schema.json").read_text()
    return json.loads(text)


def validate_map_export(payload: dict) -> None:
    """Raise jsonschema.ValidationError if the export violates the schema."""
    jsonschema.validate(payload, _schema())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output-dir", default=".", help="directory for artifacts")
    p.add_argument("--name", default=None, help="artifact base name (default: input stem)")
    p.add_argument("--json-errors", action="store_true",
                   help="emit machine-readable error JSON on stderr")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowlump",
                                 description="sparse Markov chain flow maps")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("build", help="parse paths and serialize the state network")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    _add_common(p)

    p = sub.add_parser("lump", help="build and save per-physical-node dendrograms")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    p.add_argument("--save-dendro", default=None, help="dendrogram output file")
    p.add_argument("--exact", action="store_true",
                   help="exact pair search even above the candidate-pruning size")
    _add_common(p)

    p = sub.add_parser("cluster", help="optimize a module map of the (lumped) network")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    p.add_argument("--target-r", type=int, default=None,
                   help="lump to this many states first (default: no lumping)")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--hierarchical", action="store_true")
    p.add_argument("--stationary", action="store_true",
                   help="visit rates from the stationary distribution")
    _add_common(p)

    p = sub.add_parser("cv", help="cross-validate the number of lumped states")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--schedule-factor", type=float, default=crossval.DEFAULT_SCHEDULE_FACTOR)
    p.add_argument("--trials", type=int, default=3, help="optimizer trials per fold")
    p.add_argument("--final-trials", type=int, default=10,
                   help="optimizer trials for the final full-corpus model")
    p.add_argument("--threads", type=int, default=None,
                   help="fold workers (default: available parallelism; "
                        "FLOWLUMP_THREADS overrides)")
    _add_common(p)

    p = sub.add_parser("metrics", help="persistence and overlap reports for a map")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    p.add_argument("--target-r", type=int, default=None)
    p.add_argument("--map", required=True, dest="tree", help="tree file of the map")
    p.add_argument("--classification", default=None,
                   help="name<TAB>category file for external comparison")
    p.add_argument("--level", choices=("leaf", "top"), default="leaf")
    p.add_argument("--threshold", type=float, default=0.0,
                   help="suppress overlap rows below this fraction")
    _add_common(p)

    p = sub.add_parser("export", help="JSON map export from a tree file")
    p.add_argument("paths")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--grouped", action="store_true")
    p.add_argument("--target-r", type=int, default=None)
    p.add_argument("--map", required=True, dest="tree")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a planted-hub synthetic corpus")
    p.add_argument("--n", type=int, default=50, help="physical nodes")
    p.add_argument("--modules", type=int, default=4)
    p.add_argument("--planted-hubs", type=int, default=4)
    p.add_argument("--return-prob", type=float, default=0.9)
    p.add_argument("--hub-rate", type=float, default=0.3)
    p.add_argument("--path-length", type=int, default=3)
    p.add_argument("--paths", type=int, default=10000, dest="n_paths")
    p.add_argument("--seed", type=int, default=1)
    _add_common(p)
    return ap


def _resolve_threads(requested: int | None) -> int:
    env = os.environ.get("FLOWLUMP_THREADS")
    if env is not None:
        return max(1, int(env))
    if requested is not None:
        return max(1, requested)
    return os.cpu_count() or 1


def _out_base(args: argparse.Namespace, default_stem: str) -> Path:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / (args.name or default_stem)


def _load_corpus(args: argparse.Namespace) -> corpus_mod.PathCorpus:
    with open(args.paths, "r", encoding="utf-8") as fh:
        return parse_paths(fh, grouped=args.grouped)


def _rebuild_model(cp, order: int, target_r: int | None):
    """Deterministically rebuild the (possibly lumped) network of a run."""
    net = build_state_network(cp, order)
    if target_r is None:
        return net, None
    dendros = lumping.build_all_dendrograms(net)
    model = lumping.expand_model(net, dendros, target_r)
    return model.network, model


def _write_map_artifacts(base: Path, mmap, net, rates) -> None:
    with open(base.with_suffix(".tree"), "w", encoding="utf-8") as fh:
        mapeq.write_tree(mmap, net, rates, fh)
    payload = mapeq.map_export(mmap, net, rates)
    validate_map_export(payload)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _cmd_build(args) -> int:
    cp = _load_corpus(args)
    net = build_state_network(cp, args.order)
    base = _out_base(args, Path(args.paths).stem)
    with open(base.with_suffix(".snet"), "w", encoding="utf-8") as fh:
        corpus_mod.write_snet(net, fh)
    RunConfig("build", _public_options(args)).write(base.with_suffix(".config.json"))
    print(f"wrote {base.with_suffix('.snet')} "
          f"({net.n_states} states, {len(net.names)} physical nodes)")
    return 0


def _cmd_lump(args) -> int:
    cp = _load_corpus(args)
    net = build_state_network(cp, args.order)
    dendros = lumping.build_all_dendrograms(net, exact=True if args.exact else None)
    base = _out_base(args, Path(args.paths).stem)
    dendro_path = Path(args.save_dendro) if args.save_dendro else base.with_suffix(".dendro")
    with open(dendro_path, "w", encoding="utf-8") as fh:
        lumping.write_dendro(dendros, fh)
    RunConfig("lump", _public_options(args)).write(base.with_suffix(".config.json"))
    n_merges = sum(len(d.merges) for d in dendros.values())
    print(f"wrote {dendro_path} ({len(dendros)} physical nodes, {n_merges} merges)")
    return 0


def _cmd_cluster(args) -> int:
    cp = _load_corpus(args)
    net, model = _rebuild_model(cp, args.order, args.target_r)
    base = _out_base(args, Path(args.paths).stem)
    if model is not None:
        with open(base.with_suffix(".dendro"), "w", encoding="utf-8") as fh:
            lumping.write_dendro(lumping.build_all_dendrograms(model.source), fh)
    rates = visit_rates(net, stationary=args.stationary)
    mmap = mapeq.optimize(net, seed=args.seed, trials=args.trials, rates=rates)
    if args.hierarchical:
        mmap = mapeq.hierarchical(net, mmap, seed=args.seed, rates=rates)
    _write_map_artifacts(base, mmap, net, rates)
    RunConfig("cluster", _public_options(args)).write(base.with_suffix(".config.json"))
    n_mod = len(set(mmap.assignment.values()))
    print(f"wrote {base.with_suffix('.tree')} "
          f"({n_mod} modules, codelength {mmap.codelength_bits:.6f} bits)")
    return 0


def _cmd_cv(args) -> int:
    cp = _load_corpus(args)
    threads = _resolve_threads(args.threads)
    report = crossval.sweep(cp, order=args.order, k=args.k, seed=args.seed,
                            schedule_factor=args.schedule_factor,
                            trials=args.trials, grouped=args.grouped,
                            threads=threads)
    base = _out_base(args, Path(args.paths).stem)
    with open(base.with_suffix(".cv.tsv"), "w", encoding="utf-8") as fh:
        crossval.write_cv_report(report, fh)

    net = build_state_network(cp, args.order)
    dendros = lumping.build_all_dendrograms(net)
    with open(base.with_suffix(".dendro"), "w", encoding="utf-8") as fh:
        lumping.write_dendro(dendros, fh)
    model = lumping.expand_model(net, dendros, report.selected_r)
    rates = visit_rates(model.network)
    mmap = mapeq.optimize(model.network, seed=args.seed, trials=args.final_trials,
                          rates=rates)
    _write_map_artifacts(base, mmap, model.network, rates)
    RunConfig("cv", _public_options(args) | {"threads_resolved": threads}).write(
        base.with_suffix(".config.json"))
    print(f"selected r = {report.selected_r} "
          f"(median validation {report.medians[report.selected_r]:.6f} bits); "
          f"wrote {base.with_suffix('.cv.tsv')}")
    return 0


def _tree_assignment(tree_path: str, level: str) -> dict:
    with open(tree_path, "r", encoding="utf-8") as fh:
        coords = mapeq.read_tree(fh)
    if level == "top":
        return {u: path[0] for u, path in coords.items()}
    return {u: ":".join(str(c) for c in path) for u, path in coords.items()}


def _cmd_metrics(args) -> int:
    cp = _load_corpus(args)
    net, model = _rebuild_model(cp, args.order, args.target_r)
    assignment = _tree_assignment(args.tree, args.level)
    rates = visit_rates(net)
    persistence = metrics.flow_persistence(net, assignment, rates,
                                           basis=Path(args.tree).name)
    table = metrics.overlap_table(net, assignment, threshold=args.threshold,
                                  rates=rates)
    base = _out_base(args, Path(args.paths).stem)
    with open(base.with_suffix(".persistence.tsv"), "w", encoding="utf-8") as fh:
        metrics.write_persistence_tsv(persistence, fh)
    with open(base.with_suffix(".overlap.tsv"), "w", encoding="utf-8") as fh:
        metrics.write_overlap_tsv(table, net.names, fh)
    payload = {
        "basis": persistence.basis,
        "overall_persistence": persistence.overall,
        "per_module": {str(m): v for m, v in sorted(persistence.per_module.items(),
                                                    key=lambda kv: str(kv[0]))},
    }
    if args.classification:
        with open(args.classification, "r", encoding="utf-8") as fh:
            categories, unmatched = metrics.read_classification(fh, net.names)
        ext = metrics.external_persistence(net, categories, rates)
        payload["external"] = {
            "persistence": ext.fraction,
            "coverage": ext.coverage,
            "unmatched_names": unmatched,
        }
    with open(base.with_suffix(".metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    RunConfig("metrics", _public_options(args)).write(base.with_suffix(".config.json"))
    print(f"overall persistence {persistence.overall:.4f}; "
          f"wrote {base.with_suffix('.metrics.json')}")
    return 0


def _cmd_export(args) -> int:
    cp = _load_corpus(args)
    net, _ = _rebuild_model(cp, args.order, args.target_r)
    assignment = _tree_assignment(args.tree, "top")
    rates = visit_rates(net)
    stats = mapeq.aggregate_modules(net, rates, assignment)
    mmap = mapeq.ModuleMap(assignment, stats, mapeq.codelength_from_stats(stats))
    payload = mapeq.map_export(mmap, net, rates)
    validate_map_export(payload)
    base = _out_base(args, Path(args.paths).stem)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    RunConfig("export", _public_options(args)).write(base.with_suffix(".config.json"))
    print(f"wrote {base.with_suffix('.json')}")
    return 0


def _cmd_synth(args) -> int:
    cp = synth.generate(n_nodes=args.n, n_modules=args.modules,
                        n_hubs=args.planted_hubs, return_prob=args.return_prob,
                        hub_rate=args.hub_rate, path_length=args.path_length,
                        n_paths=args.n_paths, seed=args.seed)
    base = _out_base(args, "synth")
    with open(base.with_suffix(".paths"), "w", encoding="utf-8") as fh:
        corpus_mod.write_paths(cp, fh)
    RunConfig("synth", _public_options(args)).write(base.with_suffix(".config.json"))
    print(f"wrote {base.with_suffix('.paths')} "
          f"({len(cp.paths)} paths, {cp.n_physical} physical nodes)")
    return 0


_COMMANDS = {
    "build": _cmd_build,
    "lump": _cmd_lump,
    "cluster": _cmd_cluster,
    "cv": _cmd_cv,
    "metrics": _cmd_metrics,
    "export": _cmd_export,
    "synth": _cmd_synth,
}


def _public_options(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("subcommand", "json_errors")}


def run(argv: list[str] | None = None) -> int:
    """Execute one CLI invocation; returns the process exit code."""
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        if getattr(args, "json_errors", False):
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"flowlump {args.subcommand}: {type(exc).__name__}: {exc}",
                  file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
