"""Command-line entry point (``python3 -m smspace`` or ``smspace``)."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .analysis import check_metric_invariant, check_topo_invariant
from .exploration import DatasetFormatError, load_dataset
from .harness import ConfigError, RunFailed
from .neural import TrainingError
from .plotting import PlotInputError, curves_svg, points_svg, read_aggregate, read_points
from .world_arm import SimulationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

# config keys exposed as flags; values stay strings until the config parses them
CONFIG_FLAGS = ("world", "regime", "n-h", "encoder", "predictor", "activation", "k", "epochs",
                "decay-epochs", "batch", "runs", "seed", "cadence", "probe", "checkpoint-every",
                "workers", "out")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    for flag in CONFIG_FLAGS:
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None)
    p.add_argument("--fixed-dataset", action="store_const", const="true", default=None,
                   help="train every run on one shared dataset")


def _config(ns, training: bool = True) -> harness.ExperimentConfig:
    overrides = {f.replace("-", "_"): getattr(ns, f.replace("-", "_"), None) for f in CONFIG_FLAGS}
    overrides["fixed_dataset"] = getattr(ns, "fixed_dataset", None)
    return harness.load_config(ns.config, overrides, training)


def cmd_generate(ns) -> int:
    cfg = _config(ns, training=False)
    path = harness.resolve_out(ns.output or f"{cfg.world}-{cfg.regime.lower()}-{cfg.seed}.smds")
    path.parent.mkdir(parents=True, exist_ok=True)
    _, digest = harness.make_dataset(cfg, cfg.seed, path)
    print(f"{digest}  {path}")
    return EXIT_OK


def cmd_train(ns) -> int:
    cfg = _config(ns)
    dataset = load_dataset(ns.dataset)
    out = harness.resolve_out(cfg.out)
    art = harness.train_run(cfg, dataset, harness.run_seed_for(cfg.seed, ns.run), out,
                            dataset_path=ns.dataset, resume=ns.resume, run_index=ns.run)
    last = art.final
    print(f"epoch {last.epoch}: loss={last.loss:.6g} d_topo={last.d_topo:.6g} "
          f"d_metric={last.d_metric:.6g}")
    print(f"curve {art.curve_path}")
    for path in art.checkpoint_paths:
        print(f"checkpoint {path}")
    print(f"points {art.points_path}")
    return EXIT_OK


def cmd_experiment(ns) -> int:
    cfg = _config(ns)
    result = harness.cmd_experiment(cfg, log=lambda msg: print(msg, file=sys.stderr))
    print(f"aggregate {result.aggregate_path}")
    print(f"svg {result.svg_path}")
    return EXIT_OK if not result.failed else EXIT_RUNTIME


def cmd_plot(ns) -> int:
    if ns.kind == "curves":
        series = []
        for spec in ns.inputs:
            path, _, label = spec.partition(":")
            series.append((label or Path(path).parent.name or path, read_aggregate(path)))
        svg = curves_svg(series)
    else:
        if len(ns.inputs) != 1:
            raise PlotInputError("points plot takes exactly one dump file")
        svg = points_svg(read_points(ns.inputs[0], ns.run))
    out = harness.resolve_out(ns.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg, encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_check(ns) -> int:
    ds = load_dataset(ns.dataset)
    result = {}
    if ns.which in ("topo", "both"):
        result["topo"] = vars(check_topo_invariant(ds, ns.mu, ns.slack, ns.same_env))
    if ns.which in ("metric", "both"):
        result["metric"] = vars(check_metric_invariant(ds, ns.mu, ns.slack))
    print(json.dumps(result, sort_keys=True))
    if ns.strict and any(r["violations"] for r in result.values()):
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smspace", description="Sensorimotor space-structure experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write an exploration dataset and print its SHA-256")
    _config_args(p)
    p.add_argument("-o", "--output", help="dataset file path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a dataset file")
    p.add_argument("dataset")
    _config_args(p)
    p.add_argument("--resume", help="continue from a checkpoint of the same run")
    p.add_argument("--run", type=int, default=0, help="run index used to derive the run seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="multi-seed campaign with aggregated curves")
    _config_args(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="render SVG figures from CSV outputs")
    p.add_argument("kind", choices=("curves", "points"))
    p.add_argument("inputs", nargs="+", help="aggregate CSVs (PATH[:LABEL]) or one point dump")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--run", type=int, default=None, help="run to draw from a point dump")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("check-invariants", help="empirical sensorimotor invariant checks")
    p.add_argument("dataset")
    p.add_argument("--mu", type=float, default=1e-9)
    p.add_argument("--slack", type=float, default=5.0)
    p.add_argument("--which", choices=("topo", "metric", "both"), default="both")
    p.add_argument("--same-env", action="store_true", help="topo check on unmoved transitions only")
    p.add_argument("--strict", action="store_true", help="exit 2 when violations are found")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except (ConfigError, DatasetFormatError, PlotInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RunFailed, TrainingError, SimulationError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
