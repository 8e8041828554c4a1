"""Command-line interface: ``qcbm-em {targets,calibrate,train,evaluate,report,schema}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from .distributions import bitstring, make_target
from .errors import QCBMError
from .experiment import (
    ExperimentConfig,
    RunDir,
    calibrate,
    config_schema,
    evaluate_trace,
    grid_rows,
    load_initial_theta,
    metrics_csv,
    read_metrics,
    report_rows,
    write_csv,
)
from .mitigation import (
    KERNEL_CLASSES,
    AssignmentErrorMatrix,
    aem_condition_diagnostics,
    frobenius_distance,
    identity_aem,
)
from .training import TrainTrace, train


EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FAILED = 5


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        config = ExperimentConfig.load(args.config)
    elif getattr(args, "out", None) and RunDir(args.out).config_path.exists():
        config = RunDir(args.out).config()
    else:
        config = ExperimentConfig()
    return config.with_overrides(seed=getattr(args, "seed", None), preset=getattr(args, "preset", None),
                                 out=getattr(args, "out", None))


def _run_dir(args, config: ExperimentConfig) -> RunDir:
    out = args.out or config.out
    if not out:
        raise FileNotFoundError("no output directory: pass --out or set 'out' in the config")
    return RunDir(out)


def cmd_targets(args) -> int:
    p = make_target(args.kind, args.lam, n_states=2**args.n_qubits)
    n = args.n_qubits
    for i, prob in enumerate(p):
        if prob > 0 or args.all:
            print(f"{bitstring(i, n)}  {prob:.12g}")
    return 0


def cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=1))
    return 0


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    run = _run_dir(args, config)
    run.write_config(config)
    kinds = args.kinds or list(KERNEL_CLASSES)
    for kind, aem in calibrate(config, kinds).items():
        path = aem.save(run.aem_path(kind))
        diag = aem_condition_diagnostics(aem)
        print(f"{kind:8s} {path}  frobenius={frobenius_distance(aem):.6g}  "
              f"cond={diag.condition_number:.6g}  min_fidelity={diag.min_row_fidelity:.6g}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    run = _run_dir(args, config)
    if args.aem:
        aem_path = Path(args.aem)
        if not aem_path.exists():
            raise FileNotFoundError(f"missing AEM file {aem_path}")
        aem = AssignmentErrorMatrix.load(aem_path)
    elif config.aem_kind == "identity" and not run.aem_path("identity").exists():
        aem = identity_aem(2**config.ansatz.n_qubits)
        aem.save(run.aem_path("identity"))
        aem_path = run.aem_path("identity")
    else:
        aem_path = run.aem_path(config.aem_kind)
        aem = run.load_aem(config.aem_kind)
    init = load_initial_theta(config.init_file) if config.init == "from_file" else None
    run.write_config(config)
    trace = train(config.train_config(init), aem, aem_ref=str(aem_path))
    trace.save(run.trace_path)
    print(f"trained {config.steps} steps; min mmd={trace.min_loss():.6g}; trace -> {run.trace_path}")
    return 0


def cmd_evaluate(args) -> int:
    run = RunDir(args.out)
    config = _load_config(args)
    if not run.trace_path.exists():
        raise FileNotFoundError(f"missing trace {run.trace_path}; run 'train' first")
    trace = TrainTrace.load(run.trace_path)
    ev = config.evaluation
    post = {kind: run.load_aem(kind) for kind in ev.post_aems}
    rows = evaluate_trace(trace, config.ansatz_spec(), config.device_profile(),
                          config.target_spec().distribution(2**config.ansatz.n_qubits),
                          ev.batch_plan, post, ev.shot_sizes, ev.repeats, config.seed)
    run.metrics_path.write_text(metrics_csv(rows))
    print(f"{len(rows)} metric rows (composite shots {ev.batch_plan.effective_shots}) -> {run.metrics_path}")
    return 0


def cmd_report(args) -> int:
    run = RunDir(args.out)
    if not run.metrics_path.exists():
        raise FileNotFoundError(f"missing metrics {run.metrics_path}; run 'evaluate' first")
    metrics = read_metrics(run.metrics_path)
    trace = TrainTrace.load(run.trace_path) if run.trace_path.exists() else None
    rows = report_rows(metrics, trace)
    write_csv(run.report_path, rows)
    for row in rows:
        print(",".join(row))
    if args.grid:
        runs = [(RunDir(d).config().aem_kind, read_metrics(RunDir(d).metrics_path))
                for d in [args.out, *args.grid]]
        grid = grid_rows(runs, args.shots)
        write_csv(run.path / f"grid_{args.shots}.csv", grid)
        print()
        for row in grid:
            print(",".join(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcbm-em", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment configuration (JSON)")
            p.add_argument("--preset", help="device preset overriding the config")
        p.add_argument("--out", help="run directory")
        p.add_argument("--seed", type=int, help="run seed (u64)")

    p = sub.add_parser("targets", help="print a target distribution")
    p.add_argument("--kind", default="bas22", choices=["bas22", "poisson1", "poisson2"])
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--n-qubits", type=int, default=4)
    p.add_argument("--all", action="store_true", help="include zero-probability states")
    p.set_defaults(func=cmd_targets)

    p = sub.add_parser("calibrate", help="build and store assignment error matrices")
    common(p)
    p.add_argument("--kinds", nargs="+", choices=KERNEL_CLASSES)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="train a QCBM from a configuration")
    common(p)
    p.add_argument("--aem", help="AEM file (default: <out>/aem/<aem_kind>.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="post-process a trained run into metrics.csv")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize metrics.csv into report.csv")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--grid", nargs="+", metavar="RUN", help="further runs for a train x post grid")
    p.add_argument("--shots", type=int, default=2048, help="sub-sample size used in the grid")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("schema", help="print the configuration JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (QCBMError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
