"""Command line entry point.

Subcommands: gen-data, train, eval, sweep, stability. Every run takes an
optional JSON config (--config) plus flag overrides; flags win. Unknown
config keys are rejected so typos fail loudly instead of training with a
silently ignored setting.

Exit codes: 0 success, 2 bad config or arguments, 3 training diverged,
4 file or checkpoint I/O failure. Output lands in --out, else $CYCLEREG_OUT,
else the working directory.
"""

import argparse
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import stability
from .data import TASKS, build_dataset, gen_synthetic, save_csv, write_manifest
from .evaluation import (aggregate_reports, config_digest, evaluate_pair,
                         relative_error_ratio, reports_to_csv, run_single,
                         write_json)
from .models import load_checkpoint, save_checkpoint
from .plots import bar_chart, save_svg, training_curves
from .training import (ConfigError, STRATEGIES, TrainingPlan, validate_plan,
                       write_metrics_csv)

BATCH_FRACTION_SOFT_CAP = 0.40

_PLAN_KEYS = tuple(f.name for f in fields(TrainingPlan))

RUN_DEFAULTS = {
    "task": "sin",
    "n": 2000,
    "hidden": [64, 64, 64, 64],
    "activation": "tanh",
    "batchnorm": True,
    "dropout": False,
    "dropout_p": 0.1,
    "ranges": None,
    "decouple": None,
    **{f.name: f.default for f in fields(TrainingPlan)},
}

SWEEP_DEFAULTS = {**RUN_DEFAULTS,
                  "strategies": list(STRATEGIES),
                  "seeds": [0, 1, 2]}


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e


def resolve_config(defaults, config_path=None, overrides=None):
    """defaults <- file <- CLI flags, rejecting keys outside the schema."""
    cfg = dict(defaults)
    if config_path:
        file_cfg = _load_json(config_path)
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(file_cfg)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def plan_from_config(cfg):
    plan = TrainingPlan(**{k: cfg[k] for k in _PLAN_KEYS})
    return validate_plan(plan)


def config_warnings(cfg):
    out = []
    if cfg["batch_fraction"] > BATCH_FRACTION_SOFT_CAP:
        out.append(f"batch_fraction {cfg['batch_fraction']} exceeds "
                   f"{BATCH_FRACTION_SOFT_CAP}: very large batches make the "
                   "per-epoch step count tiny")
    return out


def _out_dir(args):
    out = args.out or os.environ.get("CYCLEREG_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _model_kw(cfg):
    return dict(hidden=tuple(cfg["hidden"]), activation=cfg["activation"],
                batchnorm=cfg["batchnorm"], dropout=cfg["dropout"],
                dropout_p=cfg["dropout_p"],
                ranges=cfg["ranges"], decouple=cfg["decouple"])


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args):
    out = _out_dir(args)
    x, y = gen_synthetic(args.task, args.n, seed=args.seed)
    data_path = os.path.join(out, f"{args.task}.csv")
    save_csv(data_path, x, y)
    write_manifest(os.path.join(out, f"{args.task}.manifest.json"), {
        "task": args.task, "n": args.n, "seed": args.seed,
        "dim_x": x.shape[1], "dim_y": y.shape[1],
        "digest": config_digest({"task": args.task, "n": args.n,
                                 "seed": args.seed}),
    })
    print(f"wrote {data_path} ({args.n} rows)")
    return 0


def _write_run_outputs(out, cfg, run, warnings):
    rep = run.report
    reports_to_csv(os.path.join(out, "report.csv"), [rep])
    write_metrics_csv(os.path.join(out, "metrics.csv"), run.result.records)
    write_json(os.path.join(out, "config.json"),
               {"config": cfg, "digest": config_digest(cfg),
                "warnings": warnings, "status": rep.status})
    if rep.status == "ok":
        save_checkpoint(os.path.join(out, "checkpoint.npz"), run.pair)


def cmd_train(args):
    cfg = resolve_config(RUN_DEFAULTS, args.config, _cli_overrides(args))
    plan = plan_from_config(cfg)
    warnings = config_warnings(cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    run = run_single(cfg["task"], cfg["n"], plan, **_model_kw(cfg))
    out = _out_dir(args)
    _write_run_outputs(out, cfg, run, warnings)
    if args.plot and run.result.records:
        save_svg(os.path.join(out, "curves.svg"),
                 training_curves({cfg["strategy"]: run.result.records},
                                 logy=False))
    rep = run.report
    if rep.status != "ok":
        print(f"diverged at epoch {run.result.diverged_at[0]}, "
              f"batch {run.result.diverged_at[1]}", file=sys.stderr)
        return 3
    print(f"{cfg['strategy']} on {cfg['task']}: "
          f"forward_error={rep.forward_error:.6f} "
          f"backward_error={rep.backward_error:.6f}")
    return 0


def cmd_eval(args):
    cfg = resolve_config(RUN_DEFAULTS, args.config, _cli_overrides(args))
    plan = plan_from_config(cfg)
    try:
        pair = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        print(f"cannot load checkpoint {args.checkpoint}: {e}", file=sys.stderr)
        return 4
    decouple = cfg["decouple"]
    if decouple is None:
        decouple = plan.strategy == "jcm"
    ds = build_dataset(cfg["task"], cfg["n"], seed=4 * plan.seed,
                       ranges=cfg["ranges"], decouple=decouple)
    rep = evaluate_pair(pair, ds, plan.strategy, seed=plan.seed)
    out = _out_dir(args)
    reports_to_csv(os.path.join(out, "report.csv"), [rep])
    print(f"forward_error={rep.forward_error:.6f} "
          f"backward_error={rep.backward_error:.6f} "
          f"backward_direct={rep.backward_direct:.6f}")
    return 0


def cmd_sweep(args):
    cfg = resolve_config(SWEEP_DEFAULTS, args.config, _cli_overrides(args))
    strategies = cfg["strategies"]
    unknown = sorted(set(strategies) - set(STRATEGIES))
    if unknown:
        raise ConfigError(f"unknown strategies: {', '.join(unknown)}")
    if not cfg["seeds"]:
        raise ConfigError("sweep needs at least one seed")
    warnings = config_warnings(cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)

    out = _out_dir(args)
    all_reports = []
    summary = {"task": cfg["task"], "n": cfg["n"],
               "digest": config_digest(cfg), "warnings": warnings,
               "strategies": {}}
    for strat in strategies:
        reports = []
        for s in cfg["seeds"]:
            plan = plan_from_config({**cfg, "strategy": strat, "seed": int(s)})
            run = run_single(cfg["task"], cfg["n"], plan, **_model_kw(cfg))
            reports.append(run.report)
            line = (f"{strat} seed {s}: {run.report.status}"
                    if run.report.status != "ok" else
                    f"{strat} seed {s}: forward={run.report.forward_error:.6f} "
                    f"backward={run.report.backward_error:.6f}")
            print(line)
        all_reports.extend(reports)
        summary["strategies"][strat] = aggregate_reports(reports)

    base = summary["strategies"].get("baseline")
    if base and base.get("backward_error"):
        ref = base["backward_error"]["median"]
        for strat, agg in summary["strategies"].items():
            if agg.get("backward_error"):
                agg["backward_error_vs_baseline"] = relative_error_ratio(
                    agg["backward_error"]["median"], ref)

    reports_to_csv(os.path.join(out, "reports.csv"), all_reports)
    write_json(os.path.join(out, "summary.json"), summary)
    medians = {s: a["backward_error"]["median"]
               for s, a in summary["strategies"].items()
               if a.get("backward_error")}
    if medians:
        save_svg(os.path.join(out, "comparison.svg"),
                 bar_chart(list(medians), {"backward_error": list(medians.values())},
                           title=f"{cfg['task']}: backward error (median)",
                           ylabel="mae"))
    return 0


def cmd_stability(args):
    if not 0.0 <= args.factor < 1.0:
        raise ConfigError(f"--factor must lie in [0, 1), got {args.factor}")
    if args.noise < 0:
        raise ConfigError(f"--noise must be >= 0, got {args.noise}")
    sys_ = stability.random_affine_system(args.dim, args.factor, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    x0 = sys_.equilibrium() + rng.normal(size=args.dim) * args.spread
    traj = stability.simulate(sys_, x0, args.steps, noise=args.noise,
                              seed=args.seed + 2)
    checks = stability.check_decrease(sys_, traj)
    out = _out_dir(args)
    with open(os.path.join(out, "stability.csv"), "w") as fh:
        fh.write("t,distance,delta_norm,condition_holds,decreased,bound,within_bound\n")
        for c in checks:
            fh.write(f"{c.t},{c.distance!r},{c.delta_norm!r},"
                     f"{int(c.condition_holds)},{int(c.decreased)},"
                     f"{c.bound!r},{int(c.within_bound)}\n")
    guaranteed = [c for c in checks if c.condition_holds]
    violated = [c for c in guaranteed if not c.decreased]
    write_json(os.path.join(out, "stability.json"), {
        "dim": args.dim, "factor": args.factor, "steps": args.steps,
        "noise": args.noise, "seed": args.seed,
        "guaranteed_steps": len(guaranteed),
        "violations": len(violated),
        "all_within_bound": all(c.within_bound for c in checks),
        "final_distance": checks[-1].distance if checks else None,
    })
    print(f"{len(guaranteed)}/{len(checks)} steps under the decrease "
          f"guarantee, {len(violated)} violations")
    return 0 if not violated else 1


# -- wiring -------------------------------------------------------------------

def _cli_overrides(args):
    keys = ("task", "n", "strategy", "loss", "optimizer", "learning_rate",
            "epochs", "batch_fraction", "update_mode", "seed", "hidden",
            "seeds", "strategies")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _int_list(text):
    return [int(p) for p in text.split(",") if p.strip()]


def _str_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_run_flags(p, sweep=False):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--n", type=int, help="sample count")
    p.add_argument("--loss", help="l2, l1 or smooth_l1")
    p.add_argument("--optimizer", help="adam or sgd")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-fraction", type=float, dest="batch_fraction")
    p.add_argument("--update-mode", dest="update_mode",
                   help="simultaneous or stepwise")
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=_int_list,
                   help="comma separated hidden widths, e.g. 64,64")
    p.add_argument("--out", help="output directory (default $CYCLEREG_OUT or .)")
    if sweep:
        p.add_argument("--strategies", type=_str_list,
                       help="comma separated strategy names")
        p.add_argument("--seeds", type=_int_list,
                       help="comma separated run seeds")
    else:
        p.add_argument("--strategy", choices=STRATEGIES)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="cyclereg",
        description="cycle-consistent training for non-injective regression")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model pair")
    _add_run_flags(p)
    p.add_argument("--plot", action="store_true", help="also write curves.svg")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_run_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="strategies x seeds comparison")
    _add_run_flags(p, sweep=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("stability", help="contraction lab under noise")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--factor", type=float, default=0.5,
                   help="spectral norm of the affine map, in [0, 1)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.0,
                   help="per-step disturbance cap")
    p.add_argument("--spread", type=float, default=5.0,
                   help="initial distance scale from the fixed point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stability)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
