"""Command-line entry points.

Subcommands: gen-data, stats, train, eval, ablate sep-resampler,
ablate depth-extremes, sensitivity, gradcheck. Exit codes: 0 success,
1 validation/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis as an
from . import depth as dp
from . import persist
from . import policy as pol
from . import sim
from . import training as tr
from .config import RunConfig, echo_config, parse_config, resolve_out
from .errors import MinivlaError, ValidationError


def _split_csv(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else None


def _variant(args) -> str:
    return "tall_short" if getattr(args, "depth_critical", False) else args.variant


# --- subcommand bodies -----------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = resolve_out(args.out)
    palettes = _split_csv(args.palettes) or ["A", "B", "C"]
    families = _split_csv(args.families)
    variant = _variant(args)
    data = sim.generate_dataset(args.n, args.seed, palettes, families=families,
                                variant=variant, enrich=args.enrich)
    persist.save_dataset(data, out, meta={
        "seed": args.seed, "palettes": palettes, "families": families,
        "variant": variant, "enriched": args.enrich,
    })
    steps = sum(len(t.steps) for t in data)
    print(f"wrote {len(data)} trajectories ({steps} steps) to {out}")
    return 0


def cmd_stats(args) -> int:
    data = persist.load_dataset(resolve_out(args.data))
    stats = dp.compute_stats(persist.dataset_depth_frames(data))
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(stats.to_json() + "\n")
    print(f"{out}: {stats}")
    return 0


def _load_run_config(args) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides.setdefault("model", {})["seed"] = args.seed
        overrides.setdefault("train", {})["seed"] = args.seed
    for section, names in (("train", ("epochs", "learning_rate", "lambda_gripper",
                                      "batch_size", "ckpt_every")),
                           ("model", ("sep_resampler", "depth_input"))):
        for name in names:
            value = getattr(args, name, None)
            if value is not None:
                overrides.setdefault(section, {})[name] = value
    return parse_config(getattr(args, "config", None), overrides)


def _stats_for(args, data) -> dp.DepthStats:
    if getattr(args, "stats", None):
        return dp.DepthStats.from_json(Path(resolve_out(args.stats)).read_text())
    return dp.compute_stats(persist.dataset_depth_frames(data))


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    run_dir = resolve_out(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, run_dir)
    data = persist.load_dataset(resolve_out(args.data))
    stats = _stats_for(args, data)
    (run_dir / "stats.json").write_text(stats.to_json() + "\n")
    model = pol.init_model(cfg.model, stats)

    def on_epoch(epoch, st):
        print(f"epoch {epoch}: loss {st.loss:.5f} (mse {st.mse:.5f}, "
              f"bce {st.bce:.5f}) in {st.seconds:.1f}s")
        k = cfg.train.ckpt_every
        if k and (epoch + 1) % k == 0:
            persist.save_checkpoint(model, run_dir / f"checkpoint_ep{epoch + 1:04d}.rfpx")

    report = tr.train_run(data, model, cfg.train, on_epoch=on_epoch)
    persist.write_train_log(report, run_dir)
    path = persist.save_checkpoint(model, run_dir / "checkpoint.rfpx")
    print(f"checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    run_dir = resolve_out(args.out)
    model = persist.load_checkpoint(resolve_out(args.checkpoint))
    agent = pol.PolicyAgent(model)
    families = _split_csv(args.families)
    variant = _variant(args)
    results = an.run_chain_eval(agent, args.chains, args.palette, args.seed,
                                families=families, variant=variant,
                                enrich=args.enrich, horizon=args.horizon)
    table = an.aggregate_chain_metrics(
        results, model_label=args.label, train_split=args.train_label,
        test_split=args.palette, enriched=args.enrich)
    persist.write_chain_results(results, run_dir / "chains.jsonl")
    persist.write_metrics(table, run_dir)
    print("task rates:", " ".join(f"{r:.3f}" for r in table.rates),
          f"avg {table.avg:.3f} over {table.n_chains} chains")
    return 0


def cmd_ablate_sep_resampler(args) -> int:
    cfg = _load_run_config(args)
    run_dir = resolve_out(args.out)
    data = persist.load_dataset(resolve_out(args.data))
    stats = _stats_for(args, data)
    env = cfg.env
    env.n_chains = args.chains
    env.families = _split_csv(args.families) or env.families
    report = an.run_sep_resampler_ablation(cfg.model, stats, data, cfg.train, env)
    _write_ablation(report, run_dir)
    return 0


def cmd_ablate_depth_extremes(args) -> int:
    cfg = _load_run_config(args)
    run_dir = resolve_out(args.out)
    data = persist.load_dataset(resolve_out(args.data))
    narrow = dp.DepthStats.from_json(Path(resolve_out(args.narrow)).read_text())
    wide = dp.DepthStats.from_json(Path(resolve_out(args.wide)).read_text())
    env = cfg.env
    env.n_chains = args.chains
    env.families = _split_csv(args.families) or env.families
    report = an.run_depth_extremes_ablation(cfg.model, narrow, wide, data,
                                            cfg.train, env)
    _write_ablation(report, run_dir)
    return 0


def _write_ablation(report, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / f"ablation_{report.name}.json"
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    for table in report.tables.values():
        persist.write_metrics(table, run_dir)
    print(f"ablation report: {out}")
    for label, table in report.tables.items():
        print(f"  {label}: rates {table.rates} avg {table.avg:.3f}")


def cmd_sensitivity(args) -> int:
    data = persist.load_dataset(resolve_out(args.data))
    pairs = an.consecutive_depth_pairs(data, limit=args.pairs)
    stats_by_label = {}
    for spec_path in args.stats:
        p = Path(resolve_out(spec_path))
        stats_by_label[p.stem] = dp.DepthStats.from_json(p.read_text())
    counts = an.depth_sensitivity_report(pairs, stats_by_label)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(counts, indent=2, sort_keys=True) + "\n")
    for label, values in sorted(counts.items()):
        print(f"{label}: total {sum(values)} changed pixels over {len(values)} pairs")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    res = tr.full_model_gradcheck(seed=args.seed, eps=args.eps)
    dt = time.perf_counter() - t0
    ok = res.max_rel_error < args.tol
    print(f"max relative error {res.max_rel_error:.3e} over {res.n_checked} "
          f"entries (worst: {res.worst_param}) in {dt:.1f}s -> "
          f"{'OK' if ok else 'FAIL'}")
    return 0 if ok else 2


# --- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="minivla",
                description="Desk-scale RGB-D vision-language manipulation policy")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", parents=[], help="generate expert demonstrations")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--families", default=None, help="comma-separated subset")
    g.add_argument("--palettes", default="A,B,C")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--variant", choices=["standard", "tall_short"], default="standard")
    g.add_argument("--depth-critical", action="store_true",
                   help="shorthand for --variant tall_short")
    g.add_argument("--enrich", action="store_true",
                   help="sample instruction paraphrases")
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("stats", help="depth statistics of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="behavior-clone a policy")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--stats", default=None, help="depth stats JSON (else computed)")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    t.add_argument("--lambda-gripper", dest="lambda_gripper", type=float, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--ckpt-every", dest="ckpt_every", type=int, default=None)
    t.add_argument("--sep-resampler", dest="sep_resampler", action="store_const",
                   const=True, default=None)
    t.add_argument("--depth-input", dest="depth_input",
                   choices=["sensor", "constant"], default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="chain evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--chains", type=int, default=200)
    e.add_argument("--palette", default="D")
    e.add_argument("--families", default=None)
    e.add_argument("--seed", type=int, default=1000)
    e.add_argument("--horizon", type=int, default=64)
    e.add_argument("--variant", choices=["standard", "tall_short"], default="standard")
    e.add_argument("--depth-critical", action="store_true")
    e.add_argument("--enrich", action="store_true")
    e.add_argument("--label", default="ours")
    e.add_argument("--train-label", default="ABC")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="paired-variant studies")
    asub = a.add_subparsers(dest="ablation")
    a1 = asub.add_parser("sep-resampler", help="shared vs separate resamplers")
    a2 = asub.add_parser("depth-extremes", help="narrow vs wide depth ranges")
    for ap in (a1, a2):
        ap.add_argument("--data", required=True)
        ap.add_argument("--out", required=True)
        ap.add_argument("--config", default=None)
        ap.add_argument("--stats", default=None)
        ap.add_argument("--seed", type=int, default=None)
        ap.add_argument("--epochs", type=int, default=None)
        ap.add_argument("--chains", type=int, default=20)
        ap.add_argument("--families", default=None)
    a1.set_defaults(func=cmd_ablate_sep_resampler)
    a2.add_argument("--narrow", required=True, help="narrow-range stats JSON")
    a2.add_argument("--wide", required=True, help="wide-range stats JSON")
    a2.set_defaults(func=cmd_ablate_depth_extremes)

    n = sub.add_parser("sensitivity", help="quantized pixel-change counts")
    n.add_argument("--data", required=True)
    n.add_argument("--stats", nargs="+", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--pairs", type=int, default=50)
    n.set_defaults(func=cmd_sensitivity)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    c.add_argument("--seed", type=int, default=7)
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return p


def dispatch(argv) -> int:
    """Run one CLI invocation; returns the process exit code."""
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help paths
        return 0 if not e.code else 1
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MinivlaError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
