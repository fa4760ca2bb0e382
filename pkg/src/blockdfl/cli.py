"""Command line: ``blockdfl {run,baseline,compare,replay}``.

Settings are layered: preset (``--preset``), then ``--config`` file, then
individual flags. A rejected configuration exits with status 2 and a JSON
object ``{"error": "config_rejected", "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .compression import stepped_schedule
from .sim import (PRESETS, ConfigError, SimConfig, load_config, replay_dir, run_fedavg_baseline,
                  run_simulation, summarize, write_run)

EXIT_CONFIG = 2
EXIT_IO = 3

# flag -> (section or None, field, type)
_FLAGS = {
    "participants": (None, "n_participants", int),
    "aggregators": (None, "n_aggregators", int),
    "verifiers": (None, "n_verifiers", int),
    "c": (None, "c", int),
    "rounds": (None, "rounds", int),
    "initial_stake": (None, "initial_stake", int),
    "stake_increment": (None, "stake_increment", int),
    "eval_fraction": (None, "eval_fraction", float),
    "eval_size": (None, "eval_size", int),
    "eval_every": (None, "eval_every", int),
    "krum_f": (None, "krum_f", float),
    "lr": ("learner", "learning_rate", float),
    "decay": ("learner", "decay", float),
    "batch_size": ("learner", "batch_size", int),
    "epochs": ("learner", "local_epochs", int),
    "model": ("learner", "model_kind", str),
    "hidden": ("learner", "hidden", int),
    "malicious": ("adversary", "malicious_fraction", float),
}


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or TOML file with SimConfig fields")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--out", type=Path, help="directory for metrics, chain and model exports")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    for flag, (_, name, typ) in _FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, help=name)
    p.add_argument("--sparsity", type=float, nargs="+", metavar="S",
                   help="sparsity levels, applied in turn every --sparsity-period rounds")
    p.add_argument("--sparsity-period", type=int, default=50)
    p.add_argument("--no-compression", action="store_true")
    p.add_argument("--flip", nargs="*", metavar="SRC:DST", help="label-flip pairs, e.g. 1:7")
    p.add_argument("--resample-eval-subset", action="store_true", default=None)
    p.add_argument("--reset-residuals", action="store_true",
                   help="drop residuals of participants not providing this round")
    p.add_argument("--quiet", action="store_true")


def build_config(args) -> SimConfig:
    cfg = PRESETS[args.preset]()
    if args.config is not None:
        cfg = load_config(args.config, base=cfg)
    top, sections = {}, {"learner": {}, "adversary": {}}
    for flag, (section, name, _) in _FLAGS.items():
        value = getattr(args, flag)
        if value is None:
            continue
        (sections[section] if section else top)[name] = value
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        top["seed"] = args.seed - 2**64 if args.seed >= 2**63 else args.seed
    if args.no_compression:
        top["sparsity_schedule"] = None
    elif args.sparsity:
        top["sparsity_schedule"] = stepped_schedule(args.sparsity, args.sparsity_period)
    if args.resample_eval_subset:
        top["resample_eval_subset"] = True
    if args.reset_residuals:
        top["persist_residuals"] = False
    try:
        if sections["learner"]:
            top["learner"] = dataclasses.replace(cfg.learner, **sections["learner"])
        if args.flip is not None:
            sections["adversary"]["flip_pairs"] = tuple(
                tuple(int(x) for x in pair.split(":")) for pair in args.flip)
        if sections["adversary"]:
            top["adversary"] = dataclasses.replace(cfg.adversary, **sections["adversary"])
        cfg = cfg.replace(**top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _progress(args):
    if args.quiet:
        return None

    def show(r):
        acc = "-" if r.accuracy is None else f"{r.accuracy:.4f}"
        state = "empty" if r.empty_block else ("POISONED" if r.poisoned_block else "ok")
        print(f"round {r.round:4d}  acc {acc}  block {state}", file=sys.stderr)
    return show


def _print_summary(name, log):
    print(json.dumps({"run": name, **summarize(log)}))


def cmd_run(args):
    cfg = build_config(args)
    log = run_simulation(cfg, progress=_progress(args))
    if args.out:
        write_run(log, args.out)
    _print_summary("blockdfl", log)


def cmd_baseline(args):
    cfg = build_config(args)
    log = run_fedavg_baseline(cfg, progress=_progress(args))
    if args.out:
        write_run(log, args.out)
    _print_summary("fedavg", log)


def cmd_compare(args):
    cfg = build_config(args)
    ours = run_simulation(cfg, progress=_progress(args))
    base = run_fedavg_baseline(cfg, progress=_progress(args))
    if args.out:
        write_run(ours, args.out / "blockdfl")
        write_run(base, args.out / "fedavg")
    _print_summary("blockdfl", ours)
    _print_summary("fedavg", base)


def cmd_replay(args):
    _, match = replay_dir(args.dir)
    print(json.dumps({"replayed": str(args.dir), "final_model_matches": match}))
    return 0 if match in (True, None) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blockdfl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("run", cmd_run, "run the decentralized protocol"),
                           ("baseline", cmd_baseline, "run centralized FedAvg"),
                           ("compare", cmd_compare, "run both on the same setup")):
        p = sub.add_parser(name, help=text)
        _add_sim_flags(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("replay", help="re-validate an exported chain and rebuild the model")
    p.add_argument("dir", type=Path, help="output directory of an earlier `run --out`")
    p.set_defaults(fn=cmd_replay)
    args = parser.parse_args(argv)
    try:
        return args.fn(args) or 0
    except ConfigError as exc:
        print(json.dumps({"error": "config_rejected", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
