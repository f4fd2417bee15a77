"""Command-line entry point: ``stdgnn {synth,build,train,eval,sweep}``.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, resolve
from .evaluation import SWEEP_PARAMETERS, make_splits, parse_grid, run_experiment, sensitivity_sweep, write_curve_csv
from .grcnn import COMPONENTS, train
from .ingest import IngestError, parse_events, write_events, write_snapshots_csv
from .jrwalk import build_transition, component_slice_key, walk_all, write_walks_csv
from .nncore import save_checkpoint
from .pipeline import build_dataset, prepare, walks_for
from .synthetic import SyntheticConfig, generate_synthetic
from .tasks import bfp_classes, encode_targets, topic_matrix
from .textfeat import fit_lda, write_topics_csv

log = logging.getLogger("stdgnn")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value run config (a resolved dump works too)")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=("paper", "desk"))
    p.add_argument("--threads", type=int)
    p.add_argument("--events", help="event log path")
    p.add_argument("--workdir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("dap", "bfp"))
    p.add_argument("--components", help="comma list from hour,day,week")
    p.add_argument("--no-attention", action="store_true", help="mean-pool hidden states instead")
    p.add_argument("--out", help="output directory (default: under the workdir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stdgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event log")
    _common(p)
    p.add_argument("--synthetic-config", help="key-value file with n_devs, n_bugs, n_components, weeks, intensity_profile")
    p.add_argument("--out", help="output JSONL path (default: the events path)")

    p = sub.add_parser("build", help="filter a log and write snapshot CSVs and stats")
    _common(p)
    p.add_argument("--components", help="comma list from hour,day,week")
    p.add_argument("--dump-walks", action="store_true", help="also write per-slice walk CSVs")

    p = sub.add_parser("train", help="train one model on the first Monte Carlo split")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("eval", help="Monte Carlo cross-validation")
    _common(p)
    _model_flags(p)
    p.add_argument("--topk", help="comma list, e.g. 1,3,5")
    p.add_argument("--repeats", type=int)
    p.add_argument("--train-frac", type=float)
    p.add_argument("--shuffle-labels", action="store_true", help="no-signal control")

    p = sub.add_parser("sweep", help="sensitivity sweep over alpha, r or l")
    _common(p)
    _model_flags(p)
    p.add_argument("--parameter", required=True)
    p.add_argument("--grid", required=True, help='"lo:hi:step" or "v1,v2,..."')
    p.add_argument("--topk", help="comma list, e.g. 1,3,5")
    p.add_argument("--repeats", type=int)
    p.add_argument("--train-frac", type=float)
    return parser


def _flags(args: argparse.Namespace) -> dict:
    flags = {
        "seed": args.seed,
        "profile": args.profile,
        "threads": args.threads,
        "events": args.events,
        "workdir": args.workdir,
    }
    for key in ("task", "components", "topk", "repeats", "train_frac"):
        if hasattr(args, key):
            flags[key] = getattr(args, key)
    if getattr(args, "no_attention", False):
        flags["attention"] = "false"
    if getattr(args, "shuffle_labels", False):
        flags["shuffle_labels"] = "true"
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        flags[key.strip()] = value
    return {k: (str(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v) for k, v in flags.items()}


def variant_tag(cfg: RunConfig) -> str:
    tag = cfg.task
    if tuple(cfg.components) != ("hour", "day", "week"):
        tag += "_" + "-".join(cfg.components)
    if not cfg.attention:
        tag += "_noatt"
    if cfg.shuffle_labels:
        tag += "_shuffled"
    return tag


def _outdir(args, cfg: RunConfig, kind: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.workdir) / f"{kind}_{variant_tag(cfg)}"


def _load(cfg: RunConfig):
    raw = parse_events(cfg.events)
    if not raw.events:
        raise IngestError(f"{cfg.events}: no usable events")
    return prepare(raw, cfg)


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.synthetic_config:
        syn = SyntheticConfig.from_file(args.synthetic_config)
    else:
        syn = SyntheticConfig.from_mapping({
            "n_devs": str(cfg.n_devs), "n_bugs": str(cfg.n_bugs), "n_components": str(cfg.n_components),
            "weeks": str(cfg.weeks), "intensity_profile": cfg.intensity_profile,
        })
    out = Path(args.out or cfg.events)
    log_ = generate_synthetic(syn, cfg.seed)
    write_events(log_, out)
    cfg.dump(out.with_suffix(".config.ini"))
    print(f"wrote {len(log_.events)} events for {len(log_.reports)} bugs to {out}")
    return 0


def cmd_build(args, cfg: RunConfig) -> int:
    prep = _load(cfg)
    work = Path(cfg.workdir)
    work.mkdir(parents=True, exist_ok=True)
    for comp, series in prep.series.items():
        write_snapshots_csv(series, work / f"snapshots_{comp}.csv")
        if args.dump_walks:
            for snap in series.snapshots:
                walks = walk_all(build_transition(snap), cfg.r, cfg.l, cfg.alpha, cfg.seed,
                                 slice_key=component_slice_key(COMPONENTS.index(comp), snap.index), threads=cfg.threads)
                write_walks_csv(walks, work / f"walks_{comp}_t{snap.index}.csv", pad=snap.n_nodes)
    (work / "stats.json").write_text(json.dumps(prep.stats, indent=2, sort_keys=True) + "\n")
    cfg.dump(work / "resolved_config.ini")
    print(f"{len(prep.node_ids)} developers kept, {len(prep.removed)} removed as inactive: "
          f"{', '.join(prep.removed) or '-'}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    prep = _load(cfg)
    walks = walks_for(prep, cfg)
    ds = build_dataset(prep, cfg.task)
    targets = list(ds.targets)
    split = make_splits(targets, cfg.plan())[0]
    out = _outdir(args, cfg, "train")
    out.mkdir(parents=True, exist_ok=True)
    train_targets = [targets[i] for i in split.train]
    z = None
    if cfg.task == "bfp":
        classes = bfp_classes(train_targets, cfg.min_fixer_count)
        lda = fit_lda([ds.tokens[i] for i in split.train], cfg.lda_topics, cfg.lda_iterations, cfg.seed)
        z = topic_matrix(lda, ds.tokens, cfg.lda_infer_iterations)
        ds.z = z
        lda.save(out / "lda.bin")
        write_topics_csv(ds.ids, z, out / "topics.csv")
    else:
        classes = sorted(set(train_targets))
    labels = encode_targets(targets, classes)
    val = split.val[labels[split.val] >= 0]
    hold = lambda idx: {k: v[idx] for k, v in ds.holders.items()}
    ex = lambda idx: None if z is None else z[idx]
    gcfg = cfg.grcnn(len(prep.node_ids))
    model, hist = train(gcfg, walks, hold(split.train), labels[split.train], len(classes), ex(split.train),
                        val=(hold(val), labels[val], ex(val)) if len(val) else None, seed=cfg.seed)
    save_checkpoint(out / "checkpoint.bin", model.parameters(), meta={
        "config": gcfg.to_dict(), "seed": cfg.seed, "classes": classes,
        "node_ids": list(prep.node_ids), "n_extra": model.n_extra,
    })
    hist.write_csv(out / "loss.csv")
    ds.write_jsonl(out / "dataset.jsonl", classes)
    cfg.dump(out / "resolved_config.ini")
    print(f"trained {cfg.task} for {len(hist.epoch)} epochs (best {hist.best_epoch}); outputs in {out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    prep = _load(cfg)
    walks = walks_for(prep, cfg)
    ds = build_dataset(prep, cfg.task)
    out = _outdir(args, cfg, "eval")
    report = run_experiment(ds, walks, cfg.grcnn(len(prep.node_ids)), cfg.plan(), cfg.topk, cfg.text(),
                            cfg.min_fixer_count, cfg.shuffle_labels, predictions_dir=out)
    report.write(out)
    cfg.dump(out / "resolved_config.ini")
    for metric, s in report.summary.items():
        print(f"{cfg.task} {metric}: {s['mean']:.4f} +- {s['sd']:.4f} "
              f"(frequency baseline {s['baseline_mean']:.4f})")
    log.info("wall clock %.1f s", report.wall_clock)
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.parameter not in SWEEP_PARAMETERS:
        raise UsageError(f"unknown sweep parameter {args.parameter!r}; choose from {SWEEP_PARAMETERS}")
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    prep = _load(cfg)
    ds = build_dataset(prep, cfg.task)
    out = Path(args.out) if args.out else Path(cfg.workdir) / f"sweep_{args.parameter}_{variant_tag(cfg)}"
    rows = sensitivity_sweep(
        args.parameter, grid, lambda name, value: walks_for(prep, cfg, **{name: value}),
        ds, cfg.grcnn(len(prep.node_ids)), cfg.plan(),
        topk=cfg.topk, text=cfg.text(), min_fixer_count=cfg.min_fixer_count, shuffle_labels=cfg.shuffle_labels,
    )
    write_curve_csv(rows, out / "curve.csv")
    cfg.dump(out / "resolved_config.ini")
    for value, mean, sd in rows:
        print(f"{args.parameter}={value:g}: {mean:.4f} +- {sd:.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.config, _flags(args))
        if args.command == "sweep" and args.parameter not in SWEEP_PARAMETERS:
            raise UsageError(f"unknown sweep parameter {args.parameter!r}; choose from {SWEEP_PARAMETERS}")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, IngestError) as exc:
        print(f"stdgnn: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"stdgnn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
