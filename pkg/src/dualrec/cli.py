"""Command line entry point: ingest, analyze, train, eval, ablate, sweep."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import artifacts, sparse
from .config import coerce, read_kv, write_kv
from .errors import ConfigError, DualError, EmptyDatasetError
from .evaluation import K_GRID, evaluate, metrics_csv
from .hetgraph import Schema, filter_min_interactions, load_relations, split_interactions, subsample_users
from .metapath import commuting_matrix, correlation_report, link_score, parse_metapath, report_csv
from .trainer import (VARIANTS, TrainConfig, build_model, evaluate_test, fit, history_csv, new_state,
                      prepare_data, variant_config)

log = logging.getLogger("dualrec")

CONFIG_DIR = Path(__file__).parent / "configs"


def _resolve_named(value: str, suffix: str) -> Path:
    """A path, or the name of a shipped file (``lastfm`` -> configs/lastfm.<suffix>)."""
    p = Path(value)
    if p.exists():
        return p
    shipped = CONFIG_DIR / f"{value}.{suffix}"
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"{value!r} is neither a file nor a shipped .{suffix}")


@contextlib.contextmanager
def _threads(n):
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    sparse.set_threads(n)
    try:
        with threadpool_limits(limits=n):
            yield
    finally:
        sparse.set_threads(None)


def _add_train_flags(p):
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=type(f.default).__name__.upper(),
                       help=f"override {f.name} (default {f.default})")


def resolve_config(args) -> TrainConfig:
    """Defaults < config file < ``--key value`` flags."""
    kv = read_kv(_resolve_named(args.config, "conf")) if args.config else {}
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        value = getattr(args, f"cfg_{f.name}", None)
        if value is not None:
            kv[f.name] = value
    unknown = set(kv) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**{k: coerce(str(v), getattr(defaults, k)) for k, v in kv.items()})


def _load_data(bundle_path, cfg: TrainConfig):
    b = artifacts.load_bundle(bundle_path)
    return b, prepare_data(b.graph, b.split, cfg.meta_path, cfg.linkscore_source)


# commands -----------------------------------------------------------------

def cmd_ingest(args):
    dataset = Path(args.dataset)
    if not dataset.is_dir() or not any(dataset.iterdir()):
        raise EmptyDatasetError(f"dataset directory missing or empty: {dataset}")
    schema_path = _resolve_named(args.schema, "schema") if args.schema else dataset / "schema.conf"
    schema = Schema.from_file(schema_path)
    g = load_relations(dataset, schema)
    raw_stats, raw_density = g.stats(), g.density()
    if args.subsample < 1.0:
        g = subsample_users(g, args.subsample, args.seed)
    g = filter_min_interactions(g, args.min_interactions, iterate=args.kcore_iterate)
    split = split_interactions(g, args.seed)
    meta = {
        "format": "dualrec-bundle",
        "schema": str(schema_path),
        "default_meta_path": schema.meta_path,
        "seed": args.seed,
        "min_interactions": args.min_interactions,
        "kcore_iterate": bool(args.kcore_iterate),
        "subsample": args.subsample,
    }
    out = Path(args.out)
    digest = artifacts.save_bundle(out, g, split, meta)
    lines = [f"# dataset {dataset}", "stage,relation,edges,n_src,n_dst"]
    lines += [f"raw,{rel},{e},{a},{b}" for rel, e, a, b in raw_stats]
    lines += [f"filtered,{rel},{e},{a},{b}" for rel, e, a, b in g.stats()]
    lines += [f"# density raw {raw_density:.4%} filtered {g.density():.4%}",
              f"# split train {split.train.nnz} valid {len(split.valid)} test {len(split.test)}",
              f"# sha256 {digest}"]
    Path(str(out) + ".stats.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_kv(str(out) + ".conf", {k: v for k, v in vars(args).items() if k not in ("func",)})
    print("\n".join(lines))


def cmd_analyze(args):
    b = artifacts.load_bundle(args.bundle)
    g = b.graph
    # the analysis looks at the whole filtered dataset, not only the training part
    full = g.interactions
    mp = args.meta_path or b.meta.get("default_meta_path")
    if not mp:
        raise ConfigError("no meta-path given and the bundle has no default")
    path = parse_metapath(g, mp)
    m = link_score(commuting_matrix(g, path), path)
    rows = correlation_report(m, full, args.bins, include_zero=args.include_zero)
    text = report_csv(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _train_run(bundle_path, cfg: TrainConfig, out_dir: Path, resume=None, max_epochs=None):
    b, data = _load_data(bundle_path, cfg)
    model = build_model(data, cfg)
    if resume:
        state, _, _ = artifacts.load_checkpoint(resume)
        state.optimizer.lr = cfg.learning_rate
    else:
        state = new_state(model, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.ckpt"

    def on_epoch(s):
        artifacts.save_checkpoint(ckpt, s, cfg, {"bundle": str(bundle_path)})
        (out_dir / "history.csv").write_text(history_csv(s.history), encoding="utf-8")

    state = fit(model, state, data, cfg, max_epochs=max_epochs, on_epoch=on_epoch,
                dump_dir=out_dir / "diagnostics")
    on_epoch(state)
    return model, state, data


def cmd_train(args):
    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg = replace(cfg, max_epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kv(out / "resolved.conf", cfg.as_dict())
    model, state, _ = _train_run(args.bundle, cfg, out, resume=args.resume)
    print(f"trained {state.epoch} epochs, best epoch {state.best_epoch}, "
          f"val recall@{cfg.eval_k} {state.best_metric:.4f}; checkpoint {out / 'checkpoint.ckpt'}")


def cmd_eval(args):
    state, cfg, meta = artifacts.load_checkpoint(args.checkpoint)
    _, data = _load_data(args.bundle, cfg)
    model = build_model(data, cfg)
    if args.split == "test":
        metrics = evaluate_test(model, state.best_params, data, K_GRID)
    else:
        z = model.forward(state.best_params).z["rec"]
        metrics = evaluate(z, state.best_params["h_rec"], data.n_users, data.r, data.valid, K_GRID)
    text = metrics_csv(metrics)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _metric_header():
    return ",".join(f"{name}@{k}" for name in ("recall", "ndcg") for k in K_GRID)


def _metric_row(metrics):
    return ",".join(f"{metrics[(name, k)]:.6f}" for name in ("recall", "ndcg") for k in K_GRID)


def cmd_ablate(args):
    base = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kv(out / "resolved.conf", base.as_dict())
    rows = ["variant,seed," + _metric_header()]
    for variant in args.variants:
        for seed in args.seeds:
            cfg = variant_config(replace(base, seed=seed), variant)
            model, state, data = _train_run(args.bundle, cfg, out / f"{variant}_seed{seed}", max_epochs=args.epochs)
            metrics = evaluate_test(model, state.best_params, data, K_GRID)
            rows.append(f"{variant},{seed}," + _metric_row(metrics))
            log.info("%s seed %d recall@20 %.4f", variant, seed, metrics[("recall", 20)])
    text = "\n".join(rows) + "\n"
    (out / "ablation.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


SWEEP_AXES = {"layers": int, "theta_neg": float, "meta_path": str}


def cmd_sweep(args):
    base = resolve_config(args)
    cast = SWEEP_AXES[args.axis]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kv(out / "resolved.conf", base.as_dict())
    rows = [f"{args.axis}," + _metric_header()]
    for raw in args.values:
        cfg = replace(base, **{args.axis: cast(raw)})
        model, state, data = _train_run(args.bundle, cfg, out / f"{args.axis}_{raw}", max_epochs=args.epochs)
        metrics = evaluate_test(model, state.best_params, data, K_GRID)
        rows.append(f"{raw}," + _metric_row(metrics))
    text = "\n".join(rows) + "\n"
    (out / "sweep.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrec", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads; 1 gives bitwise determinism")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, filter and split a dataset into a bundle")
    p.add_argument("--dataset", required=True)
    p.add_argument("--schema", help="schema file or shipped name (lastfm, yelp, douban-book)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-interactions", type=int, default=5)
    p.add_argument("--kcore-iterate", action="store_true")
    p.add_argument("--subsample", type=float, default=1.0, help="keep this fraction of users")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="link-score vs interaction probability report")
    p.add_argument("--bundle", required=True)
    p.add_argument("--meta-path")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--include-zero", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    for name, func, helptext in (("train", cmd_train, "train a model"),
                                 ("ablate", cmd_ablate, "train DUAL / DUAL-C / DUAL-PC over seeds"),
                                 ("sweep", cmd_sweep, "train once per value of one hyper-parameter")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--bundle", required=True)
        p.add_argument("--config", help="config file or shipped name")
        p.add_argument("--out", required=True)
        p.add_argument("--epochs", type=int, default=None, help="cap on epochs")
        _add_train_flags(p)
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
        elif name == "ablate":
            p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
            p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
        else:
            p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
            p.add_argument("--values", required=True, nargs="+")

    p = sub.add_parser("eval", help="ranking metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            args.func(args)
    except (DualError, FileNotFoundError) as exc:
        print(f"dualrec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
