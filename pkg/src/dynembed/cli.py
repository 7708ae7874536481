"""Command-line entry point: generate / train / evaluate / predict /
benchmark / export-embeddings over one JSON config file.

Settings resolve as flag > config file > built-in default.  Exit codes:
0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .autodiff import AutodiffError
from .evaluation import evaluate_links, evaluate_time, report
from .events import (EventFormatError, EventLog, ValidationError, derive_link_status,
                     load_adjacency, load_events, save_events, split_slots)
from .graph import GraphStateError
from .model import ModelParams, ReplayContext
from .prediction import (FrozenContext, PredictionError, predict_time,
                         rank_link_candidates)
from .synthetic import generate, planted_config, write_truth
from .training import (TrainConfig, TrainingDiverged, fit_loglog,
                       step_complexity_probe, train)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DEFAULTS = {
    "data": {"events": None, "adjacency": None, "format": None,
             "train_fraction": 0.7, "n_slots": 6},
    "model": {"d": 32, "time_scale": 1.0, "log_gaps": False},
    "train": {"batch_size": 200, "survival_samples": 5, "learning_rate": 0.01,
              "epochs": 10, "seed": 0, "clip_norm": 5.0, "patience": 3,
              "val_fraction": 0.1},
    "generate": {"n": 20, "mu_hot": 0.6, "mu_cold": 0.0005, "excitation": 0.3,
                 "decay": 1.0, "assoc_rate": 0.0002, "assoc_boost": 2.0,
                 "horizon": 300.0, "seed": 0, "ring_associated": True},
    "evaluate": {"replace_both": False, "include_train_pairs": False},
}


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    cfg = {section: dict(vals) for section, vals in _DEFAULTS.items()}
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for section, vals in user.items():
        if section not in cfg:
            raise ConfigError(f"{path}: unknown config section {section!r}")
        if not isinstance(vals, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        for key, val in vals.items():
            if key not in cfg[section]:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            cfg[section][key] = val
    return cfg


def _train_config(cfg: dict, args) -> TrainConfig:
    t = dict(cfg["train"])
    for flag, key in (("epochs", "epochs"), ("learning_rate", "learning_rate"),
                      ("batch_size", "batch_size"), ("seed", "seed"),
                      ("survival_samples", "survival_samples")):
        v = getattr(args, flag, None)
        if v is not None:
            t[key] = v
    try:
        return TrainConfig(**t)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"bad train settings: {exc}") from None


def _load_data(cfg: dict, args):
    events_path = getattr(args, "events", None) or cfg["data"]["events"]
    if events_path is None:
        raise ConfigError("no event file given (data.events or --events)")
    adjacency_path = getattr(args, "adjacency", None) or cfg["data"]["adjacency"]
    a0 = None
    log = load_events(events_path, format=cfg["data"]["format"])
    if adjacency_path:
        a0 = load_adjacency(adjacency_path)
        n = max(log.n_nodes, a0.shape[0])
        if a0.shape[0] < n:
            padded = np.zeros((n, n), dtype=a0.dtype)
            padded[: a0.shape[0], : a0.shape[0]] = a0
            a0 = padded
        if n > log.n_nodes:
            log = EventLog(log.events, n, log.horizon, log.labels)
        log = derive_link_status(log, a0)
    return log, a0, events_path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, command: str, cfg: dict, seed: int,
                    dataset_path: str | None, finished: str | None = None) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "dataset_sha256": _sha256(dataset_path) if dataset_path else None,
        "started": _write_manifest._started,
        "finished": finished,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# ---- subcommands -----------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    gen = dict(cfg["generate"])
    if args.seed is not None:
        gen["seed"] = args.seed
    gcfg = planted_config(**gen)
    log, a0 = generate(gcfg)
    os.makedirs(args.out_dir, exist_ok=True)
    save_events(log, os.path.join(args.out_dir, "events.csv"))
    with open(os.path.join(args.out_dir, "adjacency.csv"), "w") as fh:
        for u, v in zip(*np.nonzero(np.triu(a0))):
            fh.write(f"{u},{v}\n")
    write_truth(gcfg, os.path.join(args.out_dir, "truth.csv"))
    print(f"wrote {len(log)} events over {log.n_nodes} nodes to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    tcfg = _train_config(cfg, args)
    log, a0, events_path = _load_data(cfg, args)
    split = split_slots(log, cfg["data"]["train_fraction"], cfg["data"]["n_slots"])
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    _write_manifest._started = _now()
    _write_manifest(out_dir, "train", cfg, tcfg.seed, events_path)

    ckpt = os.path.join(out_dir, "checkpoint.json")
    try:
        result = train(split.train, tcfg, a0=a0, d=cfg["model"]["d"],
                       time_scale=cfg["model"]["time_scale"],
                       log_gaps=cfg["model"]["log_gaps"])
    except TrainingDiverged as exc:
        exc.params.save(ckpt)
        _write_curves(exc.reports, os.path.join(out_dir, "curves.csv"))
        print("training diverged; last finite checkpoint written", file=sys.stderr)
        return EXIT_NUMERIC
    result.params.save(ckpt)
    _write_curves(result.reports, os.path.join(out_dir, "curves.csv"))
    _write_manifest(out_dir, "train", cfg, tcfg.seed, events_path, finished=_now())
    print(f"trained {len(result.reports)} epochs (best epoch {result.best_epoch}); "
          f"checkpoint at {ckpt}")
    return EXIT_OK


def _write_curves(reports, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,event_nll,survival,total,seconds\n")
        for r in reports:
            fh.write(f"{r.epoch},{r.event_nll!r},{r.survival!r},{r.total!r},{r.seconds!r}\n")


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    params = ModelParams.load(args.checkpoint)
    if args.config is not None and params.d != cfg["model"]["d"]:
        raise ConfigError(
            f"checkpoint dimension d={params.d} does not match config d={cfg['model']['d']}")
    log, a0, _ = _load_data(cfg, args)
    split = split_slots(log, cfg["data"]["train_fraction"], cfg["data"]["n_slots"])
    ev = cfg["evaluate"]
    metrics = []
    metrics += evaluate_links(params, split, k_filter=1, a0=a0,
                              replace_both=ev["replace_both"],
                              include_train_pairs=ev["include_train_pairs"])
    metrics += evaluate_links(params, split, k_filter=0, a0=a0,
                              replace_both=ev["replace_both"],
                              include_train_pairs=ev["include_train_pairs"])
    metrics += evaluate_time(params, split, a0=a0)
    out = args.out or "metrics.csv"
    report(metrics, out)
    evaluated = sum(m.n_events for m in metrics)
    print(f"wrote {out} ({len(metrics)} metric rows, {evaluated} evaluated events)")
    if evaluated == 0:
        print("no slot produced any evaluated event", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _replay_for_query(args, t_max: float | None):
    params = ModelParams.load(args.checkpoint)
    a0 = None
    if args.adjacency:
        a0 = load_adjacency(args.adjacency)
    log = load_events(args.events, a0=a0)
    if a0 is not None and a0.shape[0] < log.n_nodes:
        padded = np.zeros((log.n_nodes, log.n_nodes), dtype=a0.dtype)
        padded[: a0.shape[0], : a0.shape[0]] = a0
        a0 = padded
    ctx = ReplayContext(params, n=log.n_nodes, a0=a0, t_start=log.horizon[0])
    pool = {u for u in range(ctx.state.n) if ctx.state.degree(u)}
    for e in log:
        if t_max is not None and e.t >= t_max:
            break
        ctx.process_event(e)
        pool.add(e.u)
        pool.add(e.v)
    return params, ctx, pool


def cmd_predict_link(args) -> int:
    params, ctx, pool = _replay_for_query(args, args.time)
    if args.anchor not in pool:
        pool.add(args.anchor)
    fc = FrozenContext(params, ctx.store)
    truth = args.truth
    if truth is None:
        truth = next(w for w in sorted(pool) if w != args.anchor)
    rr = rank_link_candidates(fc, args.anchor, args.time, args.type, set(),
                              truth=truth, pool=sorted(pool))
    order = sorted(rr.scores, key=lambda w: (-rr.scores[w], w))
    doc = {"anchor": args.anchor, "time": args.time, "k": args.type,
           "scores": {str(w): rr.scores[w] for w in order},
           "ranks": {str(w): i + 1 for i, w in enumerate(order)}}
    if args.truth is not None:
        doc["truth"] = args.truth
        doc["target_rank"] = rr.target_rank
    _emit_json(doc, args.out)
    return EXIT_OK


def cmd_predict_time(args) -> int:
    params, ctx, _ = _replay_for_query(args, None)
    fc = FrozenContext(params, ctx.store)
    pred = predict_time(fc, args.u, args.v, args.type, args.samples,
                        rng=np.random.default_rng(args.seed))
    doc = {"u": args.u, "v": args.v, "k": args.type,
           "estimate": pred.monte_carlo, "closed_form": pred.closed_form,
           "t_bar": pred.t_bar, "total_rate": pred.total_rate,
           "std_error": pred.std_error, "samples": args.samples}
    _emit_json(doc, args.out)
    return EXIT_OK


def _emit_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    tcfg = _train_config(cfg, args)
    sizes = [int(s) for s in args.sizes.split(",")]
    gen = dict(cfg["generate"])
    gen["seed"] = tcfg.seed
    rows = step_complexity_probe(tcfg, sizes, planted_config(**gen))
    with open(args.out, "w") as fh:
        fh.write("events,seconds\n")
        for n_ev, sec in rows:
            fh.write(f"{n_ev},{sec!r}\n")
    slope, r2 = fit_loglog(rows)
    print(f"wrote {args.out}; log-log slope {slope:.3f}, R^2 {r2:.4f}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    params = ModelParams.load(args.checkpoint)
    if args.events:
        a0 = load_adjacency(args.adjacency) if args.adjacency else None
        log = load_events(args.events, a0=a0)
        ctx = ReplayContext(params, n=log.n_nodes, a0=a0, t_start=log.horizon[0])
        for e in log:
            ctx.process_event(e)
        store = ctx.store
    else:
        ctx = ReplayContext(params)
        store = ctx.store
    store.export_csv(args.out)
    print(f"wrote {store.n} embeddings to {args.out}")
    return EXIT_OK


# ---- argument wiring --------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynembed",
                                description="dynamic-graph embedding engine")
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="cap on worker parallelism (recorded in the manifest; "
                        "replay itself is sequential by design)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a synthetic event log")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit parameters on the train window")
    t.add_argument("--config", required=True)
    t.add_argument("--events")
    t.add_argument("--adjacency")
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--survival-samples", dest="survival_samples", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="slot metrics from a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--events")
    e.add_argument("--adjacency")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="ad-hoc queries against a checkpoint")
    prsub = pr.add_subparsers(dest="query", required=True)
    pl = prsub.add_parser("link", help="rank candidate partners at a time")
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--events", required=True)
    pl.add_argument("--adjacency")
    pl.add_argument("--anchor", type=int, required=True)
    pl.add_argument("--time", type=float, required=True)
    pl.add_argument("--type", type=int, choices=(0, 1), required=True)
    pl.add_argument("--truth", type=int)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_predict_link)
    pt = prsub.add_parser("time", help="next-event-time estimate for a pair")
    pt.add_argument("--checkpoint", required=True)
    pt.add_argument("--events", required=True)
    pt.add_argument("--adjacency")
    pt.add_argument("--u", type=int, required=True)
    pt.add_argument("--v", type=int, required=True)
    pt.add_argument("--type", type=int, choices=(0, 1), required=True)
    pt.add_argument("--samples", type=int, default=100000)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out")
    pt.set_defaults(func=cmd_predict_time)

    b = sub.add_parser("benchmark", help="training wall-time scaling probe")
    b.add_argument("--config")
    b.add_argument("--sizes", default="1000,10000,100000")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)

    x = sub.add_parser("export-embeddings", help="dump the embedding store as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--events")
    x.add_argument("--adjacency")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_embeddings)
    return p


_write_manifest._started = None


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, EventFormatError, ValidationError, GraphStateError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, AutodiffError, PredictionError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
