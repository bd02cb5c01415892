"""occlugrid command line: gen, train, eval, infer, render, ablate."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_samples, parse_seeds, split
from .estimator import estimator_for
from .grid import Ogm, OgmParseError, load_ogm, save_ogm
from .model import ABLATIONS, NetConfig
from .nn import CheckpointError, ConfigHashMismatch, load_checkpoint
from .render import write_panels
from .scene import SceneError, TrackParseError, read_dataset, synth_scene, write_dataset

LOG_HEADER = "epoch,L_total,L_global,L_mask,L_occ,acc,mse,is"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _threads(args, cfg=None):
    env = os.environ.get("OCCLUGRID_THREADS")
    if env:
        return int(env)
    if getattr(args, "threads", None):
        return args.threads
    return cfg.threads if cfg else 1


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "model", None):
        cfg = replace(cfg, model=args.model)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "ablate", None):
        cfg = replace(cfg, net=cfg.net.with_ablation(args.ablate))
    cfg.threads = _threads(args, cfg)
    return cfg


def _estimator(net: NetConfig, model: str, cfg: RunConfig | None = None):
    kw = {}
    if cfg is not None:
        kw = dict(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed, threads=cfg.threads)
    return estimator_for(model, net, **kw)


def _from_checkpoint(path, ablate=None, threads=1):
    try:
        meta = load_checkpoint(path)[0]
    except (OSError, CheckpointError) as exc:
        raise CliError("E_CHECKPOINT", str(exc)) from exc
    net = NetConfig.from_dict(meta["config"]["net"])
    kind = meta["config"]["kind"]
    if ablate is not None:
        if kind != "vector":
            raise CliError("E_CONFIG", "--ablate applies to vector models only")
        net = net.with_ablation(ablate)
    est = estimator_for(kind, net, **{k: v for k, v in meta["estimator"].items() if k in ("lr", "batch_size", "seed", "epochs")})
    est.threads = threads
    try:
        est.load(path)
    except ConfigHashMismatch as exc:
        raise CliError("E_CONFIG_HASH", f"{exc}; checkpoint was trained with ablation "
                                        f"{NetConfig.from_dict(meta['config']['net']).ablation!r}") from exc
    return est, meta


def cmd_gen(args):
    if args.seeds is not None:
        seeds = parse_seeds(args.seeds)
    elif args.config:
        data = RunConfig.load(args.config).data
        if data.get("kind") != "synthetic":
            raise CliError("E_CONFIG", "gen needs a synthetic data source")
        seeds = list(range(*data["seeds"]))
    else:
        seeds = []
    if not seeds:
        raise CliError("E_EMPTY", "no seeds given")
    out = Path(args.out)
    if out.suffix != ".jsonl":
        out = out / "dataset.jsonl"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset(out, (synth_scene(s) for s in seeds))
    except OSError as exc:
        raise CliError("E_IO", f"cannot write {out}: {exc}") from exc
    print(f"wrote {len(seeds)} samples to {out}")
    return 0


def _fmt(v):
    return "" if v is None else repr(float(v))


def train_run(cfg: RunConfig, resume=None, verbose=True):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    train, held = split(load_samples(cfg.data), cfg.eval_split)
    if not train:
        raise CliError("E_DATA", "training split is empty")
    est = _estimator(cfg.net, cfg.model, cfg)
    best = {"acc": -1.0}
    log_path = out / "train_log.csv"
    if resume:
        try:
            meta = est.load(resume).epoch_
        except ConfigHashMismatch as exc:
            raise CliError("E_CONFIG_HASH", str(exc)) from exc
        best["acc"] = load_checkpoint(resume)[0].get("best_acc", -1.0)
        est.warm_start = True
        lines = log_path.read_text().splitlines()[: 1 + meta] if log_path.exists() else [LOG_HEADER]
        log_path.write_text("\n".join(lines) + "\n")
    else:
        log_path.write_text(LOG_HEADER + "\n")

    def on_epoch(e, rec):
        with open(log_path, "a") as fh:
            fh.write(",".join([str(rec["epoch"]), *(_fmt(rec[k]) for k in ("loss", "l_global", "l_mask", "l_occ")),
                               *(_fmt(rec.get(k)) for k in ("acc", "mse", "is_score"))]) + "\n")
        acc = rec.get("acc")
        if acc is not None and acc > best["acc"]:
            best["acc"] = acc
            e.save(out / "best.ckpt", {"best_acc": acc})
        if rec["epoch"] % cfg.checkpoint_every == 0:
            e.save(out / f"epoch_{rec['epoch']:04d}.ckpt", {"best_acc": best["acc"]})
        e.save(out / "last.ckpt", {"best_acc": best["acc"]})
        if verbose:
            print(f"epoch {rec['epoch']} loss {rec['loss']:.5f} acc {_fmt(acc)}", flush=True)

    est.fit(train, eval_set=(held,) if held else None, callback=on_epoch)
    return est, train, held


def cmd_train(args):
    cfg = _run_config(args)
    train_run(cfg, resume=args.resume)
    print(f"checkpoints in {cfg.out_dir}")
    return 0


def _dataset(args):
    if args.dataset:
        try:
            return read_dataset(args.dataset)
        except OSError as exc:
            raise CliError("E_IO", str(exc)) from exc
    if args.config:
        cfg = RunConfig.load(args.config)
        return split(load_samples(cfg.data), cfg.eval_split)[1]
    raise CliError("E_DATA", "need --dataset or --config")


def cmd_eval(args):
    est, _ = _from_checkpoint(_checkpoint_path(args), args.ablate, _threads(args))
    samples = _dataset(args)
    try:
        rep = est.evaluate(samples, all_cells=args.all_cells)
    except ValueError as exc:
        raise CliError("E_DIM", str(exc)) from exc
    text = rep.dumps(table_scale=args.table_scale)
    out = _default_out(args, "report.json")
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)
    return 0


def _checkpoint_path(args):
    if args.checkpoint:
        return args.checkpoint
    if args.config:
        run = Path(RunConfig.load(args.config).out_dir)
        for name in ("best.ckpt", "last.ckpt"):
            if (run / name).exists():
                return str(run / name)
        raise CliError("E_CHECKPOINT", f"no checkpoint in {run}; run train first")
    raise CliError("E_ARGS", "need --checkpoint or --config")


def _default_out(args, name):
    if args.out:
        return args.out
    if args.config:
        return str(Path(RunConfig.load(args.config).out_dir) / name)
    return "." if name != "report.json" else None


def _pick(samples, index):
    if not 0 <= index < len(samples):
        raise CliError("E_INDEX", f"index {index} outside dataset of {len(samples)} samples")
    return samples[index]


def cmd_infer(args):
    est, _ = _from_checkpoint(_checkpoint_path(args), None, _threads(args))
    sample = _pick(_dataset(args), args.index)
    pred = Ogm(est.predict_proba([sample])[0], sample.mask.resolution)
    out = Path(_default_out(args, "infer"))
    if out.suffix != ".ogm":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "pred.ogm"
    save_ogm(pred, out)
    print(f"wrote {out}")
    return 0


def cmd_render(args):
    sample = _pick(_dataset(args), args.index)
    if args.pred:
        prob = load_ogm(args.pred)
    else:
        est, _ = _from_checkpoint(_checkpoint_path(args), None, _threads(args))
        prob = Ogm(est.predict_proba([sample])[0], sample.mask.resolution)
    if prob.cells.shape != sample.mask.cells.shape:
        raise CliError("E_DIM", f"prediction {prob.cells.shape} does not match sample grid {sample.mask.cells.shape}")
    for p in write_panels(_default_out(args, "render"), sample.mask, prob, sample.ground_truth):
        print(p)
    return 0


def cmd_ablate(args):
    base = _run_config(args)
    if base.model != "vector":
        raise CliError("E_CONFIG", "ablation sweeps apply to the vector model")
    rows = {}
    for name in ABLATIONS:
        cfg = replace(base, net=base.net.with_ablation(name), out_dir=str(Path(base.out_dir) / name))
        est, _, held = train_run(cfg, verbose=False)
        rows[name] = est.evaluate(held).to_json() if held else None
        ov = rows[name]["overall"] if held else {}
        print(f"{name:10s} acc {_fmt(ov.get('accuracy'))} mse {_fmt(ov.get('mse'))} is {_fmt(ov.get('is'))}")
    Path(base.out_dir, "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="occlugrid", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, model=True):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        if model:
            p.add_argument("--model", choices=["vector", "baseline"])
            p.add_argument("--ablate", choices=sorted(ABLATIONS))

    p = sub.add_parser("gen", help="write synthetic samples as JSON lines")
    common(p, model=False)
    p.add_argument("--seeds", help="'a:b' or comma list")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model from a run config")
    common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for verb, func in (("eval", cmd_eval), ("infer", cmd_infer), ("render", cmd_render)):
        p = sub.add_parser(verb)
        common(p, model=(verb == "eval"))
        p.add_argument("--checkpoint", help="defaults to the config's run directory")
        p.add_argument("--dataset")
        if verb == "eval":
            p.add_argument("--table-scale", action="store_true", help="divide IS by 100 for display")
            p.add_argument("--all-cells", action="store_true", help="score every cell, not only occluded ones")
        else:
            p.add_argument("--index", type=int, default=0)
        if verb == "render":
            p.add_argument("--pred", help="OGM file with predicted probabilities")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="train and score every vector-type subset")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        msg, code = str(exc), exc.code
    except ConfigError as exc:
        msg, code = str(exc), "E_CONFIG"
    except ConfigHashMismatch as exc:
        msg, code = str(exc), "E_CONFIG_HASH"
    except CheckpointError as exc:
        msg, code = str(exc), "E_CHECKPOINT"
    except OgmParseError as exc:
        msg, code = str(exc), "E_PARSE"
    except (SceneError, TrackParseError) as exc:
        msg, code = str(exc), "E_DATA"
    except (ValueError, KeyError) as exc:
        msg, code = str(exc), "E_INVALID"
    except OSError as exc:
        msg, code = str(exc), "E_IO"
    print(f"error[{code}]: {' '.join(msg.split())}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
