"""Operator entry point: generate data, train, evaluate, predict, verify.

Exit codes: 0 success, 2 usage/config error, 3 data or validation error,
4 numeric failure. Every run writes (or prints) a config echo holding the
fully resolved configuration, seed, and version, so a run is reproducible
from its echo alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import numeric
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .crf import CrfError, CrfModel, discrete_classifier
from .data import Dataset, DatasetError, SyntheticSpec, generate_synthetic, load_bundle, save_bundle
from .decode import DecodeError, evaluate_dataset, rank_predictions_scored
from .features import FeatureError
from .gradchecks import TOLERANCE, run_gradchecks
from .metrics import GTVERB, TOP1, TOP5, MetricsError, rare_filter
from .models import Model, ModelError, ModelKind
from .numeric import NumericError
from .schema import FORWARD, LexiconError, REVERSED, ValidationError, parse_lexicon
from .train import TrainConfig, TrainingError, train_loop, verb_class_weights

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ERRORS = (LexiconError, ValidationError, DatasetError, FeatureError,
               CheckpointError, MetricsError, CrfError)
USAGE_ERRORS = (ModelError, DecodeError)
NUMERIC_ERRORS = (NumericError, TrainingError)


class UsageError(ValueError):
    pass


def _echo(args: argparse.Namespace, payload: dict, out: Path | None) -> None:
    doc = {
        "command": args.command,
        "version": f"sitrec-{__version__}",
        "seed": payload.get("seed"),
        "config": payload,
    }
    text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False)
    if out is None:
        print(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(text + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file {path!r} not found") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path!r} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return doc


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        n_verbs=args.verbs, max_roles=args.max_roles, n_nouns=args.nouns,
        pool_size=args.pool_size, dg=args.dg, dr=args.dr, dc=args.dc,
        grid=args.grid, sigma=args.sigma, n_train=args.train_size,
        n_dev=args.dev_size, n_test=args.test_size, seed=args.seed,
        disjoint_role_pools=not args.overlapping_pools,
        perturb_prob=args.perturb,
    )
    data = generate_synthetic(spec)
    out = Path(args.out)
    save_bundle(data, out)
    _echo(args, asdict(spec), out)
    print(f"wrote bundle to {out} "
          f"(|V|={data.lexicon.n_verbs}, |N|={data.lexicon.n_nouns}, "
          f"train={len(data.splits['train'].examples)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _build_trainer(name: str, args, lex, dims, train_ds, config: TrainConfig):
    if name in ("a", "b", "c", "d"):
        kind = ModelKind(kind=name, direction=args.direction,
                         use_attention=args.attention)
        if kind.use_attention and dims.grid < 1:
            raise UsageError("--attention needs a dataset generated with grid features")
        weights = verb_class_weights(lex) if config.weighted_verb_loss else None
        return Model(kind, lex, dims, hidden_size=args.hidden,
                     embed_size=args.embed, attn_size=args.attn,
                     seed=config.seed, verb_class_weights=weights)
    if args.attention or args.direction != FORWARD:
        raise UsageError(f"--attention/--direction do not apply to model {name!r}")
    if name == "crf":
        return CrfModel(lex, dims, seed=config.seed)
    if name == "discrete":
        return discrete_classifier(lex, dims, train_ds.examples, seed=config.seed)
    raise UsageError(f"unknown model {name!r}")


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    merged = dict(file_cfg)
    overrides = {
        "lr_initial": args.lr, "lr_decay_factor": args.decay_factor,
        "lr_decay_every": args.decay_every, "batch_size": args.batch_size,
        "max_iters": args.iters, "seed": args.seed, "eval_every": args.eval_every,
        "select_metric": args.select_metric,
        "weighted_verb_loss": False if args.no_weighted_verb_loss else None,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    allowed = set(TrainConfig.__dataclass_fields__)
    unknown = set(merged) - allowed
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    config = TrainConfig(**merged)

    if args.dtype == "float32":
        numeric.set_default_dtype(np.float32)
    data = load_bundle(args.data)
    train_ds, dev_ds = data.splits["train"], data.splits["dev"]
    trainer = _build_trainer(args.model, args, data.lexicon, data.dims, train_ds, config)

    out = Path(args.out)
    for sub in ("checkpoints", "logs", "metrics"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    echo_payload = {
        "model": args.model, "direction": args.direction, "attention": args.attention,
        "hidden": args.hidden, "embed": args.embed, "attn": args.attn,
        "data": str(args.data), "dtype": args.dtype, "seed": config.seed,
        **{k: getattr(config, k) for k in (
            "lr_initial", "lr_decay_factor", "lr_decay_every", "batch_size",
            "max_iters", "eval_every", "weighted_verb_loss", "select_metric",
            "clip_norm",
        )},
    }
    _echo(args, echo_payload, out)

    result = train_loop(trainer, train_ds, dev_ds, config)

    with open(out / "logs" / "train.jsonl", "w", encoding="utf-8") as f:
        for record in result.log:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    ckpt = out / "checkpoints" / "best.ckpt"
    save_checkpoint(ckpt, trainer, iteration=max(result.best_iteration, 0))
    if result.best_metrics is not None:
        (out / "metrics" / "dev_best.json").write_text(
            json.dumps({"iteration": result.best_iteration,
                        **result.best_metrics.as_dict()},
                       indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        print(result.best_metrics.render())
    print(f"best iteration {result.best_iteration}; checkpoint {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    data = load_bundle(args.data)
    if args.split not in data.splits:
        raise UsageError(f"bundle has no split {args.split!r}")
    ds = data.splits[args.split]
    trainer, _ = load_checkpoint(args.checkpoint, data.lexicon)

    examples = ds.examples
    if args.rare:
        examples = rare_filter(data.lexicon, examples)
        if not examples:
            raise DatasetError("rare filter removed every example")
    ds = Dataset(name=ds.name, lexicon=ds.lexicon, examples=examples,
                 features=ds.features)

    if args.setting == "all":
        settings = None
    else:
        settings = {"top1": (TOP1,), "top5": (TOP5,), "gtverb": (GTVERB,)}[args.setting]
        if settings[0] in (TOP1, TOP5) and not trainer.supports_verb_prediction:
            raise UsageError(f"model has no action path; setting {args.setting!r} unavailable")
    metrics, _ = evaluate_dataset(trainer, ds, settings,
                                  value_all_single_annotation=args.value_all_single)

    out = Path(args.out)
    (out / "metrics").mkdir(parents=True, exist_ok=True)
    _echo(args, {"checkpoint": str(args.checkpoint), "data": str(args.data),
                 "split": args.split, "setting": args.setting, "rare": args.rare,
                 "value_all_single": args.value_all_single, "seed": None}, out)
    tag = f"{args.split}_{args.setting}" + ("_rare" if args.rare else "")
    (out / "metrics" / f"{tag}.json").write_text(
        json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(metrics.render())
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    data = load_bundle(args.data)
    if args.split not in data.splits:
        raise UsageError(f"bundle has no split {args.split!r}")
    ds = data.splits[args.split]
    trainer, _ = load_checkpoint(args.checkpoint, data.lexicon)
    by_id = {ex.example_id: ex for ex in ds.examples}
    if args.example_id not in by_id:
        raise DatasetError(f"no example {args.example_id!r} in split {args.split!r}")
    ex = by_id[args.example_id]
    rec = ds.features[ex.feature_ref]
    ranked = rank_predictions_scored(trainer, rec, args.topk)
    record = {
        "example_id": ex.example_id,
        "predictions": [
            {"verb": sit.verb,
             "frame": [[role, noun] for role, noun in sit.pairs(data.lexicon)],
             "score": score}
            for sit, score in ranked
        ],
    }
    line = json.dumps(record, sort_keys=True, ensure_ascii=False)
    out = Path(args.out)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    _echo(args, {"checkpoint": str(args.checkpoint), "data": str(args.data),
                 "split": args.split, "example_id": args.example_id,
                 "topk": args.topk, "seed": None}, out)
    with open(out / "predictions" / "predictions.jsonl", "a", encoding="utf-8") as f:
        f.write(line + "\n")
    print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck / inspect


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds)
    report = run_gradchecks(args.module, seeds=seeds)
    _echo(args, {"module": args.module, "seeds": args.seeds,
                 "tolerance": args.tolerance, "seed": None}, None)
    failed = False
    for name in sorted(report):
        err = report[name]
        status = "PASS" if err < args.tolerance else "FAIL"
        failed |= status == "FAIL"
        print(f"{status} {name} max_rel_err={err:.3e}")
    if failed:
        print("error: gradient check failure", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_inspect(args) -> int:
    if bool(args.lexicon) == bool(args.data):
        raise UsageError("inspect needs exactly one of --lexicon or --data")
    if args.lexicon:
        lex = parse_lexicon(Path(args.lexicon).read_text(encoding="utf-8"))
        frames = [len(lex.frame_of[v]) for v in lex.verbs]
        info = {
            "verbs": lex.n_verbs,
            "nouns": lex.n_nouns,
            "roles": len(lex.roles),
            "valid_tuples": len(lex.valid_tuples),
            "roles_per_verb_min": min(frames),
            "roles_per_verb_max": max(frames),
            "lexicon_hash": lex.content_hash(),
        }
    else:
        data = load_bundle(args.data)
        info = {
            "lexicon_hash": data.lexicon.content_hash(),
            "dims": asdict(data.dims),
            "splits": {name: len(ds.examples) for name, ds in data.splits.items()},
        }
    _echo(args, {"lexicon": args.lexicon, "data": args.data, "seed": None}, None)
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitrec")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic planted-signal bundle")
    g.add_argument("--out", required=True)
    g.add_argument("--verbs", type=int, default=20)
    g.add_argument("--max-roles", type=int, default=4)
    g.add_argument("--nouns", type=int, default=50)
    g.add_argument("--pool-size", type=int, default=5)
    g.add_argument("--dg", type=int, default=64)
    g.add_argument("--dr", type=int, default=32)
    g.add_argument("--dc", type=int, default=0)
    g.add_argument("--grid", type=int, default=0)
    g.add_argument("--sigma", type=float, default=0.05)
    g.add_argument("--train-size", type=int, default=2000)
    g.add_argument("--dev-size", type=int, default=300)
    g.add_argument("--test-size", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--perturb", type=float, default=0.15)
    g.add_argument("--overlapping-pools", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a bundle")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--model", required=True,
                   choices=["a", "b", "c", "d", "crf", "discrete"])
    t.add_argument("--direction", choices=[FORWARD, REVERSED], default=FORWARD)
    t.add_argument("--attention", action="store_true")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--embed", type=int, default=64)
    t.add_argument("--attn", type=int, default=32)
    t.add_argument("--lr", type=float)
    t.add_argument("--decay-factor", type=float)
    t.add_argument("--decay-every", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--select-metric")
    t.add_argument("--no-weighted-verb-loss", action="store_true", default=False)
    t.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="dev")
    e.add_argument("--setting", choices=["all", "top1", "top5", "gtverb"], default="all")
    e.add_argument("--rare", action="store_true")
    e.add_argument("--value-all-single", action="store_true",
                   help="value-all must match a single annotation")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="dump ranked situations for one example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--example-id", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--module", choices=["all", "numeric", "rnn", "features", "models"],
                   default="all")
    c.add_argument("--seeds", type=int, default=3)
    c.add_argument("--tolerance", type=float, default=TOLERANCE)
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="summarize a lexicon or bundle")
    i.add_argument("--lexicon")
    i.add_argument("--data")
    i.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
