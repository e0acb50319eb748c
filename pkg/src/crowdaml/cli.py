"""Command line entry point: generate, train, eval, sweep, ablate.

Every subcommand reads one flat config file; ``--set key=value`` overrides
single keys. Exit codes: 0 ok, 2 config, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, CrowdAMLError
from .experiment import (
    ablation_group_source,
    evaluate,
    generate,
    label_ratio_sweep,
    load_config,
    prepare,
    run_metadata,
    train_prepared,
    write_report,
)
from .multitask import ModelParams, TrainResult, config_dict


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args):
    over = _overrides(args.set)
    if getattr(args, "seed", None) is not None:
        over["seed"] = str(args.seed)
    if getattr(args, "out", None):
        over["out_dir"] = args.out
    return load_config(args.config, over)


def cmd_generate(args) -> int:
    cfg = _config(args)
    if cfg.dataset != "synthetic":
        raise ConfigError("generate needs dataset = synthetic")
    ds = generate(cfg)
    ds.write(cfg.out_dir)
    print(json.dumps(ds.summary(), sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    prep = prepare(cfg)
    result = train_prepared(cfg, prep)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = run_metadata(cfg, prep, result)
    meta["train"] = config_dict(cfg.train)
    result.params.save(out / "checkpoint.json", meta)
    (out / "train_log.jsonl").write_text(result.log_lines(), encoding="utf-8")
    print(f"{result.mode}: {len(result.history)} epochs, final loss "
          f"{result.history[-1]['loss_total']:.6f} -> {out / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    over = _overrides(args.set)
    params, meta = ModelParams.load(args.checkpoint)
    # the split is a function of the seed, so reuse the training seed
    over.setdefault("seed", str(args.seed if args.seed is not None else meta.get("seed", 0)))
    if args.out:
        over["out_dir"] = args.out
    cfg = load_config(args.config, over)
    prep = prepare(cfg)
    result = TrainResult(params, mode=meta.get("mode", "multi-task"),
                         class_weights=tuple(meta.get("class_weights", (1.0, 1.0))))
    report = evaluate(prep.graph, prep.labels, params, run_metadata(cfg, prep, result))
    write_report(Path(cfg.out_dir) / "report.json", report)
    print(f"f1={report.f1:.4f} auc={report.auc:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    ratios = None
    if args.ratios:
        try:
            ratios = [float(x) for x in args.ratios.split(",")]
        except ValueError:
            raise ConfigError(f"--ratios must be comma-separated numbers, got {args.ratios!r}") from None
    reports = label_ratio_sweep(cfg, ratios)
    for rep in reports:
        print(f"ratio={rep.metadata['train_ratio']} f1={rep.f1:.4f} auc={rep.auc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    for source, rep in ablation_group_source(cfg).items():
        print(f"{source}: f1={rep.f1:.4f} auc={rep.auc:.4f} mode={rep.metadata['mode']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdaml", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, fn, help, seed_required=False):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output directory (overrides out_dir)")
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.set_defaults(func=fn)
        return sp

    common("generate", cmd_generate, "write a synthetic dataset as CSV", seed_required=True)
    common("train", cmd_train, "train and write checkpoint.json + train_log.jsonl", seed_required=True)
    ev = common("eval", cmd_eval, "score a checkpoint on the test split")
    ev.add_argument("--checkpoint", required=True)
    sw = common("sweep", cmd_sweep, "label-ratio sweep, writes sweep.csv")
    sw.add_argument("--ratios", help="comma-separated ratios (default: config)")
    common("ablate", cmd_ablate, "compare group sources native/modularity/none")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CrowdAMLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
