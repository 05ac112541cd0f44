"""Command-line entry point: ``gen``, ``train``, ``eval``, ``bench``, ``viz``.

Exit codes: 0 success, 2 configuration / usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import engine
from .baselines import LEARNER_KINDS
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, float_list, parse_config
from .episodes import generate_bank, load_feature_bank, split_classes, write_feature_bank
from .errors import (
    BankFormatError,
    ConfigError,
    InsufficientClasses,
    InsufficientSamples,
)
from .numerics import pca_fit
from .rng import stream
from .transduction import PsmConfig, iam_init_params

log = logging.getLogger("episodic_lssvm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _commented(cfg: RunConfig) -> str:
    return "".join(f"# {line}\n" if line else "#\n" for line in cfg.to_text().splitlines())


def _resolve(args, **flag_keys) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for key in ("seed", "threads", "out_dir"):
        if getattr(args, key, None) is not None:
            overrides[key] = str(getattr(args, key))
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    cfg = parse_config(args.config, overrides)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    return cfg


def _source(cfg: RunConfig) -> engine.EpisodeSource:
    if cfg.bank:
        bank = load_feature_bank(cfg.bank)
        return engine.EpisodeSource(bank=bank, split=split_classes(bank.classes, float_list(cfg.split)))
    return engine.EpisodeSource(synth=cfg.synth_spec())


def _check_dims(pipeline: engine.Pipeline, source: engine.EpisodeSource) -> None:
    if pipeline.backbone.depth and pipeline.backbone.weights[0].shape[0] != source.dim:
        raise ConfigError(
            f"checkpoint backbone expects dim {pipeline.backbone.weights[0].shape[0]}, data has {source.dim}"
        )
    if pipeline.iam is not None and pipeline.iam.d != pipeline.backbone.out_dim(source.dim):
        raise ConfigError("checkpoint IAM width does not match backbone output")


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cfg = _resolve(args, dim="dim", std="within_class_std")
    for name in ("classes", "per_class"):
        if getattr(args, name) < 1:
            raise ConfigError(f"--{name.replace('_', '-')} must be >= 1")
    spec = cfg.synth_spec()
    bank = generate_bank(spec, args.classes, args.per_class, stream(cfg.seed, "gen"))
    out = Path(args.out) if args.out else Path(cfg.out_dir) / "bank.fbk"
    write_feature_bank(bank, out)
    Path(str(out) + ".config").write_text(cfg.to_text())
    print(f"wrote {out}: classes={len(bank.classes)} dim={bank.dim} samples={len(bank)}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.resume:
        raise ConfigError("resuming training is not supported")
    cfg = _resolve(args, epochs="epochs", batches="batches_per_epoch")
    source = _source(cfg)
    widths = cfg.backbone_widths()
    if widths and widths[0] != source.dim:
        raise ConfigError(f"backbone input width {widths[0]} != data dim {source.dim}")
    backbone = engine.backbone_init(widths, stream(cfg.seed, "init", "backbone"))
    feat_dim = backbone.out_dim(source.dim)
    iam = None
    if cfg.iam:
        iam = iam_init_params(
            feat_dim, cfg.iam_dk or None, cfg.iam_dv or None, cfg.iam_ratio(feat_dim),
            stream(cfg.seed, "init", "iam"), cfg.iam_dropout,
        )
    tcfg = engine.TrainConfig(
        way=cfg.way, train_shot=cfg.train_shot, test_shot=cfg.shot, query_train=cfg.query_train,
        query_test=cfg.query, epochs=cfg.epochs, batches_per_epoch=cfg.batches_per_epoch,
        episodes_per_batch=cfg.episodes_per_batch, lr_init=cfg.lr_init,
        lr_milestones=tuple(int(v) for v in float_list(cfg.lr_milestones)),
        lr_factors=tuple(float_list(cfg.lr_factors)), momentum=cfg.momentum,
        weight_decay=cfg.weight_decay, val_shot=cfg.val_shot, val_episodes=cfg.val_episodes,
        seed=cfg.seed,
    )
    out = Path(cfg.out_dir)
    with open(out / "train_log.txt", "w") as fh:
        fh.write(_commented(cfg))
        fh.write("# epoch batch loss lr\n")
        result = engine.train(
            tcfg, source, engine.Pipeline(backbone, iam), cfg.lssvm_config(),
            on_record=lambda rec: fh.write(rec.line() + "\n"),
        )
    with open(out / "val_log.txt", "w") as fh:
        fh.write(_commented(cfg))
        fh.write("# epoch val_acc\n")
        for epoch, acc in enumerate(result.val_history):
            fh.write(f"{epoch} {acc:.10f}\n")
    save_checkpoint(out / "checkpoint.ckpt", result.pipeline, cfg)
    best = result.val_history[result.best_epoch] if result.val_history else float("nan")
    print(f"trained {len(result.log)} batches; best epoch {result.best_epoch} val_acc {best:.4f}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def _load_pipeline(cfg: RunConfig, checkpoint, source) -> engine.Pipeline:
    pipeline = engine.Pipeline()
    if checkpoint:
        pipeline, _ = load_checkpoint(checkpoint)
        _check_dims(pipeline, source)
    if cfg.iam and pipeline.iam is None:
        raise ConfigError("--iam on needs a checkpoint holding IAM parameters")
    return pipeline


def cmd_eval(args) -> int:
    cfg = _resolve(
        args, learner="learner", iam="iam", psm_iters="psm_iters", episodes="episodes",
        way="way", shot="shot",
    )
    source = _source(cfg)
    pipeline = _load_pipeline(cfg, args.checkpoint, source)
    spec = cfg.learner_spec()
    out = Path(cfg.out_dir)
    common = dict(way=cfg.way, shot=cfg.shot, query=cfg.query, episodes=cfg.episodes,
                  seed=cfg.seed, threads=cfg.threads)

    if args.ablation:
        if pipeline.iam is None:
            raise ConfigError("--ablation needs a checkpoint holding IAM parameters")
        name = spec.kind.upper()
        lines = ["model,mean_acc,ci95"]
        for use_iam in (False, True):
            for k in (0, cfg.psm_iters):
                label = name + ("+IAM" if use_iam else "") + ("+PSM" if k else "")
                rep = engine.evaluate(source, pipeline, spec, psm=PsmConfig(k, cfg.psm_accumulate),
                                      use_iam=use_iam, **common)
                lines.append(f"{label},{rep.mean_acc:.10f},{rep.ci95:.10f}")
                print(f"{label:<16} {100 * rep.mean_acc:6.2f} ± {100 * rep.ci95:.2f} %")
        (out / "ablation.csv").write_text(_commented(cfg) + "\n".join(lines) + "\n")
        return EXIT_OK

    report, traces = engine.evaluate(
        source, pipeline, spec, psm=cfg.psm_config(), use_iam=cfg.iam, return_traces=True, **common
    )
    (out / "eval_report.txt").write_text(cfg.to_text() + "\n[report]\n" + report.to_text())
    (out / "eval_episodes.csv").write_text(_commented(cfg) + report.csv_text())
    (out / "eval_timing.txt").write_text(_commented(cfg) + report.timing_text())
    if args.sweep:
        lines = ["k,mean_acc,ci95"]
        for k in range(traces.shape[1]):
            col = traces[:, k]
            lines.append(f"{k},{col.mean():.10f},{engine.confidence95(col):.10f}")
        (out / "psm_sweep.csv").write_text(_commented(cfg) + "\n".join(lines) + "\n")
        print("\n".join(lines))
    print(f"mean_acc = {100 * report.mean_acc:.2f} ± {100 * report.ci95:.2f} % over {report.episodes} episodes")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _resolve(args, episodes="bench_episodes", learners="learners", way="way",
                   shot="shot", dim="bench_dim")
    kinds = [k.strip() for k in cfg.learners.split(",") if k.strip()]
    specs = [cfg.learner_spec(k) for k in kinds]
    rows = engine.benchmark_timing(
        specs, cfg.bench_episodes, cfg.way, cfg.shot, cfg.query, cfg.bench_dim, cfg.seed,
        cfg.synth_spec(dim=cfg.bench_dim),
    )
    lines = [engine.TIMING_HEADER] + [r.csv() for r in rows]
    times = {r.learner: r.total_s for r in rows}
    extra = []
    if "lssvm" in times and "nn" in times:
        extra.append(f"# lssvm_nn_time_ratio = {times['lssvm'] / times['nn']:.4f}")
    (Path(cfg.out_dir) / "bench.csv").write_text(_commented(cfg) + "\n".join(lines + extra) + "\n")
    print(f"{'learner':<8} {'acc':>8} {'ci95':>8} {'total_s':>10} {'per_episode_us':>15}")
    for r in rows:
        print(f"{r.learner:<8} {100 * r.acc:8.2f} {100 * r.ci95:8.2f} {r.total_s:10.3f} {r.per_episode_us:15.1f}")
    for line in extra:
        print(line[2:])
    return EXIT_OK


def cmd_viz(args) -> int:
    cfg = _resolve(args, way="way", shot="shot")
    source = _source(cfg)
    pipeline, _ = load_checkpoint(args.checkpoint)
    _check_dims(pipeline, source)
    if pipeline.iam is None:
        raise ConfigError("viz needs a checkpoint holding IAM parameters")
    ep = source.sample("test", cfg.way, cfg.shot, cfg.query, stream(cfg.seed, "viz", 0))
    adjusted, support, query = engine.episode_features(pipeline, ep, use_iam=True)
    union = np.vstack([support, adjusted, query])
    mean, comps, _ = pca_fit(union)
    proj = (union - mean) @ comps
    roles = ["support"] * len(support) + ["adjusted"] * len(adjusted) + ["query"] * len(query)
    classes = np.concatenate([ep.support_y, ep.support_y, ep.query_y])
    spec = cfg.learner_spec()
    from .baselines import fit_learner, learner_predict

    def acc(sup):
        model = fit_learner(spec, sup, ep.support_y, ep.way)
        return float(np.mean(learner_predict(spec, model, query) == ep.query_y))

    lines = ["role,class,pc1,pc2"] + [
        f"{r},{c},{p[0]:.8f},{p[1]:.8f}" for r, c, p in zip(roles, classes, proj)
    ]
    footer = f"# acc_before = {acc(support):.6f} acc_after = {acc(adjusted):.6f}"
    path = Path(cfg.out_dir) / "viz.csv"
    path.write_text(_commented(cfg) + "\n".join(lines) + "\n" + footer + "\n")
    print(f"wrote {path}: {len(roles)} points; {footer[2:]}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--threads", type=int)
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="episodic-lssvm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic FBK1 feature bank")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--dim", type=int)
    p.add_argument("--per-class", dest="per_class", type=int, default=40)
    p.add_argument("--std", type=float)
    p.add_argument("--out", help="output path (.fbk binary or .csv)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="meta-train backbone and IAM")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batches", type=int)
    p.add_argument("--resume", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate on held-out episodes")
    p.add_argument("--checkpoint")
    p.add_argument("--learner", choices=LEARNER_KINDS)
    p.add_argument("--iam", choices=("on", "off"))
    p.add_argument("--psm-iters", dest="psm_iters", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--ablation", action="store_true", help="{IAM off,on} x {PSM off,on} table")
    p.add_argument("--sweep", action="store_true", help="per-iteration PSM accuracy (k = 0..psm_iters)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time base learners")
    p.add_argument("--episodes", type=int)
    p.add_argument("--learners")
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--dim", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("viz", parents=[common], help="PCA scatter of support before/after IAM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BankFormatError, InsufficientClasses, InsufficientSamples, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
