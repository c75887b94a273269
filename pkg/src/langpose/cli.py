"""Command line entry point: ``langpose {train,eval,predict,gradcheck,make-synthetic,visualize}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config
from .data import export_coco, load_coco_keypoints, make_synthetic_dataset
from .evaluation import dump_predictions
from .losses import NonFiniteLossError

logger = logging.getLogger("langpose")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args, cfg: RunConfig, skeleton=None):
    if getattr(args, "annotations", None):
        if not args.images:
            raise ConfigError("--annotations needs --images")
        return load_coco_keypoints(args.annotations, args.images, skeleton or cfg.skeleton())
    return cfg.build_dataset()


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    dump_config(cfg, out / "config.yaml")
    dataset = cfg.build_dataset()
    est = cfg.to_estimator(log_path=str(out / "train_log.jsonl"))
    try:
        est.fit(dataset)
    except NonFiniteLossError as e:
        path = save_checkpoint(est, out / "checkpoint_last_good.npz", extra={"error": str(e)})
        logger.error("%s; last good weights kept in %s", e, path)
        return 1
    save_checkpoint(est, out / "checkpoint_final.npz", extra={"steps": est.n_steps_})
    save_checkpoint(est, out / "checkpoint_best.npz", state_dict=est.best_state_,
                    extra={"best_loss": est.best_loss_})
    summary = {"steps": est.n_steps_, "initial_loss": est.history_[0]["total"],
               "final_loss": est.history_[-1]["total"], "best_loss": est.best_loss_}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    est = load_checkpoint(args.checkpoint)
    dataset = _dataset(args, cfg, est.skeleton_)
    report = est.evaluate(dataset)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.json").write_text(report.to_json())
    print(report.to_text(), end="")
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    est = load_checkpoint(args.checkpoint)
    dataset = _dataset(args, cfg, est.skeleton_)
    preds = est.predict(dataset)
    records = dump_predictions(preds, [s.sample_id for s in dataset.samples])
    path = out / "predictions.json"
    path.write_text(json.dumps(records))
    print(f"{len(records)} poses -> {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    seed = args.seed if args.seed is not None else (load_config(args.config).seed if args.config else 0)
    report = run_gradcheck(seed=seed)
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(report.to_json())
    return 0 if report.passed else 1


def cmd_make_synthetic(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    count = args.count if args.count is not None else cfg.data.synthetic.num_samples
    dataset = make_synthetic_dataset(cfg.synthetic_config(), count)
    path = export_coco(dataset, out)
    print(f"{count} scenes -> {path}")
    return 0


def cmd_visualize(args) -> int:
    from .visualize import visualize

    cfg = _config(args)
    out = _out_dir(args, cfg)
    est = load_checkpoint(args.checkpoint)
    dataset = _dataset(args, cfg, est.skeleton_)
    indices = args.index if args.index else range(len(dataset.samples))
    for i in indices:
        sample = dataset.samples[i]
        info = visualize(est, sample, out / f"{sample.sample_id}.png", joint=args.joint)
        print(json.dumps(info))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="langpose")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.set_defaults(func=fn)
        return p

    def data_args(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--annotations", help="COCO keypoint JSON (default: the config's data section)")
        p.add_argument("--images", help="image root for --annotations")

    add("train", cmd_train, "train a model from a run config")
    data_args(add("eval", cmd_eval, "OKS AP/AR of a checkpoint on a dataset"))
    data_args(add("predict", cmd_predict, "write COCO-style pose results"))
    add("gradcheck", cmd_gradcheck, "finite-difference gradient report")
    p = add("make-synthetic", cmd_make_synthetic, "export synthetic scenes as COCO JSON + PNG")
    p.add_argument("--count", type=int)
    p = add("visualize", cmd_visualize, "draw predicted skeletons")
    data_args(p)
    p.add_argument("--index", type=int, nargs="*", help="sample indices (default: all)")
    p.add_argument("--joint", help="overlay the joint-text score map of this joint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
