"""Command-line entry point: one binary, one subcommand per pipeline stage.

Every subcommand accepts ``--threads``, ``--seed``, ``--config`` and
``--log-level``. Bad flags exit 2 with usage; a failing stage exits 1 with a
diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import PipelineConfig, load_config
from .pretrain.train import TrainConfig

log = logging.getLogger("handmine")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads for parallel stages (default 1)")
    common.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    common.add_argument("--config", default=None, help="TOML pipeline config")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="handmine", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic hand corpus")
    p.add_argument("--videos", type=_positive_int)
    p.add_argument("--frames", type=_positive_int)
    p.add_argument("--coherence", type=float)
    p.add_argument("--size", type=_positive_int)
    p.add_argument("--stroke", type=float)
    p.add_argument("--noise", type=float, help="keypoint jitter sigma (default 0)")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate and hand-balance records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--images", help="image archive aligned with --records")
    p.add_argument("--out-images", help="balanced image archive (mirrored rows flipped)")
    p.add_argument("--no-balance", action="store_true")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed line")
    p.add_argument("--min-score", type=float)

    p = sub.add_parser("fit-pca", parents=[common], help="fit the keypoint PCA")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=_positive_int)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--subsample", type=_positive_int)

    p = sub.add_parser("embed", parents=[common], help="project records into the embedding cache")
    p.add_argument("--records", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("mine", parents=[common], help="mine cross-video nearest neighbours")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topk", type=_positive_int, default=1)
    p.add_argument("--query", help="VIDEO:FRAME; mine only this row")

    p = sub.add_parser("topk", parents=[common], help="print the K nearest cross-video rows")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--query", required=True, help="VIDEO:FRAME")
    p.add_argument("--k", type=_positive_int, default=5)

    p = sub.add_parser("train", parents=[common], help="contrastive pre-training")
    p.add_argument("--records", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--model", required=True, help="PCA model")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--pairs", required=True, help="Top-1 pair file")
    p.add_argument("--out-dir", required=True)
    _train_flags(p)

    p = sub.add_parser("eval", parents=[common], help="pose metrics or mining quality")
    p.add_argument("--pred", help="predicted 3D joints (.npy or JSONL)")
    p.add_argument("--gt", help="ground-truth 3D joints (.npy or JSONL)")
    p.add_argument("--root-relative", action="store_true")
    p.add_argument("--records", help="records for mining quality")
    p.add_argument("--embeddings")
    p.add_argument("--pairs")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--figure", help="PNG figure path")

    p = sub.add_parser("all", parents=[common], help="run every stage into --out-dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--videos", type=_positive_int)
    p.add_argument("--frames", type=_positive_int)
    _train_flags(p)
    return parser


def _train_flags(p):
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-n", type=_positive_int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--weights", type=_on_off, metavar="{on,off}")
    p.add_argument("--loss-denominator", choices=["simclr", "literal"])
    p.add_argument("--weight-space", choices=["pca", "raw"])
    p.add_argument("--topk-positives", type=_positive_int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])


_TRAIN_FLAGS = ("steps", "batch_n", "learning_rate", "tau", "weights", "loss_denominator",
                "weight_space", "topk_positives", "optimizer")


def _resolve(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    over = {k: getattr(args, k) for k in _TRAIN_FLAGS if getattr(args, k, None) is not None}
    if over:
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), **over})
    return cfg


def _cmd_synth(args, cfg: PipelineConfig):
    s = cfg.synth
    s = replace(s, **{k: getattr(args, k) for k in ("videos", "frames", "coherence", "size",
                                                    "stroke", "noise")
                      if getattr(args, k) is not None})
    paths = pipeline.run_synth(args.out_dir, s.videos, s.frames, s.coherence, cfg.seed,
                               s.size, s.stroke, s.noise, args.threads)
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))


def _cmd_ingest(args, cfg: PipelineConfig):
    min_score = args.min_score if args.min_score is not None else cfg.ingest.min_score
    report = pipeline.run_ingest(args.records, args.out, cfg.seed, args.images, args.out_images,
                                 balance=cfg.ingest.balance and not args.no_balance,
                                 strict=cfg.ingest.strict or args.strict, min_score=min_score)
    print(json.dumps(report, sort_keys=True))


def _cmd_fit_pca(args, cfg: PipelineConfig):
    dim = args.dim or cfg.pca.dim
    subsample = args.subsample or cfg.pca.subsample
    model = pipeline.run_fit_pca(args.records, args.out, dim, cfg.pca.center and not args.no_center,
                                 subsample, cfg.seed, args.threads)
    print(json.dumps({"dim": model.dim, "explained_variance": model.explained_variance.tolist()}))


def _cmd_embed(args, cfg: PipelineConfig):
    store = pipeline.run_embed(args.records, args.model, args.out, args.threads)
    print(json.dumps({"rows": len(store), "dim": store.dim}))


def _cmd_mine(args, cfg: PipelineConfig):
    pipeline.run_mine(args.embeddings, args.out, args.topk, args.query, args.threads)


def _cmd_topk(args, cfg: PipelineConfig):
    pipeline.run_topk(args.embeddings, args.query, args.k, sys.stdout)


def _cmd_train(args, cfg: PipelineConfig):
    tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": cfg.seed})
    summary = pipeline.run_train(args.records, args.images, args.model, args.embeddings,
                                 args.pairs, args.out_dir, tcfg, args.threads)
    print(json.dumps(summary, sort_keys=True))


def _cmd_eval(args, cfg: PipelineConfig):
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise ValueError("--pred and --gt go together")
        report = pipeline.run_eval_pose(args.pred, args.gt,
                                        args.root_relative or cfg.eval.root_relative, args.figure)
    elif args.records and args.embeddings and args.pairs:
        report = pipeline.run_eval_mining(args.records, args.embeddings, args.pairs, cfg.seed,
                                          tuple(cfg.mine.profile_ranks), args.figure, args.threads)
    else:
        raise ValueError("eval needs --pred/--gt or --records/--embeddings/--pairs")
    if args.out:
        pipeline.write_json(report, args.out)
    print(json.dumps(report, sort_keys=True))


def _cmd_all(args, cfg: PipelineConfig):
    if args.videos is not None:
        cfg.synth = replace(cfg.synth, videos=args.videos)
    if args.frames is not None:
        cfg.synth = replace(cfg.synth, frames=args.frames)
    result = pipeline.run_all(cfg, args.out_dir, args.threads)
    print(json.dumps({"train": result["train"], "mining_ratio": result["mining"]["ratio"]},
                     sort_keys=True))


COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "fit-pca": _cmd_fit_pca,
    "embed": _cmd_embed,
    "mine": _cmd_mine,
    "topk": _cmd_topk,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "all": _cmd_all,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        # BLAS stays single-threaded so float results never depend on --threads;
        # parallel stages split work over their own fixed-size shards instead
        with threadpool_limits(1):
            COMMANDS[args.command](args, cfg)
    except (ValueError, OSError, KeyError, FloatingPointError) as err:
        print(f"handmine {args.command}: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
