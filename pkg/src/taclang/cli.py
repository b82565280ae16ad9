"""Single entry point wiring all subcommands.

Thread limits (--threads or FGCLTP_THREADS) are applied to the BLAS
environment before any numerical module is imported, so heavy imports are
deferred into the command handlers.
"""
from __future__ import annotations

import argparse
import json
import os
import sys


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    root = argparse.ArgumentParser(prog="taclang", formatter_class=fmt)
    root.add_argument("--seed", dest="global_seed", type=int, default=0,
                      help="global random seed")
    root.add_argument("--out-dir", dest="global_out_dir", default="artifacts",
                      help="pipeline output directory")
    root.add_argument("--config", dest="global_config", default=None,
                      help="JSON pipeline config file")
    root.add_argument("--threads", type=int, default=None,
                      help="BLAS thread cap (falls back to FGCLTP_THREADS)")
    root.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", formatter_class=fmt, help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=2000, help="number of samples")
    p.add_argument("--seed", type=int, default=None, help="corpus seed (overrides global)")
    p.add_argument("--out-dir", default=None, help="corpus directory (overrides global)")
    p.add_argument("--noise", type=float, default=0.02, help="marker noise sigma in mm")
    p.add_argument("--config", default=None, help="JSON config with generator mixture/ranges")

    p = sub.add_parser("annotate", formatter_class=fmt, help="estimate contact states from frames")
    p.add_argument("--in-dir", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="estimated labels JSONL path")
    p.add_argument("--agreement", default=None, help="optional agreement report JSON path")
    p.add_argument("--config", default=None, help="JSON config with annotator thresholds")

    p = sub.add_parser("tokenize", formatter_class=fmt, help="labels -> descriptions JSONL")
    p.add_argument("--labels", required=True, help="labels JSONL path")
    p.add_argument("--out", required=True, help="descriptions JSONL path")
    p.add_argument("--style", default="tokenized", choices=("tokenized", "plain"),
                   help="description style")
    p.add_argument("--vocab-out", default=None, help="optional vocabulary JSON path")

    p = sub.add_parser("train", formatter_class=fmt, help="tri-modal contrastive pretraining")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=None, help="training seed (overrides global)")
    p.add_argument("--lambda-tl", type=float, default=1.0, help="tactile-language weight")
    p.add_argument("--lambda-ti", type=float, default=1.0, help="tactile-image weight")
    p.add_argument("--lambda-li", type=float, default=1.0, help="language-image weight")
    p.add_argument("--mean-reduction", action="store_true",
                   help="divide the contrastive sum by N instead of 2")
    p.add_argument("--style", default="tokenized", choices=("tokenized", "plain"),
                   help="template style for the language modality")
    p.add_argument("--out-ckpt", required=True, help="checkpoint output path")
    p.add_argument("--metrics", required=True, help="per-epoch metrics JSONL path")

    p = sub.add_parser("eval", formatter_class=fmt, help="frozen-encoder benchmark")
    p.add_argument("--ckpt", required=True, help="encoder checkpoint")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--report", required=True, help="report JSON output path")
    p.add_argument("--probe", default="linear", choices=("linear", "mlp"))

    p = sub.add_parser("policy-train", formatter_class=fmt, help="flow-matching policy training")
    p.add_argument("--encoder-ckpt", required=True, help="pretrained tactile encoder")
    p.add_argument("--stage2", action="store_true", help="also fine-tune the encoder at 0.1x lr")
    p.add_argument("--episodes", type=int, default=500, help="expert episodes to collect")
    p.add_argument("--seed", type=int, default=None, help="policy seed (overrides global)")
    p.add_argument("--out", required=True, help="policy checkpoint output path")

    p = sub.add_parser("policy-eval", formatter_class=fmt, help="roll out a trained policy")
    p.add_argument("--ckpt", required=True, help="policy checkpoint")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=None, help="evaluation seed (overrides global)")
    p.add_argument("--traj-out", default=None, help="per-step trajectory CSV path")
    p.add_argument("--metrics", default=None, help="summary metrics JSON path")

    p = sub.add_parser("pipeline", formatter_class=fmt, help="run gen->...->policy-eval stages")
    p.add_argument("--stages", default=None,
                   help="comma-separated subset (default: all stages)")
    p.add_argument("--force", action="store_true", help="ignore manifests and re-run")
    return root


def _apply_threads(args) -> None:
    threads = args.threads
    if threads is None:
        env = os.environ.get("FGCLTP_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(threads)


def _info(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def _cmd_gen(args) -> int:
    from .config import load_config
    from .synthgen import GeneratorConfig, generate_corpus

    cfg = load_config(args.config)
    g = cfg.generator
    gen_cfg = GeneratorConfig(
        shape_weights=dict(g.shape_weights),
        texture_weights=dict(g.texture_weights),
        primitive_weights=dict(g.primitive_weights),
        depth_range_mm=tuple(g.depth_range_mm),
        slide_range_mm=tuple(g.slide_range_mm),
        twist_range_deg=tuple(g.twist_range_deg),
        noise_sigma_mm=args.noise,
        membrane_sigma_mm=g.membrane_sigma_mm,
    )
    out_dir = args.out_dir or args.global_out_dir
    seed = args.seed if args.seed is not None else args.global_seed
    rows = generate_corpus(gen_cfg, args.n, seed, out_dir)
    _info(args, f"wrote {len(rows)} samples to {out_dir}")
    return 0


def _cmd_annotate(args) -> int:
    from . import dataio
    from .annotator import AnnotatorConfig, annotate_corpus, compare_annotations
    from .config import load_config

    a = load_config(args.config).annotator
    ann_cfg = AnnotatorConfig(
        contact_threshold_mm=a.contact_threshold_mm,
        svd_singularity_ratio_min=a.svd_singularity_ratio_min,
        twist_amplitude_min_rad=a.twist_amplitude_min_rad,
        slide_magnitude_min_mm=a.slide_magnitude_min_mm,
    )
    est = annotate_corpus(args.in_dir, ann_cfg, args.out)
    _info(args, f"annotated {len(est)} samples -> {args.out}")
    if args.agreement:
        gt = dataio.read_jsonl(dataio.labels_path(args.in_dir))
        report = compare_annotations(gt, est)
        with open(args.agreement, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        _info(args, f"agreement report -> {args.agreement}")
    return 0


def _cmd_tokenize(args) -> int:
    from . import dataio
    from .language import TEMPLATES, build_vocabulary, describe_tokens

    vocab = build_vocabulary()
    if args.vocab_out:
        vocab.save(args.vocab_out)
    rows = []
    for label in dataio.read_jsonl(args.labels):
        state = dataio.state_from_dict(label)
        for variant in range(len(TEMPLATES)):
            text, seq = describe_tokens(state, vocab, args.style, variant)
            rows.append({"id": label["id"], "variant": variant, "text": text,
                         "ids": list(seq.ids)})
    dataio.write_jsonl(args.out, rows)
    _info(args, f"wrote {len(rows)} descriptions -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .pretrain import LossWeights, TrainConfig, train

    seed = args.seed if args.seed is not None else args.global_seed
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, seed=seed,
        weights=LossWeights(args.lambda_tl, args.lambda_ti, args.lambda_li),
        mean_reduction=args.mean_reduction, template_style=args.style,
    )
    summary = train(args.corpus, args.out_ckpt, args.metrics, cfg)
    _info(args, f"best epoch {summary['best_epoch']} "
                f"val top-1 {summary['best_val_top1']:.3f} -> {args.out_ckpt}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import evaluate

    report = evaluate(args.ckpt, args.corpus, args.probe, args.report)
    _info(args, f"macro R2 {report['regression']['macro']['r2']:.3f} -> {args.report}")
    return 0


def _cmd_policy_train(args) -> int:
    from .flowpolicy import PolicyTrainConfig, train_policy

    seed = args.seed if args.seed is not None else args.global_seed
    cfg = PolicyTrainConfig(episodes=args.episodes, seed=seed, stage2=args.stage2)
    meta = train_policy(args.encoder_ckpt, args.out, cfg)
    _info(args, f"policy trained (final loss {meta['final_loss']:.4f}) -> {args.out}")
    return 0


def _cmd_policy_eval(args) -> int:
    from .flowpolicy import eval_policy

    seed = args.seed if args.seed is not None else 1000
    summary = eval_policy(args.ckpt, args.episodes, seed,
                          traj_out=args.traj_out, metrics_out=args.metrics)
    _info(args, f"success rate {summary['success_rate']:.2f} over {args.episodes} episodes")
    return 0


def _cmd_pipeline(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.global_config)
    stages = args.stages.split(",") if args.stages else None
    run_pipeline(cfg, args.global_out_dir, stages, force=args.force, quiet=args.quiet)
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "annotate": _cmd_annotate,
    "tokenize": _cmd_tokenize,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "policy-train": _cmd_policy_train,
    "policy-eval": _cmd_policy_eval,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, FileNotFoundError, IndexError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
