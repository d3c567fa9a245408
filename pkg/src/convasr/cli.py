"""Command-line surface.

    convasr <command> --config pipeline.cfg [--set key=value ...] [options]

Commands: synth, train-lm, decode, rescore, oracle, tune-beam, tune-gamma,
gen-tasks, eval, report.  Exit codes: 0 success, 1 usage/config error,
2 data error, 3 scorer error.

Tuning commands operate on the evaluation split only; the test split is
readable by eval/report alone.
"""

import argparse
import sys

from . import pipeline
from .errors import ConfigError, ConvasrError, ScorerError


def _add_common(parser):
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="convasr",
        description="decoding and rescoring pipeline for CTC-based ASR",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpus")
    _add_common(p)

    p = sub.add_parser("train-lm", help="train a Kneser-Ney LM on the train split")
    _add_common(p)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("decode", help="beam-search a split into n-best lists")
    _add_common(p)
    p.add_argument("--split", choices=("train", "eval", "test"), default="eval")

    p = sub.add_parser("rescore", help="rescore an n-best file with a scorer")
    _add_common(p)
    p.add_argument("--split", choices=("train", "eval", "test"), default="eval")
    p.add_argument("--nbest", default=None)
    p.add_argument("--gamma", type=float, default=None)

    p = sub.add_parser("oracle", help="oracle-selection WER of an n-best file")
    _add_common(p)
    p.add_argument("--split", choices=("train", "eval", "test"), default="eval")
    p.add_argument("--nbest", default=None)

    p = sub.add_parser("tune-beam", help="random search over (alpha, beta) [eval]")
    _add_common(p)
    p.add_argument("--objective", choices=("top1_wed", "oracle_wed"),
                   default="top1_wed")

    p = sub.add_parser("tune-gamma", help="grid search over gamma [eval]")
    _add_common(p)
    p.add_argument("--rescored", default=None)

    p = sub.add_parser("gen-tasks", help="generate fine-tuning datasets")
    _add_common(p)
    p.add_argument(
        "--kind",
        choices=("cnsp", "disambiguation", "disambiguation_gt", "pairwise"),
        required=True,
    )
    p.add_argument("--split", choices=("train", "eval", "test"), default="train")
    p.add_argument("--nbest", default=None)

    p = sub.add_parser("eval", help="WER report for a decoded/rescored split")
    _add_common(p)
    p.add_argument("--split", choices=("train", "eval", "test"), default="eval")
    p.add_argument("--which", choices=("top", "rescored", "oracle"), default="top")
    p.add_argument("--nbest", default=None)
    p.add_argument("--gamma", type=float, default=None)

    p = sub.add_parser("report", help="summary WERs, recovery rate, curve")
    _add_common(p)
    p.add_argument("--split", choices=("eval", "test"), default="eval")
    return parser


def _run(args):
    cfg = pipeline.load_config(args.config, args.overrides)
    if args.command == "synth":
        corpus_path, vocab_path, logit_dir = pipeline.stage_synth(cfg)
        print(f"corpus: {corpus_path}")
        print(f"vocabulary: {vocab_path}")
        print(f"logits: {logit_dir}")
    elif args.command == "train-lm":
        out = pipeline.stage_train_lm(cfg, order=args.order, out_path=args.out)
        print(f"arpa: {out}")
    elif args.command == "decode":
        out, nbests, _ = pipeline.stage_decode(cfg, args.split)
        print(f"nbest: {out} ({len(nbests)} utterances)")
    elif args.command == "rescore":
        out, rescored = pipeline.stage_rescore(
            cfg, args.split, nbest_path=args.nbest, gamma=args.gamma
        )
        print(f"rescored: {out} ({len(rescored)} utterances)")
    elif args.command == "oracle":
        report = pipeline.stage_eval(
            cfg, args.split, which="oracle", nbest_path=args.nbest
        )
        print(f"oracle WER: {report.wer:.6f}")
    elif args.command == "tune-beam":
        result = pipeline.stage_tune_beam(cfg, objective=args.objective)
        print(
            f"alpha={result.best_params['alpha']:.6f} "
            f"beta={result.best_params['beta']:.6f} "
            f"objective={result.best_objective:.6f}"
        )
    elif args.command == "tune-gamma":
        result = pipeline.stage_tune_gamma(cfg, rescored_path=args.rescored)
        print(
            f"gamma={result.best_params['gamma']:.3f} "
            f"wer={result.best_objective:.6f}"
        )
    elif args.command == "gen-tasks":
        out, samples = pipeline.stage_gen_tasks(
            cfg, args.kind, split=args.split, nbest_path=args.nbest
        )
        print(f"samples: {out} ({len(samples)} records)")
    elif args.command == "eval":
        report = pipeline.stage_eval(
            cfg,
            args.split,
            which=args.which,
            nbest_path=args.nbest,
            gamma=args.gamma,
        )
        print(
            f"{args.which} WER[{args.split}]: {report.wer:.6f} "
            f"({report.total_edits}/{report.total_reference_words})"
        )
    elif args.command == "report":
        summary = pipeline.stage_report(cfg, args.split)
        for key, value in summary.items():
            value = f"{value:.6f}" if isinstance(value, float) else value
            print(f"{key}: {value}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; our contract reserves 2 for
        # data errors and 1 for usage
        return 0 if exc.code in (0, None) else 1
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ScorerError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return 3
    except ConvasrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
