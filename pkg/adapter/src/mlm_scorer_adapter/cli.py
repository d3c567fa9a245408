"""Command-line surface.

    mlm-scorer init --out DIR --texts FILE [FILE ...]
    mlm-scorer serve --model DIR [--tcp HOST:PORT] [options]
    mlm-scorer finetune --model DIR --samples FILE --objective X --out DIR2

`init` builds a small randomly initialized checkpoint whose vocabulary
comes from the given text sources (plain text, or the pipeline's .tsv or
.jsonl corpus files).  `serve` answers scorer-protocol requests on
stdin/stdout, or on a TCP socket with --tcp.
"""

import argparse
import json
import sys

from .config import AdapterConfig
from .finetune import finetune
from .model import init_checkpoint
from .server import serve_stdio, serve_tcp


def read_texts(path):
    texts = []
    if path.endswith(".jsonl"):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    texts.append(json.loads(line)["text"])
    elif path.endswith(".tsv"):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    texts.append(line.rstrip("\n").split("\t")[4])
    else:
        with open(path, encoding="utf-8") as fh:
            texts = [line.strip() for line in fh if line.strip()]
    return texts


def _adapter_config(args):
    return AdapterConfig(
        model_path=args.model,
        default_mode=args.mode,
        max_seq_len=args.max_seq_len,
        batch_size=args.batch_size,
        device=args.device,
        context_join=args.context_join,
    ).validate()


def _add_runtime_args(parser):
    parser.add_argument("--model", required=True, help="checkpoint directory")
    parser.add_argument("--mode", default="mlm_pll",
                        choices=("mlm_pll", "nsp", "classifier"))
    parser.add_argument("--max-seq-len", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=768)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--context-join", default="sep", choices=("sep", "space"))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mlm-scorer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a small local checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--texts", nargs="+", required=True)
    p.add_argument("--hidden-size", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="answer protocol requests")
    _add_runtime_args(p)
    p.add_argument("--tcp", default=None, metavar="HOST:PORT")

    p = sub.add_parser("finetune", help="fine-tune on generated task records")
    _add_runtime_args(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--objective", required=True,
                   choices=("cnsp", "disambiguation"))
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--learning-rate", type=float, default=5e-4)
    p.add_argument("--train-batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "init":
        texts = []
        for path in args.texts:
            texts.extend(read_texts(path))
        out = init_checkpoint(
            args.out,
            texts,
            hidden_size=args.hidden_size,
            num_layers=args.layers,
            num_heads=args.heads,
            seed=args.seed,
        )
        print(f"checkpoint: {out}", file=sys.stderr)
    elif args.command == "serve":
        config = _adapter_config(args)
        if args.tcp:
            host, port = args.tcp.rsplit(":", 1)
            serve_tcp(config, host, int(port))
        else:
            serve_stdio(config)
    elif args.command == "finetune":
        config = _adapter_config(args)
        out = finetune(
            config,
            args.samples,
            args.objective,
            args.out,
            epochs=args.epochs,
            learning_rate=args.learning_rate,
            batch_size=args.train_batch_size,
            seed=args.seed,
        )
        print(f"checkpoint: {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
