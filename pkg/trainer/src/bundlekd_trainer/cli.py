"""bundlekd-trainer command line: train and serve."""

from __future__ import annotations

import argparse
import json
import sys

from .training import TrainerConfig, train


def cmd_train(args) -> int:
    cfg = TrainerConfig.from_file(args.config) if args.config else TrainerConfig()
    out = train(args.data, cfg, args.out)
    log = json.loads((out / "training_log.json").read_text(encoding="utf-8"))
    print(json.dumps({
        "adapter_dir": str(out),
        "initial_loss": log["initial_loss"],
        "final_loss": log["final_loss"],
        "epochs": cfg.epochs,
    }, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .serving import serve
    serve(args.adapter, args.port, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bundlekd-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune LoRA adapters on chat JSONL")
    p.add_argument("--data", required=True, help="sft.jsonl from bundlekd export-sft")
    p.add_argument("--config", help="trainer config JSON (defaults to paper grid cell)")
    p.add_argument("--out", required=True, help="adapter output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("serve", help="serve an adapter as /v1/chat/completions")
    p.add_argument("--adapter", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
