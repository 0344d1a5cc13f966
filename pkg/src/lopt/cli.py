"""Command-line interface.

Subcommands: gen-task, pretrain, train, eval, params, gradcheck, rank.
Any LoptError becomes a message on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D, harness, prompts, verify
from .exceptions import LoptError
from .model import DEFAULT_DIMS, ModelDims, TinyLM, pretrain


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_gen_task(args):
    train, val = D.generate_task(
        args.kind, args.num_train, args.num_val, args.seq_len,
        num_classes=args.num_classes, seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    train.vocab.save(os.path.join(args.out, "vocab.json"))
    D.write_jsonl(train, os.path.join(args.out, "train.jsonl"))
    D.write_jsonl(val, os.path.join(args.out, "val.jsonl"))
    print(f"wrote {len(train)} train / {len(val)} val examples to {args.out}")
    return 0


def _cmd_pretrain(args):
    dims = ModelDims(
        vocab_size=args.vocab_size, embed_dim=args.embed_dim, layers=args.layers,
        heads=args.heads, ffn_mult=args.ffn_mult, max_seq=args.max_seq,
    )
    corpus = D.build_pretrain_corpus(
        args.corpus_kind, args.corpus_size, args.seq_len,
        seed=args.seed, correct_fraction=args.correct_fraction,
    )
    lm = TinyLM(dims, seed=args.seed)
    pretrain(lm, corpus, steps=args.steps, lr=args.lr,
             batch_size=args.batch_size, seed=args.seed)
    lm.save(args.out)
    print(f"wrote frozen checkpoint {args.out} ({args.steps} steps)")
    return 0


def _parse_overrides(pairs):
    """--key value pairs after the config path; values parsed as JSON when possible."""
    if len(pairs) % 2 != 0:
        raise LoptError(f"overrides must be --key value pairs, got {pairs}")
    overrides = {}
    for flag, value in zip(pairs[::2], pairs[1::2]):
        if not flag.startswith("--"):
            raise LoptError(f"expected --key, got {flag!r}")
        key = flag[2:].replace("-", "_")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return overrides


def _cmd_train(args):
    overrides = _parse_overrides(args.overrides)
    cfg = harness.ExperimentConfig.from_file(args.config, overrides)
    metrics = harness.train(cfg)
    _print_json(metrics.summary)
    return 0


def _cmd_eval(args):
    acc = harness.evaluate(args.prompt, args.lm, args.data, args.vocab)
    _print_json({"accuracy": acc})
    return 0


def _params_table():
    rows = []
    for n, d, r in ((10, 1280, 2), (20, 768, 5)):
        for method in prompts.METHODS:
            rows.append({
                "method": method, "n": n, "d": d,
                "r": None if method == "full" else r,
                "count": prompts.parameter_count(method, n, d, None if method == "full" else r),
            })
    rows.append({"method": "full", "n": 100, "d": 768, "r": None,
                 "count": prompts.parameter_count("full", 100, 768)})
    ablation = [
        {
            "method": "lopt1", "n": n, "d": 1280, "r": r,
            "count": prompts.parameter_count("lopt1", n, 1280, r),
            "reduction_pct": prompts.reduction_rate(
                "lopt1", n, 1280, r, baseline_n=10, baseline_d=1280
            ),
        }
        for n in (10, 20, 30)
        for r in (1, 2, 5)
    ]
    return {"counts": rows, "ablation_vs_full_n10_d1280": ablation}


def _cmd_params(args):
    if args.table:
        _print_json(_params_table())
        return 0
    if not args.method:
        raise LoptError("params: give --method (with --n/--d/--r) or --table")
    r = args.r if args.method != "full" else None
    if args.method != "full" and r is None:
        r = prompts.default_rank(args.n)
    count = prompts.parameter_count(args.method, args.n, args.d, r)
    rate = prompts.reduction_rate(
        args.method, args.n, args.d, r,
        baseline_n=args.baseline_n if args.baseline_n is not None else args.n,
        baseline_d=args.d,
    )
    print(count)
    print(f"{rate:+.2f}%")
    return 0


def _cmd_gradcheck(args):
    methods = [args.method] if args.method else list(prompts.METHODS)
    sigmas = [args.sigma] if args.sigma else ["relu", "elu", "gelu"]
    reports = []
    for method in methods:
        for sigma in sigmas:
            for seed in range(args.seeds):
                rep = verify.gradcheck_path(
                    method, sigma_kind=sigma, seed=seed,
                    n=args.n, d=args.d, r=args.r, eps=args.eps,
                )
                reports.append({"method": method, "sigma": sigma, "seed": seed,
                                **rep.to_dict()})
    all_pass = all(r["passed"] for r in reports)
    _print_json({"passed": all_pass, "checks": reports})
    return 0 if all_pass else 1


def _cmd_rank(args):
    prompt = prompts.load_prompt(args.ckpt)
    x = prompts.materialize(prompt).data
    rep = verify.rank_report(x, tol=args.tol)
    _print_json({"method": prompt.method, "n": prompt.n, "d": prompt.d,
                 "r": getattr(prompt, "r", None), **rep.to_dict()})
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="lopt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-task", help="generate a synthetic task as JSONL files")
    g.add_argument("--kind", choices=sorted(D._GENERATORS), default="majority")
    g.add_argument("--num-train", type=int, default=512)
    g.add_argument("--num-val", type=int, default=128)
    g.add_argument("--seq-len", type=int, default=12)
    g.add_argument("--num-classes", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_task)

    pt = sub.add_parser("pretrain", help="pretrain and freeze a tiny LM checkpoint")
    pt.add_argument("--out", required=True)
    pt.add_argument("--steps", type=int, default=500)
    pt.add_argument("--lr", type=float, default=0.05)
    pt.add_argument("--batch-size", type=int, default=16)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--vocab-size", type=int, default=DEFAULT_DIMS.vocab_size)
    pt.add_argument("--embed-dim", type=int, default=DEFAULT_DIMS.embed_dim)
    pt.add_argument("--layers", type=int, default=DEFAULT_DIMS.layers)
    pt.add_argument("--heads", type=int, default=DEFAULT_DIMS.heads)
    pt.add_argument("--ffn-mult", type=int, default=DEFAULT_DIMS.ffn_mult)
    pt.add_argument("--max-seq", type=int, default=DEFAULT_DIMS.max_seq)
    pt.add_argument("--corpus-kind", choices=sorted(D._GENERATORS), default="majority")
    pt.add_argument("--corpus-size", type=int, default=2048)
    pt.add_argument("--seq-len", type=int, default=12)
    pt.add_argument("--correct-fraction", type=float, default=0.5)
    pt.set_defaults(fn=_cmd_pretrain)

    t = sub.add_parser("train", help="run a prompt-tuning experiment")
    t.add_argument("--config", required=True)
    t.add_argument("overrides", nargs=argparse.REMAINDER,
                   help="--key value pairs overriding config fields")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="accuracy of a prompt checkpoint on a dataset")
    e.add_argument("--prompt", required=True)
    e.add_argument("--lm", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--vocab", required=True)
    e.set_defaults(fn=_cmd_eval)

    pa = sub.add_parser("params", help="parameter counts and reduction rates")
    pa.add_argument("--method", choices=prompts.METHODS)
    pa.add_argument("--n", type=int, default=10)
    pa.add_argument("--d", type=int, default=1280)
    pa.add_argument("--r", type=int)
    pa.add_argument("--baseline-n", type=int)
    pa.add_argument("--table", action="store_true",
                    help="print the full count/reduction grids")
    pa.set_defaults(fn=_cmd_params)

    gc = sub.add_parser("gradcheck", help="finite-difference check of end-to-end gradients")
    gc.add_argument("--method", choices=prompts.METHODS)
    gc.add_argument("--sigma", choices=("relu", "elu", "gelu"))
    gc.add_argument("--seeds", type=int, default=5)
    gc.add_argument("--n", type=int, default=4)
    gc.add_argument("--d", type=int, default=16)
    gc.add_argument("--r", type=int, default=2)
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.set_defaults(fn=_cmd_gradcheck)

    rk = sub.add_parser("rank", help="singular values of a materialized prompt checkpoint")
    rk.add_argument("--ckpt", required=True)
    rk.add_argument("--tol", type=float, default=1e-6)
    rk.set_defaults(fn=_cmd_rank)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except LoptError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
