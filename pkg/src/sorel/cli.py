"""``sorel`` command line: gen-synth, train, eval, score, bench.

Exit codes: 0 success, 1 usage, 2 validation / input, 3 numeric failure.
Settings resolve as command-line flag > ``--config`` file (flat JSON object)
> built-in defaults, which follow the published experimental setup.
"""
import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from sorel import bench, data, ner, training
from sorel import model as mdl
from sorel.encoder import EncoderConfig
from sorel.errors import ConfigError, SorelError, ValidationError
from sorel.evaluation import predict

log = logging.getLogger("sorel")

# flag dest -> (default, help)
TRAIN_DEFAULTS = {
    "learn_rate": (0.0005, "Adam learning rate"),
    "clip_norm": (5.0, "global gradient-norm clip"),
    "adam_beta1": (0.1, "Adam beta1"),
    "adam_beta2": (0.9, "Adam beta2"),
    "adam_eps": (1e-8, "Adam epsilon"),
    "alpha": (0.2, "weight of second-order scores"),
    "epochs": (10, "training epochs"),
    "batch_size": (16, "documents per minibatch"),
    "neg_keep_rate": (1.0, "fraction of negative pairs kept in training batches"),
    "tune_mode": ("retrain", "alpha tuning: retrain per value or rescore one model"),
}
MODEL_DEFAULTS = {
    "encoder": ("transformer", "encoder kind: transformer or bag (bag-of-embeddings)"),
    "model_dim": (64, "token representation size"),
    "num_layers": (2, "encoder blocks"),
    "num_heads": (8, "attention heads per block"),
    "ffn_filters": (256, "filters of the feedforward convolutions"),
    "dropout": (0.3, "dropout after embeddings, encoder sublayers and head/tail MLPs"),
    "word_dropout": (0.15, "probability of replacing an input token with UNK"),
    "proj_dim": (64, "head/tail representation size"),
    "mlp_hidden": (0, "head/tail MLP hidden size (0 = model_dim)"),
    "max_len": (512, "documents are truncated to this many tokens"),
}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ratio_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    return vals


def _fraction(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", type=Path, help="flat JSON file of settings; flags override it")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS threads (default: library choice)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_defaults(p, table, types):
    for dest, (default, text) in table.items():
        flag = "--" + dest.replace("_", "-")
        kw = {"type": types.get(dest, type(default))} if not isinstance(default, str) else {}
        p.add_argument(flag, dest=dest, default=None, help=f"{text} (default {default})", **kw)


def build_parser():
    parser = Parser(prog="sorel", description="First- and second-order relation scoring.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic bridge-token corpus")
    _add_common(g)
    g.add_argument("--out-dir", type=Path, required=True)
    g.add_argument("--num-docs", type=int, default=None, help="documents (default 1000)")
    g.add_argument("--doc-len", type=int, default=None, help="tokens per document (default 16)")
    g.add_argument("--vocab-size", type=int, default=None, help="word types (default 200)")
    g.add_argument("--num-relation-types", type=int, default=None, help="positive relation types (default 3)")
    g.add_argument("--positive-fraction", type=_fraction, default=None, help="share of positive docs (default 0.5)")
    g.add_argument("--split", type=_ratio_list, default=None, help="train,dev,test ratios (default 0.8,0.1,0.1)")

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(t)
    t.add_argument("--train", type=Path, required=True, help="training documents (.jsonl)")
    t.add_argument("--dev", type=Path, help="dev documents for model selection")
    t.add_argument("--ner-train", type=Path, help="NER documents (default: --train)")
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--metrics", type=Path, help="metrics history (.jsonl)")
    t.add_argument("--alpha-sweep", type=_ratio_list, default=None, help="comma-separated alphas to tune over")
    t.add_argument("--first-order-only", action="store_true", default=None,
                   help="build the model without second-order parameters")
    t.add_argument("--freeze-embeddings", action="store_true", default=None)
    t.add_argument("--no-ner-bias", action="store_true", default=None, help="bias-free NER classifier")
    t.add_argument("--negative-label", default=None, help="name of the no-relation type (default NEG)")
    _add_defaults(t, TRAIN_DEFAULTS, {})
    _add_defaults(t, MODEL_DEFAULTS, {"dropout": _fraction, "word_dropout": _fraction})

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(e)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--alpha", type=float, default=None, help="override the checkpoint's alpha")
    e.add_argument("--out", type=Path, help="report path (default stdout)")

    s = sub.add_parser("score", help="write per-pair scores for a dataset")
    _add_common(s)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--alpha", type=float, default=None, help="override the checkpoint's alpha")
    s.add_argument("--out", type=Path, help="output .jsonl (default stdout)")

    b = sub.add_parser("bench", help="benchmark the second-order kernels")
    _add_common(b)
    b.add_argument("--sizes", type=_ratio_list, default=None, help="sequence lengths (default 16,32,64,128,256)")
    b.add_argument("--variant", action="append", choices=bench.VARIANTS,
                   help="kernel variant; repeat for several (default naive and efficient)")
    b.add_argument("--repeats", type=int, default=None, help="repeats per configuration (default 3)")
    b.add_argument("--relations", type=int, default=None, help="R (default 4)")
    b.add_argument("--batch", type=int, default=None, help="batch size (default 2)")
    b.add_argument("--naive-max-n", type=int, default=None, help="largest N for the naive kernel (default 64)")
    b.add_argument("--out", type=Path, help="output .jsonl (default stdout)")
    return parser


def _load_config(args):
    if args.config is None:
        return {}
    try:
        cfg = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict) or any(isinstance(v, (dict, list)) and k != "alpha_sweep" for k, v in cfg.items()):
        raise ConfigError("config file must be a flat JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _resolver(args):
    file_cfg = _load_config(args)

    def get(name, default):
        v = getattr(args, name, None)
        if v is not None:
            return v
        return file_cfg.get(name, default)

    return get


def _open_out(path):
    """Writable text handle for ``path``; stdout (left open) when ``path`` is None."""
    if path is None:
        return contextlib.nullcontext(sys.stdout)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8")


def cmd_gen_synth(args):
    get = _resolver(args)
    cfg = data.SynthConfig(
        num_docs=get("num_docs", 1000), doc_len=get("doc_len", 16), vocab_size=get("vocab_size", 200),
        num_relation_types=get("num_relation_types", 3), positive_fraction=get("positive_fraction", 0.5),
        seed=get("seed", 0),
    )
    docs = data.gen_synthetic(cfg)
    parts = data.split_documents(docs, tuple(get("split", (0.8, 0.1, 0.1))))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        data.save_documents(part, args.out_dir / f"{name}.jsonl")
    print(json.dumps({"train": len(parts[0]), "dev": len(parts[1]), "test": len(parts[2]),
                      "out_dir": str(args.out_dir)}))
    return 0


def _configs_from_args(args, get, token_vocab, rel_vocab, tags):
    enc_cfg = EncoderConfig(
        vocab_size=len(token_vocab), model_dim=get("model_dim", 64), num_layers=get("num_layers", 2),
        num_heads=get("num_heads", 8), ffn_filters=get("ffn_filters", 256), dropout_p=get("dropout", 0.3),
        word_dropout_p=get("word_dropout", 0.15), max_positions=get("max_len", 512), kind=get("encoder", "transformer"),
    )
    model_cfg = mdl.ModelConfig(
        enc_cfg, len(rel_vocab), len(tags), proj_dim=get("proj_dim", 64), mlp_hidden=get("mlp_hidden", 0),
        second_order=not get("first_order_only", False), ner_bias=not get("no_ner_bias", False),
    ).validate()
    train_kwargs = {k: get(k, d) for k, (d, _) in TRAIN_DEFAULTS.items()}
    train_cfg = training.TrainConfig(
        **train_kwargs, seed=get("seed", 0), alpha_sweep=list(get("alpha_sweep", []) or []),
        freeze_embeddings=bool(get("freeze_embeddings", False)),
    ).validate()
    return model_cfg, train_cfg


def cmd_train(args):
    get = _resolver(args)
    train_docs = data.load_documents(args.train)
    ner_docs = data.load_documents(args.ner_train) if args.ner_train else train_docs
    dev_docs = data.load_documents(args.dev) if args.dev else []
    rel_vocab = data.RelationVocab.from_documents(train_docs, get("negative_label", data.NEGATIVE))
    token_vocab = data.TokenVocab.from_documents(train_docs + [d for d in ner_docs if d is not None])
    tags = ner.tag_vocab({m.entity_type for d in train_docs + ner_docs for m in d.mentions} or {"Entity"})
    model_cfg, train_cfg = _configs_from_args(args, get, token_vocab, rel_vocab, tags)
    max_len = get("max_len", 512)
    ex_re = data.prepare(train_docs, token_vocab, rel_vocab, tags, max_len)
    ex_ner = data.prepare(ner_docs, token_vocab, rel_vocab, tags, max_len)
    ex_dev = data.prepare(dev_docs, token_vocab, rel_vocab, tags, max_len)
    metrics = None
    if args.metrics:
        args.metrics.parent.mkdir(parents=True, exist_ok=True)
        metrics = open(args.metrics, "w", encoding="utf-8")

    def emit(rec):
        if metrics is not None:
            metrics.write(json.dumps(rec) + "\n")
            metrics.flush()

    summary = {}
    if train_cfg.alpha_sweep:
        best, scores, result = training.tune_alpha(ex_re, ex_ner, ex_dev, model_cfg, train_cfg, tags, rel_vocab)
        train_cfg.alpha = best
        for rec in result.history:
            emit(rec)
        summary["alpha_scores"] = {str(a): f for a, f in scores.items()}
    else:
        result = training.train(ex_re, ex_ner, model_cfg, train_cfg, ex_dev, tags=tags, vocab=rel_vocab, on_record=emit)
    if metrics is not None:
        metrics.close()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(args.out, result.params, model_cfg, train_cfg, token_vocab, rel_vocab, tags)
    summary.update(checkpoint=str(args.out), alpha=train_cfg.alpha, best_epoch=result.best_epoch,
                   best_dev_f1=None if np.isnan(result.best_f1) else result.best_f1)
    print(json.dumps(summary))
    return 0


def _load_for_scoring(args):
    if not args.checkpoint.exists():
        raise ValidationError(f"checkpoint not found: {args.checkpoint}")
    ck = training.load_checkpoint(args.checkpoint)
    docs = data.load_documents(args.data)
    examples = data.prepare(docs, ck.token_vocab, ck.rel_vocab, ck.tags, ck.model_cfg.encoder.max_positions)
    alpha = ck.train_cfg.alpha if args.alpha is None else args.alpha
    return ck, examples, alpha


def cmd_eval(args):
    ck, examples, alpha = _load_for_scoring(args)
    report, _ = training.evaluate(ck.params, examples, ck.model_cfg, alpha, ck.rel_vocab)
    rec = {"alpha": alpha, "num_pairs": int(sum(len(e.pairs) for e in examples)), **report.to_record()}
    with _open_out(args.out) as fh:
        fh.write(json.dumps(rec) + "\n")
    return 0


def cmd_score(args):
    ck, examples, alpha = _load_for_scoring(args)
    with _open_out(args.out) as fh:
        for batch in data.make_batches(examples, 64):
            if not batch.num_pairs:
                continue
            s1, s2, comb = mdl.predict_scores(ck.params, batch, ck.model_cfg, alpha)
            labels = predict(comb, ck.rel_vocab)
            for p, (doc_id, h, t) in enumerate(batch.keys):
                fh.write(json.dumps({
                    "doc_id": doc_id, "head_entity_id": h, "tail_entity_id": t,
                    "scores1": s1[p].tolist(), "scores2": None if s2 is None else s2[p].tolist(),
                    "combined": comb[p].tolist(), "prediction": ck.rel_vocab.names[labels[p]],
                    "gold": ck.rel_vocab.names[batch.labels[p]],
                }) + "\n")
    return 0


def cmd_bench(args):
    get = _resolver(args)
    sizes = [int(n) for n in get("sizes", [16, 32, 64, 128, 256])]
    if any(n < 5 for n in sizes):
        raise ConfigError("sizes must be >= 5 (two 2-token mentions plus context)")
    variants = args.variant or ["naive", "efficient"]
    with _open_out(args.out) as fh:
        def emit(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        bench.run_benchmark(sizes, variants, get("repeats", 3), R=get("relations", 4), batch=get("batch", 2),
                            naive_max_n=get("naive_max_n", 64), seed=get("seed", 0), on_record=emit)
    return 0


COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval, "score": cmd_score,
            "bench": cmd_bench}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            with threadpool_limits(limits=args.threads):
                return COMMANDS[args.command](args)
        return COMMANDS[args.command](args)
    except SorelError as exc:
        print(f"sorel {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sorel {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
