"""Command-line entry point: synth / train / eval / search / gradcheck.

Options may come from a JSON config file (--config); explicit flags win
over config-file values. Every artifact embeds the resolved configuration
so results are self-describing.
"""

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .data import SynthConfig, generate_synthetic, load_features, stack_labels, write_features
from .gradcheck import REL_TOL, run_gradcheck
from .net import binarize
from .retrieval import build_index, evaluate, format_summary, pack_code, search, write_report_csv
from .trainer import (TrainConfig, codes_for, export_curves, load_checkpoint,
                      save_checkpoint, train)


def _parse_dims(text):
    return tuple(int(d) for d in text.split(","))


def _train_config(args) -> TrainConfig:
    """Config-file values overridden by any explicitly passed flags."""
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainConfig(**values)


def _add_train_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--bits", type=int, help="hash code length K (default 16)")
    p.add_argument("--proj-dim", dest="proj_dim", type=int,
                   help="shared per-view projection dim (default 16)")
    p.add_argument("--epochs", type=int, help="training epochs (default 500)")
    p.add_argument("--batch-size", dest="batch_size", type=int,
                   help="batch size b (default 128)")
    p.add_argument("--lr", type=float, help="AdamW learning rate (default 1e-5)")
    p.add_argument("--beta1", type=float, help="AdamW beta1 (default 0.9)")
    p.add_argument("--beta2", type=float, help="AdamW beta2 (default 0.999)")
    p.add_argument("--eps", type=float, help="AdamW epsilon (default 1e-8)")
    p.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help="decoupled weight decay (default 0)")
    p.add_argument("--dropout", dest="dropout_p", type=float,
                   help="dropout probability on concatenated features (default 0.1)")
    p.add_argument("--lam", type=float,
                   help="block fraction for the pairwise loss, in (0, 0.5] (default 0.5)")
    p.add_argument("--mu", type=float, help="quantization loss weight (default 0.5)")
    p.add_argument("--wd-pair", dest="w_d", type=float,
                   help="dissimilar-pair softplus weight (default 1.5)")
    p.add_argument("--seed", type=int, help="RNG seed (default 0)")
    p.add_argument("--eval-every", dest="eval_every", type=int,
                   help="epochs between test-mAP evaluations (default 20)")
    p.add_argument("--ablation", choices=["full", "metric-only", "quant-only",
                                          "image-only", "text-only", "concat-only"],
                   help="pipeline variant (default full)")
    p.add_argument("--lr-schedule", dest="lr_schedule",
                   choices=["constant", "cosine"], help="lr schedule (default constant)")


def _eval_pipeline(config: dict, num_views: int):
    """view_mask / gating matching the checkpoint's training ablation."""
    ablation = config.get("ablation", "full")
    view_mask = None
    if ablation == "image-only":
        view_mask = [v == 0 for v in range(num_views)]
    elif ablation == "text-only":
        view_mask = [v == 1 for v in range(num_views)]
    return view_mask, ablation != "concat-only"


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        categories=args.categories, views=args.views,
        view_dims=_parse_dims(args.view_dims),
        train_size=args.train_size, retrieval_size=args.retrieval_size,
        query_size=args.query_size, noise_sigma=args.sigma,
        multi_label_p=args.multi_label_p, seed=args.seed,
    )
    split = generate_synthetic(cfg)
    manifest = write_features(split, args.out)
    (Path(args.out) / "synth_config.json").write_text(
        json.dumps(asdict(cfg), indent=2) + "\n")
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    dataset = load_features(args.data)
    result = train(dataset, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = asdict(cfg)
    save_checkpoint(out / "checkpoint.bin", result.params, result.net_cfg,
                    config=resolved, optim=result.optim_state)
    save_checkpoint(out / "checkpoint_best.bin", result.best_params, result.net_cfg,
                    config={**resolved, "best_epoch": result.best_epoch})
    (out / "train_config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    if result.records:
        export_curves(result.records, out / "curves.csv")
        last = result.records[-1]
        map_txt = "n/a" if last.test_map is None else f"{last.test_map:.4f}"
        print(f"epoch {last.epoch}: loss {last.loss:.6f}, test mAP {map_txt}")
    else:
        print("epochs=0: wrote checkpoint of initialized parameters")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_features(args.data)
    view_mask, use_gating = _eval_pipeline(ckpt.config, ckpt.net_cfg.num_views)
    q_codes = binarize(codes_for(dataset.query, ckpt.params, view_mask, use_gating))
    db_codes = binarize(codes_for(dataset.retrieval, ckpt.params, view_mask, use_gating))
    index = build_index(db_codes, [r.id for r in dataset.retrieval],
                        stack_labels(dataset.retrieval))
    cutoffs = _parse_dims(args.cutoffs) if args.cutoffs else ()
    report = evaluate(q_codes, [r.id for r in dataset.query],
                      stack_labels(dataset.query), index,
                      cutoffs=cutoffs, config=ckpt.config)
    if args.out:
        write_report_csv(report, args.out)
    print(format_summary(report))
    return 0


def cmd_search(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = load_features(args.data)
    view_mask, use_gating = _eval_pipeline(ckpt.config, ckpt.net_cfg.num_views)
    db_codes = binarize(codes_for(dataset.retrieval, ckpt.params, view_mask, use_gating))
    index = build_index(db_codes, [r.id for r in dataset.retrieval],
                        stack_labels(dataset.retrieval))
    q_codes = binarize(codes_for(dataset.query, ckpt.params, view_mask, use_gating))
    for qi, record in enumerate(dataset.query):
        hits = search(index, pack_code(q_codes[qi]), args.k)
        print(f"{record.id}: {' '.join(hits)}")
    return 0


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(seed=args.seed, cases=args.cases)
    print(f"max relative error over {result.cases} cases: {result.max_rel_err:.3e}")
    if result.failures or result.max_rel_err > REL_TOL:
        print(f"FAILED: {result.failures} entries outside tolerance")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvhash",
        description="Multi-view hashing: synthesize data, train, evaluate, search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clustered dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--views", type=int, default=2)
    p.add_argument("--view-dims", dest="view_dims", default="16,16",
                   help="comma-separated per-view dims")
    p.add_argument("--train-size", dest="train_size", type=int, default=800)
    p.add_argument("--retrieval-size", dest="retrieval_size", type=int, default=800)
    p.add_argument("--query-size", dest="query_size", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.1, help="cluster noise stddev")
    p.add_argument("--multi-label-p", dest="multi_label_p", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + curves")
    p.add_argument("--data", required=True, help="dataset manifest or directory")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write EvalReport CSV here")
    p.add_argument("--cutoffs", help="comma-separated K cutoffs for mAP@K / Recall@K")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("search", help="rank the retrieval set for each query record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("-k", type=int, default=10, help="results per query")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
