"""Command-line harness: generate | train | eval | ablate | gradcheck.

Every command reports to its --out directory as delimited text plus a
rendered figure. Exit code 0 means success; any rejection is nonzero.
The only environment influence is TRAVELREC_THREADS, which caps the
numeric thread pools and must be applied before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_budget():
    threads = os.environ.get("TRAVELREC_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _load_config(args):
    from .config import RunConfig, load_config

    config = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "out", None):
        config.out_dir = args.out
    if getattr(args, "data", None):
        config.data_dir = args.data
    return config


def cmd_generate(args) -> int:
    from pathlib import Path

    from . import report
    from .data import dataset_stats, generate_synthetic, save_dataset

    config = _load_config(args)
    out = Path(args.out or config.data_dir)
    dataset = generate_synthetic(config.generator_settings(), config.seed)
    save_dataset(dataset, out)
    stats = dataset_stats(dataset)
    text = report.write_stats(stats, out / "stats.txt")
    report.render_dataset_stats(stats, out / "dataset_stats.png")
    print(text, end="")
    print(f"wrote dataset to {out}")
    return 0


def _run_training(config, out_dir):
    from pathlib import Path

    from . import report
    from .data import load_dataset
    from .evaluation import evaluate
    from .training import read_loss_log, train

    dataset = load_dataset(config.data_dir)
    settings, active_tasks = config.resolved_model()

    def eval_hook(state, step):
        rep = evaluate(state.model, dataset, state.split, state.vocab, config, "val", active_tasks)
        return [f"step {step}"] + rep.to_lines()

    state = train(
        config,
        dataset,
        out_dir,
        settings=settings,
        active_tasks=active_tasks,
        eval_hook=eval_hook if config.eval_every else None,
    )
    rows = read_loss_log(Path(out_dir) / "loss_log.tsv")
    report.render_loss_curves(rows, Path(out_dir) / "training_curves.png")
    return dataset, state, active_tasks


def cmd_train(args) -> int:
    from pathlib import Path

    config = _load_config(args)
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    _run_training(config, out_dir)
    print(f"training complete; checkpoint and loss log in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    from pathlib import Path

    from . import report
    from .data import load_dataset, temporal_split
    from .evaluation import evaluate
    from .model import RecommenderModel
    from .optim import ParameterStore
    from .sequence import Vocabulary
    from .training import load_checkpoint

    config, step, arrays = load_checkpoint(args.checkpoint)
    if args.data:
        config.data_dir = args.data
    dataset = load_dataset(config.data_dir)
    vocab = Vocabulary.from_dataset(dataset)
    settings, active_tasks = config.resolved_model()
    store = ParameterStore()
    model = RecommenderModel(store, vocab, settings, config.seed)
    store.load_state_arrays(arrays)

    split = temporal_split(dataset)
    rep = evaluate(model, dataset, split, vocab, config, args.split, active_tasks)
    out = Path(args.out or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = report.write_metrics(rep, out / f"metrics_{args.split}.txt")
    report.render_metrics_figure(rep, out / f"metrics_{args.split}.png")
    print(text, end="")
    return 0


def cmd_ablate(args) -> int:
    from pathlib import Path

    from . import report
    from .ablation import apply_variant
    from .evaluation import evaluate

    config = _load_config(args)
    config.variant = args.variant
    apply_variant(config.model_settings(), args.variant)  # validate before any work
    out_dir = Path(args.out or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")

    dataset, state, active_tasks = _run_training(config, out_dir)
    rep = evaluate(state.model, dataset, state.split, state.vocab, config, "test", active_tasks)
    text = report.write_metrics(rep, out_dir / "metrics_test.txt")
    report.render_metrics_figure(rep, out_dir / "metrics_test.png")
    print(f"variant {args.variant}")
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_report, run_gradcheck

    seed = args.seed if args.seed is not None else 0
    errors = run_gradcheck(seed=seed)
    lines, passed = format_report(errors)
    print("\n".join(lines))
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="travelrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("generate", help="write a synthetic dataset as TSV files")
    common(p, "output directory for the TSV files and stats")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a dataset directory")
    common(p, "run directory for checkpoint, logs, figures")
    p.add_argument("--data", help="dataset directory (overrides config data_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("val", "test"))
    p.add_argument("--out", help="directory for the metrics report")
    p.add_argument("--data", help="dataset directory override")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate a model variant")
    common(p, "run directory for the variant")
    p.add_argument("--variant", required=True)
    p.add_argument("--data", help="dataset directory override")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify gradients on a tiny full model")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _apply_thread_budget()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
