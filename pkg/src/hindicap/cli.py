"""Command-line pipeline: prepare, translate, extract, train, caption,
evaluate, and the full experiment grid.

Every value can come from a JSON config file (--config) or a flag; flags win.
Outputs are written atomically, so reruns with unchanged inputs and seeds
reproduce byte-identical reports. Exit codes: 0 success, 1 usage error,
2 data error, 3 experiment cell failure(s).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import features as features_mod
from . import translate as translate_mod
from .corpus import (
    TEST,
    TRAIN,
    Corpus,
    build_vocabulary,
    clean_caption,
    load_processed_corpus,
    load_token_file,
    load_vocabulary,
    max_caption_length,
    read_id_file,
    reduce_captions,
    restrict_corpus,
    save_id_file,
    save_processed_corpus,
    save_vocabulary,
    split_corpus,
    wrap_markers,
)
from .decoding import greedy_caption
from .errors import HindicapError
from .evaluation import annotate_errors, evaluate_model, load_annotations
from .ioutil import atomic_write_text
from .model import ModelConfig, VARIANTS, build_model, load_checkpoint, save_checkpoint
from .training import BatchGenerator, TrainRunSpec, repeat_runs, save_loss_history, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CELLS = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; we reserve 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return config


def _cfg(config: dict, dotted: str, flag_value, default=None, required=False):
    """Resolve one setting: flag beats config beats default."""
    if flag_value is not None:
        return flag_value
    node = config
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            node = None
            break
        node = node[part]
    if node is not None:
        return node
    if required:
        raise UsageError(f"missing required setting: give a flag or config key {dotted!r}")
    return default


def _out_dir(args, config, key="paths.output_dir") -> Path:
    out = Path(_cfg(config, key, args.out, required=True))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- prepare


def cmd_prepare(args, config) -> int:
    tokens = _cfg(config, "paths.token_file", args.tokens, required=True)
    out = _out_dir(args, config)
    captions_per_image = _cfg(config, "corpus.captions_per_image", args.captions_per_image)
    cleaning = _cfg(config, "corpus.cleaning", args.clean, default=True)
    min_count = _cfg(config, "corpus.min_count", args.min_count, default=1)

    loaded = load_token_file(tokens)
    corpus = Corpus.from_records(loaded.records)
    if captions_per_image is not None:
        corpus = reduce_captions(corpus, int(captions_per_image))
    if cleaning:
        corpus = corpus.map_texts(clean_caption)
    corpus = corpus.map_texts(wrap_markers)

    train_file = _cfg(config, "paths.train_split", args.train_split)
    test_file = _cfg(config, "paths.test_split", args.test_split)
    fraction = _cfg(config, "corpus.train_fraction", args.train_fraction)
    if train_file or test_file:
        corpus = split_corpus(corpus, train_file=train_file, test_file=test_file)
    elif fraction is not None:
        seed = int(_cfg(config, "corpus.split_seed", args.seed, default=0))
        corpus = split_corpus(corpus, train_fraction=float(fraction), seed=seed)

    vocab = build_vocabulary(corpus, min_count=int(min_count))
    max_len = max_caption_length(corpus)

    save_processed_corpus(corpus, out / "processed.txt")
    save_vocabulary(vocab, out / "vocab.tsv")
    train_ids = corpus.ids_for_split(TRAIN)
    test_ids = corpus.ids_for_split(TEST)
    save_id_file(train_ids, out / "train_ids.txt")
    save_id_file(test_ids, out / "test_ids.txt")
    stats = {
        "images": len(corpus.image_ids),
        "captions": sum(len(c) for c in corpus.entries.values()),
        "skipped_lines": loaded.skipped,
        "vocab_size": vocab.size,
        "max_caption_length": max_len,
        "train_images": len(train_ids),
        "test_images": len(test_ids),
        "cleaning": bool(cleaning),
    }
    atomic_write_text(out / "stats.json", json.dumps(stats, indent=2) + "\n")
    print(
        f"prepared {stats['images']} images / {stats['captions']} captions -> {out} "
        f"(vocab {vocab.size}, max length {max_len}, "
        f"{len(train_ids)} train / {len(test_ids)} test)"
    )
    if loaded.skipped:
        print(f"warning: skipped {loaded.skipped} malformed line(s)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- translate


def cmd_translate(args, config) -> int:
    tokens = _cfg(config, "paths.token_file", args.tokens, required=True)
    out = _cfg(config, "translate.output", args.out, required=True)
    mock_dict = _cfg(config, "translate.dictionary", args.mock_dict)
    endpoint = _cfg(config, "translate.endpoint", args.endpoint)
    if mock_dict:
        client = translate_mod.DictionaryTranslator(translate_mod.load_dictionary(mock_dict))
    elif endpoint:
        client = translate_mod.HttpTranslator(
            endpoint, timeout=float(_cfg(config, "translate.timeout", args.timeout, default=30.0))
        )
    else:
        raise UsageError("give --mock-dict or --endpoint (or the config equivalents)")

    summary = translate_mod.translate_corpus(
        client,
        tokens,
        out,
        source_lang=_cfg(config, "translate.source", args.source, default="en"),
        target_lang=_cfg(config, "translate.target", args.target, default="hi"),
        batch_size=int(_cfg(config, "translate.batch_size", args.batch_size, default=100)),
        max_inflight=int(_cfg(config, "translate.max_inflight", args.max_inflight, default=1)),
    )
    print(
        f"translated {summary.translated} line(s), reused {summary.reused}, "
        f"{len(summary.failures)} failure(s), {summary.client_batches} client batch(es)"
    )
    for image_id, index, message in summary.failures[:20]:
        print(f"  failed {image_id}#{index}: {message}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_DATA


# ---------------------------------------------------------------- extract


def cmd_extract(args, config) -> int:
    backend_name = _cfg(config, "backend.name", args.backend, required=True)
    out = _cfg(config, "paths.cache_dir", args.out, required=True)
    images = _cfg(config, "paths.images_dir", args.images)
    ids = read_id_file(args.ids) if args.ids else None
    backend = features_mod.make_backend(
        backend_name,
        stub_dim=int(_cfg(config, "backend.stub_dim", args.stub_dim, default=64)),
        stub_seed=int(_cfg(config, "backend.stub_seed", args.stub_seed, default=0)),
    )
    if images is None and not (backend_name == "stub" and ids):
        raise UsageError("--images is required (stub backend may use --ids instead)")
    feats = features_mod.extract_directory(backend, images or ".", image_ids=ids)
    features_mod.save_feature_cache(
        feats, out, preprocessing=getattr(backend, "preprocessing", None)
    )
    print(f"extracted {len(feats)} feature(s) with backend {backend.name} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _model_config(args, config, vocab_size, max_len, feature_dim, seed) -> ModelConfig:
    return ModelConfig(
        variant=_cfg(config, "model.variant", args.variant, required=True),
        vocab_size=vocab_size,
        max_len=max_len,
        feature_dim=feature_dim,
        embed_dim=int(_cfg(config, "model.embed_dim", args.embed_dim, default=256)),
        hidden_units=int(_cfg(config, "model.hidden_units", args.hidden_units, default=256)),
        dropout_rate=float(_cfg(config, "model.dropout_rate", args.dropout, default=0.5)),
        seed=seed,
    )


def _load_pipeline_inputs(args, config):
    corpus = load_processed_corpus(_cfg(config, "paths.corpus", args.corpus, required=True))
    vocab = load_vocabulary(_cfg(config, "paths.vocab", args.vocab, required=True))
    cache = features_mod.load_feature_cache(
        _cfg(config, "paths.cache_dir", args.features, required=True)
    )
    return corpus, vocab, cache


def cmd_train(args, config) -> int:
    corpus, vocab, cache = _load_pipeline_inputs(args, config)
    if args.ids:
        corpus = restrict_corpus(corpus, read_id_file(args.ids))
    out = _out_dir(args, config)
    max_len = int(_cfg(config, "model.max_len", args.max_len, default=0)) or max_caption_length(corpus)
    seed = int(_cfg(config, "training.seed", args.seed, default=0))
    model_config = _model_config(args, config, vocab.size, max_len, cache.feature_dim, seed)
    spec = TrainRunSpec(
        config=model_config,
        epochs=int(_cfg(config, "training.epochs", args.epochs, required=True)),
        batch_size=int(_cfg(config, "training.batch_size", args.batch_size, default=64)),
        learning_rate=float(_cfg(config, "training.learning_rate", args.learning_rate, default=1e-3)),
        repetitions=1,
        seed=seed,
    )
    model = build_model(model_config)
    generator = BatchGenerator(corpus, cache, vocab, spec.batch_size, seed, max_len)
    print(
        f"training {model_config.variant} on {generator.total_samples} samples "
        f"({spec.epochs} epochs, batch {spec.batch_size}, lr {spec.learning_rate}, seed {seed})"
    )
    result = train(model, generator, spec)
    save_checkpoint(result.model, out / "model.ckpt")
    save_loss_history(result.loss_history, out / "loss_history.csv")

    from .report import plot_loss_curves

    plot_loss_curves({f"seed {seed}": result.loss_history}, out / "loss_curve.png")
    summary = {
        "config": dataclasses.asdict(model_config),
        "epochs": spec.epochs,
        "batch_size": spec.batch_size,
        "learning_rate": spec.learning_rate,
        "seed": seed,
        "samples_per_epoch": generator.total_samples,
        "first_loss": result.loss_history[0],
        "final_loss": result.loss_history[-1],
    }
    atomic_write_text(out / "train_summary.json", json.dumps(summary, indent=2) + "\n")
    print(
        f"loss {result.loss_history[0]:.4f} -> {result.loss_history[-1]:.4f}; "
        f"wrote {out / 'model.ckpt'}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- caption


def cmd_caption(args, config) -> int:
    model = load_checkpoint(_cfg(config, "paths.model", args.model, required=True))
    vocab = load_vocabulary(_cfg(config, "paths.vocab", args.vocab, required=True))
    cache = features_mod.load_feature_cache(
        _cfg(config, "paths.cache_dir", args.features, required=True)
    )
    result = greedy_caption(model, cache[args.image_id], vocab, model.config.max_len)
    print(result.text)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def cmd_evaluate(args, config) -> int:
    corpus, vocab, cache = _load_pipeline_inputs(args, config)
    model = load_checkpoint(_cfg(config, "paths.model", args.model, required=True))
    out = _out_dir(args, config)
    image_ids = read_id_file(args.ids) if args.ids else None
    smooth = float(_cfg(config, "evaluation.smooth", args.smooth, default=0.0))
    report, rows = evaluate_model(
        model, corpus, cache, vocab, model.config.max_len,
        split=TRAIN, image_ids=image_ids, smooth_eps=smooth,
    )

    from .report import plot_bleu_scores, save_bleu_summary, save_caption_report

    extra = {}
    annotations_by_image = None
    if args.annotations:
        annotations = load_annotations(args.annotations)
        annotated, counts = annotate_errors(rows, annotations)
        annotations_by_image = {
            row.image_id: cats for row, cats in annotated if cats
        }
        extra["error_counts"] = counts
    save_caption_report(rows, out / "captions.csv", annotations_by_image)
    save_bleu_summary(report, out / "bleu.json", extra=extra)
    plot_bleu_scores(report, out / "bleu_scores.png")
    print(
        "BLEU-1..4: "
        + " ".join(f"{s:.4f}" for s in report.bleu)
        + f" (BP {report.brevity_penalty:.4f}, {len(rows)} images) -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- experiment


def _parse_grid(spec_text: str) -> list[dict]:
    cells = []
    for part in spec_text.split(","):
        pieces = part.strip().split(":")
        if len(pieces) != 3:
            raise UsageError(f"grid cell {part!r} must be backend:variant:epochs")
        cells.append(
            {"backend": pieces[0], "variant": pieces[1], "epochs": int(pieces[2])}
        )
    return cells


def cmd_experiment(args, config) -> int:
    corpus, vocab, cache = _load_pipeline_inputs(args, config)
    out = _out_dir(args, config)
    if args.grid:
        grid = _parse_grid(args.grid)
    else:
        grid = _cfg(config, "experiment.grid", None)
        if not grid:
            raise UsageError("give --grid or an experiment.grid config list")
    if not grid:
        raise UsageError("experiment grid is empty")
    for cell in grid:
        if not all(k in cell for k in ("backend", "variant", "epochs")):
            raise UsageError(f"grid cell {cell!r} needs backend, variant, and epochs")

    if args.train_ids and args.test_ids:
        corpus = split_corpus(corpus, train_file=args.train_ids, test_file=args.test_ids)
        eval_split = TEST
    else:
        eval_split = TRAIN  # no held-out ids: fit and score on everything

    max_len = int(_cfg(config, "model.max_len", args.max_len, default=0)) or max_caption_length(corpus)
    seed = int(_cfg(config, "training.seed", args.seed, default=0))
    repetitions = int(_cfg(config, "training.repetitions", args.repetitions, default=5))
    batch_size = int(_cfg(config, "training.batch_size", args.batch_size, default=64))
    lr = float(_cfg(config, "training.learning_rate", args.learning_rate, default=1e-3))

    rows = []
    details = []
    any_failed = False
    for cell in grid:
        label = f"{cell['backend']}/{cell['variant']}/{cell['epochs']}"
        row = {
            "backend": cell["backend"],
            "variant": cell["variant"],
            "epochs": int(cell["epochs"]),
        }
        try:
            if cell["backend"] != cache.backend_name:
                raise UsageError(
                    f"cell {label} wants backend {cell['backend']!r} but the cache "
                    f"holds {cache.backend_name!r} features"
                )
            model_config = ModelConfig(
                variant=cell["variant"],
                vocab_size=vocab.size,
                max_len=max_len,
                feature_dim=cache.feature_dim,
                embed_dim=int(_cfg(config, "model.embed_dim", args.embed_dim, default=256)),
                hidden_units=int(_cfg(config, "model.hidden_units", args.hidden_units, default=256)),
                dropout_rate=float(_cfg(config, "model.dropout_rate", args.dropout, default=0.5)),
                seed=seed,
            )
            spec = TrainRunSpec(
                config=model_config,
                epochs=int(cell["epochs"]),
                batch_size=batch_size,
                learning_rate=lr,
                repetitions=repetitions,
                seed=seed,
            )
            print(f"cell {label}: {repetitions} run(s) ...")
            aggregate = repeat_runs(
                spec, corpus, cache, vocab, max_len, eval_split=eval_split
            )
            for k in range(4):
                row[f"bleu{k + 1}"] = aggregate.mean_bleu[k]
            row["status"] = "ok"
            details.append(
                {
                    "cell": label,
                    "seeds": [run.seed for run in aggregate.runs],
                    "per_run_bleu": [list(b) for b in aggregate.per_run_bleu],
                    "mean_bleu": list(aggregate.mean_bleu),
                    "final_losses": [run.loss_history[-1] for run in aggregate.runs],
                }
            )
        except (HindicapError, UsageError, ValueError) as exc:
            any_failed = True
            row["status"] = f"failed: {exc}"
            details.append({"cell": label, "error": str(exc)})
        rows.append(row)

    from .report import plot_experiment, render_experiment_table, save_experiment_csv

    save_experiment_csv(rows, out / "experiment.csv")
    table = render_experiment_table(rows)
    atomic_write_text(out / "experiment.txt", table)
    atomic_write_text(out / "experiment.json", json.dumps(details, indent=2) + "\n")
    plot_experiment(rows, out / "results.png")
    print(table, end="")
    return EXIT_CELLS if any_failed else EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hindicap", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="clean, wrap, split, and index a caption file")
    p.add_argument("--tokens", help="token file: image_id#k<TAB>caption per line")
    p.add_argument("--out", help="output directory")
    p.add_argument("--captions-per-image", type=int)
    p.add_argument("--clean", action=argparse.BooleanOptionalAction, default=None,
                   help="remove punctuation/digits (default on)")
    p.add_argument("--min-count", type=int)
    p.add_argument("--train-split", help="file listing train image ids")
    p.add_argument("--test-split", help="file listing test image ids")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("translate", help="translate a caption file line by line")
    p.add_argument("--tokens")
    p.add_argument("--out")
    p.add_argument("--mock-dict", help="JSON dictionary for the offline client")
    p.add_argument("--endpoint", help="REST endpoint URL (key via TRANSLATE_API_KEY)")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-inflight", type=int)
    p.add_argument("--timeout", type=float)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("extract", help="compute and cache image features")
    p.add_argument("--backend", choices=["vgg16", "resnet50", "inceptionv3", "stub"])
    p.add_argument("--images", help="directory of image files")
    p.add_argument("--ids", help="file of image ids (required for stub without images)")
    p.add_argument("--out", help="cache directory")
    p.add_argument("--stub-dim", type=int)
    p.add_argument("--stub-seed", type=int)
    p.set_defaults(func=cmd_extract)

    def add_model_flags(p):
        p.add_argument("--embed-dim", type=int)
        p.add_argument("--hidden-units", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--max-len", type=int)

    p = sub.add_parser("train", help="fit one captioner and save a checkpoint")
    p.add_argument("--corpus", help="processed corpus from `prepare`")
    p.add_argument("--vocab")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--ids", help="restrict training to these image ids")
    p.add_argument("--out")
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="generate a caption for one cached image")
    p.add_argument("--model", help="checkpoint file")
    p.add_argument("--vocab")
    p.add_argument("--features")
    p.add_argument("--image-id", required=True)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="decode a set of images and report BLEU")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--features")
    p.add_argument("--ids", help="evaluate these image ids (default: all)")
    p.add_argument("--annotations", help="CSV image_id,category,note")
    p.add_argument("--smooth", type=float, help="add-epsilon BLEU smoothing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a (backend, variant, epochs) grid")
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--features")
    p.add_argument("--train-ids")
    p.add_argument("--test-ids")
    p.add_argument("--grid", help="comma list of backend:variant:epochs cells")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    add_model_flags(p)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HindicapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
