"""Command line entry point.

Exit codes: 0 success, 2 validation or usage error, 1 runtime error.
``VANCL_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .backbone import SL, VE, ModelConfig
from .core import ValidationError, entities_from_tags, entity_to_dict, load_document
from .synthgen import GenSpec, generate_corpus, read_corpus, write_corpus

log = logging.getLogger("vancl")

OUT_ENV = "VANCL_OUT"


def _read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return obj


def _out(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "vancl_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_train_config(obj: dict):
    """Accept either {"train": {...}, "model": {...}} or a flat TrainConfig object."""
    from .training import TrainConfig
    if set(obj) <= {"train", "model"}:
        return TrainConfig.from_json(obj.get("train", {})), ModelConfig.from_json(obj.get("model", {}))
    return TrainConfig.from_json(obj), ModelConfig()


def _docs_from(paths) -> list:
    docs = []
    for p in map(Path, paths):
        if p.is_dir() and (p / "manifest.json").exists():
            split = read_corpus(p)
            docs += [*split.train, *split.test]
        elif p.is_dir():
            docs += [load_document(f) for f in sorted(p.glob("*.json"))]
        else:
            docs.append(load_document(p))
    return docs


def cmd_gen(args) -> int:
    spec = GenSpec.from_json(_read_json(args.spec)) if args.spec else GenSpec()
    if args.seed is not None:
        spec.seed = args.seed
    split = generate_corpus(spec)
    path = write_corpus(split, _out(args), spec)
    print(f"wrote {len(split.train)} train / {len(split.test)} test documents; manifest {path}")
    return 0


def cmd_paint(args) -> int:
    from .paint import load_scheme, paint_document
    scheme = load_scheme(args.scheme)
    out = _out(args)
    for doc in _docs_from(args.docs):
        painted = paint_document(doc, scheme)
        target = out / f"{doc.doc_id}.painted.ppm"
        target.write_bytes(painted.image.to_ppm())
        print(target)
    return 0


def cmd_train(args) -> int:
    from .checkpoint import save_deployment, save_training_state
    from .training import train
    cfg, mcfg = _split_train_config(_read_json(args.config)) if args.config else _split_train_config({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.baseline:
        cfg.baseline, cfg.mode = True, "NONE"
    cfg.validate()
    split = read_corpus(args.corpus)
    out = _out(args)
    (out / "config.json").write_text(json.dumps({"train": cfg.to_json(), "model": mcfg.to_json()},
                                                indent=1, sort_keys=True) + "\n")
    dev = split.test if args.dev else None
    result = train(split.train, split.labels, cfg, mcfg, dev_docs=dev, log_path=out / "train_log.jsonl")
    save_deployment(out / "model.ckpt", result.tagger)
    save_training_state(out / "train_state.ckpt", result.tagger, result.trainer.outer,
                        result.trainer.ve_model)
    print(f"trained {cfg.epochs} epochs; deployment checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_deployment
    from .metrics import evaluate
    tagger = load_deployment(args.model)
    split = read_corpus(args.corpus)
    docs = split.test if args.split == "test" else split.train
    report = evaluate(tagger, docs).to_json()
    path = _out(args) / "metrics.json"
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    m = report["micro"]
    print(f"P={m['p']:.4f} R={m['r']:.4f} F1={m['f1']:.4f} on {report['n_docs']} documents")
    return 0


def cmd_predict(args) -> int:
    from .checkpoint import load_deployment
    tagger = load_deployment(args.model)
    docs = _docs_from(args.docs)
    out = _out(args)
    for doc, tags in zip(docs, tagger.predict_tags(docs)):
        rec = {"doc_id": doc.doc_id, "entities": [entity_to_dict(e) for e in entities_from_tags(tags)],
               "tags": tags}
        (out / f"{doc.doc_id}.pred.json").write_text(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote predictions for {len(docs)} documents to {out}")
    return 0


def cmd_ablate(args) -> int:
    from .ablate import run_sweep
    base = _read_json(args.config) if args.config else {}
    seeds = args.seeds if args.seeds else [args.seed if args.seed is not None else 0]
    report = run_sweep(args.suite, base, seeds, _out(args), jobs=args.jobs)
    for row in report["rows"]:
        print(f"{row['row']}: F1 {row['f1']['mean']:.2f} ± {row['f1']['std']:.2f}")
    return 0


def cmd_export_embeddings(args) -> int:
    from .checkpoint import load_training_state
    from .embeddings import token_embeddings, write_tsv
    from .paint import load_scheme
    tagger, outer, ve_model = load_training_state(args.state)
    docs = _docs_from(args.docs)
    scheme = load_scheme(args.scheme) if (args.flow == VE and args.scheme is not None) else None
    model = ve_model if args.flow == VE else tagger.model
    rows = token_embeddings(model, outer, docs, tagger.vocab, tagger.labels, args.flow, scheme)
    path = _out(args) / f"embeddings.{args.flow.lower()}.tsv"
    n = write_tsv(rows, path, tagger.model.config.d_model)
    print(f"wrote {n} token rows to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./vancl_out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vancl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--spec", help="GenSpec JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("paint", parents=[common], help="paint documents with a color scheme")
    p.add_argument("docs", nargs="+", help="document JSON files or directories")
    p.add_argument("--scheme", default="1", help="built-in row 1..8 or a scheme JSON file")
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("train", parents=[common], help="dual-flow training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--baseline", action="store_true", help="skip the vision-enhanced flow")
    p.add_argument("--dev", action="store_true", help="log per-epoch F1 on the test split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a deployment checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="tag documents")
    p.add_argument("--model", required=True)
    p.add_argument("docs", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    p.add_argument("--suite", required=True,
                   choices=("CONSISTENCY", "DIVERGENCE", "COLORS", "LOWRES", "SHARING", "ENCODERS", "MODES"))
    p.add_argument("--config", help="base config JSON with gen/train/model sections")
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-embeddings", parents=[common], help="dump per-token hidden states as TSV")
    p.add_argument("--state", required=True, help="training-state checkpoint")
    p.add_argument("--flow", choices=(SL, VE), default=SL)
    p.add_argument("--scheme", default=None, help="paint VE inputs with this scheme")
    p.add_argument("docs", nargs="+")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("unhandled", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
