"""Ablation sweeps with per-cell result files so an interrupted sweep resumes.

A cell is one (row, seed) run.  Its fully resolved config is hashed; the
result lands in ``cells/<hash>.json`` via an atomic rename, and any cell whose
file already exists is skipped on the next invocation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .backbone import ModelConfig
from .core import ValidationError
from .metrics import evaluate
from .paint import SCHEME_LABELS, builtin_scheme
from .synthgen import GenSpec, generate_corpus, subsample
from .training import TrainConfig, train

log = logging.getLogger(__name__)

SUITES = ("CONSISTENCY", "DIVERGENCE", "COLORS", "LOWRES", "SHARING", "ENCODERS", "MODES")
LOWRES_PERCENTS = (5, 12.5, 25, 50, 100)


@dataclass(frozen=True)
class Row:
    name: str
    train: dict
    model: dict
    percent: float = 100


def suite_rows(suite: str) -> list[Row]:
    if suite == "CONSISTENCY":
        return [Row("VANCL", {"mode": "VANCL"}, {}), Row("NONE", {"mode": "NONE"}, {})]
    if suite == "DIVERGENCE":
        return [Row(k, {"mode": "VANCL", "divergence": k}, {}) for k in ("KL", "JS")]
    if suite == "COLORS":
        return [Row(builtin_scheme(r).name, {"mode": "VANCL", "scheme": r}, {}) for r in range(1, 9)]
    if suite == "LOWRES":
        rows = []
        for p in LOWRES_PERCENTS:
            rows.append(Row(f"baseline@{p}", {"mode": "NONE", "baseline": True}, {}, p))
            rows.append(Row(f"VANCL@{p}", {"mode": "VANCL"}, {}, p))
        return rows
    if suite == "SHARING":
        return [Row(f"share={s},painted={p}", {"mode": "VANCL", "share_weights": s, "painted": p}, {})
                for s in (True, False) for p in (True, False)]
    if suite == "ENCODERS":
        return [Row(f"outer={e}", {"mode": "VANCL"}, {"outer_encoder": e}) for e in ("cnn2", "cnn4", "none")]
    if suite == "MODES":
        return [Row("VANCL", {"mode": "VANCL"}, {}), Row("RDROP", {"mode": "RDROP"}, {}),
                Row("MUTUAL", {"mode": "MUTUAL"}, {}),
                Row("baseline", {"mode": "NONE", "baseline": True}, {})]
    raise ValidationError(f"unknown suite {suite!r}; expected one of {SUITES}")


def resolve_base(base: dict) -> dict:
    """Fill every default so the echoed config is complete."""
    unknown = set(base) - {"gen", "train", "model"}
    if unknown:
        raise ValidationError(f"unknown base config sections {sorted(unknown)}")
    return {
        "gen": GenSpec.from_json(base.get("gen", {})).to_json(),
        "train": TrainConfig.from_json(base.get("train", {})).to_json(),
        "model": ModelConfig.from_json(base.get("model", {})).to_json(),
    }


def cell_config(base: dict, row: Row, seed: int) -> dict:
    gen = dict(base["gen"], seed=seed)
    tr = dict(base["train"], **row.train, seed=seed)
    model = dict(base["model"], **row.model)
    return {"row": row.name, "percent": row.percent, "gen": gen, "train": tr, "model": model}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:20]


@lru_cache(maxsize=4)
def _corpus(gen_json: str):
    return generate_corpus(GenSpec.from_json(json.loads(gen_json)))


def run_cell(cfg: dict, path: str) -> str:
    """Train and evaluate one cell, then publish its result file atomically."""
    try:
        import torch
        torch.set_num_threads(1)
    except RuntimeError:
        pass
    split = _corpus(json.dumps(cfg["gen"], sort_keys=True))
    train_docs = split.train
    if cfg["percent"] < 100:
        train_docs = subsample(train_docs, cfg["percent"] / 100, cfg["train"]["seed"])
    result = train(train_docs, split.labels, TrainConfig.from_json(cfg["train"]),
                   ModelConfig.from_json(cfg["model"]))
    report = evaluate(result.tagger, split.test)
    out = {"config": cfg, "n_train": len(train_docs), "metrics": report.to_json(),
           "final_epoch": result.history[-1] if result.history else None}
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=1)
    os.replace(tmp, path)
    return path


def run_sweep(suite: str, base: dict, seeds, out_dir, jobs: int = 1) -> dict:
    if not seeds:
        raise ValidationError("ablation needs at least one seed")
    base = resolve_base(base)
    rows = suite_rows(suite)
    out_dir = Path(out_dir)
    cell_dir = out_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    for stale in cell_dir.glob("*.tmp*"):   # left behind by a killed worker
        stale.unlink()

    plan = []
    for row in rows:
        for seed in seeds:
            cfg = cell_config(base, row, int(seed))
            plan.append((row, int(seed), cfg, cell_dir / f"{config_hash(cfg)}.json"))
    todo = [(cfg, str(path)) for _, _, cfg, path in plan if not path.exists()]
    log.info("%s: %d cells, %d cached", suite, len(plan), len(plan) - len(todo))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fut in [pool.submit(run_cell, cfg, path) for cfg, path in todo]:
                fut.result()
    else:
        for cfg, path in todo:
            run_cell(cfg, path)

    results = {}
    for row, seed, cfg, path in plan:
        results.setdefault(row.name, []).append(json.loads(path.read_text()))
    report = build_report(suite, base, rows, [int(s) for s in seeds], results)
    (out_dir / f"{suite.lower()}.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    (out_dir / f"{suite.lower()}.md").write_text(render_markdown(report))
    return report


def _mean_std(values):
    arr = np.asarray(values, dtype=float) * 100
    return {"mean": float(arr.mean()), "std": float(arr.std()), "runs": [float(v) for v in arr]}


def build_report(suite, base, rows, seeds, results) -> dict:
    labels = list(base["gen"]["labels"])
    table = []
    for row in rows:
        runs = results[row.name]
        entry = {
            "row": row.name,
            "percent": row.percent,
            "overrides": {"train": row.train, "model": row.model},
            "cells": [config_hash(r["config"]) for r in runs],
            "p": _mean_std([r["metrics"]["micro"]["p"] for r in runs]),
            "r": _mean_std([r["metrics"]["micro"]["r"] for r in runs]),
            "f1": _mean_std([r["metrics"]["micro"]["f1"] for r in runs]),
            "per_type_f1": {lab: _mean_std([r["metrics"]["per_type"][lab]["f1"] for r in runs])
                            for lab in labels},
        }
        if suite == "COLORS":
            scheme = builtin_scheme(row.train["scheme"])
            entry["colors"] = {lab: scheme[lab].hex for lab in SCHEME_LABELS}
            entry["paint_mode"] = scheme[labels[0]].mode.value
        table.append(entry)
    return {"suite": suite, "seeds": seeds, "labels": labels, "resolved_base_config": base,
            "rows": table}


def _fmt(ms):
    return f"{ms['mean']:.2f} ± {ms['std']:.2f}"


def render_markdown(report: dict) -> str:
    suite, labels, rows = report["suite"], report["labels"], report["rows"]
    out = [f"# Ablation: {suite}", "",
           f"Seeds: {', '.join(map(str, report['seeds']))}. Scores are entity-level, x100, mean ± std.", ""]
    if suite == "COLORS":
        out += ["Scheme colors:", ""]
        for r in rows:
            colors = ", ".join(f"{lab} {hx}" for lab, hx in r["colors"].items())
            out.append(f"- {r['row']} ({r['paint_mode']}): {colors}")
        out += ["", "| Scheme | " + " | ".join(SCHEME_LABELS) + " | "
                + " | ".join(f"{lab} F1" for lab in labels) + " | micro-avg F1 |",
                "|" + "---|" * (1 + len(SCHEME_LABELS) + len(labels) + 1)]
        for r in rows:
            out.append(f"| {r['row']} | " + " | ".join(r["colors"][lab] for lab in SCHEME_LABELS) + " | "
                       + " | ".join(_fmt(r["per_type_f1"][lab]) for lab in labels)
                       + f" | {_fmt(r['f1'])} |")
    elif suite == "LOWRES":
        pcts = sorted({r["percent"] for r in rows})
        out += ["| Method | " + " | ".join(f"{p:g}%" for p in pcts) + " |",
                "|" + "---|" * (1 + len(pcts))]
        by = {(r["row"].split("@")[0], r["percent"]): r for r in rows}
        for method in ("baseline", "VANCL"):
            out.append(f"| {method} | " + " | ".join(_fmt(by[(method, p)]["f1"]) for p in pcts) + " |")
        gaps = [by[("VANCL", p)]["f1"]["mean"] - by[("baseline", p)]["f1"]["mean"] for p in pcts]
        out.append("| gap | " + " | ".join(f"{g:+.2f}" for g in gaps) + " |")
    else:
        out += ["| Setting | Precision | Recall | F1 | " + " | ".join(f"{lab} F1" for lab in labels) + " |",
                "|" + "---|" * (4 + len(labels))]
        for r in rows:
            out.append(f"| {r['row']} | {_fmt(r['p'])} | {_fmt(r['r'])} | {_fmt(r['f1'])} | "
                       + " | ".join(_fmt(r["per_type_f1"][lab]) for lab in labels) + " |")
    out += ["", "## Resolved base config", "", "```json",
            json.dumps(report["resolved_base_config"], indent=1, sort_keys=True), "```", ""]
    return "\n".join(out)
