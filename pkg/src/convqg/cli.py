"""Command-line interface for the full experimental loop.

Subcommands: gen-data, train, generate, eval, ablate, sweep,
analyze-preferences. Exit code 0 on success; failures print one
machine-parsable "error: ..." line on stderr and exit nonzero.
CONVQG_THREADS caps the generation thread pool (default 1); outputs are
sorted by id so threading never changes bytes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from .decode import generate_scored
from .constraints import render
from .metrics import (
    PreferenceRecord,
    make_corpus,
    metric_report,
    preference_histogram,
)
from .objective import Fixed, Geometric10, schedule_from_json
from .toyworld import IngestError, generate_world, load_examples, save_examples
from .training import RunConfig, load_model, train_run

METRIC_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor_lite", "cider")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CONVQG_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    examples = generate_world(
        seed=args.seed, n_scenes=args.scenes,
        ontology_size=args.ontology_size, grid_size=args.grid_size,
    )
    os.makedirs(args.out, exist_ok=True)
    counts = {}
    for split in ("train", "val", "test"):
        part = [ex for ex in examples if ex.split == split]
        counts[split] = len(part)
        save_examples(part, os.path.join(args.out, f"{split}.jsonl"))
    manifest = {
        "seed": args.seed,
        "scenes": args.scenes,
        "grid_size": args.grid_size,
        "ontology_size": args.ontology_size,
        "counts": counts,
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    print(f"wrote {sum(counts.values())} examples to {args.out} "
          f"({counts['train']}/{counts['val']}/{counts['test']})")
    return 0


# ---------------------------------------------------------------- train

_CONFIG_FLAGS = (
    ("seed", int), ("epochs", int), ("batch_size", int), ("lr", float),
    ("weight_decay", float), ("lr_schedule", str), ("select_by", str),
    ("alpha", float), ("margin", float),
    ("beta", str), ("variant", str), ("d_model", int), ("n_layers", int),
    ("n_heads", int), ("d_ff", int), ("max_len", int), ("d_sent", int),
    ("train", str), ("val", str), ("test", str), ("out", str),
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON run config; flags override file values")
    for name, typ in _CONFIG_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)


def _run_config(args) -> RunConfig:
    obj = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    for name, _ in _CONFIG_FLAGS:
        val = getattr(args, name)
        if val is not None:
            obj[name] = val
    if "beta" in obj and isinstance(obj["beta"], str):
        try:
            obj["beta"] = float(obj["beta"])
        except ValueError:
            pass  # schedule name, parsed later
    return RunConfig.from_json(obj)


def cmd_train(args) -> int:
    config = _run_config(args)
    if not config.train_path or not config.out_dir:
        raise ValueError("train needs --train and --out (or a config file providing them)")
    result = train_run(config)
    print(f"best epoch {result.best_epoch}; checkpoint {result.best_checkpoint}")
    return 0


# ---------------------------------------------------------------- generate

def _generate_file(checkpoint, data_path, beams, out_path) -> int:
    model, vocab = load_model(checkpoint)
    examples = load_examples(data_path)
    if not examples:
        raise ValueError(f"no examples in {data_path}")

    def one(ex):
        payload = ex.scene if ex.scene is not None else ex.features
        question, score = generate_scored(payload, ex.constraint, model, vocab, beams)
        return {
            "id": ex.id,
            "constraint_type": ex.constraint.kind,
            "t_prime": render(ex.constraint),
            "question": question,
            "score": score,
        }

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, examples))
    else:
        rows = [one(ex) for ex in examples]
    rows.sort(key=lambda r: r["id"])
    with open(out_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return len(rows)


def cmd_generate(args) -> int:
    n = _generate_file(args.checkpoint, args.data, args.beams, args.out)
    print(f"wrote {n} generations to {args.out}")
    return 0


# ---------------------------------------------------------------- eval

def _load_references(path) -> dict:
    refs: dict[str, list[str]] = {}
    examples = load_examples(path)
    for ex in examples:
        refs.setdefault(ex.id, []).append(ex.question)
    return refs


def _load_generated(path) -> dict:
    cands = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                cands[obj["id"]] = obj["question"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise IngestError(f"line {line_no}: bad generation record: {exc}") from exc
    return cands


def _evaluate(generated_path, references_path) -> dict:
    corpus = make_corpus(_load_generated(generated_path), _load_references(references_path))
    return metric_report(corpus)


def cmd_eval(args) -> int:
    report = _evaluate(args.generated, args.references)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    print(json.dumps(report, sort_keys=True))
    return 0


# ---------------------------------------------------------------- ablate

def _train_generate_eval(config: RunConfig, beams: int = 3) -> dict:
    if not config.test_path:
        raise ValueError("a test split path is required")
    result = train_run(config, quiet=True)
    gen_path = os.path.join(config.out_dir, "generated.jsonl")
    _generate_file(result.best_checkpoint, config.test_path, beams, gen_path)
    report = _evaluate(gen_path, config.test_path)
    report["_mean_totals"] = result.epoch_mean_total
    return report


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def cmd_ablate(args) -> int:
    base = _run_config(args)
    if not (base.train_path and base.test_path and base.out_dir):
        raise ValueError("ablate needs train, test and out paths")
    rows = []
    init_hashes = set()
    for variant in ("B", "I", "T", "IT"):
        config = replace(
            base,
            loss=replace(base.loss, variant=variant),
            out_dir=os.path.join(base.out_dir, f"variant_{variant}"),
        )
        report = _train_generate_eval(config, beams=args.beams)
        init_hashes.add(_file_sha256(os.path.join(config.out_dir, "ckpt_init.cvqg")))
        rows.append({"variant": variant, **{k: report[k] for k in METRIC_KEYS}})
        print(f"variant {variant}: bleu4={report['bleu4']:.4f} cider={report['cider']:.4f}")
    if len(init_hashes) != 1:
        raise RuntimeError("ablation variants started from different initial parameters")
    out_csv = os.path.join(base.out_dir, "ablation.csv")
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *METRIC_KEYS])
        for row in rows:
            writer.writerow([row["variant"], *[f"{row[k]:.6f}" for k in METRIC_KEYS]])
    print(f"wrote {out_csv}")
    return 0


# ---------------------------------------------------------------- sweep

def _parse_beta_grid(text: str):
    return [schedule_from_json(_maybe_float(v)) for v in text.split(",") if v.strip()]


def _maybe_float(v: str):
    v = v.strip()
    try:
        return float(v)
    except ValueError:
        return v


def cmd_sweep(args) -> int:
    base = _run_config(args)
    if not (base.train_path and base.test_path and base.out_dir):
        raise ValueError("sweep needs train, test and out paths")
    alphas = [float(v) for v in args.alphas.split(",")] if args.alphas else [0.2, 0.5, 0.8]
    betas = _parse_beta_grid(args.betas) if args.betas else [Fixed(10.0), Fixed(100.0), Geometric10()]
    margins = [float(v) for v in args.margins.split(",")] if args.margins else [0.2, 0.5, 0.8]

    # validate the whole grid before any training starts
    settings = []
    for a in alphas:
        settings.append(("alpha", a, replace(base.loss, alpha=a, variant="IT")))
    for b in betas:
        label = "geometric10" if isinstance(b, Geometric10) else b.value
        settings.append(("beta", label, replace(base.loss, beta_schedule=b, variant="IT")))
    for m in margins:
        settings.append(("margin", m, replace(base.loss, margin=m, variant="IT")))

    rows = []
    for i, (param, value, loss_cfg) in enumerate(settings):
        config = replace(
            base, loss=loss_cfg,
            out_dir=os.path.join(base.out_dir, f"sweep_{i:02d}_{param}_{value}"),
        )
        report = _train_generate_eval(config, beams=args.beams)
        rows.append({"param": param, "value": value, **{k: report[k] for k in METRIC_KEYS}})
        print(f"{param}={value}: bleu4={report['bleu4']:.4f}")
    out_csv = os.path.join(base.out_dir, "sweep.csv")
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", *METRIC_KEYS])
        for row in rows:
            writer.writerow([row["param"], row["value"], *[f"{row[k]:.6f}" for k in METRIC_KEYS]])
    print(f"wrote {out_csv}")
    return 0


# ---------------------------------------------------------------- analyze-preferences

def _load_preferences(path) -> list[PreferenceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(PreferenceRecord(
                    question_a=obj["question_a"],
                    question_b=obj["question_b"],
                    choice=obj["choice"],
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise IngestError(f"line {line_no}: bad preference record: {exc}") from exc
    return records


def cmd_analyze_preferences(args) -> int:
    records = _load_preferences(args.records)
    hist = preference_histogram(records, bins=args.bins)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "n_a", "n_b", "n_similar",
                         "prop_a", "prop_b", "prop_similar"])
        for b in hist.bins:
            pa, pb, ps = b.proportions()
            writer.writerow([f"{b.low:.3f}", f"{b.high:.3f}", b.n_a, b.n_b, b.n_similar,
                             f"{pa:.4f}", f"{pb:.4f}", f"{ps:.4f}"])
        writer.writerow(["totals", "", hist.n_a, hist.n_b, hist.n_similar, "", "", ""])
    print(f"totals: A={hist.n_a} B={hist.n_b} Similar={hist.n_similar}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convqg",
        description="Constraint-guided visual question generation on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--scenes", type=int, default=2000)
    p.add_argument("--grid-size", type=int, default=4)
    p.add_argument("--ontology-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode questions for a data file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beams", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score generated questions against references")
    p.add_argument("--generated", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate variants B, I, T, IT")
    _add_config_flags(p)
    p.add_argument("--beams", type=int, default=3)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="one-factor-at-a-time hyperparameter sweep")
    _add_config_flags(p)
    p.add_argument("--beams", type=int, default=3)
    p.add_argument("--alphas", default=None, help="comma list, default 0.2,0.5,0.8")
    p.add_argument("--betas", default=None, help="comma list of numbers or geometric10")
    p.add_argument("--margins", default=None, help="comma list, default 0.2,0.5,0.8")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze-preferences", help="similarity histogram of preference records")
    p.add_argument("--records", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_preferences)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # uniform one-line, machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
