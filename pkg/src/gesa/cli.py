"""Command-line entry point.

Usage: gesa <command> [flags]

Commands
  gen-synth        write a synthetic cloze dataset (native JSON lines)
  convert          ReCoRD-style or WikiHop JSON to native format
  inspect-pattern  export one instance's label matrix (CSV) and entity graph
  train            train on a native file, checkpoint per epoch
  eval             score a native file with a checkpoint
  gradcheck        finite-difference check of the analytic gradients
  ablate           retrain per ablation spec and print a delta table

Configuration is a flat ``key=value`` file (``--config``) plus repeated
``--set key=value`` overrides. Keys are ModelConfig and TrainConfig field
names; unknown keys are rejected. Every file written starts with ``#`` lines
echoing the command, seed and effective configuration.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
The GESA_THREADS environment variable caps BLAS threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import DataError, Vocabulary, convert_record_style, convert_wikihop, parse_native, write_native
from .graph import export_graph
from .labels import export_pattern, parse_ablations
from .model import ModelConfig, NumericalError, load_checkpoint, prepare_example
from .metrics import corpus_scores
from .train import TrainConfig, grad_check, gradcheck_config, gradcheck_instance, predict, random_params, run_ablation, train

logger = logging.getLogger("gesa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


# --- flat config -----------------------------------------------------------

_MODEL_KEYS = {f.name: f for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name: f for f in fields(TrainConfig)}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    if key == "ablations":
        return tuple(a.value for a in parse_ablations(raw))
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_flat(lines: Sequence[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{n}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_configs(config_path: str | None, overrides: Sequence[str], base_model: ModelConfig | None = None,
                  base_train: TrainConfig | None = None) -> tuple[ModelConfig, TrainConfig]:
    raw = {}
    if config_path:
        try:
            text = Path(config_path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}") from exc
        raw.update(parse_flat(text, config_path))
    raw.update(parse_flat(overrides, "--set"))
    unknown = sorted(set(raw) - set(_MODEL_KEYS) - set(_TRAIN_KEYS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    mc, tc = base_model or ModelConfig(), base_train or TrainConfig()
    m_upd = {k: _coerce(k, v, getattr(mc, k)) for k, v in raw.items() if k in _MODEL_KEYS}
    t_upd = {k: _coerce(k, v, getattr(tc, k)) for k, v in raw.items() if k in _TRAIN_KEYS}
    try:
        return replace(mc, **m_upd), replace(tc, **t_upd)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def provenance_header(command: str, seed: int | None, mc: ModelConfig | None = None,
                      tc: TrainConfig | None = None, extra: dict | None = None) -> str:
    # commands without randomness record "seed=none" so every header has the key
    lines = [f"gesa {command}", f"seed={'none' if seed is None else seed}"]
    if mc is not None:
        lines.append(f"config_hash={mc.digest()}")
        lines += [f"model.{k}={_fmt(v)}" for k, v in sorted(mc.to_dict().items())]
    if tc is not None:
        lines += [f"train.{k}={_fmt(v)}" for k, v in sorted(tc.to_dict().items())]
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}={_fmt(v)}")
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return "+".join(map(str, v)) if v else ""
    return str(v)


def _commented(header: str) -> str:
    return "".join(f"# {line}\n" for line in header.splitlines())


def _limit_threads():
    value = os.environ.get("GESA_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"GESA_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("GESA_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# --- commands --------------------------------------------------------------

def _load(path: str):
    try:
        data = parse_native(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not data:
        raise DataError(f"{path}: no instances")
    return data


def cmd_gen_synth(args) -> int:
    from .synthetic import gen_synthetic_dataset

    try:
        data = gen_synthetic_dataset(args.n, args.candidates, args.sentences, args.hops, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    extra = {"n": args.n, "candidates": args.candidates, "sentences": args.sentences, "hops": args.hops}
    write_native(data, args.out, provenance_header("gen-synth", args.seed, extra=extra))
    print(f"wrote {len(data)} instances to {args.out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    try:
        if args.format == "record":
            data = convert_record_style(args.input, placeholder_marker=args.marker)
        else:
            data = convert_wikihop(args.input)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{args.input}: {exc}") from exc
    extra = {"format": args.format, "input": args.input, "marker": args.marker}
    write_native(data, args.out, provenance_header("convert", None, extra=extra))
    print(f"wrote {len(data)} instances to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    mc, _ = build_configs(args.config, args.set)
    data = _load(args.data)
    if not 0 <= args.instance < len(data):
        raise UsageError(f"--instance out of range (0..{len(data) - 1})")
    inst = data[args.instance]
    from .corpus import build_vocab

    ex = prepare_example(inst, build_vocab(data), mc)
    header = provenance_header("inspect-pattern", None, mc,
                               extra={"data": args.data, "instance": args.instance, "id": inst.id,
                                      "n_words": ex.labels.n_words, "n_entities": ex.labels.n_entities,
                                      "labels": ",".join(mc.label_vocab.names)})
    export_pattern(ex.labels, args.out, header)
    if args.graph:
        export_graph(ex.graph, args.graph, header)
    print(f"P={ex.labels.P} V={mc.V} -> {args.out}")
    return EXIT_OK


def metric_report(dataset: str, mc: ModelConfig, seed: int, scores: dict, wall: float) -> str:
    return (f"dataset={dataset}\nconfig_hash={mc.digest()}\nseed={seed}\n"
            f"em={scores['em']:.6f}\nf1={scores['f1']:.6f}\naccuracy={scores['accuracy']:.6f}\n"
            f"n={scores['n']}\nwall_time_s={wall:.3f}\n")


def cmd_train(args) -> int:
    mc, tc = build_configs(args.config, args.set)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    train_set = _load(args.data)
    dev_set = _load(args.dev) if args.dev else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = provenance_header("train", tc.seed, mc, tc, {"data": args.data, "dev": args.dev or ""})
    t0 = time.perf_counter()
    res = train(train_set, mc, tc, dev=dev_set, checkpoint_dir=out, provenance={"header": header})
    wall = time.perf_counter() - t0
    with open(out / "history.tsv", "w", encoding="utf-8") as fh:
        fh.write(_commented(header))
        cols = list(res.history[0])
        fh.write("\t".join(cols) + "\n")
        for row in res.history:
            fh.write("\t".join(f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")
    if dev_set:
        last = {k[4:]: v for k, v in res.history[-1].items() if k.startswith("dev_")}
        last["n"] = len(dev_set)
        report = metric_report(args.dev, mc, tc.seed, last, wall)
        (out / "report.txt").write_text(_commented(header) + report, encoding="utf-8")
        print(report, end="")
    print(f"checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params, mc, vocab, meta = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint: {exc}") from exc
    data = _load(args.data)
    seed = meta.get("train", {}).get("seed")
    examples = [prepare_example(inst, vocab, mc) for inst in data]
    t0 = time.perf_counter()
    preds = predict(params, mc, examples)
    scores = corpus_scores([p.best_surface for p in preds], [inst.gold_answers for inst in data])
    wall = time.perf_counter() - t0
    header = provenance_header("eval", seed, mc, extra={"checkpoint": args.checkpoint, "data": args.data})
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(_commented(header))
            for inst, p in zip(data, preds):
                fh.write(f"{inst.id}\t{p.best_surface}\t{p.best_score:.6f}\n")
    report = metric_report(args.data, mc, seed, scores, wall)
    if args.report:
        Path(args.report).write_text(_commented(header) + report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    mc = gradcheck_config()
    if args.config or args.set:
        mc, _ = build_configs(args.config, args.set, base_model=mc)
    inst = gradcheck_instance()
    from .corpus import build_vocab

    vocab = build_vocab([inst])
    ex = prepare_example(inst, vocab, mc)
    params = random_params(mc, len(vocab), args.seed)
    res = grad_check(params, ex, mc, eps=args.eps, n_samples=args.samples, seed=args.seed)
    for fam, err in sorted(res.per_family.items()):
        print(f"{fam:24s} {err:.3e}")
    print(f"max_rel_error={res.max_rel_error:.3e} coords={res.n_coords}")
    return EXIT_OK if res.passed(GRADCHECK_TOL) else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    mc, tc = build_configs(args.config, args.set)
    specs = [s for s in args.specs.split(",") if s]
    for s in specs:
        try:
            parse_ablations(s)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    rows = run_ablation(specs, mc, tc, _load(args.data), _load(args.dev), seeds)
    cols = ["spec", "label_vocab_size", "accuracy", "em", "f1", "delta_accuracy", "delta_em", "delta_f1"]
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    table = "\n".join(lines) + "\n"
    if args.out:
        header = provenance_header("ablate", None, mc, tc, {"seeds": args.seeds, "specs": args.specs})
        Path(args.out).write_text(_commented(header) + table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# --- dispatch --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_flags(p):
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gesa", description="Graph-enhanced self-attention cloze reader.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--hops", type=int, default=1)
    p.add_argument("--candidates", type=int, default=4)
    p.add_argument("--sentences", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("convert", help="convert ReCoRD-style or WikiHop JSON")
    p.add_argument("--format", choices=("record", "wikihop"), required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--marker", default="@placeholder")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inspect-pattern", help="export a label matrix and graph")
    p.add_argument("--data", required=True)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--graph")
    _config_flags(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--seed", type=int)
    _config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="prediction dump (id, best surface, score)")
    p.add_argument("--report", help="metric report file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200)
    _config_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="ablation table")
    p.add_argument("--data", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--specs", required=True, help="comma-separated; join flags within one spec with +")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out")
    _config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        limiter = _limit_threads()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        print(f"error: {exc}\n", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
