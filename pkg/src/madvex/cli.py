"""madvex: instrument, classify and attack WebAssembly binaries.

Exit codes:
  0  success
  1  other madvex error
  2  bad command line (argparse)
  3  input is not a well-formed module
  4  module cannot be instrumented (no code section / no instructions)
  5  invalid density or configuration value
  6  model file incompatible with the architecture
  7  corpus problem (empty, single class, duplicate ids)
  8  nothing editable / mask violation
  9  external tool failed or is missing
  10 --strict attack that did not reach tau
"""

import argparse
import csv
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, attack_instrumented, instrument, transfer_evaluate
from .cnn import (TrainConfig, kfold_train, load_model, predict, save_model,
                  write_metrics_csv)
from .dataset import (BENIGN, LABEL_CLASS, MALICIOUS, THRESHOLD, balance, ingest,
                      label_with_model, save_corpus, synth_corpus, write_manifest,
                      write_skip_report)
from .errors import MadvexError
from .external import OPTIMIZER_ENV, RUNTIME_ENV, optimize, time_runtime, validate
from .gadgets import GadgetKind, write_payloads
from .imaging import classify_transform, write_pgm
from .report import aggregate, iterations_by_density, overhead_table
from .wasm import parse_module

EXIT_TAU_NOT_REACHED = 10
DEFAULT_DENSITIES = [0.005, 0.01, 0.02, 0.05, 0.1]


@dataclass
class RunConfig:
    subcommand: str
    inputs: list = field(default_factory=list)
    output: str = None
    densities: list = field(default_factory=list)
    gadgets: list = field(default_factory=list)
    seed: int = 0
    epochs: int = None
    k: int = None
    attack: dict = None
    runtime_cmd: str = None
    optimizer_cmd: str = None
    version: str = __version__

    @classmethod
    def from_args(cls, args):
        get = lambda name, default=None: getattr(args, name, default)  # noqa: E731
        inputs = get("inputs") or ([get("input")] if get("input") else [])
        density = get("densities") or ([get("density")] if get("density") is not None else [])
        gadgets = get("gadget") or []
        if isinstance(gadgets, str):
            gadgets = [gadgets]
        attack = None
        if hasattr(args, "epsilon"):
            attack = asdict(_attack_config(args))
        return cls(args.command, [str(p) for p in inputs], get("output"), list(density),
                   list(gadgets), args.seed, get("epochs"), get("k"), attack,
                   get("runtime_cmd"), get("optimizer_cmd"))


def _attack_config(args):
    return AttackConfig(epsilon=args.epsilon, tau=args.tau, max_iterations=args.max_iter,
                        bounds=args.bounds)


def _dump_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_table(path, table):
    table.to_csv(path)
    print(f"wrote {path}")


def _labelled_arrays(samples):
    images = np.stack([classify_transform(s.load()) for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.float64)
    return images, labels


# -- subcommands -----------------------------------------------------------

def cmd_synth(args, run):
    out = Path(args.output)
    samples = []
    for hint in (MALICIOUS, BENIGN):
        samples += synth_corpus(args.seed, args.n, (args.min_size, args.max_size), hint)
    manifest = save_corpus(samples, out)
    _dump_json(out / "run.json", asdict(run))
    print(f"wrote {len(samples)} modules and {manifest}")


def cmd_label(args, run):
    samples, skipped = ingest(args.input)
    model = load_model(args.model)
    labelled = label_with_model(samples, model)
    if args.balance:
        labelled = balance(labelled, args.seed)
    write_manifest(args.output, labelled)
    if skipped:
        write_skip_report(str(args.output) + ".skipped.csv", skipped)
    counts = {name: sum(1 for s in labelled if s.label == c) for name, c in LABEL_CLASS.items()}
    print(f"labelled {len(labelled)} samples {counts}; {len(skipped)} skipped")


def cmd_instrument(args, run):
    data = Path(args.input).read_bytes()
    out, pmap = instrument(data, GadgetKind(args.gadget), args.density, args.seed)
    Path(args.output).write_bytes(out)
    doc = pmap.to_json()
    doc["run"] = asdict(run)
    _dump_json(str(args.output) + ".payload.json", doc)
    print(f"{args.input}: {pmap.gadget_count} {pmap.kind.value} gadgets, "
          f"{len(data)} -> {len(out)} bytes")


def cmd_train(args, run):
    samples, skipped = ingest(args.input)
    images, labels = _labelled_arrays(samples)
    snapshots = tuple(e for e in args.snapshot if 0 < e < args.epochs)
    config = TrainConfig(compute_dtype=args.dtype)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    results = kfold_train(images, labels, k=args.k, epochs=args.epochs, seed=args.seed,
                          config=config, snapshot_epochs=snapshots)
    reports = []
    for fold, (model, report) in enumerate(results):
        save_model(model, out / f"fold{fold}-e{model.epoch_count}.bin")
        for epoch, snap in report.snapshots.items():
            save_model(snap, out / f"fold{fold}-e{epoch}.bin")
        reports.append(report)
        last = report.last
        print(f"fold {fold}: val_auc {last.val_auc:.4f} val_loss {last.val_loss:.4g}")
    write_metrics_csv(out / "metrics.csv", reports)
    if skipped:
        write_skip_report(out / "skipped.csv", skipped)
    _dump_json(out / "run.json", {"run": asdict(run), "hyperparams": reports[0].hyperparams
                                  if reports else {}, "samples": len(samples)})


def cmd_classify(args, run):
    model = load_model(args.model)
    rows = []
    for path in args.inputs:
        try:
            data = Path(path).read_bytes()
            parse_module(data)
            image = classify_transform(data)
        except (MadvexError, OSError) as exc:
            rows.append([path, "", "", f"error: {exc}"])
            continue
        score = float(predict(model, image)[0])
        rows.append([path, f"{score:.6g}", MALICIOUS if score >= THRESHOLD else BENIGN, ""])
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["path", "score", "class", "error"])
        writer.writerows(rows)
    finally:
        if args.output:
            out.close()


def cmd_attack(args, run):
    data = Path(args.input).read_bytes()
    model = load_model(args.model)
    instrumented, pmap = instrument(data, GadgetKind(args.gadget), args.density, args.seed)
    adv, report = attack_instrumented(instrumented, pmap, model, _attack_config(args))
    output = args.output or str(Path(args.input).with_suffix("")) + args.suffix
    Path(output).write_bytes(adv)
    report.output_path = output
    doc = report.to_json()
    doc["run"] = asdict(run)
    doc["valid"] = validate(adv)
    _dump_json(output + ".report.json", doc)
    print(f"{args.input}: {report.iterations_used} iterations, substitute score "
          f"{report.initial_score:.4g} -> {report.final_substitute_score:.4g} "
          f"(binary {report.inference_score:.4g}); wrote {output}")
    if args.strict and not report.reached_tau:
        print("tau not reached", file=sys.stderr)
        return EXIT_TAU_NOT_REACHED
    return 0


def _substitute_folds(directory):
    """Group ``fold<i>-e<E>.bin`` files by fold, models sorted by epoch count."""
    folds = {}
    for path in sorted(Path(directory).glob("fold*-e*.bin")):
        fold = int(path.stem.split("-")[0][4:])
        folds.setdefault(fold, []).append(load_model(path))
    if not folds:
        raise MadvexError(f"no fold*-e*.bin models in {directory}")
    return [sorted(folds[f], key=lambda m: m.epoch_count) for f in sorted(folds)]


def cmd_evaluate(args, run):
    samples, _ = ingest(args.input)
    malicious = [s for s in samples if s.label == LABEL_CLASS[MALICIOUS]]
    if args.limit:
        malicious = malicious[:args.limit]
    substitutes = _substitute_folds(args.substitutes)
    if args.folds:
        substitutes = substitutes[:args.folds]
    target = load_model(args.target)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    log = open(out / "attacks.jsonl", "w")

    def progress(rep, *_):
        log.write(json.dumps(rep.to_json(), sort_keys=True) + "\n")
        log.flush()

    try:
        records, reports = transfer_evaluate(malicious, substitutes, target, args.densities,
                                             args.gadget, args.seed, _attack_config(args),
                                             progress)
    finally:
        log.close()
    _write_table(out / "rates.csv", aggregate(records))
    _write_table(out / "iterations.csv", iterations_by_density(reports))
    _dump_json(out / "run.json", asdict(run))


def cmd_image(args, run):
    write_pgm(args.output, classify_transform(Path(args.input).read_bytes()))


def cmd_bench(args, run):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    runtime = args.runtime_cmd or os.environ.get(RUNTIME_ENV)
    optimizer = args.optimizer_cmd or os.environ.get(OPTIMIZER_ENV)
    if not runtime:
        print("notice: no runtime configured (--runtime-cmd or $MADVEX_RUNTIME_CMD); "
              "timing skipped", file=sys.stderr)
    sizes, times, survival = [], [], []
    rng = np.random.default_rng(args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        for path in args.inputs:
            data = Path(path).read_bytes()
            base_time = None
            if runtime:
                base_time = float(np.median(time_runtime(runtime, path, args.reps)))
            for kind in args.gadget:
                for density in args.densities:
                    inst, pmap = instrument(data, GadgetKind(kind), density, args.seed)
                    key = {"kind": kind, "density": density}
                    sizes.append({**key, "series": "size", "original": len(data),
                                  "instrumented": len(inst)})
                    if runtime:
                        p = os.path.join(tmp, "bench.wasm")
                        Path(p).write_bytes(inst)
                        t = float(np.median(time_runtime(runtime, p, args.reps)))
                        times.append({**key, "series": "time", "original": base_time,
                                      "instrumented": t})
                    if optimizer:
                        patterns = [rng.bytes(8) for _ in range(pmap.gadget_count)]
                        marked = write_payloads(inst, pmap.offsets, patterns)
                        optimized = optimize(optimizer, marked)
                        kept = sum(1 for p in patterns if p in optimized)
                        survival.append([path, kind, density, pmap.gadget_count, kept])
    _write_table(out / "sizes.csv", overhead_table(sizes))
    if times:
        _write_table(out / "timing.csv", overhead_table(times))
    if survival:
        with open(out / "survival.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["path", "kind", "density", "gadgets", "payloads_kept"])
            writer.writerows(survival)
        print(f"wrote {out / 'survival.csv'}")
    _dump_json(out / "run.json", asdict(run))


# -- argument parsing --------------------------------------------------------

def _density_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser():
    env_seed = int(os.environ.get("MADVEX_SEED", "0"))
    parser = argparse.ArgumentParser(prog="madvex", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=env_seed,
                       help="random seed (default $MADVEX_SEED or 0)")

    def attack_flags(p):
        p.add_argument("--epsilon", type=float, default=0.05)
        p.add_argument("--tau", type=float, default=1e-13)
        p.add_argument("--max-iter", type=int, default=10_000)
        p.add_argument("--bounds", choices=["feasible", "unit"], default="feasible",
                       help="pixel range while crafting: what the payload bytes can reach, or [0,1]")

    p = sub.add_parser("synth", help="generate a synthetic labelled corpus")
    common(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-n", type=int, default=200, help="modules per class")
    p.add_argument("--min-size", type=int, default=6000)
    p.add_argument("--max-size", type=int, default=30000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="label a corpus with a model and write a manifest")
    common(p)
    p.add_argument("input", help="directory or manifest.jsonl")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", required=True, help="manifest to write")
    p.add_argument("--balance", action="store_true")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("instrument", help="insert payload gadgets")
    common(p)
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--gadget", choices=["se", "or"], default="se")
    p.add_argument("--density", type=float, default=0.02)
    p.set_defaults(func=cmd_instrument)

    p = sub.add_parser("train", help="k-fold training of the detector")
    common(p)
    p.add_argument("input", help="directory (benign/, malicious/) or manifest.jsonl")
    p.add_argument("-o", "--output", required=True, help="directory for models and metrics")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--snapshot", type=int, nargs="*", default=[1],
                   help="also save models after these epochs")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score binaries")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("attack", help="instrument a binary and craft its payload")
    common(p)
    p.add_argument("input")
    p.add_argument("--model", required=True, help="substitute model")
    p.add_argument("-o", "--output")
    p.add_argument("--suffix", default=".adv.wasm")
    p.add_argument("--gadget", choices=["se", "or"], default="se")
    p.add_argument("--density", type=float, default=0.02)
    p.add_argument("--strict", action="store_true", help=f"exit {EXIT_TAU_NOT_REACHED} if tau is not reached")
    attack_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="transfer rates against a target model")
    common(p)
    p.add_argument("input", help="corpus; only malicious samples are attacked")
    p.add_argument("--substitutes", required=True, help="directory written by 'train'")
    p.add_argument("--target", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--densities", type=_density_list, default=DEFAULT_DENSITIES)
    p.add_argument("--gadget", choices=["se", "or"], nargs="+", default=["se"])
    p.add_argument("--limit", type=int, help="attack at most this many samples")
    p.add_argument("--folds", type=int, help="use only the first N substitute folds")
    attack_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("image", help="write the 100x100 image of a binary as PGM")
    common(p)
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("bench", help="size, runtime and optimizer overhead")
    common(p)
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--densities", type=_density_list, default=DEFAULT_DENSITIES)
    p.add_argument("--gadget", choices=["se", "or"], nargs="+", default=["se", "or"])
    p.add_argument("--runtime-cmd", help="command template, e.g. 'python -m madvex.external {wasm}'")
    p.add_argument("--optimizer-cmd", help="command template, e.g. 'wasm-opt -O4 {in} -o {out}'")
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = RunConfig.from_args(args)
        return args.func(args, run) or 0
    except MadvexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
