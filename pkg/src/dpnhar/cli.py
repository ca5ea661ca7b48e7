"""Command-line entry point: ``dpnhar <verb> [--config FILE] [--set key=value ...]``.

Verbs: synth, extract, train, eval, experiment, figdata. Every verb reads one
experiment config document (defaults when omitted) and applies ``--set``
overrides with dotted keys, e.g. ``--set scene.n_frames=24``. Override values
are parsed as JSON when possible and kept as strings otherwise.

Exit status: 0 on success, 1 on a validation error, 2 on an I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import load_manifest, synth_dataset
from .exceptions import DpnharError, InvalidConfig, IoError, ValidationError
from .experiment import (
    CONFIG_VERSION,
    ExperimentConfig,
    FeatureDataset,
    Metrics,
    classify_ids,
    decisions_to_csv,
    emit_figure_data,
    make_splits,
    run_noise_experiment,
    train_bank,
    trajectories_to_csv,
    write_experiment,
)
from .features import features_to_csv
from .persistence import dumps_canonical, load_bank, save_bank

log = logging.getLogger("dpnhar")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


# ---------------------------------------------------------------- config handling


def parse_override(text: str) -> tuple[list[str], object]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise InvalidConfig(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = json.loads(json.dumps(doc))
    for text in overrides or ():
        path, value = parse_override(text)
        node = doc
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise InvalidConfig(f"override {text!r}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return doc


def read_config_doc(path) -> dict:
    if path is None:
        return {"format_version": CONFIG_VERSION}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidConfig(f"{path} must hold a JSON object")
    return doc


def resolve_config(args) -> ExperimentConfig:
    return ExperimentConfig.from_dict(apply_overrides(read_config_doc(args.config), args.set))


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _profile(config: ExperimentConfig, name: str):
    if name not in config.profiles:
        raise InvalidConfig(f"unknown profile {name!r}; known: {sorted(config.profiles)}")
    return config.profiles[name]


def _split_index(plan, index: int) -> int:
    if not 0 <= index < plan.n_sets:
        raise ValidationError(f"set index {index} outside 0..{plan.n_sets - 1}")
    return index


# ---------------------------------------------------------------- verbs


def cmd_synth(args) -> None:
    config = resolve_config(args)
    manifest = synth_dataset(
        args.out, config.per_class_count, config.scene, _profile(config, args.profile),
        config.master_seed, args.profile,
    )
    print(f"wrote {len(manifest)} sequences to {args.out}")


def cmd_extract(args) -> None:
    config = resolve_config(args)
    data = FeatureDataset.from_manifest(load_manifest(args.manifest), config.features)
    out = Path(args.out)
    index = ["sequence_id,class_id,n_steps,file"]
    for sid in sorted(data.features):
        name = f"{sid}.features.csv"
        _write(out / name, features_to_csv(data.features[sid]))
        index.append(f"{sid},{data.labels[sid]},{data.features[sid].n_steps},{name}")
    _write(out / "index.csv", "\n".join(index) + "\n")
    print(f"extracted {len(data.features)} sequences ({data.fingerprint}) to {out}")


def cmd_train(args) -> None:
    config = resolve_config(args)
    data = FeatureDataset.from_manifest(load_manifest(args.manifest), config.features)
    plan = make_splits(data, config.n_sets, config.split_seed)
    kind = args.kind or config.kinds[0]
    bank = train_bank(data, plan, _split_index(plan, args.set_index), kind, config.model_config(kind),
                      None, config.fusion, config.prior)
    save_bank(bank, args.out)
    print(f"wrote {kind} bank for set {args.set_index} to {args.out}")


def cmd_eval(args) -> None:
    config = resolve_config(args)
    bank = load_bank(args.bank)
    data = FeatureDataset.from_manifest(load_manifest(args.manifest), config.features)
    if data.fingerprint != bank.fingerprint:
        raise ValidationError(f"bank expects {bank.fingerprint!r}, features are {data.fingerprint!r}")
    plan = make_splits(data, config.n_sets, config.split_seed)
    split = plan.sets[_split_index(plan, args.set_index)]
    ids = split.test_ids if args.subset == "test" else split.train_ids
    records = classify_ids(data, ids, bank, config.fusion)
    metrics = Metrics.from_records(records)
    out = Path(args.out)
    _write(out / "metrics.json", dumps_canonical(metrics.to_dict()) + "\n")
    _write(out / "decisions.csv", decisions_to_csv(records))
    _write(out / "trajectories.csv", trajectories_to_csv([(r.sequence_id, r.decision.trajectory) for r in records]))
    print(f"accuracy {metrics.overall_accuracy:.4f} on {metrics.n_test} sequences")


def cmd_experiment(args) -> None:
    config = resolve_config(args)
    results = run_noise_experiment(config)
    out = write_experiment(results, args.out)
    for kind in config.kinds:
        print(f"{kind}: mean degradation {results.mean_degradation(kind):.4f}")
    print(f"wrote experiment outputs to {out}")


def cmd_figdata(args) -> None:
    resolve_config(args)
    try:
        doc = json.loads(Path(args.results).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {args.results}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{args.results} is not valid JSON: {exc}") from exc
    try:
        paths = emit_figure_data(doc, args.out)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{args.results} is not an experiment results document: {exc}") from exc
    print("\n".join(str(p) for p in paths))


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config document (JSON)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; dotted keys reach nested sections")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dpnhar", description="Synthetic activity recognition with factored DBNs.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", default="clean", help="noise profile name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="write per-sequence feature CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a model bank on one split set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="bank document to write")
    p.add_argument("--kind", choices=("dbn", "hmm"))
    p.add_argument("--set-index", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a bank on one split set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set-index", type=int, default=0)
    p.add_argument("--subset", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="run the noise and lighting comparisons")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("figdata", parents=[common], help="emit figure CSVs from a results document")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_figdata)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (IoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DpnharError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
