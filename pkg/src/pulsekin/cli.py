"""Command-line entry point: synth, extract, train, evaluate, ablate, plot.

Every run resolves its configuration (CLI flags > config file > built-in
defaults), executes, and writes a manifest JSON capturing the resolved
values, seeds, and paths. ``pulsekin replay <manifest>`` re-executes a run
from its manifest and reproduces byte-identical outputs.
"""

from __future__ import annotations

import os

# Keep BLAS single-threaded: fold-level process parallelism composes better
# and reruns stay deterministic. Set before numpy loads.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import PulsekinError
from .evaluation import (
    REFERENCE_ABLATION_DELTAS,
    aggregate_relations,
    emit_roc_plot,
    read_scores_csv,
    roc_auc,
    write_results_csv,
    write_scores_csv,
)
from .fileio import write_text_atomic
from .model import ModelConfig, load_checkpoint
from .registry import RELATIONS, load_registry
from .rppg import METHODS, MethodSpec, extract_all, write_rppg
from .synth import SkinModelSpec, synth_dataset
from .trace import PreprocSpec, ingest_trace
from .training import (
    SignalStore,
    TrainConfig,
    loso_folds,
    run_relation,
    score_fold,
    write_history,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

SYNTH_DEFAULTS = {
    "families": 12,
    "relations": "F-S",
    "kin_similarity": 0.9,
    "noise_snr_db": 10.0,
    "fps": 50.0,
    "duration_s": 4.0,
    "rois": 100,
    "specular_gain": 0.003,
    "skin_fraction": 0.75,
    "sensor_noise": 0.002,
    "flicker_gain": 0.8,
    "seed": 0,
}

EXTRACT_DEFAULTS = {
    "method": "pos",
    "channels": "multi",
    "band_low": 0.65,
    "band_high": 4.0,
    "detrend": True,
    "seed": 0,
    "jobs": 0,
}

TRAIN_DEFAULTS = {
    "relation": "all",
    "lr": 1e-3,
    "batch_size": 30,
    "max_epochs": 200,
    "patience": 10,
    "val_fraction": 0.1,
    "test_partner_pairs": 2,
    "use_attention": True,
    "literal_distance": False,
    "margin": 1.0,
    "dropout": 0.1,
    "seed": 0,
    "jobs": 0,
}


def _flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_options(parser: argparse.ArgumentParser, defaults: dict) -> None:
    for key, value in defaults.items():
        if isinstance(value, bool):
            group = parser.add_mutually_exclusive_group()
            group.add_argument(_flag_name(key), dest=key, action="store_const", const=True)
            group.add_argument(
                _flag_name("no_" + key), dest=key, action="store_const", const=False
            )
            parser.set_defaults(**{key: None})
        else:
            parser.add_argument(_flag_name(key), dest=key, type=type(value), default=None)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve(args: argparse.Namespace, command: str, defaults: dict) -> dict:
    """CLI flags beat the config file beat built-in defaults."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    section = {**file_cfg.get("global", {}), **file_cfg.get(command, {})}
    resolved = {}
    for key, default in defaults.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
        elif key in section:
            resolved[key] = type(default)(section[key])
        else:
            resolved[key] = default
    return resolved


def _write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    inputs: dict,
    outputs: list[str],
    started: float,
    extra: dict | None = None,
) -> None:
    doc = {
        "tool": "pulsekin",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "out_dir": str(out_dir),
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    write_text_atomic(out_dir / "manifest.json", json.dumps(doc, indent=2) + "\n")


def _relations_arg(value: str, registry=None) -> list[str]:
    if value == "all":
        if registry is not None:
            return registry.relations()
        return list(RELATIONS)
    rels = [r.strip() for r in value.split(",") if r.strip()]
    for r in rels:
        if r not in RELATIONS:
            raise PulsekinError(f"unknown relation {r!r}, expected one of {RELATIONS}")
    return rels


def _jobs_arg(value: int) -> int:
    return value if value > 0 else (os.cpu_count() or 1)


def cmd_synth(args) -> int:
    started = time.time()
    cfg = resolve(args, "synth", SYNTH_DEFAULTS)
    out_dir = Path(args.out)
    skin = SkinModelSpec(
        rois=cfg["rois"],
        fps=cfg["fps"],
        duration_s=cfg["duration_s"],
        specular_gain=cfg["specular_gain"],
        skin_fraction=cfg["skin_fraction"],
        sensor_noise=cfg["sensor_noise"],
        flicker_gain=cfg["flicker_gain"],
    )
    registry = synth_dataset(
        out_dir,
        n_families=cfg["families"],
        relations=tuple(_relations_arg(cfg["relations"])),
        kin_similarity=cfg["kin_similarity"],
        noise_snr_db=cfg["noise_snr_db"],
        skin=skin,
        seed=cfg["seed"],
    )
    outputs = ["registry.json"] + [
        f"traces/{p.name}" for p in sorted((out_dir / "traces").glob("*.csv"))
    ]
    _write_manifest(out_dir, "synth", cfg, {}, outputs, started)
    print(
        f"synth: {len(registry.subjects)} subjects, "
        f"{len(registry.pairs)} kin pairs -> {out_dir}"
    )
    return EXIT_OK


def _extract_one(task):
    trace_path, method, holistic, preproc_fields, out_path = task
    trace = ingest_trace(trace_path)
    preproc = PreprocSpec(**preproc_fields)
    signal = extract_all(trace, MethodSpec(method), preproc, holistic=holistic)
    write_rppg(signal, out_path)
    return out_path.name, len(signal.degenerate)


def cmd_extract(args) -> int:
    started = time.time()
    cfg = resolve(args, "extract", EXTRACT_DEFAULTS)
    out_dir = Path(args.out)
    traces_dir = Path(args.traces)
    methods = list(METHODS) if cfg["method"] == "all" else [cfg["method"]]
    for m in methods:
        if m not in METHODS:
            raise PulsekinError(f"unknown method {m!r}, expected one of {METHODS}")
    holistic = cfg["channels"] == "holistic"
    preproc_fields = {
        "detrend": cfg["detrend"],
        "bandpass_low_hz": cfg["band_low"],
        "bandpass_high_hz": cfg["band_high"],
        "normalize": True,
    }
    trace_paths = sorted(traces_dir.glob("*.csv"))
    if not trace_paths:
        raise PulsekinError(f"no trace files in {traces_dir}")
    tasks = []
    for method in methods:
        (out_dir / method).mkdir(parents=True, exist_ok=True)
        for path in trace_paths:
            tasks.append((path, method, holistic, preproc_fields, out_dir / method / path.name))
    jobs = _jobs_arg(cfg["jobs"])
    failures: list[tuple[str, str]] = []
    degenerate: dict[str, int] = {m: 0 for m in methods}
    outputs: list[str] = []
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_extract_one, t): t for t in tasks}
            for future, task in futures.items():
                try:
                    name, n_degenerate = future.result()
                    degenerate[task[1]] += n_degenerate
                    outputs.append(f"{task[1]}/{name}")
                except PulsekinError as exc:
                    failures.append((str(task[0]), str(exc)))
    else:
        for task in tasks:
            try:
                name, n_degenerate = _extract_one(task)
                degenerate[task[1]] += n_degenerate
                outputs.append(f"{task[1]}/{name}")
            except PulsekinError as exc:
                failures.append((str(task[0]), str(exc)))
    _write_manifest(
        out_dir, "extract", cfg, {"traces": traces_dir}, outputs, started,
        extra={"failures": failures},
    )
    for method in methods:
        print(f"extract {method}: {len(trace_paths)} traces, "
              f"{degenerate[method]} degenerate channels")
    for path, message in failures:
        print(f"extract failed: {path}: {message}", file=sys.stderr)
    return EXIT_ERROR if failures else EXIT_OK


def _model_config_for(store: SignalStore, cfg: dict) -> ModelConfig:
    subjects = store.subjects()
    if not subjects:
        raise PulsekinError("empty rppg cache")
    first = store.get(subjects[0])
    return ModelConfig(
        in_channels=first.channels,
        input_len=first.length,
        dropout_rate=cfg["dropout"],
        margin=cfg["margin"],
        use_attention=cfg["use_attention"],
        literal_squared_distance=cfg["literal_distance"],
    )


def _train_config_for(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        val_fraction=cfg["val_fraction"],
        seed=cfg["seed"],
        test_partner_pairs=cfg["test_partner_pairs"],
    )


def _pair_hash(folds) -> str:
    payload = ";".join(
        f"{f.relation}|{f.index}|{p.a}|{p.b}|{p.label}"
        for f in folds
        for p in f.test_pairs
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cmd_train(args) -> int:
    started = time.time()
    cfg = resolve(args, "train", TRAIN_DEFAULTS)
    out_dir = Path(args.out)
    registry = load_registry(args.registry)
    store = SignalStore(args.rppg)
    relations = _relations_arg(cfg["relation"], registry)
    model_cfg = _model_config_for(store, cfg)
    train_cfg = _train_config_for(cfg)
    jobs = _jobs_arg(cfg["jobs"])
    outputs: list[str] = []
    hashes = {}
    failures = []
    for relation in relations:
        try:
            run = run_relation(
                registry, relation, args.rppg, model_cfg, train_cfg,
                checkpoint_dir=out_dir / "checkpoints", jobs=jobs,
            )
        except PulsekinError as exc:
            failures.append((relation, str(exc)))
            print(f"train {relation}: skipped ({exc})", file=sys.stderr)
            continue
        hashes[relation] = _pair_hash(run.folds)
        for fold, history in zip(run.folds, run.histories):
            name = f"history/{relation}_fold{fold.index:03d}.csv"
            write_history(history, out_dir / name)
            outputs.append(name)
            outputs.append(f"checkpoints/{relation}_fold{fold.index:03d}.pkin")
        score_name = f"scores_{relation}.csv"
        write_scores_csv(run.scores, out_dir / score_name)
        outputs.append(score_name)
        print(f"train {relation}: {len(run.folds)} folds, "
              f"median epochs {sorted(len(h) for h in run.histories)[len(run.histories) // 2]}")
    _write_manifest(
        out_dir, "train", cfg,
        {"registry": args.registry, "rppg": args.rppg},
        outputs, started, extra={"test_pair_hashes": hashes, "failures": failures},
    )
    return EXIT_ERROR if failures and not hashes else EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = resolve(args, "train", TRAIN_DEFAULTS)
    out_dir = Path(args.out)
    registry = load_registry(args.registry)
    store = SignalStore(args.rppg)
    relations = _relations_arg(cfg["relation"], registry)
    train_cfg = _train_config_for(cfg)
    checkpoints = Path(args.checkpoints)
    reports = []
    outputs = []
    failures = []
    method = store.get(store.subjects()[0]).method
    for relation in relations:
        try:
            folds = loso_folds(registry, relation, train_cfg)
        except PulsekinError as exc:
            failures.append((relation, str(exc)))
            print(f"evaluate {relation}: skipped ({exc})", file=sys.stderr)
            continue
        scores = []
        for fold in folds:
            ckpt = checkpoints / f"{relation}_fold{fold.index:03d}.pkin"
            if not ckpt.exists():
                raise PulsekinError(f"missing checkpoint {ckpt}")
            model_cfg, params = load_checkpoint(ckpt)
            scores.extend(score_fold(params, model_cfg, fold, store))
        report = roc_auc(scores, relation)
        reports.append(report)
        write_scores_csv(scores, out_dir / f"scores_{relation}.csv")
        outputs.append(f"scores_{relation}.csv")
        emit_roc_plot(report, out_dir / f"roc_{relation}.svg", title=f"ROC {relation}")
        outputs.append(f"roc_{relation}.svg")
        print(f"evaluate {relation}: AUC {100 * report.auc:.2f}% "
              f"({report.n_pos} pos / {report.n_neg} neg, {report.n_folds} folds)")
    if not reports:
        raise PulsekinError("no relation could be evaluated")
    summary = aggregate_relations(reports)
    write_results_csv(summary, out_dir / "results.csv", reference=method)
    outputs.append("results.csv")
    emit_roc_plot(reports, out_dir / "roc_all.svg", title="ROC by relation")
    outputs.append("roc_all.svg")
    _write_manifest(
        out_dir, "evaluate", cfg,
        {"registry": args.registry, "rppg": args.rppg, "checkpoints": args.checkpoints},
        outputs, started, extra={"failures": failures},
    )
    print(f"evaluate: mean AUC {summary.mean_percent:.2f}% "
          f"+/- {summary.std_percent:.2f} across {len(reports)} relations")
    return EXIT_OK


ABLATION_VARIANTS = ("full", "single_channel", "no_attention")


def cmd_ablate(args) -> int:
    started = time.time()
    cfg = resolve(args, "train", TRAIN_DEFAULTS)
    out_dir = Path(args.out)
    registry = load_registry(args.registry)
    relations = _relations_arg(cfg["relation"], registry)
    train_cfg = _train_config_for(cfg)
    jobs = _jobs_arg(cfg["jobs"])
    multi_store = SignalStore(args.rppg)
    single_store = SignalStore(args.rppg_holistic)
    base_cfg = _model_config_for(multi_store, cfg)
    single_cfg = replace(
        _model_config_for(single_store, cfg), in_channels=1
    )
    variants = {
        "full": (base_cfg, args.rppg),
        "single_channel": (single_cfg, args.rppg_holistic),
        "no_attention": (replace(base_cfg, use_attention=False), args.rppg),
    }
    aucs: dict[str, dict[str, float]] = {v: {} for v in ABLATION_VARIANTS}
    hashes: dict[str, dict[str, str]] = {v: {} for v in ABLATION_VARIANTS}
    outputs = []
    for relation in relations:
        for variant, (model_cfg, rppg_dir) in variants.items():
            run = run_relation(registry, relation, rppg_dir, model_cfg, train_cfg, jobs=jobs)
            report = roc_auc(run.scores, relation)
            aucs[variant][relation] = report.auc
            hashes[variant][relation] = _pair_hash(run.folds)
            write_scores_csv(run.scores, out_dir / f"scores_{variant}_{relation}.csv")
            outputs.append(f"scores_{variant}_{relation}.csv")
            print(f"ablate {relation} {variant}: AUC {100 * report.auc:.2f}%")
    for relation in relations:
        shared = {hashes[v][relation] for v in ABLATION_VARIANTS}
        if len(shared) != 1:
            raise PulsekinError(
                f"ablation variants disagree on test pairs for {relation}: {shared}"
            )
    lines = ["variant," + ",".join(relations) + ",mean"]
    for variant in ABLATION_VARIANTS:
        row = [f"{100 * aucs[variant][r]:.2f}" for r in relations]
        mean = sum(aucs[variant].values()) / len(relations)
        lines.append(f"{variant}," + ",".join(row) + f",{100 * mean:.2f}")
    for label, plus, minus in (
        ("multi_over_single", "full", "single_channel"),
        ("attention_over_none", "full", "no_attention"),
    ):
        deltas = [100 * (aucs[plus][r] - aucs[minus][r]) for r in relations]
        mean = sum(deltas) / len(deltas)
        lines.append(
            f"{label}," + ",".join(f"{d:+.2f}" for d in deltas) + f",{mean:+.2f}"
        )
    lines.append(
        "# reference: published deltas on the license-gated source dataset: "
        + ", ".join(f"{k} {v:+.2f}" for k, v in REFERENCE_ABLATION_DELTAS.items())
        + "; annotation only, not a target"
    )
    write_text_atomic(out_dir / "ablation.csv", "\n".join(lines) + "\n")
    outputs.append("ablation.csv")
    _write_manifest(
        out_dir, "ablate", cfg,
        {"registry": args.registry, "rppg": args.rppg, "rppg_holistic": args.rppg_holistic},
        outputs, started, extra={"test_pair_hashes": hashes},
    )
    return EXIT_OK


def cmd_plot(args) -> int:
    started = time.time()
    labels = args.labels.split(",") if args.labels else []
    reports = []
    for i, path in enumerate(args.scores):
        rows = read_scores_csv(path)
        label = labels[i] if i < len(labels) else (rows[0].relation if rows else Path(path).stem)
        reports.append(roc_auc(rows, label))
    out_path = Path(args.out)
    emit_roc_plot(reports, out_path, title=args.title)
    # sibling manifest named after the figure: plot may target a shared dir
    manifest = {
        "tool": "pulsekin",
        "version": __version__,
        "command": "plot",
        "config": {"labels": args.labels or "", "title": args.title},
        "inputs": {"scores": ",".join(args.scores)},
        "out_dir": str(out_path.parent),
        "outputs": [out_path.name],
        "wall_clock_s": round(time.time() - started, 3),
    }
    write_text_atomic(out_path.with_suffix(".manifest.json"), json.dumps(manifest, indent=2) + "\n")
    print(f"plot: {len(reports)} curves -> {out_path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    config = manifest["config"]
    inputs = manifest.get("inputs", {})
    argv = [command]
    for key, value in inputs.items():
        if key == "scores":
            argv += ["--scores"] + value.split(",")
        else:
            argv += [_flag_name(key), str(value)]
    argv += ["--out", args.out]
    for key, value in config.items():
        if isinstance(value, bool):
            argv.append(_flag_name(key) if value else _flag_name("no_" + key))
        elif key in ("labels", "title"):
            if value:
                argv += [_flag_name(key), str(value)]
        else:
            argv += [_flag_name(key), str(value)]
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsekin",
        description="Kinship verification from facial pulse signals",
    )
    parser.add_argument("--version", action="version", version=f"pulsekin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file ([global] plus per-command sections)")
    common.add_argument("--seed", dest="seed", type=int, default=None)
    common.add_argument("--jobs", dest="jobs", type=int, default=None)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic family dataset")
    p.add_argument("--out", required=True)
    _add_options(p, {k: v for k, v in SYNTH_DEFAULTS.items() if k != "seed"})
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="recover pulse signals from traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=METHODS + ("all",), default=None)
    p.add_argument("--channels", choices=("multi", "holistic"), default=None)
    _add_options(p, {k: v for k, v in EXTRACT_DEFAULTS.items()
                     if k not in ("method", "channels", "seed", "jobs")})
    p.set_defaults(func=cmd_extract)

    train_like = {k: v for k, v in TRAIN_DEFAULTS.items() if k not in ("seed", "jobs")}

    p = sub.add_parser("train", parents=[common], help="LOSO training per relation")
    p.add_argument("--registry", required=True)
    p.add_argument("--rppg", required=True)
    p.add_argument("--out", required=True)
    _add_options(p, train_like)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score checkpoints into ROC/AUC reports")
    p.add_argument("--registry", required=True)
    p.add_argument("--rppg", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    _add_options(p, train_like)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="full vs single-channel vs no-attention")
    p.add_argument("--registry", required=True)
    p.add_argument("--rppg", required=True)
    p.add_argument("--rppg-holistic", dest="rppg_holistic", required=True)
    p.add_argument("--out", required=True)
    _add_options(p, train_like)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", parents=[common], help="overlay ROC curves from score files")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--title", default="ROC")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("replay", help="re-execute a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PulsekinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
