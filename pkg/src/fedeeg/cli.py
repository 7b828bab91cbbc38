"""Command-line front end.

Stages write into a shared output directory and read their inputs from the
stage before them::

    fedeeg generate  --config cfg.json --out runs/demo
    fedeeg normalize --config cfg.json --out runs/demo
    fedeeg train     --config cfg.json --out runs/demo --strategy weighted
    fedeeg evaluate  --config cfg.json --out runs/demo
    fedeeg sweep     --config cfg.json --out runs/demo

``generate --raw`` plus ``preprocess`` replace the direct segment generator
with the full raw-recording path.  Log verbosity comes from the FEDEEG_LOG
environment variable (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import engine, experiment, metrics, model, plots, storage
from .data import ClientSplit, split_dataset
from .errors import ConfigError, ProtocolError, ZeroVarianceError
from .messages import decode_message, message_debug_dict
from .pipeline import StagePolicy, derive_bipolar, label_timeline, lowpass_and_resample, segment_and_balance
from .synth import generate_federation, synthesize_recording

log = logging.getLogger("fedeeg")


def _setup_logging() -> None:
    level_name = os.environ.get("FEDEEG_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace) -> experiment.ExperimentConfig:
    if args.config:
        cfg = experiment.load_config(args.config)
    else:
        cfg = experiment.ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, rng_seed=args.seed))
    if getattr(args, "strategy", None):
        cfg = replace(cfg, train=replace(cfg.train, strategy=args.strategy))
    if getattr(args, "m", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, subset_size=args.m))
    return cfg


def _segments_dir(out: Path) -> Path:
    return out / "data" / "segments"


def _normalized_dir(out: Path) -> Path:
    return out / "data" / "normalized"


def _raw_dir(out: Path) -> Path:
    return out / "data" / "raw"


def _load_splits(directory: Path) -> list[ClientSplit]:
    if not directory.is_dir():
        raise FileNotFoundError(
            f"{directory} does not exist; run the previous stage first"
        )
    names = sorted(p.name for p in directory.iterdir() if p.is_dir())
    if not names:
        raise FileNotFoundError(f"{directory} holds no client directories")
    return [storage.load_split(directory / name) for name in names]


def _split_files(directory: Path) -> list[Path]:
    return sorted(directory.glob("*/*.npz"))


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    data_seed = experiment.derive_seed(cfg.seed, 101, 0)
    spec = cfg.federation_spec(seed=data_seed)
    if args.raw:
        raw_dir = _raw_dir(out)
        raw_dir.mkdir(parents=True, exist_ok=True)
        policy = StagePolicy()
        for idx, profile in enumerate(spec.profiles):
            rec_seed = experiment.derive_seed(data_seed, idx)
            rec, annotations = synthesize_recording(
                profile, policy, rec_seed, duration_s=args.duration
            )
            storage.save_recording(rec, raw_dir / f"{profile.name}.npz")
            storage.save_annotations(
                annotations, raw_dir / f"{profile.name}.annotations.json"
            )
            log.info("wrote raw recording for %s", profile.name)
        experiment.write_manifest(out, "generate", cfg, sorted(raw_dir.iterdir()))
        print(f"wrote {len(spec.profiles)} raw recordings to {raw_dir}")
        return 0
    seg_dir = _segments_dir(out)
    for split in generate_federation(spec):
        storage.save_split(split, seg_dir / split.name)
        log.info("wrote segments for %s", split.name)
    experiment.write_manifest(out, "generate", cfg, _split_files(seg_dir))
    print(f"wrote segment datasets for {len(spec.profiles)} clients to {seg_dir}")
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    raw_dir = _raw_dir(out)
    recordings = sorted(raw_dir.glob("*.npz")) if raw_dir.is_dir() else []
    if not recordings:
        raise FileNotFoundError(
            f"no raw recordings under {raw_dir}; run 'generate --raw' first"
        )
    policy = StagePolicy()
    seg_dir = _segments_dir(out)
    shuffle_rng = np.random.default_rng(experiment.derive_seed(cfg.seed, 509))
    for rec_path in recordings:
        rec = storage.load_recording(rec_path)
        annotations = storage.load_annotations(
            rec_path.with_suffix("").with_suffix(".annotations.json")
            if rec_path.name.endswith(".annotations.json")
            else rec_path.parent / f"{rec_path.stem}.annotations.json"
        )
        if len(rec.channels) == 1:
            mono = rec
        elif "F3-M2" in rec.channels and "C3-M2" in rec.channels:
            mono = derive_bipolar(rec, "F3-M2", "C3-M2")
        else:
            raise ConfigError(
                f"{rec_path} must hold a single channel or the F3-M2/C3-M2 "
                f"pair, found {sorted(rec.channels)}"
            )
        conditioned = lowpass_and_resample(mono, policy)
        timeline = label_timeline(conditioned.duration_s, annotations, policy)
        segments = segment_and_balance(conditioned, timeline, policy)
        ds = storage.segments_to_dataset(rec.patient_id or rec_path.stem, segments)
        order = shuffle_rng.permutation(ds.n)
        ds = ds.take(order)
        n_test = max(1, ds.n // 10)
        split = split_dataset(ds, n_val=n_test, n_test=n_test)
        storage.save_split(split, seg_dir / split.name)
        log.info("segmented %s: %d windows", split.name, ds.n)
    experiment.write_manifest(out, "preprocess", cfg, recordings)
    print(f"wrote segment datasets for {len(recordings)} recordings to {seg_dir}")
    return 0


def cmd_normalize(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    splits = _load_splits(_segments_dir(out))
    norm_seed = experiment.derive_seed(cfg.seed, 401, 0)
    normed = experiment.normalize_federation(
        splits, cfg.normalization, norm_seed, cfg.codec()
    )
    norm_dir = _normalized_dir(out)
    for split in normed.splits:
        storage.save_split(split, norm_dir / split.name)
    stats_doc: dict = {"mode": cfg.normalization}
    if normed.stats is not None:
        stats_doc["mu"] = normed.stats.mu
        stats_doc["sigma"] = normed.stats.sigma
        stats_doc["n_total"] = normed.stats.n_total
    (norm_dir / "stats.json").write_text(json.dumps(stats_doc, indent=2) + "\n")
    transcript = []
    if normed.transport is not None:
        transcript = [
            message_debug_dict(decode_message(frame))
            for frame in normed.transport.transcript
        ]
    (norm_dir / "transcript.json").write_text(json.dumps(transcript, indent=2) + "\n")
    experiment.write_manifest(out, "normalize", cfg, _split_files(_segments_dir(out)))
    print(
        f"normalized {len(normed.splits)} clients with mode={cfg.normalization} "
        f"({len(transcript)} protocol messages)"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    splits = _load_splits(_normalized_dir(out))
    width = splits[0].train.d
    if width != cfg.d:
        cfg = replace(cfg, d=width)
    models_dir = out / "models"
    for r in range(cfg.repeats):
        train_cfg = replace(cfg.train, rng_seed=experiment.derive_seed(cfg.seed, 211, r))
        model_cfg = cfg.model_config(seed=experiment.derive_seed(cfg.seed, 307, r))
        result = engine.run_training(
            [s.train for s in splits], model_cfg, train_cfg, keep_history=True
        )
        run_dir = models_dir / f"run_{r}"
        run_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            "model": {
                "input_dim": model_cfg.input_dim,
                "hidden_dims": list(model_cfg.hidden_dims),
                "seed": model_cfg.seed,
                "init_scale": model_cfg.init_scale,
            },
            "strategy": train_cfg.strategy,
            "subset_size": train_cfg.subset_size,
            "rounds": train_cfg.rounds,
            "repeat": r,
        }
        np.savez(run_dir / "model.npz", meta=json.dumps(meta), params=result.params)
        history_rows = [
            {"round": i, "param_l2": f"{float(np.linalg.norm(p)):.10f}"}
            for i, p in enumerate(result.history)
        ]
        experiment.write_csv(history_rows, run_dir / "history.csv", ("round", "param_l2"))
        log.info("trained repeat %d (%s)", r, train_cfg.strategy)
    experiment.write_manifest(out, "train", cfg, _split_files(_normalized_dir(out)))
    print(f"trained {cfg.repeats} model(s) with strategy={cfg.train.strategy} into {models_dir}")
    return 0


def _load_model_run(run_dir: Path) -> tuple[model.ModelConfig, np.ndarray, dict]:
    with np.load(run_dir / "model.npz") as archive:
        meta = json.loads(str(archive["meta"]))
        params = archive["params"]
    mcfg = model.ModelConfig(
        input_dim=int(meta["model"]["input_dim"]),
        hidden_dims=tuple(meta["model"]["hidden_dims"]),
        seed=int(meta["model"]["seed"]),
        init_scale=meta["model"]["init_scale"],
    )
    return mcfg, params, meta


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    splits = _load_splits(_normalized_dir(out))
    tests = experiment.test_sets_of(splits)
    run_dirs = sorted((out / "models").glob("run_*"))
    if not run_dirs:
        raise FileNotFoundError(f"no trained models under {out / 'models'}; run train first")
    reports = []
    rows = []
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    strategy = m = None
    for run_dir in run_dirs:
        mcfg, params, meta = _load_model_run(run_dir)
        report = metrics.evaluate_global(params, mcfg, tests)
        reports.append(report)
        strategy = meta["strategy"]
        m = meta["subset_size"] if meta["strategy"] == "random_subset" else None
        run_id = f"{meta['strategy']}-r{meta['repeat']}"
        rows.extend(experiment.report_rows(report, run_id, strategy, m))
        (reports_dir / f"report_{run_dir.name}.json").write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
        )
    experiment.write_csv(rows, reports_dir / "metrics.csv")
    plots.render_report_figure(reports, reports_dir / "metrics.png",
                               title=f"strategy={strategy}")
    # Summary artifacts come last so a failed stage never leaves them behind.
    srows = experiment.summary_rows(reports, strategy or "", m)
    experiment.write_csv(srows, reports_dir / "summary.csv", experiment.SUMMARY_FIELDS)
    table = experiment.summary_table(srows)
    (reports_dir / "summary.txt").write_text(table)
    experiment.write_manifest(
        out, "evaluate", cfg,
        [run_dir / "model.npz" for run_dir in run_dirs] + _split_files(_normalized_dir(out)),
    )
    print(table, end="")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    per_m = experiment.run_sweep(cfg)
    sweep_dir = out / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for m, outputs in sorted(per_m.items()):
        for r, output in enumerate(outputs):
            rows.extend(
                experiment.report_rows(
                    output.report, f"m{m}-r{r}", "random_subset", m
                )
            )
    experiment.write_csv(rows, sweep_dir / "metrics.csv")
    plots.render_sweep_figure(
        {m: [o.report for o in outputs] for m, outputs in per_m.items()},
        sweep_dir / "macro_vs_m.png",
    )
    srows = []
    for m, outputs in sorted(per_m.items()):
        srows.extend(
            experiment.summary_rows([o.report for o in outputs], "random_subset", m)
        )
    experiment.write_csv(srows, sweep_dir / "summary.csv", experiment.SUMMARY_FIELDS)
    table = experiment.summary_table(srows)
    (sweep_dir / "summary.txt").write_text(table)
    experiment.write_manifest(out, "sweep", cfg, [])
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedeeg",
        description="Desk-scale federated seizure-prediction simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", type=str, default="out", help="output directory")

    p = sub.add_parser("generate", help="synthesize the federation's datasets")
    common(p)
    p.add_argument("--raw", action="store_true",
                   help="write raw recordings (for the preprocess path)")
    p.add_argument("--duration", type=float, default=7200.0,
                   help="raw recording length in seconds")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("preprocess", help="condition and segment raw recordings")
    common(p)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("normalize", help="normalize segments (secure protocol)")
    common(p)
    p.set_defaults(fn=cmd_normalize)

    p = sub.add_parser("train", help="run federated training")
    common(p)
    p.add_argument("--strategy", choices=engine.STRATEGIES, default=None)
    p.add_argument("--m", type=int, default=None, help="random-subset size M")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score trained models on test sets")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep the random-subset size M")
    common(p)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ProtocolError, ZeroVarianceError, ValueError, OSError) as exc:
        print(f"error: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
