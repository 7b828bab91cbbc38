"""Experiment configuration, normalization modes, runs, repeats, sweeps.

This is the layer the CLI drives: it turns a validated configuration into
generated federations, normalized splits, trained models, and metric
reports, with every random choice derived from named seed paths so a rerun
of the same configuration reproduces identical numbers.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import engine, metrics, model, securenorm
from .data import ClientDataset, ClientSplit
from .errors import ConfigError
from .messages import LoopbackTransport
from .synth import ClientProfile, FederationSpec, default_federation_spec, generate_federation

NORMALIZATION_MODES = (
    "local_standardize",
    "minmax_then_secure_global",
    "secure_global",
)

DEFAULT_SWEEP_M = (100, 400, 1000, 2000, 3200)


def derive_seed(*parts: int) -> int:
    """Stable child seed for a named position in the experiment tree."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    repeats: int = 5
    preset: str = "default4"
    preset_scale: float = 1.0
    d: int = 256
    clients: tuple[ClientProfile, ...] | None = None
    normalization: str = "minmax_then_secure_global"
    scale_bits: int = 20
    hidden_dims: tuple[int, ...] = (32, 16)
    init_scale: float | None = None
    train: engine.TrainConfig = field(default_factory=engine.TrainConfig)
    sweep_m: tuple[int, ...] = DEFAULT_SWEEP_M

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.normalization not in NORMALIZATION_MODES:
            raise ConfigError(
                f"normalization must be one of {NORMALIZATION_MODES}, "
                f"got {self.normalization!r}"
            )
        if self.clients is None and self.preset != "default4":
            raise ConfigError(f"unknown preset {self.preset!r} (only 'default4')")
        if not self.sweep_m or any(m < 1 for m in self.sweep_m):
            raise ConfigError(f"sweep m values must be positive, got {self.sweep_m}")

    def federation_spec(self, seed: int | None = None) -> FederationSpec:
        seed = self.seed if seed is None else seed
        if self.clients is not None:
            return FederationSpec(self.clients, d=self.d, seed=seed)
        return default_federation_spec(seed=seed, scale=self.preset_scale, d=self.d)

    def model_config(self, seed: int | None = None) -> model.ModelConfig:
        return model.ModelConfig(
            input_dim=self.d,
            hidden_dims=self.hidden_dims,
            seed=self.seed if seed is None else seed,
            init_scale=self.init_scale,
        )

    def codec(self) -> securenorm.FixedPointCodec:
        return securenorm.FixedPointCodec(scale_bits=self.scale_bits)


def _take(mapping: dict, context: str, allowed: Iterable[str]) -> dict:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown field(s) {sorted(unknown)} in {context}; "
            f"allowed: {sorted(allowed)}"
        )
    return mapping


_PROFILE_KEYS = (
    "name", "total", "n_train", "n_test", "feature_shift", "feature_scale",
    "class_sep", "preictal_frac", "waveform_family", "marker_band", "shared_sign",
    "label_noise",
)


def _profile_from_dict(doc: dict, idx: int) -> ClientProfile:
    doc = dict(_take(doc, f"federation.clients[{idx}]", _PROFILE_KEYS))
    if "name" not in doc:
        raise ConfigError(f"federation.clients[{idx}] is missing 'name'")
    if "marker_band" in doc and doc["marker_band"] is not None:
        doc["marker_band"] = tuple(doc["marker_band"])
    total = doc.pop("total", None)
    try:
        if total is not None:
            if "n_train" in doc or "n_test" in doc:
                raise ConfigError(
                    f"federation.clients[{idx}]: give either 'total' or "
                    f"'n_train'/'n_test', not both"
                )
            name = doc.pop("name")
            return ClientProfile.from_total(name, int(total), **doc)
        return ClientProfile(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"federation.clients[{idx}]: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(_take(doc, "config", (
        "seed", "repeats", "federation", "normalization", "model", "train", "sweep",
    )))
    fed = dict(_take(doc.get("federation", {}), "federation",
                     ("preset", "scale", "d", "clients", "seed")))
    norm = dict(_take(doc.get("normalization", {}), "normalization",
                      ("mode", "scale_bits")))
    mdl = dict(_take(doc.get("model", {}), "model", ("hidden_dims", "init_scale")))
    trn = dict(_take(doc.get("train", {}), "train", (
        "rounds", "local_epochs", "eta", "strategy", "batch_size", "subset_size",
        "rng_seed",
    )))
    swp = dict(_take(doc.get("sweep", {}), "sweep", ("m_values",)))

    seed = int(doc.get("seed", 0))
    clients = None
    if "clients" in fed and fed["clients"] is not None:
        clients = tuple(
            _profile_from_dict(c, i) for i, c in enumerate(fed["clients"])
        )
    try:
        train_cfg = engine.TrainConfig(
            rounds=int(trn.get("rounds", 50)),
            local_epochs=int(trn.get("local_epochs", 1)),
            eta=float(trn.get("eta", 0.05)),
            strategy=str(trn.get("strategy", "weighted")),
            batch_size=int(trn.get("batch_size", 64)),
            subset_size=(None if trn.get("subset_size") is None
                         else int(trn["subset_size"])),
            rng_seed=int(trn.get("rng_seed", seed)),
        )
        return ExperimentConfig(
            seed=seed,
            repeats=int(doc.get("repeats", 5)),
            preset=str(fed.get("preset", "default4")),
            preset_scale=float(fed.get("scale", 1.0)),
            d=int(fed.get("d", 256)),
            clients=clients,
            normalization=str(norm.get("mode", "minmax_then_secure_global")),
            scale_bits=int(norm.get("scale_bits", 20)),
            hidden_dims=tuple(int(h) for h in mdl.get("hidden_dims", (32, 16))),
            init_scale=(None if mdl.get("init_scale") is None
                        else float(mdl["init_scale"])),
            sweep_m=tuple(int(m) for m in swp.get("m_values", DEFAULT_SWEEP_M)),
            train=train_cfg,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved configuration, defaults included."""
    fed: dict = {"d": cfg.d}
    if cfg.clients is None:
        fed["preset"] = cfg.preset
        fed["scale"] = cfg.preset_scale
    else:
        fed["clients"] = [
            {
                "name": p.name, "n_train": p.n_train, "n_test": p.n_test,
                "feature_shift": p.feature_shift, "feature_scale": p.feature_scale,
                "class_sep": p.class_sep, "preictal_frac": p.preictal_frac,
                "waveform_family": p.waveform_family,
                "marker_band": list(p.marker_band) if p.marker_band else None,
                "shared_sign": p.shared_sign,
                "label_noise": p.label_noise,
            }
            for p in cfg.clients
        ]
    return {
        "seed": cfg.seed,
        "repeats": cfg.repeats,
        "federation": fed,
        "normalization": {"mode": cfg.normalization, "scale_bits": cfg.scale_bits},
        "model": {
            "hidden_dims": list(cfg.hidden_dims),
            "init_scale": cfg.init_scale,
        },
        "train": {
            "rounds": cfg.train.rounds,
            "local_epochs": cfg.train.local_epochs,
            "eta": cfg.train.eta,
            "strategy": cfg.train.strategy,
            "batch_size": cfg.train.batch_size,
            "subset_size": cfg.train.subset_size,
            "rng_seed": cfg.train.rng_seed,
        },
        "sweep": {"m_values": list(cfg.sweep_m)},
    }


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormalizationOutput:
    splits: list[ClientSplit]
    stats: securenorm.GlobalStats | None
    transport: LoopbackTransport | None


def normalize_federation(
    splits: list[ClientSplit],
    mode: str,
    seed: int,
    codec: securenorm.FixedPointCodec | None = None,
    transport: LoopbackTransport | None = None,
) -> NormalizationOutput:
    """Apply one of the supported normalization modes.

    Statistics always come from training partitions only and are applied
    unchanged to validation and test, so held-out data never leaks into
    the constants.
    """
    if mode not in NORMALIZATION_MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    if mode == "local_standardize":
        out = []
        for split in splits:
            mu, sigma = securenorm.standardize_params(split.train)
            out.append(split.map_inputs(lambda x, mu=mu, sigma=sigma: (x - mu) / sigma))
        return NormalizationOutput(out, None, None)

    if mode == "minmax_then_secure_global":
        rescaled = []
        for split in splits:
            lo, hi = securenorm.minmax_params(split.train)
            rescaled.append(split.map_inputs(lambda x, lo=lo, hi=hi: (x - lo) / (hi - lo)))
    else:
        rescaled = list(splits)

    stats, transport = securenorm.run_secure_standardization(
        [s.train for s in rescaled],
        rng_seed=seed,
        codec=codec,
        transport=transport,
    )
    out = [
        s.map_inputs(lambda x: (x - stats.mu) / stats.sigma) for s in rescaled
    ]
    return NormalizationOutput(out, stats, transport)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass
class RunOutput:
    seed: int
    report: metrics.MetricsReport
    result: engine.TrainResult
    stats: securenorm.GlobalStats | None


def test_sets_of(splits: list[ClientSplit]) -> dict[str, ClientDataset]:
    return {s.name: s.test for s in splits}


def run_single(
    cfg: ExperimentConfig,
    repeat: int = 0,
    train_override: engine.TrainConfig | None = None,
    splits: list[ClientSplit] | None = None,
    record_transport: bool = False,
) -> RunOutput:
    """Generate, normalize, train, and evaluate one federation instance.

    ``repeat`` indexes the derived seed family; pass ``splits`` to reuse an
    already generated (raw) federation for several strategies.
    """
    data_seed = derive_seed(cfg.seed, 101, repeat)
    train_seed = derive_seed(cfg.seed, 211, repeat)
    init_seed = derive_seed(cfg.seed, 307, repeat)
    norm_seed = derive_seed(cfg.seed, 401, repeat)

    if splits is None:
        splits = generate_federation(cfg.federation_spec(seed=data_seed))
    normed = normalize_federation(splits, cfg.normalization, norm_seed, cfg.codec())

    train_cfg = train_override or cfg.train
    train_cfg = replace(train_cfg, rng_seed=train_seed)
    model_cfg = cfg.model_config(seed=init_seed)
    transport = LoopbackTransport(record=record_transport)
    result = engine.run_training(
        [s.train for s in normed.splits], model_cfg, train_cfg,
        transport=transport, keep_history=False,
    )
    report = metrics.evaluate_global(result.params, model_cfg, test_sets_of(normed.splits))
    return RunOutput(seed=train_seed, report=report, result=result, stats=normed.stats)


def run_repeats(
    cfg: ExperimentConfig, train_override: engine.TrainConfig | None = None
) -> list[RunOutput]:
    return [
        run_single(cfg, repeat=r, train_override=train_override)
        for r in range(cfg.repeats)
    ]


def run_sweep(cfg: ExperimentConfig) -> dict[int, list[RunOutput]]:
    """Random-subset runs for every M in the grid, repeats per M.

    The generated federation for a repeat is shared across the grid so M is
    the only thing that varies within a repeat.
    """
    spec_m = sorted(set(cfg.sweep_m))
    outputs: dict[int, list[RunOutput]] = {m: [] for m in spec_m}
    for r in range(cfg.repeats):
        data_seed = derive_seed(cfg.seed, 101, r)
        splits = generate_federation(cfg.federation_spec(seed=data_seed))
        smallest = min(s.train.n for s in splits)
        for m in spec_m:
            if m > smallest:
                raise ConfigError(
                    f"sweep m={m} exceeds the smallest client's {smallest} "
                    f"training rows"
                )
            train_cfg = replace(cfg.train, strategy="random_subset", subset_size=m)
            outputs[m].append(
                run_single(cfg, repeat=r, train_override=train_cfg, splits=splits)
            )
    return outputs


def run_localized(
    cfg: ExperimentConfig, repeat: int = 0, epochs: int | None = None
) -> dict[str, dict[str, metrics.MetricTriple]]:
    """Train each client alone on its own (locally standardized) data and
    cross-evaluate on every client's test set.

    Returns ``{trained_on: {evaluated_on: MetricTriple}}``.
    """
    data_seed = derive_seed(cfg.seed, 101, repeat)
    train_seed = derive_seed(cfg.seed, 211, repeat)
    init_seed = derive_seed(cfg.seed, 307, repeat)

    splits = generate_federation(cfg.federation_spec(seed=data_seed))
    normed = normalize_federation(splits, "local_standardize", 0).splits
    model_cfg = cfg.model_config(seed=init_seed)
    epochs = cfg.train.rounds if epochs is None else epochs
    local_cfg = replace(
        cfg.train, strategy="unweighted", subset_size=None, local_epochs=1,
        rounds=epochs,
    )

    out: dict[str, dict[str, metrics.MetricTriple]] = {}
    tests = test_sets_of(normed)
    for idx, split in enumerate(normed):
        state = engine.ClientState(
            idx, split.train,
            np.random.default_rng(np.random.SeedSequence([train_seed, idx])),
        )
        params = model.init_params(model_cfg)
        for _ in range(epochs):
            params = engine.client_local_update(state, params, model_cfg, local_cfg)
        row = {}
        for name, test in tests.items():
            scores = model.forward(params, model_cfg, test.inputs)
            counts = metrics.confusion_from_scores(scores, np.asarray(test.labels))
            row[name] = metrics.MetricTriple(
                metrics.accuracy(counts),
                metrics.f1_score(counts),
                metrics.auroc(scores, np.asarray(test.labels)),
            )
        out[split.name] = row
    return out


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

CSV_FIELDS = ("run_id", "strategy", "m", "client", "metric", "value")


def report_rows(
    report: metrics.MetricsReport, run_id: str, strategy: str, m: int | None
) -> list[dict]:
    rows = []
    scopes: list[tuple[str, metrics.MetricTriple]] = list(report.per_client.items())
    scopes += [("pooled", report.pooled), ("macro", report.macro)]
    for client, triple in scopes:
        for metric_name, value in triple.as_dict().items():
            rows.append({
                "run_id": run_id,
                "strategy": strategy,
                "m": "" if m is None else m,
                "client": client,
                "metric": metric_name,
                "value": f"{value:.10f}",
            })
    return rows


def write_csv(rows: list[dict], path: str | Path, fields: tuple[str, ...] = CSV_FIELDS) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields))
        writer.writeheader()
        writer.writerows(rows)


SUMMARY_FIELDS = ("strategy", "m", "scope", "metric", "mean", "std", "formatted")


def summary_rows(
    reports: list[metrics.MetricsReport], strategy: str, m: int | None
) -> list[dict]:
    summary = metrics.summarize_reports(reports)
    rows = []
    for scope, per_metric in summary.items():
        for metric_name, (mean, std) in per_metric.items():
            rows.append({
                "strategy": strategy,
                "m": "" if m is None else m,
                "scope": scope,
                "metric": metric_name,
                "mean": f"{mean:.10f}",
                "std": f"{std:.10f}",
                "formatted": metrics.format_mean_std(mean, std),
            })
    return rows


def summary_table(rows: list[dict]) -> str:
    """Human-readable accuracy table, one line per (strategy, m, scope)."""
    lines = []
    header = f"{'strategy':>14} {'m':>6} {'scope':>18} {'accuracy':>12} {'f1':>12} {'auroc':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    grouped: dict[tuple[str, str, str], dict[str, str]] = {}
    for row in rows:
        key = (row["strategy"], str(row["m"]), row["scope"])
        grouped.setdefault(key, {})[row["metric"]] = row["formatted"]
    for (strategy, m, scope), vals in grouped.items():
        lines.append(
            f"{strategy:>14} {m:>6} {scope:>18} "
            f"{vals.get('accuracy', ''):>12} {vals.get('f1', ''):>12} "
            f"{vals.get('auroc', ''):>12}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir: str | Path, stage: str, cfg: ExperimentConfig, inputs: list[Path]
) -> Path:
    """Record the resolved configuration and a content hash per input file."""
    out_dir = Path(out_dir)
    manifest_dir = out_dir / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "stage": stage,
        "config": config_to_dict(cfg),
        "inputs": {
            str(p.relative_to(out_dir) if p.is_relative_to(out_dir) else p): sha256_file(p)
            for p in sorted(inputs)
        },
    }
    path = manifest_dir / f"{stage}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
