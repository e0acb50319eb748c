"""Experiment configuration, data preparation and evaluation runs.

Config files are flat ``key = value`` text, ``#`` starts a comment::

    dataset = synthetic          # or csv
    scenario = crowdsourcing     # or hacker (synthetic only)
    synth.gang_count = 3         # any generator field, prefixed synth.
    nodes = data/nodes.csv       # csv datasets: nodes, edges, labels, groups
    group_source = native        # native | modularity | none
    train_ratio = 0.7
    ratios = 0.1, 0.5, 0.9       # label-ratio sweep
    embed_dim = 64
    layers = 2
    lr = 0.006
    lam = 0.5
    epochs = 100
    batch_count = 1
    class_weights = auto         # or "w0, w1"
    seed = 0
    out_dir = runs/example
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DegenerateGroupError
from .graph import (
    GroupPartition,
    GroupVector,
    LabelSet,
    TransactionGraph,
    build_group_vector,
    load_labels,
    load_relation_edges,
    read_graph,
    split_labels,
    weakly_connected_components,
)
from .metrics import MetricsReport
from .multitask import ModelParams, TrainConfig, TrainResult, config_dict, forward, predict, train
from .synth import HackerConfig, SynthConfig, derive_groups_modularity, filter_groups, gen_crowdsourcing, gen_hacker

log = logging.getLogger(__name__)

GROUP_SOURCES = ("native", "modularity", "none")
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    scenario: str = "crowdsourcing"
    synth: dict = field(default_factory=dict)
    nodes: str | None = None
    edges: str | None = None
    labels: str | None = None
    groups: str | None = None
    group_source: str = "native"
    train_ratio: float = 0.7
    ratios: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"

    def __post_init__(self):
        if self.dataset not in ("synthetic", "csv"):
            raise ConfigError(f"dataset must be synthetic or csv, got {self.dataset!r}")
        if self.scenario not in ("crowdsourcing", "hacker"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.group_source not in GROUP_SOURCES:
            raise ConfigError(f"group_source must be one of {GROUP_SOURCES}, got {self.group_source!r}")
        if not 0 < self.train_ratio <= 1:
            raise ConfigError("train_ratio must lie in (0, 1]")
        if any(not 0 < r <= 1 for r in self.ratios):
            raise ConfigError("label ratios must lie in (0, 1]")
        if self.dataset == "csv":
            for key in ("nodes", "edges", "labels"):
                path = getattr(self, key)
                if not path:
                    raise ConfigError(f"csv dataset needs {key}")
                if not Path(path).exists():
                    raise ConfigError(f"{key} file not found: {path}")
            if self.groups and not Path(self.groups).exists():
                raise ConfigError(f"groups file not found: {self.groups}")

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = config_dict(self.train)
        d["ratios"] = list(self.ratios)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(value: str):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    return value


def parse_config_text(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return dict(parser["run"])


def build_config(values: dict[str, str]) -> ExperimentConfig:
    """Typed config from flat string pairs; unknown keys are rejected."""
    top = {f.name for f in fields(ExperimentConfig)} - {"synth", "train"}
    synth, train_kw, kw = {}, {}, {}
    for key, raw in values.items():
        raw = str(raw).strip()
        if key.startswith("synth."):
            synth[key[6:]] = _coerce(raw)
        elif key in TRAIN_KEYS:
            if key == "class_weights":
                train_kw[key] = None if raw.lower() in ("", "auto", "none") else \
                    tuple(float(x) for x in raw.split(","))
            elif key in ("lr", "lam"):
                train_kw[key] = float(raw)
            else:
                try:
                    train_kw[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
        elif key == "ratios":
            try:
                kw[key] = tuple(float(x) for x in raw.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"ratios must be comma-separated numbers, got {raw!r}") from None
        elif key == "train_ratio":
            kw[key] = float(raw)
        elif key in top:
            kw[key] = raw or None
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ExperimentConfig(synth=synth, train=TrainConfig(**train_kw), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = parse_config_text(text)
    values.update(overrides or {})
    return build_config(values)


# --- data ---------------------------------------------------------------

@dataclass
class Dataset:
    graph: TransactionGraph          # log-compressed, not standardized
    labels: LabelSet                 # unsplit observed labels
    partition: GroupPartition | None
    dataset_id: str


def generate(cfg: ExperimentConfig):
    """The synthetic dataset a config describes (generator seed defaults to the run seed)."""
    params = {"seed": cfg.seed, **cfg.synth}
    try:
        if cfg.scenario == "hacker":
            return gen_hacker(HackerConfig(**params))
        return gen_crowdsourcing(SynthConfig(**params))
    except TypeError as exc:
        raise ConfigError(f"bad generator setting: {exc}") from None


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "synthetic":
        ds = generate(cfg)
        did = f"synthetic-{cfg.scenario}-" + hashlib.sha256(
            json.dumps(ds.config, sort_keys=True).encode()).hexdigest()[:12]
        return Dataset(ds.graph, ds.labels, ds.partition, did)
    graph = read_graph(cfg.nodes, cfg.edges)
    labels = load_labels(cfg.labels, graph)
    partition = None
    if cfg.groups:
        partition = weakly_connected_components(load_relation_edges(cfg.groups, graph))
    h = hashlib.sha256()
    for p in (cfg.nodes, cfg.edges, cfg.labels, cfg.groups):
        if p:
            h.update(Path(p).read_bytes())
    return Dataset(graph, labels, partition, "csv-" + h.hexdigest()[:12])


@dataclass
class Prepared:
    graph: TransactionGraph          # standardized on the training rows
    labels: LabelSet                 # split
    group: GroupVector | None
    group_source: str
    dataset_id: str


def group_vector_for(graph: TransactionGraph, partition: GroupPartition | None, source: str,
                     seed: int) -> GroupVector | None:
    if source == "none":
        return None
    if source == "native":
        if partition is None:
            raise ConfigError("group_source=native but the dataset has no group relation")
        parts = partition
    else:
        parts = filter_groups(derive_groups_modularity(graph, seed=seed))
    vec = build_group_vector(graph, parts)
    if vec.degenerate:
        raise DegenerateGroupError(
            "every transaction falls inside a group; the group task would carry no signal")
    return vec


def prepare(cfg: ExperimentConfig, data: Dataset | None = None, train_ratio: float | None = None) -> Prepared:
    data = data or load_dataset(cfg)
    ratio = cfg.train_ratio if train_ratio is None else train_ratio
    labels = split_labels(data.labels, ratio, cfg.seed)
    graph = data.graph.standardized(labels.train_mask)
    group = group_vector_for(graph, data.partition, cfg.group_source, cfg.seed)
    return Prepared(graph, labels, group, cfg.group_source, data.dataset_id)


# --- runs -----------------------------------------------------------------

def evaluate(graph: TransactionGraph, labels: LabelSet, params: ModelParams, metadata=None) -> MetricsReport:
    """Laundering metrics on the test mask only."""
    matrix = forward(graph, params)
    pred, _ = predict(matrix)
    te = labels.test_mask
    if not np.any(te):
        raise ConfigError("empty test mask; lower train_ratio")
    if len(np.unique(labels.laundering[te])) < 2:
        raise DataError("test split holds a single class; AUC is undefined")
    return MetricsReport.evaluate(pred[te], matrix.scores[te], labels.laundering[te], metadata)


def run_metadata(cfg: ExperimentConfig, prep: Prepared, result: TrainResult, train_ratio=None) -> dict:
    single = prep.group is None or cfg.train.lam == 0
    return {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset_id": prep.dataset_id,
        "group_source": prep.group_source,
        "mode": "single-task" if single else "multi-task",
        "lam": cfg.train.lam,
        "train_ratio": cfg.train_ratio if train_ratio is None else train_ratio,
        "epochs": cfg.train.epochs,
        "class_weights": list(result.class_weights),
        "train_size": int(prep.labels.train_mask.sum()),
        "test_size": int(prep.labels.test_mask.sum()),
    }


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_report(path, report: MetricsReport) -> None:
    """Deterministic report body; the wall-clock time sits in its own field."""
    doc = report.to_dict()
    doc["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    write_json(path, doc)


def train_prepared(cfg: ExperimentConfig, prep: Prepared) -> TrainResult:
    return train(prep.graph, prep.labels, prep.group, cfg.train)


def run_experiment(cfg: ExperimentConfig, data: Dataset | None = None, train_ratio: float | None = None,
                   out_dir=None, write=True) -> MetricsReport:
    """Load or generate, split, train, evaluate; writes ``report.json`` and ``train_log.jsonl``."""
    prep = prepare(cfg, data, train_ratio)
    result = train_prepared(cfg, prep)
    report = evaluate(prep.graph, prep.labels, result.params, run_metadata(cfg, prep, result, train_ratio))
    if write:
        out = Path(out_dir or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.jsonl").write_text(result.log_lines(), encoding="utf-8")
        write_report(out / "report.json", report)
    return report


def label_ratio_sweep(cfg: ExperimentConfig, ratios=None, write=True) -> list[MetricsReport]:
    """One run per training-label ratio on a shared dataset; writes ``sweep.csv``."""
    ratios = tuple(cfg.ratios if ratios is None else ratios)
    if len(ratios) < 2:
        raise ConfigError("a sweep needs at least two ratios")
    if len(set(ratios)) != len(ratios):
        raise ConfigError(f"duplicate ratios in {ratios}")
    data = load_dataset(cfg)
    reports = [run_experiment(cfg, data, r, write=False) for r in ratios]
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ratio", "f1", "auc", "seed"])
            for r, rep in zip(ratios, reports):
                w.writerow([r, f"{rep.f1:.6f}", f"{rep.auc:.6f}", cfg.seed])
        write_json(out / "sweep.json", {"ratios": list(ratios), "reports": [r.to_dict() for r in reports]})
    return reports


def ablation_group_source(cfg: ExperimentConfig, sources=GROUP_SOURCES, write=True) -> dict[str, MetricsReport]:
    """Same data and seed under each group source; a source that cannot be built is skipped."""
    data = load_dataset(cfg)
    reports = {}
    for source in sources:
        arm = replace(cfg, group_source=source)
        try:
            reports[source] = run_experiment(arm, data, write=False)
        except ConfigError as exc:
            log.warning("skipping group source %s: %s", source, exc)
    if not reports:
        raise ConfigError("no group source could be evaluated")
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group_source", "f1", "auc", "seed"])
            for source, rep in reports.items():
                w.writerow([source, f"{rep.f1:.6f}", f"{rep.auc:.6f}", cfg.seed])
        write_json(out / "ablation.json", {k: v.to_dict() for k, v in reports.items()})
    return reports
