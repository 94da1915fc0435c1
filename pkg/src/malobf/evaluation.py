"""Confusion metrics and the baseline/hardened x clean/obfuscated experiment matrix."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import Dataset, split_indices
from .feature_vocab import RawSample, VocabConfig, build_vocabulary
from .mlp import DESK_HIDDEN, History, ModelParams, TrainConfig, init_model, predict, train
from .obfuscation import BenignPool, HardenedBatchStream, build_obfuscated_test_set

log = logging.getLogger(__name__)

SCENARIOS = ("baseline_clean", "baseline_obf", "hardened_obf", "hardened_clean")
FEATURE_CONFIGS = {
    "intents": VocabConfig(use_intents=True, use_permissions=False, use_apis=False),
    "permissions": VocabConfig(use_intents=False, use_permissions=True, use_apis=False),
    "apis": VocabConfig(use_intents=False, use_permissions=False, use_apis=True),
    "all": VocabConfig(),
}
METRICS_HEADER = ("feature_config", "scenario", "accuracy", "fnr", "fpr")
CURVE_HEADER = ("epoch", "val_accuracy", "val_loss")


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with malicious as the positive class; rates are percentages."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return 100.0 * (self.tp + self.tn) / self.n

    @property
    def fnr(self) -> Optional[float]:
        pos = self.fn + self.tp
        return 100.0 * self.fn / pos if pos else None

    @property
    def fpr(self) -> Optional[float]:
        neg = self.fp + self.tn
        return 100.0 * self.fp / neg if neg else None


def compute_metrics(predictions, truth) -> Metrics:
    pred = np.asarray(predictions).astype(np.int64).reshape(-1)
    true = np.asarray(truth).astype(np.int64).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return Metrics(
        tp=int(np.sum((pred == 1) & (true == 1))),
        fp=int(np.sum((pred == 1) & (true == 0))),
        tn=int(np.sum((pred == 0) & (true == 0))),
        fn=int(np.sum((pred == 0) & (true == 1))),
    )


def evaluate(model: ModelParams, data: Dataset, threshold: float = 0.5) -> Metrics:
    return compute_metrics(predict(model, data, threshold), data.labels)


def derive_seed(master: int, *keys) -> int:
    """Stable sub-seed for a named part of an experiment."""
    words = [int(master)] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class MatrixConfig:
    feature_configs: tuple[str, ...] = ("intents", "permissions", "apis", "all")
    hidden: tuple[int, ...] = DESK_HIDDEN
    baseline: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    hardened: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))
    attack_pool: str = "test"  # donors for the obfuscated test set: "test" or "train"
    n_donors: int = 1
    donor_fraction: float = 1.0
    k_api: int = 20_000
    min_segments: int = 3
    seed: int = 0

    def __post_init__(self):
        unknown = [fc for fc in self.feature_configs if fc not in FEATURE_CONFIGS]
        if unknown:
            raise ValueError(f"unknown feature configs {unknown}; choose from {sorted(FEATURE_CONFIGS)}")
        if self.attack_pool not in ("test", "train"):
            raise ValueError("attack_pool must be 'test' or 'train'")
        self.feature_configs = tuple(self.feature_configs)
        self.hidden = tuple(self.hidden)

    def vocab_config(self, name: str) -> VocabConfig:
        base = FEATURE_CONFIGS[name]
        return VocabConfig(base.use_intents, base.use_permissions, base.use_apis, self.k_api, self.min_segments)

    def to_json(self) -> dict:
        d = asdict(self)
        d["feature_configs"] = list(self.feature_configs)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class ExperimentReport:
    cells: dict = field(default_factory=dict)  # (feature_config, scenario) -> Metrics
    histories: dict = field(default_factory=dict)  # model name -> History
    sources: dict = field(default_factory=dict)  # (feature_config, scenario) -> (model name, dataset name)
    models: dict = field(default_factory=dict)  # model name -> ModelParams

    def metric(self, feature_config: str, scenario: str) -> Metrics:
        return self.cells[(feature_config, scenario)]


def run_feature_config(
    name: str,
    train_samples: Sequence[RawSample],
    test_samples: Sequence[RawSample],
    config: MatrixConfig,
    report: ExperimentReport,
) -> None:
    vocab = build_vocabulary(list(train_samples) + list(test_samples), config.vocab_config(name))
    if vocab.dimension == 0:
        raise ValueError(f"feature config {name!r} produced an empty vocabulary")
    train_set = Dataset.from_samples(train_samples, vocab)
    test_set = Dataset.from_samples(test_samples, vocab)

    pool_data = test_set if config.attack_pool == "test" else train_set
    attack_pool = BenignPool.from_dataset(pool_data, f"{config.attack_pool}_pool")
    obf_test = build_obfuscated_test_set(
        test_set, attack_pool, derive_seed(config.seed, name, "attack"), config.n_donors, config.donor_fraction
    )

    m0 = init_model(vocab.dimension, config.hidden, derive_seed(config.seed, name, "init"))
    base_cfg = TrainConfig(**{**asdict(config.baseline), "seed": derive_seed(config.seed, name, "baseline")})
    log.info("[%s] baseline: dim=%d train=%d test=%d", name, vocab.dimension, len(train_set), len(test_set))
    baseline, h_base = train(m0, train_set, base_cfg, test_set)

    hard_cfg = TrainConfig(**{**asdict(config.hardened), "seed": derive_seed(config.seed, name, "hardened")})
    stream = HardenedBatchStream(
        train_set,
        BenignPool.from_dataset(train_set, "train_pool"),
        hard_cfg.batch_size,
        hard_cfg.seed,
        config.n_donors,
        config.donor_fraction,
    )
    log.info("[%s] hardened", name)
    hardened, h_hard = train(m0, train_set, hard_cfg, test_set, batch_source=stream)

    models = {"baseline": baseline, "hardened": hardened}
    datasets = {"clean": test_set, "obf": obf_test}
    for scenario in SCENARIOS:
        model_key, data_key = scenario.split("_")
        report.cells[(name, scenario)] = evaluate(models[model_key], datasets[data_key])
        report.sources[(name, scenario)] = (f"{name}_{model_key}", f"{name}_test_{data_key}")
    report.histories[f"{name}_baseline"] = h_base
    report.histories[f"{name}_hardened"] = h_hard
    report.models[f"{name}_baseline"] = baseline
    report.models[f"{name}_hardened"] = hardened


def run_matrix(
    train_samples: Sequence[RawSample],
    test_samples: Sequence[RawSample],
    config: MatrixConfig = MatrixConfig(),
) -> ExperimentReport:
    """Train baseline and hardened models per feature config and score all four scenarios.

    A vocabulary is built per feature config over all samples; rows without any
    in-vocabulary feature are dropped.  The same clean test set backs both
    ``*_clean`` cells and the same obfuscated set backs both ``*_obf`` cells.
    """
    report = ExperimentReport()
    for name in config.feature_configs:
        run_feature_config(name, train_samples, test_samples, config, report)
    return report


def split_samples(samples: Sequence[RawSample], test_fraction: float, seed: int):
    train_idx, test_idx = split_indices(len(samples), test_fraction, seed)
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def write_metrics_csv(rows, path) -> None:
    """``rows`` are (feature_config, scenario, Metrics)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for fc, scenario, m in rows:
            w.writerow([fc, scenario, _fmt(m.accuracy), _fmt(m.fnr), _fmt(m.fpr)])


def write_curve_csv(history: History, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for epoch, (acc, loss) in enumerate(zip(history.val_accuracy, history.val_loss), start=1):
            w.writerow([epoch, _fmt(acc), f"{loss:.6f}"])


def emit_report(report: ExperimentReport, out_dir) -> list[Path]:
    """Write ``metrics.csv`` and one ``curves_<model>.csv`` per trained model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv"]
    write_metrics_csv([(fc, sc, m) for (fc, sc), m in report.cells.items()], written[0])
    for name, history in report.histories.items():
        path = out / f"curves_{name}.csv"
        write_curve_csv(history, path)
        written.append(path)
    return written
