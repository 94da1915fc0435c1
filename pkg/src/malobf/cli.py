"""Command-line entry point: ``malobf <subcommand> [flags]``.

Every subcommand accepts ``--seed``, ``--config`` and ``--out``.  A JSON config
file supplies defaults keyed by flag name (``k_api`` or ``k-api``); flags given
on the command line win.  Each run writes ``resolved_config.json`` into its
output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset import Dataset, SyntheticConfig, generate_synthetic, load_samples, save_samples, shuffle_split
from .evaluation import (
    MatrixConfig,
    derive_seed,
    emit_report,
    evaluate,
    run_matrix,
    split_samples,
    write_curve_csv,
)
from .feature_vocab import FeatureVocabulary, VocabConfig, build_vocabulary
from .mlp import DESK_HIDDEN, TrainConfig, init_model, load_checkpoint, save_checkpoint, train
from .obfuscation import BenignPool, HardenedBatchStream, build_obfuscated_test_set

log = logging.getLogger("malobf")


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).split(",") if x.strip()]


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(x) for x in text]
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _range(text) -> list[int]:
    lo_hi = _ints(text)
    if len(lo_hi) != 2:
        raise ValueError(f"expected LOW,HIGH but got {text!r}")
    return lo_hi


BOOL = "bool"

# flag -> (converter, default, help)
SYNTH = {
    "n_benign": (int, 6000, "number of benign samples"),
    "n_malicious": (int, 3000, "number of malicious samples"),
    "n_benign_features": (int, 800, "size of the benign feature pool"),
    "n_malware_features": (int, 120, "size of the malware indicator pool"),
    "benign_draw_range": (_range, [20, 60], "LOW,HIGH benign features per benign sample"),
    "mal_indicator_range": (_range, [3, 8], "LOW,HIGH indicators per malicious sample"),
    "mal_benign_draw_range": (_range, [5, 15], "LOW,HIGH benign features per malicious sample"),
}
VOCAB = {
    "k_api": (int, 20_000, "number of API prefixes kept"),
    "min_segments": (int, 3, "shortest API prefix kept, in dotted segments"),
}
VOCAB_BLOCKS = {
    "use_intents": (BOOL, True, "include the intent block"),
    "use_permissions": (BOOL, True, "include the permission block"),
    "use_apis": (BOOL, True, "include the API block"),
}
TRAIN = {
    "epochs": (int, 50, "training epochs"),
    "batch_size": (int, 2048, "minibatch size"),
    "lr": (float, 0.1, "initial learning rate"),
    "momentum": (float, 0.9, "Nesterov momentum"),
    "decay": (float, 1e-6, "time-based learning-rate decay per update"),
    "hidden": (_ints, list(DESK_HIDDEN), "comma-separated hidden layer widths"),
}
ATTACK = {
    "n_donors": (int, 1, "benign donors unioned into each malicious sample"),
    "donor_fraction": (float, 1.0, "fraction of each donor's features added"),
}

COMMANDS = {
    "gen-synthetic": ("generate a synthetic sample corpus", {**SYNTH}),
    "build-vocab": (
        "build a feature vocabulary from samples",
        {"samples": (str, None, "JSON-lines sample file"), **VOCAB, **VOCAB_BLOCKS},
    ),
    "vectorize": (
        "vectorize samples, drop empty rows and split train/test",
        {
            "samples": (str, None, "JSON-lines sample file"),
            "vocab": (str, None, "vocabulary JSON"),
            "test_fraction": (float, 0.3, "fraction of rows held out for testing"),
        },
    ),
    "train": (
        "train a baseline model on clean data",
        {"train": (str, None, "vectorized training set"), "validation": (str, None, "vectorized validation set"),
         **TRAIN},
    ),
    "harden": (
        "train a model on per-epoch obfuscated malware",
        {"train": (str, None, "vectorized training set"), "validation": (str, None, "vectorized validation set"),
         **TRAIN, **ATTACK},
    ),
    "attack": (
        "build an obfuscated test set",
        {
            "test": (str, None, "vectorized test set"),
            "train": (str, None, "vectorized training set (donors for --pool train)"),
            "pool": (str, "test", "donor source: test or train"),
            **ATTACK,
        },
    ),
    "evaluate": (
        "score a model checkpoint on vectorized datasets",
        {"model": (str, None, "model checkpoint"), "data": (_names, None, "comma-separated vectorized datasets"),
         "threshold": (float, 0.5, "decision threshold")},
    ),
    "matrix": (
        "run the full baseline/hardened x clean/obfuscated experiment",
        {
            "samples": (str, None, "JSON-lines sample file (synthetic corpus if omitted)"),
            **SYNTH,
            **VOCAB,
            "feature_configs": (_names, ["intents", "permissions", "apis", "all"], "comma-separated feature configs"),
            "test_fraction": (float, 0.3, "fraction of samples held out for testing"),
            **TRAIN,
            "hardened_epochs": (int, 100, "epochs for the hardened model"),
            "pool": (str, "test", "donor source for the obfuscated test set"),
            **ATTACK,
            "figures": (BOOL, False, "also render PNG figures"),
        },
    ),
}
REQUIRED = {
    "build-vocab": ("samples",),
    "vectorize": ("samples", "vocab"),
    "train": ("train",),
    "harden": ("train",),
    "attack": ("test",),
    "evaluate": ("model", "data"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malobf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (help_text, params) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--config", default=None, help="JSON config file; explicit flags override it")
        p.add_argument("--out", default=None, help="output directory (default: current directory)")
        p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
        for key, (conv, default, h) in params.items():
            flag = "--" + key.replace("_", "-")
            if conv == BOOL:
                p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None,
                               help=f"{h} (default {default})")
            else:
                p.add_argument(flag, type=conv, default=None, dest=key, help=f"{h} (default {default})")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    params = COMMANDS[command][1]
    resolved = {key: entry[1] for key, entry in params.items()}
    resolved.update(seed=0, out=".")
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key in ("seed", "out"):
                resolved[key] = value
            elif key in params:
                conv = params[key][0]
                resolved[key] = bool(value) if conv == BOOL else conv(value)
            else:
                raise ValueError(f"{args.config}: unknown key {key!r} for {command}")
    for key in list(params) + ["seed", "out"]:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    missing = [k for k in REQUIRED.get(command, ()) if not resolved.get(k)]
    if missing:
        raise ValueError(f"{command}: missing required " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return resolved


def _write_provenance(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": command, **cfg}
    (out / "resolved_config.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _train_config(cfg: dict, epochs: int | None = None, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["lr"],
        momentum=cfg["momentum"],
        decay=cfg["decay"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"] if epochs is None else epochs,
        seed=seed,
    )


def _synthetic_config(cfg: dict, seed: int) -> SyntheticConfig:
    return SyntheticConfig(**{k: cfg[k] for k in SYNTH}, seed=seed)


# --- subcommands -----------------------------------------------------------


def cmd_gen_synthetic(cfg, out):
    corpus, pools = generate_synthetic(_synthetic_config(cfg, cfg["seed"]))
    save_samples(corpus, out / "samples.jsonl")
    pools_json = {"benign": [list(p) for p in pools.benign], "malware": [list(p) for p in pools.malware]}
    (out / "pools.json").write_text(json.dumps(pools_json, indent=1) + "\n", encoding="utf-8")
    log.info("wrote %d samples to %s", len(corpus), out / "samples.jsonl")


def cmd_build_vocab(cfg, out):
    samples = load_samples(cfg["samples"])
    vocab = build_vocabulary(
        samples,
        VocabConfig(cfg["use_intents"], cfg["use_permissions"], cfg["use_apis"], cfg["k_api"], cfg["min_segments"]),
    )
    vocab.save(out / "vocab.json")
    log.info("vocabulary: %s", ", ".join(f"{k}={len(v)}" for k, v in vocab.blocks))


def cmd_vectorize(cfg, out):
    samples = load_samples(cfg["samples"])
    vocab = FeatureVocabulary.load(cfg["vocab"])
    data = Dataset.from_samples(samples, vocab)
    log.info("kept %d of %d samples (zero-feature rows dropped)", len(data), len(samples))
    train_set, test_set = shuffle_split(data, cfg["test_fraction"], cfg["seed"])
    data.save(out / "dataset.jsonl")
    train_set.save(out / "train.jsonl")
    test_set.save(out / "test.jsonl")


def _fit(cfg, out, hardened: bool):
    train_set = Dataset.load(cfg["train"])
    validation = Dataset.load(cfg["validation"]) if cfg.get("validation") else None
    seed = cfg["seed"]
    tcfg = _train_config(cfg, seed=derive_seed(seed, "train"))
    model = init_model(train_set.dimension, cfg["hidden"], derive_seed(seed, "init"))
    stream = None
    if hardened:
        pool = BenignPool.from_dataset(train_set, "train_pool")
        stream = HardenedBatchStream(train_set, pool, tcfg.batch_size, tcfg.seed, cfg["n_donors"],
                                     cfg["donor_fraction"])
    model, history = train(model, train_set, tcfg, validation, batch_source=stream)
    save_checkpoint(model, out / "model.ckpt")
    if validation is not None:
        write_curve_csv(history, out / f"curves_{'hardened' if hardened else 'baseline'}.csv")


def cmd_train(cfg, out):
    _fit(cfg, out, hardened=False)


def cmd_harden(cfg, out):
    _fit(cfg, out, hardened=True)


def cmd_attack(cfg, out):
    test_set = Dataset.load(cfg["test"])
    if cfg["pool"] == "test":
        pool = BenignPool.from_dataset(test_set, "test_pool")
    elif cfg["pool"] == "train":
        if not cfg.get("train"):
            raise ValueError("--pool train requires --train")
        pool = BenignPool.from_dataset(Dataset.load(cfg["train"]), "train_pool")
    else:
        raise ValueError("--pool must be 'test' or 'train'")
    obf = build_obfuscated_test_set(test_set, pool, cfg["seed"], cfg["n_donors"], cfg["donor_fraction"])
    obf.save(out / "obfuscated.jsonl")


def cmd_evaluate(cfg, out):
    model = load_checkpoint(cfg["model"])
    with open(out / "evaluation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "n", "accuracy", "fnr", "fpr"])
        for path in cfg["data"]:
            m = evaluate(model, Dataset.load(path), cfg["threshold"])
            row = [path, m.n] + ["" if v is None else f"{v:.4f}" for v in (m.accuracy, m.fnr, m.fpr)]
            w.writerow(row)
            print(",".join(str(x) for x in row))


def cmd_matrix(cfg, out):
    seed = cfg["seed"]
    if cfg.get("samples"):
        samples = load_samples(cfg["samples"])
    else:
        samples, _ = generate_synthetic(_synthetic_config(cfg, seed))
    train_samples, test_samples = split_samples(samples, cfg["test_fraction"], derive_seed(seed, "split"))
    mcfg = MatrixConfig(
        feature_configs=tuple(cfg["feature_configs"]),
        hidden=tuple(cfg["hidden"]),
        baseline=_train_config(cfg),
        hardened=_train_config(cfg, epochs=cfg["hardened_epochs"]),
        attack_pool=cfg["pool"],
        n_donors=cfg["n_donors"],
        donor_fraction=cfg["donor_fraction"],
        k_api=cfg["k_api"],
        min_segments=cfg["min_segments"],
        seed=seed,
    )
    report = run_matrix(train_samples, test_samples, mcfg)
    emit_report(report, out)
    if cfg["figures"]:
        from .plotting import render_figures

        render_figures(report, out)
    for (fc, sc), m in report.cells.items():
        fnr = "n/a" if m.fnr is None else f"{m.fnr:.2f}"
        fpr = "n/a" if m.fpr is None else f"{m.fpr:.2f}"
        print(f"{fc:12s} {sc:15s} acc {m.accuracy:7.2f}  fnr {fnr:>6s}  fpr {fpr:>6s}")


HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-vocab": cmd_build_vocab,
    "vectorize": cmd_vectorize,
    "train": cmd_train,
    "harden": cmd_harden,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "matrix": cmd_matrix,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args.command, args)
        out = Path(cfg["out"])
        _write_provenance(out, args.command, cfg)
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        HANDLERS[args.command](cfg, out)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"malobf: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
