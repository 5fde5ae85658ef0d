"""Command-line entry point.

Subcommands: train, eval, classify, normalize, gradcheck, dump-attention,
synth.  Hyperparameters come from a key=value config file (flags are for
paths and overrides only); all stdout is TAB-separated.

Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence,
5 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import data as data_io
from .checkpoint import load_checkpoint, save_checkpoint
from .embeddings import Vocabulary, tokenize
from .encoders import ROLE_ALD, ROLE_SHARED, ROLE_TN, write_attention_dump
from .errors import (
    AggnormError,
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
)
from .gradcheck import check_model, tiny_setup
from .model import TASK_ALD, TASK_TN, JointModel, ModelConfig
from .training import (
    TrainConfig,
    TrainData,
    evaluate,
    holdout_split,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_VERIFICATION = 5


# ---------------------------------------------------------------------------
# Config file


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_labels(text: str) -> tuple:
    labels = tuple(t.strip() for t in text.split(",") if t.strip())
    if not labels:
        raise ValueError("empty label list")
    return labels


_MODEL_KEYS = {
    "d_word": int, "d_char": int, "d_sbw": int, "filter_width": int, "d_pe": int,
    "d_model": int, "n_heads": int, "layers_shared": int, "layers_ald": int,
    "layers_tn": int, "layers_dec": int, "d_lstm": int, "max_len": int,
    "dropout": float, "labels": _parse_labels, "precision": str, "seed": int,
}
_TRAIN_KEYS = {
    "lr": float, "batch_tn": int, "batch_ald": int, "lambda": float, "beta": float,
    "clip_norm": float, "max_epochs": int, "patience": int, "warm_start": _parse_bool,
    "warm_max_epochs": int, "warm_rel_improvement": float, "warm_window": int,
    "mode": str,
}
_PATH_KEYS = (
    "ald_train", "ald_dev", "ald_test", "tn_train", "tn_dev", "tn_test",
    "vocab", "slang", "checkpoint_dir",
)
_MISC_KEYS = {"dev_fraction": float}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    dev_fraction: float = 0.1

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(**self.model)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        kwargs = dict(self.training)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        kwargs.setdefault("seed", self.model.get("seed", ModelConfig.seed))
        return TrainConfig(**kwargs)


def parse_config(path) -> RunConfig:
    """Parse a key=value config file; unknown keys are rejected."""
    cfg = RunConfig()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in stripped.split("=", 1))
            try:
                if key in _MODEL_KEYS:
                    cfg.model[key] = _MODEL_KEYS[key](value)
                elif key in _TRAIN_KEYS:
                    cfg.training[key] = _TRAIN_KEYS[key](value)
                elif key in _PATH_KEYS:
                    cfg.paths[key] = value
                elif key in _MISC_KEYS:
                    setattr(cfg, key, _MISC_KEYS[key](value))
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return cfg


def _require_paths(cfg: RunConfig, required):
    for key in required:
        if key not in cfg.paths:
            raise ConfigError(f"config is missing required path {key!r}")
    for key, value in cfg.paths.items():
        if key == "checkpoint_dir":
            continue
        if not os.path.exists(value):
            raise ConfigError(f"config path {key} = {value!r} does not exist")


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    mode = cfg.training.get("mode", "joint")
    required = ["ald_train", "tn_train", "checkpoint_dir"]
    if mode == "ald_only":
        required.remove("tn_train")
    if mode == "tn_only":
        required.remove("ald_train")
    _require_paths(cfg, required)
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    max_len = model_cfg.max_len

    labels = model_cfg.labels
    ald_train = ald_dev = None
    if "ald_train" in cfg.paths:
        ald_train = data_io.load_classification(cfg.paths["ald_train"], labels, max_len)
        if "ald_dev" in cfg.paths:
            ald_dev = data_io.load_classification(cfg.paths["ald_dev"], labels, max_len)
        else:
            ald_train, ald_dev = holdout_split(ald_train, cfg.dev_fraction,
                                               train_cfg.seed)
    tn_train = tn_dev = None
    if "tn_train" in cfg.paths:
        tn_train = data_io.load_normalization(cfg.paths["tn_train"], max_len)
        if "tn_dev" in cfg.paths:
            tn_dev = data_io.load_normalization(cfg.paths["tn_dev"], max_len)
        else:
            tn_train, tn_dev = holdout_split(tn_train, cfg.dev_fraction, train_cfg.seed)
    if "slang" in cfg.paths and ald_train is not None and tn_train is not None:
        slang = data_io.load_slang(cfg.paths["slang"])
        mined = data_io.augment_with_slang(ald_train, slang)
        tn_train = data_io.NormalizationCorpus(tn_train.pairs + mined.pairs)

    token_sources = []
    if ald_train:
        token_sources += [tokens for _l, tokens in ald_train.instances]
    if tn_train:
        token_sources += [raw for raw, _n in tn_train.pairs]
    if "vocab" in cfg.paths:
        word_vocab = Vocabulary.load(cfg.paths["vocab"])
    else:
        word_vocab = Vocabulary.from_corpus(token_sources)
    char_vocab = Vocabulary.from_corpus(
        [list(tok) for seq in token_sources for tok in seq]
    )
    target_vocab = Vocabulary.from_corpus(
        [norm for _raw, norm in tn_train.pairs] if tn_train else [["<none>"]]
    )

    model = JointModel(model_cfg, word_vocab, char_vocab, target_vocab)
    empty_cls = data_io.ClassificationCorpus([], labels)
    empty_tn = data_io.NormalizationCorpus([])
    td = TrainData.build(
        model,
        ald_train or empty_cls, ald_dev or empty_cls,
        tn_train or empty_tn, tn_dev or empty_tn,
    )
    os.makedirs(cfg.paths["checkpoint_dir"], exist_ok=True)
    ckpt_path = os.path.join(cfg.paths["checkpoint_dir"], "model.ckpt")
    metrics_path = os.path.join(cfg.paths["checkpoint_dir"], "metrics.txt")
    try:
        model, report = train(model, train_cfg, td)
    except DivergenceError as exc:
        if exc.checkpoint:
            model.restore(exc.checkpoint)
            save_checkpoint(model, ckpt_path, meta={"diverged": 1})
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    save_checkpoint(model, ckpt_path, meta=dict(report.summary))
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    print(f"checkpoint\t{ckpt_path}")
    print(f"metrics\t{metrics_path}")
    return EXIT_OK


def _load_model(args) -> JointModel:
    model, _opt, _meta = load_checkpoint(args.checkpoint, force=args.force)
    model.eval()
    return model


def cmd_eval(args) -> int:
    model = _load_model(args)
    printed = False
    if args.ald:
        corpus = data_io.load_classification(args.ald, model.config.labels,
                                             model.config.max_len)
        s = evaluate(model, corpus, TASK_ALD)
        print(f"task=ald\tprecision={s['precision']:.6f}\trecall={s['recall']:.6f}"
              f"\tweighted_f1={s['weighted_f1']:.6f}\taccuracy={s['accuracy']:.6f}")
        for label, (p, r, f1, support) in s["per_label"].items():
            print(f"label={label}\tprecision={p:.6f}\trecall={r:.6f}"
                  f"\tf1={f1:.6f}\tsupport={support}")
        printed = True
    if args.tn:
        corpus = data_io.load_normalization(args.tn, model.config.max_len)
        s = evaluate(model, corpus, TASK_TN)
        print(f"task=tn\tprecision={s['precision']:.6f}\trecall={s['recall']:.6f}"
              f"\tf1={s['f1']:.6f}\ttoken_accuracy={s['token_accuracy']:.6f}"
              f"\tloss={s['loss']:.6f}")
        printed = True
    if not printed:
        raise ConfigError("eval needs --ald and/or --tn corpus paths")
    return EXIT_OK


def _input_lines(args):
    if args.input:
        with open(args.input, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = sys.stdin.read().splitlines()
    return lines


def cmd_classify(args) -> int:
    model = _load_model(args)
    for lineno, line in enumerate(_input_lines(args), start=1):
        tokens = tokenize(line)[: model.config.max_len]
        if not tokens:
            raise DataError(f"input line {lineno}: no tokens")
        dist = model.classify_sentence(model.prepare(tokens))
        best = int(np.argmax(dist.data))
        print(f"{model.config.labels[best]}\t{float(dist.data[best]):.6f}")
    return EXIT_OK


def cmd_normalize(args) -> int:
    model = _load_model(args)
    for lineno, line in enumerate(_input_lines(args), start=1):
        tokens = line.split()[: model.config.max_len]
        if not tokens:
            raise DataError(f"input line {lineno}: no tokens")
        ids, _truncated = model.tn_decode_sentence(model.prepare(tokens))
        print(" ".join(model.target_tokens(ids)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = parse_config(args.config)
        model_cfg = cfg.model_config().tiny() if args.tiny else cfg.model_config()
        if model_cfg.precision != "float64":
            from dataclasses import replace

            model_cfg = replace(model_cfg, precision="float64")
        model, ald, tn = tiny_setup(seed=model_cfg.seed, config=model_cfg)
    else:
        model, ald, tn = tiny_setup(seed=args.seed)
    result = check_model(model, ald, tn, entries_per_param=args.entries,
                         seed=args.seed, exhaustive=args.exhaustive)
    for g in result.groups:
        status = "ok" if g.max_rel_err < result.tolerance else "FAIL"
        print(f"group={g.name}\tchecked={g.checked}"
              f"\tmax_rel_err={g.max_rel_err:.3e}\tstatus={status}")
    print(f"summary\tgroups={len(result.groups)}\tmax_rel_err={result.max_rel_err:.3e}"
          f"\ttolerance={result.tolerance:g}\tpassed={result.passed}")
    return EXIT_OK if result.passed else EXIT_VERIFICATION


def cmd_dump_attention(args) -> int:
    model = _load_model(args)
    tokens = tokenize(args.sentence)[: model.config.max_len]
    if not tokens:
        raise DataError("sentence produced no tokens")
    sent = model.prepare(tokens)
    records: dict = {}
    ald_records: dict = {}
    tn_records: dict = {}
    model.encode(TASK_ALD, sent, records=ald_records)
    model.encode(TASK_TN, sent, records=tn_records)
    records[ROLE_SHARED] = ald_records[ROLE_SHARED]
    records[ROLE_ALD] = ald_records[ROLE_ALD]
    records[ROLE_TN] = tn_records[ROLE_TN]
    write_attention_dump([records[k] for k in (ROLE_ALD, ROLE_SHARED, ROLE_TN)],
                         args.out)
    print(f"attention\t{args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = data_io.SyntheticSpec()
    world = data_io.build_world(args.seed, spec)
    os.makedirs(args.out, exist_ok=True)

    def path(name):
        return os.path.join(args.out, name)

    data_io.save_classification(world.ald_train, path("ald_train.tsv"))
    data_io.save_classification(world.ald_dev, path("ald_dev.tsv"))
    data_io.save_classification(world.ald_test, path("ald_test.tsv"))
    data_io.save_normalization(world.tn_train, path("tn_train.tsv"))
    data_io.save_normalization(world.tn_dev, path("tn_dev.tsv"))
    data_io.save_normalization(world.tn_test, path("tn_test.tsv"))
    data_io.save_slang(world.corruption, path("slang.tsv"))
    for name in ("ald_train.tsv", "ald_dev.tsv", "ald_test.tsv",
                 "tn_train.tsv", "tn_dev.tsv", "tn_test.tsv", "slang.tsv"):
        print(f"wrote\t{path(name)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggnorm",
        description="joint aggressive-language detection and text normalization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    def add_ckpt(p):
        p.add_argument("checkpoint")
        p.add_argument("--force", action="store_true",
                       help="ignore fingerprint mismatches")

    p = sub.add_parser("eval", help="evaluate a checkpoint on corpora")
    add_ckpt(p)
    p.add_argument("--ald", help="classification corpus path")
    p.add_argument("--tn", help="normalization corpus path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="label input sentences")
    add_ckpt(p)
    p.add_argument("--input", help="file of sentences (default stdin)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("normalize", help="normalize input sentences")
    add_ckpt(p)
    p.add_argument("--input", help="file of sentences (default stdin)")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--config", help="optional config for model dimensions")
    p.add_argument("--tiny", action="store_true",
                   help="shrink the config to verification scale")
    p.add_argument("--entries", type=int, default=4,
                   help="random entries checked per parameter")
    p.add_argument("--exhaustive", action="store_true", help="check every entry")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-attention", help="write attention matrices for a sentence")
    add_ckpt(p)
    p.add_argument("--sentence", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("synth", help="generate synthetic corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except AggnormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
