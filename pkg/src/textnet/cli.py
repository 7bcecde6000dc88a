"""Command line entry point: ``textnet {ingest,train,embed,eval,sweep,project}``."""

from __future__ import annotations

import argparse
import configparser
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .encoder import encode_batch
from .graph import NetworkFormatError, NetworkValidationError, Vocabulary, load_network, tokenize
from .training import (NumericalError, TrainConfig, atomic_write, config_digest, embed_all, ids_digest,
                       load_checkpoint, save_checkpoint, train)
from .walker import WalkConfig

log = logging.getLogger("textnet")

OUT_ENV = "TEXTNET_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    edges: str = ""
    docs: str = ""
    labels: str = ""
    min_count: int = 1
    max_len: int = 0  # 0: longest document


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "joint"
    training_ratio: float = 0.7
    labelled_ratio: float = 0.0  # 0: same as training_ratio
    training_ratios: str = "0.1,0.3,0.5,0.7"
    labelled_ratios: str = ""  # empty: labelled = training for each column
    repeats: int = 5
    reg: float = 1e-3
    projection: str = "pca"
    perplexity: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs"
    threads: int = 0


@dataclass(frozen=True)
class Config:
    data: DataConfig = DataConfig()
    walk: WalkConfig = WalkConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    run: RunConfig = RunConfig()

    def walk_config(self) -> WalkConfig:
        return replace(self.walk, seed=self.run.seed)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.run.seed)


# keys filled from [run] rather than their own section
_HIDDEN = {"walk": {"seed"}, "train": {"seed"}}


def _coerce(raw: str, default, where):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _apply(cfg: Config, section: str, key: str, raw: str, where: str) -> Config:
    if section not in {f.name for f in fields(Config)}:
        raise ConfigError(f"{where}: unknown section [{section}]")
    sub = getattr(cfg, section)
    names = {f.name for f in fields(sub)} - _HIDDEN.get(section, set())
    if key not in names:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
    value = _coerce(raw, getattr(sub, key), where)
    try:
        return replace(cfg, **{section: replace(sub, **{key: value})})
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path=None, overrides=()) -> Config:
    cfg = Config()
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read(path)
        for section in parser.sections():
            for key, raw in parser[section].items():
                cfg = _apply(cfg, section, key, raw, f"{path} [{section}] {key}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        cfg = _apply(cfg, section.strip(), key.strip(), raw, f"--set {item}")
    return cfg


def dump_config(cfg: Config) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in fields(Config):
        sub = getattr(cfg, f.name)
        hidden = _HIDDEN.get(f.name, set())
        parser[f.name] = {k.name: str(getattr(sub, k.name)) for k in fields(sub) if k.name not in hidden}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# helpers --------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    atomic_write(path, lambda fh: fh.write(text.encode("utf-8")))


def _out_dir(cfg: Config, args) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or cfg.run.out
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.ini", dump_config(cfg))
    return out


def _load_data(cfg: Config):
    d = cfg.data
    for key in ("edges", "docs"):
        if not getattr(d, key):
            raise ConfigError(f"[data] {key} is not set")
    net, vocab, report = load_network(d.edges, d.docs, d.labels or None, d.min_count, d.max_len or None)
    log.info("loaded network:\n%s", report)
    return net, vocab, report


def _visible_set(cfg: Config, net):
    e = cfg.eval
    spec = ev.SplitSpec(e.training_ratio, e.labelled_ratio or None)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.run.seed, 0, round(e.training_ratio * 1e6)]).spawn(2)[0])
    return ev.split_nodes(net, spec, rng)


def _grid(cfg: Config):
    trs = [float(x) for x in cfg.eval.training_ratios.split(",") if x.strip()]
    lrs = [float(x) for x in cfg.eval.labelled_ratios.split(",") if x.strip()] or None
    return ev.ratio_grid(trs, lrs)


def _check_vocab(head, vocab: Vocabulary, path):
    if head.get("vocab_hash") != vocab.digest():
        raise ConfigError(f"checkpoint {path} was trained on a different vocabulary "
                          f"({head.get('vocab_hash')} vs dataset {vocab.digest()}); refusing to embed")


# commands -------------------------------------------------------------

def cmd_ingest(cfg, args):
    net, vocab, report = _load_data(cfg)
    out = _out_dir(cfg, args)
    net.save(out / "network.npz")
    _write_text(out / "vocab.txt", "".join(f"{w}\t{c}\n" for w, c in zip(vocab.itos, vocab.counts)))
    _write_text(out / "load_report.txt", str(report) + "\n")
    print(report)


def cmd_train(cfg, args):
    net, vocab, _ = _load_data(cfg)
    out = _out_dir(cfg, args)
    train_nodes, test_nodes, visible = _visible_set(cfg, net)
    if cfg.eval.mode == "structure_only":
        tcfg = replace(cfg.train_config(), beta=0.0, objective="structure_only")
        visible = np.empty(0, dtype=np.int64)
    else:
        tcfg = replace(cfg.train_config(), objective=cfg.eval.mode)
    tmp_log = out / ".train_log.jsonl.tmp"
    result = train(net, len(vocab), cfg.walk_config(), tcfg, visible=visible, log_path=tmp_log)
    os.replace(tmp_log, out / "train_log.jsonl")
    header = {"vocab_hash": vocab.digest(), "vocab": vocab.itos, "class_names": net.class_names,
              "config_hash": config_digest(cfg.walk_config(), tcfg), "visible_hash": ids_digest(visible),
              "max_len": net.max_len, "num_nodes": net.num_nodes}
    save_checkpoint(out / "checkpoint.npz", result, header)
    _write_text(out / "visible.txt", "".join(f"{net.names[i]}\n" for i in visible))
    _write_text(out / "split.json", json.dumps({"train": [net.names[i] for i in train_nodes],
                                                "test": [net.names[i] for i in test_nodes]}))
    last = result.log[-1]
    print(f"trained {last['step']} steps on {result.num_pairs} pairs; dim {result.encoder.dim}; "
          f"final structure {last['structure']:.4f} label {last['label']:.4f}")


def cmd_embed(cfg, args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"no such checkpoint: {ckpt}")
    result, head = load_checkpoint(ckpt)
    out = _out_dir(cfg, args)
    if args.docs:
        # unseen documents: encode with the checkpoint's vocabulary, no graph needed
        if not Path(args.docs).is_file():
            raise FileNotFoundError(f"no such file: {args.docs}")
        vocab = Vocabulary(head["vocab"], [0] * len(head["vocab"]))
        names, seqs = [], []
        with open(args.docs, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise NetworkFormatError(f"{args.docs}:{lineno}: expected 'node_id<TAB>text'")
                name, text = line.rstrip("\r\n").split("\t", 1)
                names.append(name)
                seqs.append(tokenize(text, vocab, head["max_len"]))
        tokens = np.stack([s.indices for s in seqs])
        lengths = np.array([s.true_length for s in seqs])
        emb = encode_batch(tokens, lengths, result.encoder)
    else:
        net, vocab, _ = _load_data(cfg)
        _check_vocab(head, vocab, ckpt)
        names = net.names
        emb = embed_all(net, result.encoder)
    _write_text(out / "embeddings.tsv", ev.embeddings_text(names, emb))
    if args.binary:
        atomic_write(out / "embeddings.npy", lambda fh: np.save(fh, emb))
    print(f"wrote {len(names)} embeddings of dim {emb.shape[1]} to {out / 'embeddings.tsv'}")


def _progress(rec):
    log.info("training %.0f%% labelled %.0f%% repeat %d: macro-F1 %.4f",
             100 * rec["training_ratio"], 100 * rec["labelled_ratio"], rec["repeat"], rec["macro_f1"])


def _run_report(cfg, args, grid):
    net, vocab, _ = _load_data(cfg)
    out = _out_dir(cfg, args)
    report = ev.run_experiment(net, len(vocab), grid, cfg.walk_config(), cfg.train_config(),
                               mode=cfg.eval.mode, repeats=cfg.eval.repeats, reg=cfg.eval.reg,
                               seed=cfg.run.seed, progress=_progress)
    _write_text(out / "report_table.csv", report.table_csv())
    _write_text(out / "report_records.csv", report.records_csv())
    _write_text(out / "summary.txt", report.summary() + "\n")
    print(report.summary())
    return report


def cmd_eval(cfg, args):
    _run_report(cfg, args, [ev.SplitSpec(cfg.eval.training_ratio, cfg.eval.labelled_ratio or None)])


def cmd_sweep(cfg, args):
    _run_report(cfg, args, _grid(cfg))


def cmd_project(cfg, args):
    out = _out_dir(cfg, args)
    net, vocab, _ = _load_data(cfg)
    if args.embeddings:
        rows = {}
        with open(args.embeddings) as fh:
            for line in fh:
                name, vec = line.rstrip("\n").split("\t", 1)
                rows[name] = np.array(vec.split(), dtype=np.float64)
        emb = np.stack([rows[n] for n in net.names])
    else:
        if not args.checkpoint:
            raise ConfigError("project needs --checkpoint or --embeddings")
        result, head = load_checkpoint(args.checkpoint)
        _check_vocab(head, vocab, args.checkpoint)
        emb = embed_all(net, result.encoder)
    method = args.method or cfg.eval.projection
    kw = {"perplexity": cfg.eval.perplexity} if method == "tsne" else {}
    coords = ev.project_2d(emb, method, np.random.default_rng(cfg.run.seed), **kw)
    classes = [net.class_names[c] if c >= 0 else "" for c in net.labels]
    _write_text(out / "projection.tsv", ev.projection_text(net.names, coords, classes))
    print(f"wrote {len(coords)} {method} coordinates to {out / 'projection.tsv'}")


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "embed": cmd_embed, "eval": cmd_eval,
            "sweep": cmd_sweep, "project": cmd_project}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="BLAS threads (0: library default)")
    common.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and [run] out)")
    common.add_argument("--beta", type=float, help="label objective coefficient")
    common.add_argument("--mode", choices=ev.MODES)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="textnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="load and validate a dataset")
    sub.add_parser("train", parents=[common], help="train the encoder, write a checkpoint")
    p = sub.add_parser("embed", parents=[common], help="export node embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--docs", help="embed the documents in this file instead of the dataset")
    p.add_argument("--binary", action="store_true", help="also write embeddings.npy")
    sub.add_parser("eval", parents=[common], help="one (training, labelled) cell")
    sub.add_parser("sweep", parents=[common], help="grid of training x labelled ratios")
    p = sub.add_parser("project", parents=[common], help="2-D projection export")
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings")
    p.add_argument("--method", choices=("pca", "tsne"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        if args.beta is not None:
            overrides.append(f"train.beta={args.beta}")
        if args.mode is not None:
            overrides.append(f"eval.mode={args.mode}")
        cfg = load_config(args.config, overrides)
        if cfg.run.threads > 0:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(cfg.run.threads):
                COMMANDS[args.command](cfg, args)
        else:
            COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"textnet: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, NetworkFormatError, NetworkValidationError, ConfigError, ValueError) as exc:
        print(f"textnet: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
