"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
Primary results go to stdout, logs to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .corpus import (MIN_FREQUENCY, DatasetError, Vocabulary, build_vocabulary,
                     load_dataset)
from .embeddings import load_triple, synth_banks, write_vectors
from .features import CorpusStats, NormStats, corpus_stats
from .model import ModelConfig
from .pipeline import Featurizer, raw_features, rank_prepared
from .ranking import RankingResult, mrr, read_rankings, write_rankings
from .training import CheckpointError, TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("coattrank")

EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 1, 2, 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


@dataclass
class RunConfig:
    """Every tunable of a run; loaded from key=value files and overridden by flags."""

    # data
    train: str = ""
    dev: str = ""
    w2v: str = ""
    glove: str = ""
    fasttext: str = ""
    subwords: str = ""
    vocab: str = ""
    out_dir: str = "run"
    min_frequency: int = MIN_FREQUENCY
    n_passages: int = 10
    # model
    hidden: int = 500
    lstm_layers: int = 2
    dropout: float = 0.2
    max_query_len: int = 15
    max_doc_len: int = 70
    init_range: float = 0.01
    normalize_features: bool = True
    # optimisation
    epochs: int = 100
    batch_size: int = 256
    lr: float = 0.001
    clip_norm: float = 5.0
    seed: int = 0
    keep_epoch_checkpoints: bool = True
    threads: int = 1

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    def model_config(self, embed_dim: int) -> ModelConfig:
        return ModelConfig(embed_dim=embed_dim, hidden=self.hidden, lstm_layers=self.lstm_layers,
                           dropout=self.dropout, max_query_len=self.max_query_len,
                           max_doc_len=self.max_doc_len, init_range=self.init_range)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           clip_norm=self.clip_norm, seed=self.seed)


def _convert(key: str, value: str, kind: type):
    try:
        if kind is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value.strip())
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {value!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    types = RunConfig.field_types()
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, value, types[key])
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text("utf-8"), str(path)))
    for name in RunConfig.field_types():
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


def _add_run_flags(p: argparse.ArgumentParser, only=None):
    p.add_argument("--config", help="key=value config file; flags override its values")
    defaults = RunConfig()
    for name, kind in RunConfig.field_types().items():
        if only is not None and name not in only:
            continue
        flag = "--" + name.replace("_", "-")
        default = getattr(defaults, name)
        if kind is bool:
            p.add_argument(flag, dest=name, default=None,
                           type=lambda v, n=name: _convert(n, v, bool),
                           help=f"true/false (default {default})")
        else:
            p.add_argument(flag, dest=name, default=None, type=kind,
                           help=f"(default {default!r})")


def _limit_threads(n: int):
    threadpool_limits(max(1, n))


def _need(cfg: RunConfig, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + m.replace("_", "-")
                                                                        for m in missing))


def _banks(cfg: RunConfig):
    _need(cfg, "w2v", "glove", "fasttext")
    return load_triple(cfg.w2v, cfg.glove, cfg.fasttext, cfg.subwords or None)


# --- commands -----------------------------------------------------------------

def cmd_build_vocab(args) -> int:
    samples = load_dataset(args.data, labeled=False, n_passages=args.n_passages)
    vocab = build_vocabulary((t for s in samples for t in (s.query_tokens, *s.passages)),
                             args.min_frequency)
    vocab.save(args.out)
    log.info("wrote %d tokens to %s", vocab.size, args.out)
    return 0


def cmd_synth(args) -> int:
    from .synth import write_synth

    paths = write_synth(args.out_dir, seed=args.seed, n_queries=args.n_queries,
                        n_dev=args.n_dev, dim=args.dim, vocab_size=args.vocab_size)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 0


def cmd_synth_embeddings(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    banks = synth_banks(vocab.token_to_id, args.dim, args.seed,
                        n_subword_tokens=vocab.size if args.subwords else 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for role, table in banks.items():
        write_vectors(table, out / f"{role}.txt")
        print(f"{role}\t{out / f'{role}.txt'}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _need(cfg, "train")
    _limit_threads(cfg.threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    banks = _banks(cfg)
    samples = list(load_dataset(cfg.train, labeled=True, n_passages=cfg.n_passages))
    dev = list(load_dataset(cfg.dev, labeled=True, n_passages=cfg.n_passages)) if cfg.dev else []
    if cfg.vocab:
        vocab = Vocabulary.load(cfg.vocab, cfg.min_frequency)
    else:
        vocab = build_vocabulary((t for s in samples for t in (s.query_tokens, *s.passages)),
                                 cfg.min_frequency)
    vocab.save(out / "vocab.tsv")
    stats = corpus_stats(p for s in samples for p in s.passages)
    stats.save(out / "stats.txt")
    norm = None
    if cfg.normalize_features:
        norm = NormStats.fit(np.concatenate([raw_features(s, stats) for s in samples]))
    model_cfg = cfg.model_config(banks.dim)
    feat = Featurizer(vocab, banks, stats, norm, model_cfg.max_query_len, model_cfg.max_doc_len)
    prepared = [feat.prepare(s) for s in samples]
    dev_prepared = [feat.prepare(s) for s in dev]

    with open(out / "train.log", "w", encoding="utf-8") as logf:
        result = None
        for result in train(prepared, model_cfg, cfg.train_config(), dev_prepared, norm,
                            vocab.digest()):
            logf.write(f"{result.epoch}\t{result.mean_loss!r}\t{result.dev_mrr!r}\n")
            logf.flush()
            log.info("epoch %d\tloss %.6f\tdev_mrr %.4f", result.epoch, result.mean_loss,
                     result.dev_mrr)
            if result.epoch > 0 and cfg.keep_epoch_checkpoints:
                save_checkpoint(result.checkpoint, out / f"checkpoint_epoch{result.epoch:03d}.bin")
    save_checkpoint(result.checkpoint, out / "checkpoint.bin")
    print(out / "checkpoint.bin")
    return 0


def _load_model(args, cfg: RunConfig):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    run_dir = ckpt_path.parent
    vocab_path = Path(cfg.vocab) if cfg.vocab else run_dir / "vocab.tsv"
    stats_path = Path(args.stats) if args.stats else run_dir / "stats.txt"
    for p in (vocab_path, stats_path):
        if not p.exists():
            raise FileNotFoundError(f"required file not found: {p}")
    vocab = Vocabulary.load(vocab_path, cfg.min_frequency)
    if ckpt.vocab_hash and vocab.digest() != ckpt.vocab_hash:
        raise CheckpointError(f"vocabulary {vocab_path} does not match the checkpoint")
    stats = CorpusStats.load(stats_path)
    return ckpt, vocab, stats


def cmd_rank(args) -> int:
    cfg = resolve_config(args)
    _limit_threads(cfg.threads)
    samples = load_dataset(args.data, labeled=False, n_passages=cfg.n_passages)
    if args.method == "bm25":
        from .estimator import BM25Ranker

        stats = CorpusStats.load(args.stats) if args.stats else None
        samples = list(samples)
        ranker = BM25Ranker()
        if stats is None:
            ranker.fit(samples)
        else:
            ranker.stats_ = stats
        rows = zip((s.query_id for s in samples), ranker.rank(samples))
        write_rankings(rows, args.out)
        return 0
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for --method model")
    ckpt, vocab, stats = _load_model(args, cfg)
    banks = _banks(cfg)
    if banks.dim != ckpt.model_config.embed_dim:
        raise CheckpointError(f"banks have dim {banks.dim}, checkpoint expects "
                              f"{ckpt.model_config.embed_dim}")
    params = ckpt.model_params()
    mc = ckpt.model_config
    feat = Featurizer(vocab, banks, stats, ckpt.norm, mc.max_query_len, mc.max_doc_len)
    rng = np.random.default_rng(cfg.seed)

    def gen():
        for s in samples:
            try:
                result = rank_prepared(feat.prepare(s), params, exact=args.exact,
                                       paranoid=args.paranoid, rng=rng)
            except AssertionError as exc:
                raise CheckFailed(str(exc)) from None
            yield s.query_id, result

    write_rankings(gen(), args.out)
    return 0


def cmd_eval(args) -> int:
    rankings = read_rankings(args.rankings)
    pairs: list[tuple[RankingResult, int]] = []
    for s in load_dataset(args.data, labeled=True, n_passages=args.n_passages):
        if s.query_id not in rankings:
            raise DatasetError(f"no ranking for query {s.query_id!r} in {args.rankings}")
        result = rankings[s.query_id]
        if len(result.rank) != s.n_passages:
            raise DatasetError(f"query {s.query_id!r}: ranking covers {len(result.rank)} passages, "
                               f"data has {s.n_passages}")
        pairs.append((result, s.gold_index))
    print(f"{mrr(pairs):.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from dataclasses import replace

    from .gradcheck import GRADCHECK_CONFIG, format_table, run_gradcheck

    cfg = replace(GRADCHECK_CONFIG, embed_dim=args.embed_dim, hidden=args.hidden,
                  lstm_layers=args.lstm_layers, max_query_len=args.max_query_len,
                  max_doc_len=args.max_doc_len, init_range=args.init_range)
    rows = run_gradcheck(cfg, seed=args.seed, h=args.step)
    print(format_table(rows))
    worst = max(rows, key=lambda r: r.max_rel_error)
    if worst.max_rel_error > args.threshold:
        raise CheckFailed(f"gradient check failed: {worst.name} relative error "
                          f"{worst.max_rel_error:.3e} > {args.threshold:g}")
    log.info("gradient check passed (worst %s: %.3e)", worst.name, worst.max_rel_error)
    return 0


# --- parser ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coattrank", description=__doc__.strip().splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="build the frequency-thresholded vocabulary")
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--out", required=True, help="vocabulary TSV to write (token, id, freq)")
    p.add_argument("--min-frequency", type=int, default=MIN_FREQUENCY)
    p.add_argument("--n-passages", type=int, default=10)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("synth", help="generate a synthetic dataset and embedding banks")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-queries", type=int, default=200, help="training queries")
    p.add_argument("--n-dev", type=int, default=50, help="dev queries")
    p.add_argument("--dim", type=int, default=32, help="embedding dimension")
    p.add_argument("--vocab-size", type=int, default=120, help="token inventory size")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-embeddings", help="random embedding banks for a vocabulary file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subwords", action="store_true", help="also write a subword table")
    p.set_defaults(func=cmd_synth_embeddings)

    p = sub.add_parser("train", help="train the pairwise ranker")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="rank the passages of every query in a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="ranking TSV to write")
    p.add_argument("--checkpoint", help="trained checkpoint (vocab.tsv/stats.txt beside it)")
    p.add_argument("--stats", help="corpus stats file (default: next to the checkpoint)")
    p.add_argument("--method", choices=("model", "bm25"), default="model")
    p.add_argument("--exact", action="store_true",
                   help="exact maximum Hamiltonian path instead of greedy row sums")
    p.add_argument("--paranoid", action="store_true",
                   help="cross-check 10 random PDM entries per query against pair evaluation")
    _add_run_flags(p, only={"w2v", "glove", "fasttext", "subwords", "vocab", "min_frequency",
                            "n_passages", "seed", "threads"})
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="MRR of a ranking file against labeled data")
    p.add_argument("--rankings", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-passages", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--embed-dim", type=int, default=12)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--lstm-layers", type=int, default=1)
    p.add_argument("--max-query-len", type=int, default=4)
    p.add_argument("--max-doc-len", type=int, default=6)
    p.add_argument("--init-range", type=float, default=0.1)
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference step h")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"coattrank: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckFailed as exc:
        print(f"coattrank: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (DatasetError, CheckpointError, FileNotFoundError, PermissionError,
            IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"coattrank: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
