"""Command-line entry point: ``nsr <subcommand> [flags]``.

Any flag may also come from ``--config file.json`` (keys are flag names with
dashes or underscores); flags given on the command line win. Data errors exit
with status 1 and print the error type on stderr; usage errors exit with 2.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, ctc
from .datafilter import DEFAULT_MIN_ISLAND, find_islands, read_captions, retention_stats, \
    write_islands, write_stats
from .errors import ConfigError, FormatError, NsrError
from .features import FEAT_VERSION, FeatureConfig, extract_filterbank, read_features, read_wav, \
    write_features
from .language import SPOKEN, WRITTEN, Vocabulary, build_verbalizer, build_vocab, filter_rules, \
    lm_to_fst, number_rules, read_arpa, read_rules, train_ngram, write_arpa, write_rules
from .lattice import DEFAULT_K, Hypothesis, build_collapse_fst, rescore_spoken, rescore_written
from .network import CHECKPOINT_VERSION, forward_batch, load_checkpoint
from .scoring import read_jsonl_words, spoken_references, spoken_wer, wer
from .trainer import TrainConfig, init_stack, train
from .wfst import SymbolTable, Wfst

log = logging.getLogger("nsr")


class UsageError(Exception):
    pass


def _read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError("%s:%d: %s" % (path, n, exc))
    return rows


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def _manifest(path):
    rows = _read_jsonl(path)
    ids = [r.get("utterance_id") for r in rows]
    if None in ids:
        raise FormatError("%s: every row needs an utterance_id" % path)
    if len(set(ids)) != len(ids):
        raise FormatError("%s: duplicate utterance ids" % path)
    return rows


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.join(os.path.dirname(os.path.abspath(base)), path)


def _feature_config(args):
    return FeatureConfig(num_mel_bins=args.num_mel_bins, stack_factor=args.stack_factor)


def _load_features(row, manifest_path, args):
    if row.get("feature_path"):
        return read_features(_resolve(manifest_path, row["feature_path"]))
    if row.get("audio_path"):
        return extract_filterbank(read_wav(_resolve(manifest_path, row["audio_path"])),
                                  _feature_config(args))
    raise FormatError("utterance %s has neither feature_path nor audio_path" % row["utterance_id"])


def _words(value):
    return value.split() if isinstance(value, str) else list(value)


def _write_jsonl(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def _load_model(args):
    stack, _, checksum = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.read(args.vocab)
    if checksum and checksum != vocab.checksum:
        raise ConfigError("vocabulary %s does not match the one the checkpoint was trained with"
                          % args.vocab)
    if stack.num_outputs != vocab.num_outputs:
        raise ConfigError("checkpoint has %d outputs, vocabulary needs %d"
                          % (stack.num_outputs, vocab.num_outputs))
    return stack, vocab


def _posteriors(stack, feats, workers, batch_size=16):
    """Log posteriors for every utterance, in input order."""
    chunks = [feats[lo:lo + batch_size] for lo in range(0, len(feats), batch_size)]

    def run(chunk):
        return forward_batch(stack, [f.frames for f in chunk])[0]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    return [lp for chunk in results for lp in chunk]


# subcommands

def cmd_featurize(args):
    rows = _manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = _feature_config(args)
    out = []
    for row in rows:
        if not row.get("audio_path"):
            raise FormatError("utterance %s has no audio_path" % row["utterance_id"])
        fs = extract_filterbank(read_wav(_resolve(args.manifest, row["audio_path"])), cfg)
        path = os.path.join(args.out_dir, "%s.feat" % row["utterance_id"])
        write_features(path, fs)
        new = dict(row, feature_path=os.path.abspath(path))
        new.pop("audio_path")
        out.append(json.dumps(new, sort_keys=True))
    _write_jsonl(args.out, out)


def cmd_build_vocab(args):
    vocab = build_vocab(_read_lines(args.corpus), args.threshold, args.domain)
    vocab.write(args.out)
    log.info("%d words", vocab.size)


def cmd_build_verbalizer(args):
    written = Vocabulary.read(args.written_vocab)
    spoken = Vocabulary.read(args.spoken_vocab, SPOKEN)
    if args.rules:
        rules = read_rules(args.rules)
    else:
        rules = filter_rules(number_rules(0, args.max_number), set(spoken))
    rules = [r for r in rules if r.written in written]
    symbols = SymbolTable.read(args.symbols) if args.symbols and os.path.exists(args.symbols) \
        else SymbolTable()
    V = build_verbalizer(rules, written, spoken, symbols)
    V.write(args.out)
    symbols.write(args.symbols_out or args.symbols)
    if args.rules_out:
        write_rules(args.rules_out, rules)


def cmd_train_lm(args):
    vocab = Vocabulary.read(args.vocab)
    lm = train_ngram(_read_lines(args.corpus), args.order, vocab, args.discount)
    write_arpa(args.out, lm)
    if args.fst_out:
        if not args.symbols:
            raise UsageError("--fst-out needs --symbols")
        symbols = SymbolTable.read(args.symbols) if os.path.exists(args.symbols) else SymbolTable()
        lm_to_fst(lm, symbols).write(args.fst_out)
        symbols.write(args.symbols)


def cmd_train(args):
    rows = _manifest(args.manifest)
    vocab = Vocabulary.read(args.vocab)
    data = []
    for row in rows:
        if "transcript" not in row:
            raise FormatError("utterance %s has no transcript" % row["utterance_id"])
        fs = _load_features(row, args.manifest, args)
        data.append((fs.frames, vocab.encode(_words(row["transcript"]))))
    cfg = TrainConfig(learning_rate=args.learning_rate, decay=args.decay,
                      decay_every=args.decay_every, worker_count=args.workers,
                      batch_size=args.batch_size, max_steps=args.steps, seed=args.seed,
                      loss="ctc", clip_grad=args.clip_grad, log_every=args.log_every)
    cfg.validate()
    init = init_stack(data[0][0].shape[1], args.hidden, args.depths, vocab.num_outputs,
                      seed=args.seed, init_range=cfg.init_range)
    ckpt = train(cfg, data, init, vocab_checksum=vocab.checksum)
    ckpt.save(args.checkpoint)
    if args.metrics:
        ckpt.write_metrics(args.metrics)
    if ckpt.history:
        log.info("final loss %.4f after %d steps", ckpt.history[-1][1], ckpt.step)


def _recognize_rows(args):
    stack, vocab = _load_model(args)
    rows = sorted(_manifest(args.manifest), key=lambda r: str(r["utterance_id"]))
    feats = [_load_features(r, args.manifest, args) for r in rows]
    return rows, vocab, _posteriors(stack, feats, args.workers)


def cmd_recognize(args):
    rows, vocab, log_probs = _recognize_rows(args)
    out = []
    for row, lp in zip(rows, log_probs):
        path = np.argmax(lp, axis=1)
        words = vocab.decode(ctc.collapse(path))
        hyp = Hypothesis(words, -float(lp[np.arange(len(path)), path].sum()), 0.0)
        out.append(hyp.to_json(row["utterance_id"]))
    _write_jsonl(args.out, out)


def cmd_rescore(args):
    rows, vocab, log_probs = _recognize_rows(args)
    symbols = SymbolTable.read(args.symbols)
    G = Wfst.read(args.lm)
    V = Wfst.read(args.verbalizer) if args.verbalizer else None
    R = build_collapse_fst(vocab, symbols)
    out = []
    for row, lp in zip(rows, log_probs):
        grid = np.exp(lp)
        if V is not None:
            hyp = rescore_spoken(grid, vocab, symbols, R, V, G, args.lm_scale, args.k, lp)
        else:
            hyp = rescore_written(grid, vocab, symbols, R, G, args.lm_scale, args.k, lp)
        out.append(hyp.to_json(row["utterance_id"]))
    _write_jsonl(args.out, out)


def cmd_filter_captions(args):
    utts = read_captions(args.captions)
    islands = {u.id: find_islands(u, args.min_island) for u in utts}
    write_islands(args.out, islands)
    stats = retention_stats(islands, utts)
    if args.stats:
        write_stats(args.stats, stats)
    log.info("retained %.3f of %.1f s in %d segments", stats["retained_fraction"],
             stats["total_duration"], stats["segment_count"])


def cmd_score(args):
    refs = read_jsonl_words(args.refs)
    hyps = read_jsonl_words(args.hyps)
    if args.mode == "written":
        report = wer(refs, hyps)
    else:
        if not (args.verbalizer and args.symbols):
            raise UsageError("--mode spoken needs --verbalizer and --symbols")
        alts = spoken_references(refs, Wfst.read(args.verbalizer), SymbolTable.read(args.symbols))
        report = spoken_wer(alts, hyps)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
    if args.text:
        with open(args.text, "w", encoding="utf-8") as f:
            f.write(report.to_text())
    print("%s WER %.2f%% (S=%d I=%d D=%d N=%d)" % (args.mode, 100 * report.wer,
                                                    report.substitutions, report.insertions,
                                                    report.deletions, report.ref_length))


# (flag, kwargs, required) per subcommand
_FEATURE_FLAGS = [("--num-mel-bins", dict(type=int, default=40), False),
                  ("--stack-factor", dict(type=int, default=3), False)]
_MODEL_FLAGS = [("--checkpoint", {}, True), ("--manifest", {}, True), ("--vocab", {}, True),
                ("--out", {}, True)] + _FEATURE_FLAGS

COMMANDS = {
    "featurize": (cmd_featurize, "compute log-mel features for a manifest of WAV files",
                  [("--manifest", {}, True), ("--out-dir", {}, True), ("--out", {}, True)]
                  + _FEATURE_FLAGS),
    "build-vocab": (cmd_build_vocab, "count words in a text corpus (one sentence per line)",
                    [("--corpus", {}, True), ("--out", {}, True),
                     ("--threshold", dict(type=int, default=0), False),
                     ("--domain", dict(choices=[WRITTEN, SPOKEN], default=WRITTEN), False)]),
    "build-verbalizer": (cmd_build_verbalizer, "build the written-to-spoken transducer V",
                         [("--written-vocab", {}, True), ("--spoken-vocab", {}, True),
                          ("--out", {}, True), ("--symbols", {}, True),
                          ("--symbols-out", {}, False), ("--rules", {}, False),
                          ("--rules-out", {}, False),
                          ("--max-number", dict(type=int, default=999), False)]),
    "train-lm": (cmd_train_lm, "estimate a backoff n-gram and write ARPA (and optionally G)",
                 [("--corpus", {}, True), ("--vocab", {}, True), ("--out", {}, True),
                  ("--order", dict(type=int, default=2), False),
                  ("--discount", dict(type=float, default=0.5), False),
                  ("--fst-out", {}, False), ("--symbols", {}, False)]),
    "train": (cmd_train, "train a bidirectional LSTM stack with CTC",
              [("--manifest", {}, True), ("--vocab", {}, True), ("--checkpoint", {}, True),
               ("--metrics", {}, False), ("--hidden", dict(type=int, default=64), False),
               ("--depths", dict(type=int, default=2), False),
               ("--steps", dict(type=int, default=1000), False),
               ("--batch-size", dict(type=int, default=16), False),
               ("--learning-rate", dict(type=float, default=0.3), False),
               ("--decay", dict(type=float, default=0.5), False),
               ("--decay-every", dict(type=int, default=0), False),
               ("--clip-grad", dict(type=float, default=1.0), False),
               ("--log-every", dict(type=int, default=0), False)] + _FEATURE_FLAGS),
    "recognize": (cmd_recognize, "greedy decode without any language model", _MODEL_FLAGS),
    "rescore": (cmd_rescore, "rescore per-frame lattices with G (and V for spoken models)",
                _MODEL_FLAGS + [("--symbols", {}, True), ("--lm", {}, True),
                                ("--verbalizer", {}, False),
                                ("--lm-scale", dict(type=float, default=1.0), False),
                                ("--k", dict(type=int, default=DEFAULT_K), False)]),
    "filter-captions": (cmd_filter_captions, "keep segments where caption and hypothesis agree",
                        [("--captions", {}, True), ("--out", {}, True), ("--stats", {}, False),
                         ("--min-island", dict(type=int, default=DEFAULT_MIN_ISLAND), False)]),
    "score": (cmd_score, "word error rate in the written or spoken domain",
              [("--refs", {}, True), ("--hyps", {}, True),
               ("--mode", dict(choices=["written", "spoken"], default="written"), False),
               ("--verbalizer", {}, False), ("--symbols", {}, False), ("--out", {}, False),
               ("--text", {}, False)]),
}


def _version_text():
    return ("nsr %s (checkpoint format NSRC v%d, feature format FEAT v%d, wfst text v1)"
            % (__version__, CHECKPOINT_VERSION, FEAT_VERSION))


def build_parser():
    parser = argparse.ArgumentParser(prog="nsr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version_text())
    subs = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, help_text, flags) in COMMANDS.items():
        sub = subs.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("--config", help="JSON file supplying default flag values")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--workers", type=int, default=1)
        sub.add_argument("--verbose", action="store_true")
        for flag, kwargs, _ in flags:
            sub.add_argument(flag, **kwargs)
    return parser, subs


def _apply_config(sub, path, name):
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ConfigError("%s: expected a JSON object" % path)
    known = {a.dest for a in sub._actions}
    values = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest == "config":
            raise ConfigError("%s: unknown option %r for %s" % (path, key, name))
        values[dest] = value
    sub.set_defaults(**values)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    sub = subs.choices[args.command]
    handler, _, flags = COMMANDS[args.command]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(sub, args.config, args.command)
            args = parser.parse_args(argv)
        missing = [flag for flag, _, required in flags
                   if required and getattr(args, flag[2:].replace("-", "_")) is None]
        if missing:
            sub.error("missing required flags: %s" % ", ".join(missing))
        if args.workers < 1:
            sub.error("--workers must be >= 1")
        handler(args)
    except UsageError as exc:
        sub.error(str(exc))
    except (NsrError, OSError, json.JSONDecodeError) as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
